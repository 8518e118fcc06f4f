"""Command-line front end: simulate, fit, validate, report.

Config files are flat ``key = value`` text ('#' comments, comma-separated
arrays), fully determining a run.  Exit codes: 0 ok, 2 config/input error,
3 compute error, 4 fit error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evolve import (landau_zener_formula, lz_excitation_probability,
                     native_excitation_probability, stability_dt,
                     substituted_excitation_probability)
from .model import make_protocol, transverse_protocol
from .noise import (ModulationChannel, ModulationSpec, NoiseSpec, lag_autocorrelation,
                    mean_psd, modulation_to_intensity, sample_realization,
                    write_realization_csv)
from .scaling import (ALPHA_THEORY, InsufficientDataError, MismatchedTauGridError,
                      MissingBaselineError, NoMinimumError, fit_pipeline)
from .sweep import (DEFAULT_NOISE_UNIT, DEFAULT_REALIZATIONS, SweepPlan, plan_to_dict,
                    read_manifest, read_nw_csv, run_sweep, write_manifest, write_nw_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3
EXIT_FIT = 4

THREADS_ENV = "XYQUENCH_THREADS"


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# config parsing

_SCALAR_KEYS = {
    "protocol": str,
    "n_k": int,
    "n_realizations": int,
    "master_seed": int,
    "noise_unit": float,
    "dt": float,
    "out_dir": str,
    "j_x": float,
    "j_y": float,
    "h": float,
    "j": float,
    "ramp_start": float,
    "ramp_end": float,
}
_LIST_KEYS = {"tau_list", "w2_list", "fm_deviation_khz_list", "am_depth_list"}


def parse_config(path) -> dict:
    """Read a flat key = value file into typed config values."""
    raw: dict[str, object] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError("config", f"line {lineno} is not a key = value pair: {line!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip()
        if key in raw:
            raise ConfigError(key, f"duplicated on line {lineno}")
        if key in _LIST_KEYS:
            items = [v for v in (s.strip() for s in value.split(",")) if v]
            try:
                raw[key] = [float(v) for v in items]
            except ValueError:
                raise ConfigError(key, f"expected a comma-separated list of numbers, got {value!r}") from None
        elif key in _SCALAR_KEYS:
            caster = _SCALAR_KEYS[key]
            if key == "dt" and value.lower() == "auto":
                raw[key] = None
                continue
            try:
                raw[key] = caster(value)
            except ValueError:
                raise ConfigError(key, f"expected {caster.__name__}, got {value!r}") from None
        else:
            raise ConfigError(key, "unknown key")
    return raw


def _resolve_w2_list(raw: dict) -> list[float]:
    given = [k for k in ("w2_list", "fm_deviation_khz_list", "am_depth_list") if k in raw]
    if len(given) != 1:
        raise ConfigError("w2_list",
                          "give exactly one of w2_list, fm_deviation_khz_list, am_depth_list")
    key = given[0]
    values = raw[key]
    if not values:
        raise ConfigError(key, "must be non-empty")
    if key == "w2_list":
        w2 = list(values)
    elif key == "fm_deviation_khz_list":
        w2 = [modulation_to_intensity(ModulationSpec(ModulationChannel.FM, deviation_khz=f))
              for f in values]
    else:
        w2 = [modulation_to_intensity(ModulationSpec(ModulationChannel.AM, depth=a))
              for a in values]
    if any(b <= a for a, b in zip(w2, w2[1:])):
        raise ConfigError(key, "entries must be strictly increasing (as intensities)")
    if any(w < 0 for w in w2):
        raise ConfigError(key, "intensities must be >= 0")
    return w2


def build_plan(raw: dict) -> tuple[SweepPlan, str]:
    """Turn parsed config values into a validated SweepPlan + output base dir."""
    if "protocol" not in raw:
        raise ConfigError("protocol", "required")
    if "tau_list" not in raw or not raw["tau_list"]:
        raise ConfigError("tau_list", "required and must be non-empty")
    tau_list = raw["tau_list"]
    w2_list = _resolve_w2_list(raw)

    overrides = {k: raw[k] for k in ("j_x", "j_y", "h", "j") if k in raw}
    if "ramp_start" in raw or "ramp_end" in raw:
        if not ("ramp_start" in raw and "ramp_end" in raw):
            raise ConfigError("ramp_start", "ramp_start and ramp_end must be given together")
        overrides["ramp"] = (raw["ramp_start"], raw["ramp_end"])
    try:
        template = make_protocol(raw["protocol"], tau=float(tau_list[0]), **overrides)
    except TypeError:
        raise ConfigError("protocol",
                          f"coupling overrides {sorted(overrides)} do not apply to "
                          f"protocol {raw['protocol']!r}") from None
    except ValueError as exc:
        raise ConfigError("protocol", str(exc)) from None

    try:
        plan = SweepPlan(
            protocol=template,
            tau_list=tuple(tau_list),
            w2_list=tuple(w2_list),
            n_k=raw.get("n_k", 50),
            n_realizations=raw.get("n_realizations", DEFAULT_REALIZATIONS),
            master_seed=raw.get("master_seed", 42),
            noise_unit=raw.get("noise_unit", DEFAULT_NOISE_UNIT),
            dt=raw.get("dt"),
        )
    except ValueError as exc:
        raise ConfigError("plan", str(exc)) from None
    return plan, raw.get("out_dir", "runs")


def _thread_count(arg_value: int | None) -> int:
    if arg_value is not None:
        return max(1, arg_value)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _make_run_dir(out: str | None, base: str, label: str, force: bool) -> Path:
    if out is not None:
        path = Path(out)
        if path.exists() and any(path.iterdir()) and not force:
            raise ConfigError("out", f"{path} exists and is not empty (use --force)")
        path.mkdir(parents=True, exist_ok=True)
        return path
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    parent = Path(base)
    for i in range(1000):
        suffix = "" if i == 0 else f"-{i}"
        path = parent / f"{label}-{stamp}{suffix}"
        if not path.exists():
            path.mkdir(parents=True)
            return path
    raise ConfigError("out", f"could not find a fresh run directory under {parent}")


def cmd_simulate(args) -> int:
    try:
        raw = parse_config(args.config)
        plan, out_base = build_plan(raw)
        if args.seed is not None:
            plan = SweepPlan(**{**_plan_kwargs(plan), "master_seed": args.seed})
        run_dir = _make_run_dir(args.out, out_base, plan.protocol.protocol.label, args.force)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    workers = _thread_count(args.threads)
    try:
        result = run_sweep(plan, max_workers=workers)
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        print(f"compute error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE

    write_manifest(result, run_dir / "manifest.json")
    result.pk_table.write_csv(run_dir / "pk_table.csv")
    write_nw_csv(result.defects, run_dir / "nw_table.csv")

    print(f"wrote {run_dir} ({len(result.pk_table)} pk rows, "
          f"{len(result.defects)} defect rows, dt = {result.dt:.3g}, "
          f"{result.elapsed_s:.1f} s, {workers} workers)")
    if result.failures:
        for line in result.failures:
            print(f"cell failure: {line}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def _plan_kwargs(plan: SweepPlan) -> dict:
    return {f: getattr(plan, f) for f in ("protocol", "tau_list", "w2_list", "n_k",
                                          "n_realizations", "master_seed", "noise_unit", "dt")}


def cmd_fit(args) -> int:
    run_dir = Path(args.results_dir)
    nw_path = run_dir / "nw_table.csv"
    if not nw_path.exists():
        print(f"error: {nw_path} not found", file=sys.stderr)
        return EXIT_CONFIG
    records = read_nw_csv(nw_path)

    label = None
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        label = read_manifest(manifest_path).get("plan", {}).get("protocol")

    try:
        fit = fit_pipeline(records, kz_tau_min=args.kz_tau_min, kz_tau_max=args.kz_tau_max,
                           rate_tau_min=args.rate_tau_min, rate_tau_max=args.rate_tau_max)
    except (MissingBaselineError, InsufficientDataError, MismatchedTauGridError,
            NoMinimumError, ValueError) as exc:
        print(f"fit error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FIT

    alpha_theory = None
    if label is not None:
        proto = make_protocol(label, tau=1.0).protocol
        alpha_theory = ALPHA_THEORY[proto]

    payload = {
        "format": "xyquench-fit-1",
        "version": __version__,
        "protocol": label,
        "kz": {
            "c": fit.kz.c, "c_se": fit.kz.c_se,
            "beta": fit.kz.beta, "beta_se": fit.kz.beta_se,
            "tau_window": list(fit.kz.tau_window),
            "ln_residuals": list(fit.kz.ln_residuals),
        },
        "baseline_rate_r0": fit.baseline_rate,
        "noise": [
            {"w2": r.w2, "delta_r": r.delta_r, "delta_r_se": r.delta_r_se,
             "r_squared": r.r_squared, "tau_opt": t}
            for r, (_, t) in zip(fit.rates, fit.scaling.points)
        ],
        "alpha": fit.scaling.alpha,
        "alpha_se": fit.scaling.alpha_se,
        "alpha_theory": alpha_theory,
        "windows": {"kz_tau_min": args.kz_tau_min, "kz_tau_max": args.kz_tau_max,
                    "rate_tau_min": args.rate_tau_min, "rate_tau_max": args.rate_tau_max},
    }
    with open(run_dir / "fits.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(run_dir / "scaling.csv", "w", newline="") as fh:
        fh.write("ln_w2,ln_tau_opt\n")
        for w2, tau_opt in fit.scaling.points:
            fh.write(f"{format(math.log(w2), '.17g')},{format(math.log(tau_opt), '.17g')}\n")

    theory_text = f"{alpha_theory:+.4f}" if alpha_theory is not None else "n/a"
    print(f"{label or 'run'}: alpha = {fit.scaling.alpha:+.4f} +- {fit.scaling.alpha_se:.4f} "
          f"(theory {theory_text}); beta = {fit.kz.beta:.4f} +- {fit.kz.beta_se:.4f}, "
          f"c = {fit.kz.c:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate

_CHECK_SEED = 20210416


def _check_lz_oracle(_args) -> tuple[bool, str]:
    worst = 0.0
    for nu in (0.25, 0.5, 1.0, 2.0, 4.0):
        p = lz_excitation_probability(nu, -200.0, 200.0, 400_000)
        worst = max(worst, abs(p - landau_zener_formula(nu)))
    return worst < 1e-3, f"max |p - exp(-pi/2nu)| = {worst:.2e} (tol 1e-3)"


def _check_substitution(_args) -> tuple[bool, str]:
    rng = np.random.default_rng(_CHECK_SEED)
    worst = 0.0
    for name in ("transverse", "multicritical", "gapless"):
        spec = make_protocol(name, tau=8.0)
        for k in rng.uniform(0.05 * math.pi, 0.95 * math.pi, size=10):
            p_native = native_excitation_probability(spec, float(k), n_steps=20_000)
            p_lz = substituted_excitation_probability(spec, float(k), n_steps=20_000)
            worst = max(worst, abs(p_native - p_lz))
    return worst < 1e-6, f"max |p_native - p_lz| = {worst:.2e} (tol 1e-6)"


def _check_noise_moments(args) -> tuple[bool, str]:
    n = 1_000_000
    spec = NoiseSpec(intensity=1.0, dt=0.01, n_steps=n, stream_key=(0, 0, 0, 0, 0))
    r = sample_realization(spec, _CHECK_SEED)
    samples = r.samples + args.debug_noise_bias
    mean = float(samples.mean())
    var = float(samples.var())
    mean_ok = abs(mean) < 0.05          # 5 sigma of the sample mean
    var_ok = 99.0 <= var <= 101.0       # W^2/dt = 100, 5 sigma band
    auto_ok = all(abs(lag_autocorrelation(samples, lag)) < 5.0 / math.sqrt(n)
                  for lag in (1, 2, 5))
    ok = mean_ok and var_ok and auto_ok
    return ok, f"mean = {mean:+.4f} (|.| < 0.05), var = {var:.2f} (in [99, 101])"


def _check_noise_scaling(_args) -> tuple[bool, str]:
    key = (0, 0, 0, 0, 3)
    a = sample_realization(NoiseSpec(1.0, 0.01, 4096, key), _CHECK_SEED)
    b = sample_realization(NoiseSpec(4.0, 0.01, 4096, key), _CHECK_SEED)
    exact = np.array_equal(b.samples, 2.0 * a.samples)
    return exact, "intensity 4 W^2 path is exactly 2x the W^2 path on the same stream"


def _check_psd_flat(_args) -> tuple[bool, str]:
    reals = [sample_realization(NoiseSpec(1.0, 0.01, 65536, (0, 0, 0, 0, i)), _CHECK_SEED)
             for i in range(64)]
    table = mean_psd(reals)
    freqs, power = table[1:, 0], table[1:, 1]   # drop DC
    overall = float(power.mean())
    edges = np.logspace(math.log10(freqs[0]), math.log10(freqs[-1]), 8)
    worst = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        band = power[(freqs >= lo) & (freqs <= hi)]
        if band.size:
            worst = max(worst, abs(float(band.mean()) / overall - 1.0))
    return worst < 0.2, f"max band deviation {worst * 100:.1f}% of mean (tol 20%)"


def _check_step_halving(args) -> tuple[bool, str]:
    spec = transverse_protocol(20.0)
    k = math.pi / 2.0
    dt = stability_dt(spec, [k]) * args.debug_dt_scale
    n = max(1, int(round(spec.tau / dt)))
    p1 = native_excitation_probability(spec, k, n_steps=n)
    p2 = native_excitation_probability(spec, k, n_steps=2 * n)
    diff = abs(p1 - p2)
    return diff < 1e-4, f"|p(dt) - p(dt/2)| = {diff:.2e} (tol 1e-4)"


def _check_determinism(_args) -> tuple[bool, str]:
    plan = SweepPlan(protocol=transverse_protocol(2.0), tau_list=(2.0, 3.0),
                     w2_list=(0.0, 0.5), n_k=3, n_realizations=5, master_seed=7)
    a = run_sweep(plan, max_workers=1)
    b = run_sweep(plan, max_workers=2)
    same = (np.array_equal(a.pk_table.pk_mean, b.pk_table.pk_mean)
            and np.array_equal(a.pk_table.pk_se, b.pk_table.pk_se))
    return same, "1-worker and 2-worker sweeps produce bit-identical tables"


def cmd_validate(args) -> int:
    if args.dump_noise:
        spec = NoiseSpec(intensity=1.0, dt=0.01, n_steps=4096, stream_key=(0, 0, 0, 0, 0))
        write_realization_csv(sample_realization(spec, _CHECK_SEED), args.dump_noise)
        print(f"wrote noise realization to {args.dump_noise}")

    checks = [
        ("landau-zener oracle", _check_lz_oracle),
        ("substitution equivalence", _check_substitution),
        ("noise moments", _check_noise_moments),
        ("noise stream scaling", _check_noise_scaling),
        ("noise psd flatness", _check_psd_flat),
        ("step-halving convergence", _check_step_halving),
        ("thread determinism", _check_determinism),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn(args)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all_ok else EXIT_COMPUTE


def cmd_report(args) -> int:
    rows = []
    for d in args.results_dirs:
        path = Path(d) / "fits.json"
        if not path.exists():
            print(f"error: {path} not found (run 'xyquench fit' first)", file=sys.stderr)
            return EXIT_CONFIG
        with open(path) as fh:
            rows.append((Path(d).name, json.load(fh)))

    lines = ["# Optimal-quench scaling summary", ""]
    lines.append("| run | protocol | alpha_fit | alpha_theory | beta | c |")
    lines.append("|---|---|---|---|---|---|")
    for name, fit in rows:
        theory = fit.get("alpha_theory")
        lines.append("| {} | {} | {:+.4f} +- {:.4f} | {} | {:.4f} +- {:.4f} | {:.4g} |".format(
            name, fit.get("protocol") or "?", fit["alpha"], fit["alpha_se"],
            f"{theory:+.4f}" if theory is not None else "n/a",
            fit["kz"]["beta"], fit["kz"]["beta_se"], fit["kz"]["c"]))
    lines.append("")
    for name, fit in rows:
        lines.append(f"## {name}")
        lines.append("")
        lines.append("| W^2 | delta_r | R^2 | tau_opt |")
        lines.append("|---|---|---|---|")
        for entry in fit["noise"]:
            lines.append("| {:.4g} | {:.4g} | {:.4f} | {:.4g} |".format(
                entry["w2"], entry["delta_r"], entry["r_squared"], entry["tau_opt"]))
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xyquench",
                                     description="Noisy XY-chain quench simulator and "
                                                 "scaling analysis")
    parser.add_argument("--version", action="version", version=f"xyquench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a sweep from a config file")
    p_sim.add_argument("--config", required=True, help="flat key = value config file")
    p_sim.add_argument("--out", help="exact output directory (default: timestamped)")
    p_sim.add_argument("--seed", type=int, help="override master_seed from the config")
    p_sim.add_argument("--threads", type=int,
                       help=f"worker processes (default: ${THREADS_ENV} or all cores)")
    p_sim.add_argument("--force", action="store_true",
                       help="allow writing into an existing non-empty --out directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit defect-density scaling in a results directory")
    p_fit.add_argument("results_dir")
    p_fit.add_argument("--kz-tau-min", type=float, default=None)
    p_fit.add_argument("--kz-tau-max", type=float, default=None)
    p_fit.add_argument("--rate-tau-min", type=float, default=None)
    p_fit.add_argument("--rate-tau-max", type=float, default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_val = sub.add_parser("validate", help="run the built-in validation suite")
    p_val.add_argument("--debug-dt-scale", type=float, default=1.0,
                       help="multiply the step-halving check's dt (fault injection)")
    p_val.add_argument("--debug-noise-bias", type=float, default=0.0,
                       help="add a mean bias to the noise-moment check (fault injection)")
    p_val.add_argument("--dump-noise", default=None,
                       help="also write a sample noise realization CSV here")
    p_val.set_defaults(func=cmd_validate)

    p_rep = sub.add_parser("report", help="concatenate fits into a markdown summary")
    p_rep.add_argument("results_dirs", nargs="+")
    p_rep.add_argument("--out", default=None, help="write markdown here instead of stdout")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
