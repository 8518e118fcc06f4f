"""Experiment orchestration: k grids, Monte-Carlo noise averaging, defect tables.

A sweep evaluates the defect density

    n_W(tau) = (1/N_k) sum_k p_k(tau, W^2)

on a grid of quench times and noise intensities.  The k grid samples (0, pi)
at midpoints, k_j = (j + 1/2) pi / N_k: the endpoints k = 0, pi carry no
avoided crossing (sin k = 0) and the Landau-Zener reduction is singular
there, while the midpoint rule converges to the same k-integral.

Each (k, tau, W^2, realization) trajectory draws its noise from an RNG
stream keyed by (protocol, k_index, tau_index, w_index,
realization_index), so tables are bit-identical no matter how cells are
scheduled across workers.  Cells that raise are recorded as NaN rows plus
an error log instead of aborting the rest of the sweep.

The ``w2_list`` knob is the dimensionless noise intensity the scaling
analysis plots against (the modulation-depth/deviation-squared axis);
``noise_unit`` converts it to the simulation-units intensity entering the
Hamiltonian, W^2_sim = noise_unit * w2.  The default keeps unit-knob runs
in the weak-coupling regime where noise-induced defects grow linearly in
tau: the hardware proportionality between the modulation depth and the
control-field fluctuation is device-specific, so it is an explicit,
manifest-recorded calibration here.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .evolve import check_dt, run_trajectories, stability_dt
from .model import ProtocolSpec, make_protocol
from .noise import stream_generator

DEFAULT_N_K = 50
DEFAULT_REALIZATIONS = 100
#: Simulation-units noise intensity corresponding to w2 = 1 on the knob.
DEFAULT_NOISE_UNIT = 1e-3

_NOISE_BLOCK_FLOATS = 8_000_000  # ~64 MB of staged noise samples per block


class MissingModeError(ValueError):
    """A (tau, w2) group does not contain every mode of the k grid."""


def k_grid(n_k: int) -> np.ndarray:
    """Equidistant midpoint grid k_j = (j + 1/2) pi / n_k, strictly inside (0, pi)."""
    if n_k < 1:
        raise ValueError(f"n_k must be a positive integer, got {n_k}")
    return (np.arange(n_k) + 0.5) * (math.pi / n_k)


@dataclass(frozen=True)
class SweepPlan:
    """Full description of one experiment; everything a rerun needs.

    ``protocol`` acts as a template: its tau field is replaced by each
    entry of ``tau_list`` in turn.
    """

    protocol: ProtocolSpec
    tau_list: tuple[float, ...]
    w2_list: tuple[float, ...]
    n_k: int = DEFAULT_N_K
    n_realizations: int = DEFAULT_REALIZATIONS
    master_seed: int = 42
    noise_unit: float = DEFAULT_NOISE_UNIT
    dt: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tau_list", tuple(float(t) for t in self.tau_list))
        object.__setattr__(self, "w2_list", tuple(float(w) for w in self.w2_list))
        if not self.tau_list:
            raise ValueError("tau_list must be non-empty")
        if any(t <= 0 for t in self.tau_list) or any(
                a >= b for a, b in zip(self.tau_list, self.tau_list[1:])):
            raise ValueError("tau_list must be positive and strictly increasing")
        if not self.w2_list:
            raise ValueError("w2_list must be non-empty")
        if any(w < 0 for w in self.w2_list) or any(
                a >= b for a, b in zip(self.w2_list, self.w2_list[1:])):
            raise ValueError("w2_list must be non-negative and strictly increasing")
        if self.n_k < 2:
            raise ValueError(f"n_k must be at least 2, got {self.n_k}")
        if self.n_realizations < 1:
            raise ValueError(f"n_realizations must be positive, got {self.n_realizations}")
        if not self.noise_unit > 0:
            raise ValueError(f"noise_unit must be positive, got {self.noise_unit}")

    def protocol_at(self, tau: float) -> ProtocolSpec:
        return dataclasses.replace(self.protocol, tau=tau)


def resolve_dt(plan: SweepPlan) -> float:
    """Step size for the sweep: the stability default, or the validated override."""
    ks = k_grid(plan.n_k)
    spec = plan.protocol_at(plan.tau_list[0])
    noisy = any(w > 0 for w in plan.w2_list)
    if plan.dt is None:
        return stability_dt(spec, ks)
    check_dt(spec, ks, plan.dt, noisy=noisy)
    return plan.dt


def _steps_for(tau: float, dt: float) -> tuple[int, float]:
    """Number of steps covering [0, tau] with effective step <= dt."""
    n = max(1, math.ceil(tau / dt - 1e-9))
    return n, tau / n


def _noise_blocks(gens, sigma: float, n_steps: int, block_len: int):
    """Yield (block_steps, lanes) noise arrays, each lane from its own stream."""
    lanes = len(gens)
    done = 0
    while done < n_steps:
        m = min(block_len, n_steps - done)
        staged = np.empty((lanes, m))
        for i, gen in enumerate(gens):
            staged[i] = gen.standard_normal(m)
        block = staged.T.copy()
        block *= sigma
        yield block
        done += m


def _mode_batch(spec: ProtocolSpec, ks: np.ndarray, k_indices, intensity: float,
                n_realizations: int, master_seed: int, tau_index: int, w_index: int,
                dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of p_k for a batch of modes at one (tau, W^2).

    Zero intensity runs a single deterministic trajectory per mode.
    """
    n_steps, dt_eff = _steps_for(spec.tau, dt)
    reps = n_realizations if intensity > 0 else 1
    k_lane = np.repeat(np.asarray(ks, dtype=float), reps)
    blocks = None
    if intensity > 0:
        pid = int(spec.protocol)
        gens = [stream_generator(master_seed, (pid, int(ki), tau_index, w_index, r))
                for ki in k_indices for r in range(reps)]
        sigma = math.sqrt(intensity / dt_eff)
        block_len = max(64, min(8192, _NOISE_BLOCK_FLOATS // max(1, len(gens))))
        blocks = _noise_blocks(gens, sigma, n_steps, block_len)
    p = run_trajectories(spec, k_lane, dt_eff, n_steps, blocks)
    p = p.reshape(len(ks), reps)
    mean = p.mean(axis=1)
    if reps > 1:
        se = p.std(axis=1, ddof=1) / math.sqrt(reps)
    else:
        se = np.zeros(len(ks))
    return mean, se


def run_mode(spec: ProtocolSpec, k: float, w2: float, n_realizations: int,
             master_seed: int, *, noise_unit: float = DEFAULT_NOISE_UNIT,
             k_index: int = 0, tau_index: int = 0, w_index: int = 0,
             dt: float | None = None) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of p_k for a single mode.

    w2 is the dimensionless knob (simulation intensity noise_unit * w2).
    The stream indices identify this mode inside a larger sweep; the
    defaults suit standalone use.
    """
    if dt is None:
        dt = stability_dt(spec, [k])
    mean, se = _mode_batch(spec, np.array([k]), [k_index], noise_unit * w2,
                           n_realizations, master_seed, tau_index, w_index, dt)
    return float(mean[0]), float(se[0])


@dataclass
class PkTable:
    """Per-mode excitation probabilities, one row per (k, tau, w2)."""

    k: np.ndarray
    tau: np.ndarray
    w2: np.ndarray
    pk_mean: np.ndarray
    pk_se: np.ndarray
    n_real: np.ndarray

    COLUMNS = ("k", "tau", "w2", "pk_mean", "pk_se", "n_real")

    def __len__(self) -> int:
        return len(self.k)

    def select(self, tau: float | None = None, w2: float | None = None) -> "PkTable":
        mask = np.ones(len(self), dtype=bool)
        if tau is not None:
            mask &= np.isclose(self.tau, tau, rtol=1e-12, atol=0.0)
        if w2 is not None:
            mask &= np.isclose(self.w2, w2, rtol=1e-12, atol=1e-300)
        return PkTable(*(getattr(self, c)[mask] for c in self.COLUMNS))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for i in range(len(self)):
                fh.write("%s,%s,%s,%s,%s,%d\n" % (
                    format(self.k[i], ".17g"), format(self.tau[i], ".17g"),
                    format(self.w2[i], ".17g"), format(self.pk_mean[i], ".17g"),
                    format(self.pk_se[i], ".17g"), int(self.n_real[i])))

    @classmethod
    def read_csv(cls, path) -> "PkTable":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        return cls(*(np.asarray(data[c], dtype=float) for c in cls.COLUMNS[:-1]),
                   n_real=np.asarray(data["n_real"], dtype=int))


@dataclass(frozen=True)
class DefectRecord:
    """Defect density n_W at one (tau, W^2): the k-grid mean of p_k."""

    tau: float
    w2: float
    n_w: float
    n_w_se: float


def defect_density(table: PkTable, tau: float, w2: float,
                   n_k: int | None = None) -> DefectRecord:
    """Average p_k over the grid; per-mode errors combine in quadrature / N_k."""
    sub = table.select(tau=tau, w2=w2)
    expected = n_k if n_k is not None else len(sub)
    if len(sub) == 0 or len(sub) != expected:
        raise MissingModeError(
            f"expected {expected} modes for (tau={tau}, w2={w2}), found {len(sub)}")
    n_w = float(np.mean(sub.pk_mean))
    n_w_se = float(math.sqrt(float(np.sum(sub.pk_se**2))) / len(sub))
    return DefectRecord(tau=tau, w2=w2, n_w=n_w, n_w_se=n_w_se)


def write_nw_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("tau,w2,nw,nw_se\n")
        for r in records:
            fh.write("%s,%s,%s,%s\n" % (format(r.tau, ".17g"), format(r.w2, ".17g"),
                                        format(r.n_w, ".17g"), format(r.n_w_se, ".17g")))


def read_nw_csv(path) -> list[DefectRecord]:
    data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    return [DefectRecord(tau=float(row["tau"]), w2=float(row["w2"]),
                         n_w=float(row["nw"]), n_w_se=float(row["nw_se"]))
            for row in data]


@dataclass
class SweepResult:
    plan: SweepPlan
    dt: float
    pk_table: PkTable
    defects: list[DefectRecord]
    failures: list[str]
    elapsed_s: float = 0.0


def _cell_worker(plan: SweepPlan, dt: float, tau_index: int, w_index: int):
    """Compute one (tau, w2) cell; module-level so process pools can pickle it."""
    spec = plan.protocol_at(plan.tau_list[tau_index])
    ks = k_grid(plan.n_k)
    mean, se = _mode_batch(spec, ks, range(plan.n_k), plan.noise_unit * plan.w2_list[w_index],
                           plan.n_realizations, plan.master_seed, tau_index, w_index, dt)
    return mean, se


def run_sweep(plan: SweepPlan, *, max_workers: int = 1) -> SweepResult:
    """Execute every (k, tau, w2, realization) trajectory of the plan.

    Cells are independent and deterministically seeded, so the result is
    bit-identical for any max_workers.  Per-cell failures become NaN rows
    plus an entry in ``failures``.
    """
    t_begin = time.perf_counter()
    dt = resolve_dt(plan)
    ks = k_grid(plan.n_k)
    cells = [(ti, wi) for ti in range(len(plan.tau_list)) for wi in range(len(plan.w2_list))]

    outcomes: dict[tuple[int, int], tuple[np.ndarray, np.ndarray] | Exception] = {}
    if max_workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = {cell: pool.submit(_cell_worker, plan, dt, *cell) for cell in cells}
            for cell, fut in futures.items():
                try:
                    outcomes[cell] = fut.result()
                except Exception as exc:  # noqa: BLE001 - per-cell isolation
                    outcomes[cell] = exc
    else:
        for cell in cells:
            try:
                outcomes[cell] = _cell_worker(plan, dt, *cell)
            except Exception as exc:  # noqa: BLE001 - per-cell isolation
                outcomes[cell] = exc

    k_col, tau_col, w2_col, mean_col, se_col, nreal_col = [], [], [], [], [], []
    defects: list[DefectRecord] = []
    failures: list[str] = []
    for ti, wi in cells:
        tau, w2 = plan.tau_list[ti], plan.w2_list[wi]
        reps = plan.n_realizations if w2 > 0 else 1
        out = outcomes[(ti, wi)]
        if isinstance(out, Exception):
            failures.append(f"cell (tau={tau}, w2={w2}): {type(out).__name__}: {out}")
            mean = np.full(plan.n_k, np.nan)
            se = np.full(plan.n_k, np.nan)
        else:
            mean, se = out
        k_col.append(ks)
        tau_col.append(np.full(plan.n_k, tau))
        w2_col.append(np.full(plan.n_k, w2))
        mean_col.append(mean)
        se_col.append(se)
        nreal_col.append(np.full(plan.n_k, reps, dtype=int))
        nw = float(np.mean(mean))
        nw_se = float(math.sqrt(float(np.sum(se**2))) / plan.n_k)
        defects.append(DefectRecord(tau=tau, w2=w2, n_w=nw, n_w_se=nw_se))

    table = PkTable(k=np.concatenate(k_col), tau=np.concatenate(tau_col),
                    w2=np.concatenate(w2_col), pk_mean=np.concatenate(mean_col),
                    pk_se=np.concatenate(se_col), n_real=np.concatenate(nreal_col))
    return SweepResult(plan=plan, dt=dt, pk_table=table, defects=defects,
                       failures=failures, elapsed_s=time.perf_counter() - t_begin)


# ---------------------------------------------------------------------------
# manifest


def plan_to_dict(plan: SweepPlan) -> dict:
    proto = plan.protocol
    couplings = {name: getattr(proto, name) for name in ("j_x", "j_y", "h", "j")
                 if getattr(proto, name) is not None}
    return {
        "protocol": proto.protocol.label,
        "couplings": couplings,
        "ramp": [proto.ramp_start, proto.ramp_end],
        "n_k": plan.n_k,
        "tau_list": list(plan.tau_list),
        "w2_list": list(plan.w2_list),
        "n_realizations": plan.n_realizations,
        "master_seed": plan.master_seed,
        "noise_unit": plan.noise_unit,
        "dt": plan.dt,
    }


def plan_from_dict(payload: dict) -> SweepPlan:
    couplings = {k: float(v) for k, v in payload.get("couplings", {}).items()}
    ramp = payload.get("ramp")
    if ramp is not None:
        couplings["ramp"] = (float(ramp[0]), float(ramp[1]))
    template = make_protocol(payload["protocol"], tau=float(payload["tau_list"][0]),
                             **couplings)
    return SweepPlan(
        protocol=template,
        tau_list=tuple(payload["tau_list"]),
        w2_list=tuple(payload["w2_list"]),
        n_k=int(payload.get("n_k", DEFAULT_N_K)),
        n_realizations=int(payload.get("n_realizations", DEFAULT_REALIZATIONS)),
        master_seed=int(payload.get("master_seed", 42)),
        noise_unit=float(payload.get("noise_unit", DEFAULT_NOISE_UNIT)),
        dt=payload.get("dt"),
    )


def write_manifest(result: SweepResult, path) -> None:
    """Self-describing run record: plan, resolved dt, code version, timing."""
    payload = {
        "format": "xyquench-run-1",
        "version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "plan": plan_to_dict(result.plan),
        "resolved_dt": result.dt,
        "dt_policy": "dt <= 0.05/max_gap (accuracy); dt <= 0.01/max_gap when noisy (bandwidth)",
        "elapsed_s": result.elapsed_s,
        "failures": result.failures,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
