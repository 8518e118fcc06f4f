"""Unitary propagation of single k-modes and batches of noisy trajectories.

Integrator: per step the exact 2x2 exponential of the Hamiltonian frozen at
the step midpoint (second-order Magnus),

    exp(-i dt (a_z sigma_z + a_x sigma_x))
        = cos(dt E) I - i sin(dt E) (a_z sigma_z + a_x sigma_x)/E,

with E = sqrt(a_z^2 + a_x^2).  Each step is exactly unitary, so the norm is
conserved to rounding no matter how long the run.  The noise sample is held
constant over the step, matching the discretized white-noise model.

Two execution paths share this step rule: a single-trajectory path that
composes the per-step SU(2) factors pairwise (used by the public
``propagate`` and the Landau-Zener cross-checks), and a wide vectorized path
(``run_trajectories``) that advances thousands of (k, realization) lanes in
lockstep for the Monte-Carlo sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    DegenerateGapError,
    ProtocolSpec,
    _eigenbasis_arrays,
    default_degenerate_tol,
    hamiltonian_coefficients,
    instantaneous_eigensystem,
    lz_substitution,
    lz_window,
)
from .noise import NoiseRealization


class GridMismatchError(ValueError):
    """Noise grid does not cover the quench window [0, tau] exactly."""


class NonFiniteStateError(RuntimeError):
    """Amplitudes went non-finite (dt too large, or NaN noise samples)."""


@dataclass
class QubitState:
    """Two complex amplitudes in the sigma_z basis; |0> = (1, 0).

    ``trajectory`` is filled by ``propagate`` when requested: rows of
    (t, Re psi_0, Im psi_0, Re psi_1, Im psi_1, instantaneous excitation
    probability in the noise-free eigenbasis).
    """

    amplitudes: np.ndarray
    trajectory: np.ndarray | None = None

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class EvolutionConfig:
    """Step size and trajectory recording flag.

    dt must respect dt * max_gap <= 0.05 for accuracy, and
    1/dt >= 100 * max_gap whenever noise is active (so the step-constant
    noise still looks white to the system); ``check_dt`` enforces both at
    run start.
    """

    dt: float
    store_trajectory: bool = False

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")


# ---------------------------------------------------------------------------
# dt policy


def max_gap(spec: ProtocolSpec, ks) -> float:
    """Largest noise-free instantaneous gap over the given modes and the ramp.

    E^2 is a convex quadratic in the ramped parameter, so scanning the two
    ramp endpoints bounds the whole window.
    """
    ks = np.asarray(ks, dtype=float)
    cz0, cz1, cx0, cx1 = spec.coefficient_maps(ks)
    worst = 0.0
    for lam in (spec.ramp_start, spec.ramp_end):
        e = np.hypot(cz0 + cz1 * lam, cx0 + cx1 * lam)
        worst = max(worst, float(e.max()))
    return 2.0 * worst


def stability_dt(spec: ProtocolSpec, ks, *, bandwidth_factor: float = 100.0) -> float:
    """Default step: 1/dt = bandwidth_factor * max gap (white-noise condition)."""
    return 1.0 / (bandwidth_factor * max_gap(spec, ks))


def check_dt(spec: ProtocolSpec, ks, dt: float, *, noisy: bool) -> None:
    """Enforce the accuracy bound and, for noisy runs, the bandwidth bound."""
    gap = max_gap(spec, ks)
    if dt * gap > 0.05:
        raise ValueError(
            f"dt = {dt} violates the stability bound dt * max_gap <= 0.05 (max gap {gap:.3g})")
    if noisy and dt * gap > 0.01:
        raise ValueError(
            f"dt = {dt} violates the white-noise bandwidth condition 1/dt >= 100 * max_gap "
            f"(max gap {gap:.3g})")


# ---------------------------------------------------------------------------
# single-trajectory path: per-step SU(2) factors composed pairwise


def _step_factors(az, ax, dt):
    """(c, d, o) with step unitary U = c I - i (d sigma_z + o sigma_x).

    c = cos(dt E), d = sin(dt E) a_z / E, o = sin(dt E) a_x / E; dt may be
    negative (backward windows of the Landau-Zener image map).
    """
    e = np.hypot(az, ax)
    theta = dt * e
    c = np.cos(theta)
    sfac = dt * np.sinc(theta / np.pi)
    return c, sfac * az, sfac * ax


def _compose_su2(c, d, o) -> np.ndarray:
    """Ordered product U_{n-1} ... U_0 of per-step factors, as a 2x2 matrix.

    Factors are stored as quaternions (w, x, y, z) = (c, o, 0, d) and
    multiplied pairwise (log-depth), which keeps the cost a few vector
    passes even for millions of steps.
    """
    w = np.asarray(c, dtype=float).copy()
    x = np.asarray(o, dtype=float).copy()
    y = np.zeros_like(w)
    z = np.asarray(d, dtype=float).copy()
    while w.shape[0] > 1:
        m = (w.shape[0] // 2) * 2
        a = slice(1, m, 2)   # later step of each pair
        b = slice(0, m, 2)   # earlier step
        nw = w[a] * w[b] - x[a] * x[b] - y[a] * y[b] - z[a] * z[b]
        nx = w[a] * x[b] + x[a] * w[b] + y[a] * z[b] - z[a] * y[b]
        ny = w[a] * y[b] - x[a] * z[b] + y[a] * w[b] + z[a] * x[b]
        nz = w[a] * z[b] + x[a] * y[b] - y[a] * x[b] + z[a] * w[b]
        if w.shape[0] % 2:
            nw = np.append(nw, w[-1])
            nx = np.append(nx, x[-1])
            ny = np.append(ny, y[-1])
            nz = np.append(nz, z[-1])
        w, x, y, z = nw, nx, ny, nz
    qw, qx, qy, qz = w[0], x[0], y[0], z[0]
    return np.array([[qw - 1j * qz, -qy - 1j * qx],
                     [qy - 1j * qx, qw + 1j * qz]])


def _midpoint_coefficients(spec: ProtocolSpec, k: float, dt: float, n_steps: int,
                           eta: np.ndarray | None):
    """Pauli coefficient arrays at the step midpoints of the quench window."""
    t_mid = (np.arange(n_steps) + 0.5) * dt
    lam = spec.ramp_value(t_mid)
    if eta is not None:
        lam = lam + eta
    cz0, cz1, cx0, cx1 = spec.coefficient_maps(k)
    return cz0 + cz1 * lam, cx0 + cx1 * lam


def prepare_ground_state(spec: ProtocolSpec, k: float) -> QubitState:
    """Instantaneous ground state of the noise-free Hamiltonian at t = 0."""
    eig = instantaneous_eigensystem(hamiltonian_coefficients(spec, k, 0.0))
    return QubitState(amplitudes=eig.ground.astype(complex))


def excitation_probability(state: QubitState, spec: ProtocolSpec, k: float) -> float:
    """|<E_k(tau)|psi>|^2 in the noise-free instantaneous basis at t = tau."""
    nrm = state.norm()
    if abs(nrm - 1.0) > 1e-6:
        raise ValueError(f"state norm {nrm} is not 1 within 1e-6")
    eig = instantaneous_eigensystem(hamiltonian_coefficients(spec, k, spec.tau))
    amp = eig.excited[0] * state.amplitudes[0] + eig.excited[1] * state.amplitudes[1]
    return min(1.0, float(abs(amp) ** 2))


def propagate(state: QubitState, spec: ProtocolSpec, k: float,
              noise: NoiseRealization | None, cfg: EvolutionConfig) -> QubitState:
    """Evolve a state across the quench window [0, tau].

    The step grid comes from ``noise`` when given (its n_steps * dt must
    equal tau) and from ``cfg.dt`` otherwise.  Raises GridMismatchError on
    an inconsistent grid and NonFiniteStateError if amplitudes blow up.
    """
    if noise is not None:
        dt, n_steps, eta = noise.dt, noise.n_steps, noise.samples
        if abs(cfg.dt - dt) > 1e-12 * dt:
            raise GridMismatchError(f"cfg.dt = {cfg.dt} but noise realization has dt = {dt}")
    else:
        dt = cfg.dt
        n_steps = int(round(spec.tau / dt))
        eta = None
    if n_steps < 1 or abs(n_steps * dt - spec.tau) > 1e-9 * max(1.0, spec.tau):
        raise GridMismatchError(
            f"step grid n_steps * dt = {n_steps * dt} does not cover tau = {spec.tau}")

    az, ax = _midpoint_coefficients(spec, k, dt, n_steps, eta)
    c, d, o = _step_factors(az, ax, dt)

    if not cfg.store_trajectory:
        u = _compose_su2(c, d, o)
        amps = u @ state.amplitudes
        if not np.all(np.isfinite(amps.view(float))):
            raise NonFiniteStateError("non-finite amplitudes after propagation")
        return QubitState(amplitudes=amps)

    amps = state.amplitudes.astype(complex).copy()
    history = np.empty((n_steps + 1, 2), dtype=complex)
    history[0] = amps
    for j in range(n_steps):
        a0 = (c[j] - 1j * d[j]) * amps[0] - 1j * o[j] * amps[1]
        a1 = -1j * o[j] * amps[0] + (c[j] + 1j * d[j]) * amps[1]
        amps[0], amps[1] = a0, a1
        history[j + 1] = amps
    if not np.all(np.isfinite(history.view(float))):
        raise NonFiniteStateError("non-finite amplitudes after propagation")

    t_grid = np.arange(n_steps + 1) * dt
    az0, ax0 = _noise_free_coefficients(spec, k, t_grid)
    _, _, e0, e1, _ = _eigenbasis_arrays(az0, ax0)
    p_inst = np.abs(e0 * history[:, 0] + e1 * history[:, 1]) ** 2
    traj = np.column_stack([t_grid, history[:, 0].real, history[:, 0].imag,
                            history[:, 1].real, history[:, 1].imag, p_inst])
    return QubitState(amplitudes=amps, trajectory=traj)


def _noise_free_coefficients(spec: ProtocolSpec, k: float, t):
    lam = spec.ramp_value(t)
    cz0, cz1, cx0, cx1 = spec.coefficient_maps(k)
    return cz0 + cz1 * lam, cx0 + cx1 * lam


def write_trajectory_csv(trajectory: np.ndarray, path) -> None:
    """Dump a recorded trajectory (t, Re/Im amplitudes, instantaneous p)."""
    header = "t,re_psi0,im_psi0,re_psi1,im_psi1,p_excited"
    np.savetxt(path, trajectory, delimiter=",", header=header, comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# Landau-Zener model: analytic oracle and propagated sweeps


def landau_zener_formula(nu_lz: float) -> float:
    """Asymptotic diabatic transition probability exp(-pi / (2 nu))."""
    return math.exp(-math.pi / (2.0 * nu_lz))


def lz_excitation_probability(nu_lz: float, t_start: float, t_end: float,
                              n_steps: int) -> float:
    """Propagate H_LZ = -(1/2)(sigma_x + nu t sigma_z) over [t_start, t_end].

    Starts in the instantaneous ground state at t_start and returns the
    excited-state population at t_end.  The window may run backward
    (t_end < t_start), as the image windows of some substitutions do.
    """
    dt = (t_end - t_start) / n_steps
    t_mid = t_start + (np.arange(n_steps) + 0.5) * dt
    az = -0.5 * nu_lz * t_mid
    ax = np.full(n_steps, -0.5)
    c, d, o = _step_factors(az, ax, dt)
    u = _compose_su2(c, d, o)

    g0, g1, e0, e1, _ = _eigenbasis_arrays(
        np.array([-0.5 * nu_lz * t_start, -0.5 * nu_lz * t_end]), np.array([-0.5, -0.5]))
    psi = u @ np.array([g0[0], g1[0]], dtype=complex)
    return min(1.0, float(abs(e0[1] * psi[0] + e1[1] * psi[1]) ** 2))


def native_excitation_probability(spec: ProtocolSpec, k: float, n_steps: int,
                                  noise: NoiseRealization | None = None) -> float:
    """Prepare, quench, measure one mode on an n_steps grid."""
    dt = spec.tau / n_steps
    state = prepare_ground_state(spec, k)
    state = propagate(state, spec, k, noise, EvolutionConfig(dt=dt))
    return excitation_probability(state, spec, k)


def substituted_excitation_probability(spec: ProtocolSpec, k: float, n_steps: int) -> float:
    """Same transition probability, computed in the Landau-Zener frame.

    Propagates the standard sweep over the image of [0, tau] under the
    substitution's time map, on the image of the native step grid.  For
    every protocol this must match ``native_excitation_probability`` with
    the same n_steps (noise-free) to rounding accuracy.
    """
    params = lz_substitution(spec, k)
    t_a, t_b = lz_window(spec, k)
    return lz_excitation_probability(params.nu_lz, t_a, t_b, n_steps)


# ---------------------------------------------------------------------------
# wide vectorized path for Monte-Carlo sweeps

# Taylor coefficients for cos(theta) and sin(theta)/theta in powers of theta^2;
# truncation error is below 1e-15 for |theta| <= 0.15 (the guarded range).
_COS_COEFFS = (1.0, -1.0 / 2.0, 1.0 / 24.0, -1.0 / 720.0, 1.0 / 40320.0)
_SINC_COEFFS = (1.0, -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0, 1.0 / 362880.0)
_SERIES_MAX_THETA2 = 0.15**2


def _horner(coeffs, x, out):
    np.multiply(x, coeffs[-1], out=out)
    for a in coeffs[-2:0:-1]:
        out += a
        out *= x
    out += coeffs[0]
    return out


def run_trajectories(spec: ProtocolSpec, k_lane: np.ndarray, dt: float, n_steps: int,
                     eta_blocks=None) -> np.ndarray:
    """Excitation probabilities for a batch of lanes evolved in lockstep.

    k_lane holds one k per lane (repeats encode multiple noise
    realizations of the same mode).  eta_blocks, when given, iterates over
    arrays of shape (block_steps, n_lanes) whose rows are the per-step
    noise samples, concatenating to exactly n_steps rows; None means
    noise-free.  Returns p in [0, 1] per lane, measured in the noise-free
    instantaneous basis at t = tau.
    """
    k_lane = np.asarray(k_lane, dtype=float)
    lanes = k_lane.shape[0]
    cz0, cz1, cx0, cx1 = (np.ascontiguousarray(a) for a in spec.coefficient_maps(k_lane))

    az0 = cz0 + cz1 * spec.ramp_start
    ax0 = cx0 + cx1 * spec.ramp_start
    g0, g1, _, _, gap0 = _eigenbasis_arrays(az0, ax0)
    tol = default_degenerate_tol(float(np.abs(az0).max()), float(np.abs(ax0).max()))
    if np.any(gap0 < tol):
        raise DegenerateGapError("degenerate gap at t = 0 on the requested modes")

    p0r, p0i = g0.copy(), np.zeros(lanes)
    p1r, p1i = g1.copy(), np.zeros(lanes)

    lam = np.empty(lanes)
    az = np.empty(lanes)
    ax = np.empty(lanes)
    th2 = np.empty(lanes)
    cbuf = np.empty(lanes)
    sbuf = np.empty(lanes)
    d = np.empty(lanes)
    o = np.empty(lanes)
    t0 = np.empty(lanes)
    t1 = np.empty(lanes)
    t2 = np.empty(lanes)
    t3 = np.empty(lanes)
    scratch = np.empty(lanes)

    rate = spec.velocity
    lam_base = spec.ramp_start + 0.5 * dt * rate
    dt2 = dt * dt

    block_iter = iter(eta_blocks) if eta_blocks is not None else None
    block = None
    row_in_block = 0

    for j in range(n_steps):
        if block_iter is not None:
            if block is None or row_in_block >= block.shape[0]:
                block = next(block_iter)
                row_in_block = 0
            np.add(block[row_in_block], lam_base + j * dt * rate, out=lam)
            row_in_block += 1
        else:
            lam.fill(lam_base + j * dt * rate)

        np.multiply(cz1, lam, out=az)
        az += cz0
        np.multiply(cx1, lam, out=ax)
        ax += cx0

        np.multiply(az, az, out=th2)
        np.multiply(ax, ax, out=scratch)
        th2 += scratch
        th2 *= dt2

        if th2.max() <= _SERIES_MAX_THETA2:
            _horner(_COS_COEFFS, th2, cbuf)
            _horner(_SINC_COEFFS, th2, sbuf)
            sbuf *= dt
        else:
            theta = np.sqrt(th2)
            np.cos(theta, out=cbuf)
            sbuf[:] = np.sinc(theta / np.pi)
            sbuf *= dt

        np.multiply(sbuf, az, out=d)
        np.multiply(sbuf, ax, out=o)

        # U psi with U = [[c - i d, -i o], [-i o, c + i d]], split into
        # real/imag parts: new0 = c p0 - i (d p0 + o p1), new1 = c p1 - i (o p0 - d p1)
        np.multiply(d, p0r, out=t0)
        np.multiply(o, p1r, out=scratch)
        t0 += scratch
        np.multiply(d, p0i, out=t1)
        np.multiply(o, p1i, out=scratch)
        t1 += scratch
        np.multiply(o, p0r, out=t2)
        np.multiply(d, p1r, out=scratch)
        t2 -= scratch
        np.multiply(o, p0i, out=t3)
        np.multiply(d, p1i, out=scratch)
        t3 -= scratch

        p0r *= cbuf
        p0r += t1
        p0i *= cbuf
        p0i -= t0
        p1r *= cbuf
        p1r += t3
        p1i *= cbuf
        p1i -= t2

    az_end = cz0 + cz1 * spec.ramp_end
    ax_end = cx0 + cx1 * spec.ramp_end
    _, _, e0, e1, gap_end = _eigenbasis_arrays(az_end, ax_end)
    if np.any(gap_end < tol):
        raise DegenerateGapError("degenerate gap at t = tau on the requested modes")

    p = (e0 * p0r + e1 * p1r) ** 2 + (e0 * p0i + e1 * p1i) ** 2
    if not np.all(np.isfinite(p)):
        raise NonFiniteStateError("non-finite excitation probabilities (check dt and noise)")
    return np.clip(p, 0.0, 1.0)
