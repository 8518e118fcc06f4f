"""Quench protocols of the transverse-field XY chain in momentum space.

After the usual free-fermion decoupling, each pseudomomentum mode k of the
chain is an independent two-level problem

    H(k, t) = a_z(k, t) sigma_z + a_x(k, t) sigma_x,

with couplings J = J_x + J_y and anisotropy gamma = (J_x - J_y)/J, so that
the static mode Hamiltonian reads -2[(J cos k + h) sigma_z + J gamma sin k
sigma_x].  Three linear quenches are supported (hbar = 1, energies in units
of the chain coupling, times in its inverse):

    transverse     h(t):      -5 -> 0,   J_x = 1, J_y = -1/3
    multicritical  J_x(t):     0 -> 3,   h = 2,   J_y = 1
    gapless        gamma(t):  -2 -> 2,   h = 1,   J = 1

Control noise eta(t) enters additively on the ramped parameter, which for
the three protocols produces the extra terms -2 eta sigma_z,
-2 eta (cos k sigma_z + sin k sigma_x) and -2 eta J sin k sigma_x
respectively.

Each protocol maps onto the standard Landau-Zener sweep
H_LZ = -(1/2)(sigma_x + nu_lz * t_lz * sigma_z) by an affine change of the
time variable; `lz_substitution` returns that map, which is used as an
independent cross-check of the native propagation.

Basis conventions used throughout: |0> = (1, 0) is the sigma_z = +1
eigenvector, and eigenvectors are phase-fixed so that their first nonzero
component is real and positive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class SingularModeError(ValueError):
    """The Landau-Zener substitution degenerates at this k (no avoided crossing)."""


class DegenerateGapError(ValueError):
    """Instantaneous gap below tolerance; the eigenbasis is ill-defined."""


class Protocol(enum.IntEnum):
    """The three linear quenches.  Integer values key the RNG streams."""

    TRANSVERSE = 0
    MULTICRITICAL = 1
    GAPLESS = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ProtocolSpec:
    """One linear quench: which parameter ramps, between which values, how fast.

    Only the couplings relevant to ``protocol`` are set; the remaining
    fields stay None.  Use the ``transverse_protocol`` /
    ``multicritical_protocol`` / ``gapless_protocol`` factories rather than
    constructing this directly.
    """

    protocol: Protocol
    tau: float
    ramp_start: float
    ramp_end: float
    j_x: float | None = None
    j_y: float | None = None
    h: float | None = None
    j: float | None = None

    def __post_init__(self) -> None:
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"quench time tau must be positive and finite, got {self.tau}")
        if self.ramp_start == self.ramp_end:
            raise ValueError("ramp start and end must differ")

    @property
    def velocity(self) -> float:
        """Ramp velocity of the driven parameter, (end - start)/tau."""
        return (self.ramp_end - self.ramp_start) / self.tau

    @property
    def ramp_zero_time(self) -> float:
        """Time at which the ramped parameter crosses zero (may lie outside [0, tau]).

        Shifting t by this value gives the frame in which the ramped
        parameter equals velocity * t, the frame the Landau-Zener time map
        is written in.
        """
        return -self.ramp_start / self.velocity

    def ramp_value(self, t):
        """Ramped parameter at time t in [0, tau] (linear interpolation)."""
        return self.ramp_start + self.velocity * np.asarray(t)

    def coefficient_maps(self, k):
        """Affine maps from the (noisy) ramped parameter lam to the Pauli coefficients.

        Returns (cz0, cz1, cx0, cx1) with a_z = cz0 + cz1*lam and
        a_x = cx0 + cx1*lam; accepts scalar or array k.
        """
        k = np.asarray(k, dtype=float)
        cos_k = np.cos(k)
        sin_k = np.sin(k)
        if self.protocol is Protocol.TRANSVERSE:
            j = self.j_x + self.j_y
            # a_z = -2(J cos k + h), a_x = -2 (J_x - J_y) sin k; lam = h + eta
            cz0 = -2.0 * j * cos_k
            cz1 = np.full_like(cos_k, -2.0)
            cx0 = -2.0 * (self.j_x - self.j_y) * sin_k
            cx1 = np.zeros_like(cos_k)
        elif self.protocol is Protocol.MULTICRITICAL:
            # a_z = -2[(J_x + J_y) cos k + h], a_x = -2 (J_x - J_y) sin k; lam = J_x + eta
            cz0 = -2.0 * (self.j_y * cos_k + self.h)
            cz1 = -2.0 * cos_k
            cx0 = 2.0 * self.j_y * sin_k
            cx1 = -2.0 * sin_k
        else:
            # a_z = -2(J cos k + h), a_x = -2 J gamma sin k; lam = gamma + eta
            cz0 = -2.0 * (self.j * cos_k + self.h)
            cz1 = np.zeros_like(cos_k)
            cx0 = np.zeros_like(sin_k)
            cx1 = -2.0 * self.j * sin_k
        return cz0, cz1, cx0, cx1


def transverse_protocol(tau: float, *, j_x: float = 1.0, j_y: float = -1.0 / 3.0,
                        ramp: tuple[float, float] = (-5.0, 0.0)) -> ProtocolSpec:
    """Quench of the transverse field h across the paramagnet/ferromagnet boundary."""
    return ProtocolSpec(Protocol.TRANSVERSE, tau, ramp[0], ramp[1], j_x=j_x, j_y=j_y)


def multicritical_protocol(tau: float, *, h: float = 2.0, j_y: float = 1.0,
                           ramp: tuple[float, float] = (0.0, 3.0)) -> ProtocolSpec:
    """Anisotropy quench J_x(t) passing through the multicritical point."""
    return ProtocolSpec(Protocol.MULTICRITICAL, tau, ramp[0], ramp[1], h=h, j_y=j_y)


def gapless_protocol(tau: float, *, h: float = 1.0, j: float = 1.0,
                     ramp: tuple[float, float] = (-2.0, 2.0)) -> ProtocolSpec:
    """Quench of the anisotropy gamma(t) along the gapless h = J line."""
    return ProtocolSpec(Protocol.GAPLESS, tau, ramp[0], ramp[1], h=h, j=j)


_FACTORIES = {
    Protocol.TRANSVERSE: transverse_protocol,
    Protocol.MULTICRITICAL: multicritical_protocol,
    Protocol.GAPLESS: gapless_protocol,
}


def make_protocol(name: str | Protocol, tau: float, **overrides) -> ProtocolSpec:
    """Build a protocol by name ("transverse", "multicritical", "gapless")."""
    if isinstance(name, Protocol):
        proto = name
    else:
        try:
            proto = Protocol[name.strip().upper()]
        except KeyError:
            valid = ", ".join(p.label for p in Protocol)
            raise ValueError(f"unknown protocol {name!r}; expected one of {valid}") from None
    return _FACTORIES[proto](tau, **overrides)


@dataclass(frozen=True)
class PauliCoefficients:
    """Instantaneous two-level Hamiltonian H = a_z sigma_z + a_x sigma_x."""

    a_z: float
    a_x: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a_z) and math.isfinite(self.a_x)):
            raise ValueError(f"non-finite Pauli coefficients ({self.a_z}, {self.a_x})")

    @property
    def energy(self) -> float:
        """Positive eigenvalue sqrt(a_z^2 + a_x^2); the gap is twice this."""
        return math.hypot(self.a_z, self.a_x)

    def matrix(self) -> np.ndarray:
        return np.array([[self.a_z, self.a_x], [self.a_x, -self.a_z]], dtype=complex)


def hamiltonian_coefficients(spec: ProtocolSpec, k: float, t: float,
                             eta: float = 0.0) -> PauliCoefficients:
    """Pauli coefficients of the mode Hamiltonian at time t with noise sample eta.

    The noise adds to the ramped parameter, so the extra term is
    -2 eta sigma_z (transverse), -2 eta (cos k sigma_z + sin k sigma_x)
    (multicritical) or -2 eta J sin k sigma_x (gapless).

    Raises ValueError if k is not strictly inside (0, pi) or t is outside
    [0, tau].
    """
    if not 0.0 < k < math.pi:
        raise ValueError(f"k = {k} outside the open interval (0, pi)")
    if not 0.0 <= t <= spec.tau:
        raise ValueError(f"t = {t} outside the quench window [0, {spec.tau}]")
    lam = float(spec.ramp_value(t)) + eta
    cz0, cz1, cx0, cx1 = spec.coefficient_maps(k)
    return PauliCoefficients(float(cz0 + cz1 * lam), float(cx0 + cx1 * lam))


@dataclass(frozen=True)
class LZParams:
    """Affine reduction of one k-mode to the standard Landau-Zener sweep.

    The sweep Hamiltonian is H_LZ = -(1/2)(sigma_x + nu_lz * t_lz * sigma_z)
    with t_lz = slope * t + offset.  Here t is measured in the frame where
    the ramped parameter equals velocity * t, i.e. native simulation time
    shifted by ``ProtocolSpec.ramp_zero_time``.
    """

    nu_lz: float
    slope: float
    offset: float

    def t_lz(self, t):
        return self.slope * np.asarray(t) + self.offset


def lz_substitution(spec: ProtocolSpec, k: float) -> LZParams:
    """Landau-Zener sweep rate and time map for mode k of the given protocol.

    Raises SingularModeError when the coupling denominator vanishes (e.g.
    sin k = 0): the mode has no avoided crossing in this parametrization.
    """
    sin_k = math.sin(k)
    cos_k = math.cos(k)
    nu = spec.velocity
    if spec.protocol is Protocol.TRANSVERSE:
        # nu_lz = nu_h / (2 J gamma sin k)^2, t_lz = 4 J gamma sin k (t + J cos k / nu_h)
        j = spec.j_x + spec.j_y
        jgamma = spec.j_x - spec.j_y  # J * gamma
        denom = 2.0 * jgamma * sin_k
        if abs(denom) < 1e-300:
            raise SingularModeError(f"transverse mode k = {k}: 2 J gamma sin k vanishes")
        nu_lz = nu / denom**2
        slope = 2.0 * denom
        offset = slope * j * cos_k / nu
    elif spec.protocol is Protocol.MULTICRITICAL:
        # nu_lz = nu_x / [2(J_y sin 2k + h sin k)]^2,
        # t_lz = 4(J_y sin 2k + h sin k) [t + (J_y cos 2k + h cos k)/nu_x]
        d = spec.j_y * math.sin(2.0 * k) + spec.h * sin_k
        if abs(d) < 1e-300:
            raise SingularModeError(f"multicritical mode k = {k}: J_y sin 2k + h sin k vanishes")
        nu_lz = nu / (2.0 * d) ** 2
        slope = 4.0 * d
        offset = slope * (spec.j_y * math.cos(2.0 * k) + spec.h * cos_k) / nu
    else:
        # nu_lz = nu_gamma sin k / [2(cos k + 1)]^2, t_lz = -4(cos k + 1) t
        denom = cos_k + 1.0
        if abs(denom) < 1e-300:
            raise SingularModeError(f"gapless mode k = {k}: cos k + 1 vanishes")
        nu_lz = nu * sin_k / (2.0 * denom) ** 2
        slope = -4.0 * denom
        offset = 0.0
    if not nu_lz > 0.0:
        raise SingularModeError(
            f"mode k = {k}: nonpositive sweep rate nu_lz = {nu_lz} (no avoided crossing)")
    return LZParams(nu_lz=nu_lz, slope=slope, offset=offset)


def lz_window(spec: ProtocolSpec, k: float) -> tuple[float, float]:
    """Image of the native quench window [0, tau] under the LZ time map."""
    params = lz_substitution(spec, k)
    t0 = -spec.ramp_zero_time
    return float(params.t_lz(t0)), float(params.t_lz(t0 + spec.tau))


@dataclass(frozen=True)
class Eigensystem:
    """Instantaneous eigenbasis of a_z sigma_z + a_x sigma_x.

    ground/excited have eigenvalues -E/+E with E = sqrt(a_z^2 + a_x^2);
    gap = 2E.  Components are real; the first nonzero one is positive.
    """

    ground: np.ndarray
    excited: np.ndarray
    gap: float


def default_degenerate_tol(a_z: float, a_x: float) -> float:
    """Gap tolerance below which the eigenbasis is treated as degenerate."""
    return 1e-12 * max(abs(a_z), abs(a_x), 1.0)


def _eigenbasis_arrays(az, ax):
    """Vectorized stable eigenvectors; returns (g0, g1, e0, e1, gap) arrays.

    Branches on the sign of a_z to avoid the cancellation in a_z -+ E, and
    applies the first-nonzero-component-positive phase convention.
    """
    az = np.asarray(az, dtype=float)
    ax = np.asarray(ax, dtype=float)
    e = np.hypot(az, ax)
    pos = az >= 0.0
    # ground: (a_x, -(a_z + E)) for a_z >= 0, (a_z - E, a_x) otherwise
    g0 = np.where(pos, ax, az - e)
    g1 = np.where(pos, -(az + e), ax)
    # excited: (a_z + E, a_x) for a_z >= 0, (a_x, E - a_z) otherwise
    e0 = np.where(pos, az + e, ax)
    e1 = np.where(pos, ax, e - az)
    with np.errstate(invalid="ignore", divide="ignore"):
        gn = np.hypot(g0, g1)
        en = np.hypot(e0, e1)
        g0, g1 = g0 / gn, g1 / gn
        e0, e1 = e0 / en, e1 / en
    # phase convention: first nonzero component real positive
    gs = np.where(g0 != 0.0, np.sign(g0), np.sign(g1))
    es = np.where(e0 != 0.0, np.sign(e0), np.sign(e1))
    return g0 * gs, g1 * gs, e0 * es, e1 * es, 2.0 * e


def instantaneous_eigensystem(c: PauliCoefficients,
                              degenerate_tol: float | None = None) -> Eigensystem:
    """Orthonormal instantaneous eigenbasis and gap of the two-level Hamiltonian.

    Raises DegenerateGapError when the gap falls below ``degenerate_tol``
    (default ``default_degenerate_tol``); callers decide how to handle
    exact crossings.
    """
    tol = degenerate_tol if degenerate_tol is not None else default_degenerate_tol(c.a_z, c.a_x)
    gap = 2.0 * c.energy
    if gap < tol:
        raise DegenerateGapError(f"gap {gap} below tolerance {tol}; eigenbasis ill-defined")
    g0, g1, e0, e1, _ = _eigenbasis_arrays(c.a_z, c.a_x)
    return Eigensystem(ground=np.array([g0, g1]), excited=np.array([e0, e1]), gap=float(gap))
