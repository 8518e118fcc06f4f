"""Delta-correlated control-field noise: sampling, spectra, modulation units.

The continuous model is zero-mean white Gaussian noise eta(t) with second
moment <eta(t) eta(t')> = W^2 delta(t - t'), W^2 >= 0 being the intensity.
On an integration grid of step dt the noise is held constant over each step
and drawn i.i.d. from N(0, W^2/dt), which reproduces the delta correlation
in the dt -> 0 limit (the generator producing it in hardware is band-limited
far above every Hamiltonian scale, so the step-constant reading is the
physical one).

Streams are keyed by (protocol, k_index, tau_index, w_index,
realization_index) through a counter-based generator (Philox seeded via
SeedSequence spawn keys), so any trajectory's path is reproducible in
isolation regardless of scheduling or thread count.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

#: Frequency-modulation deviation (kHz) that defines unit noise intensity.
FM_REFERENCE_KHZ = 60.0

StreamKey = tuple[int, int, int, int, int]


@dataclass(frozen=True)
class NoiseSpec:
    """Recipe for one discretized noise path.

    ``intensity`` is W^2 in simulation units (energy * time, hbar = 1);
    each of the ``n_steps`` samples has variance intensity/dt.
    """

    intensity: float
    dt: float
    n_steps: int
    stream_key: StreamKey = (0, 0, 0, 0, 0)

    def __post_init__(self) -> None:
        if not (self.intensity >= 0.0 and math.isfinite(self.intensity)):
            raise ValueError(f"intensity W^2 must be finite and >= 0, got {self.intensity}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if len(self.stream_key) != 5 or any(i < 0 for i in self.stream_key):
            raise ValueError(f"stream_key must be 5 non-negative integers, got {self.stream_key}")


@dataclass(frozen=True)
class NoiseRealization:
    """One sampled path; eta is held at samples[i] on the i-th step."""

    samples: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt


def stream_generator(master_seed: int, stream_key: StreamKey) -> np.random.Generator:
    """Counter-based generator for one (master_seed, stream_key) stream."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(i) for i in stream_key))
    return np.random.Generator(np.random.Philox(seq))


def sample_realization(spec: NoiseSpec, master_seed: int) -> NoiseRealization:
    """Draw the path for ``spec``; a pure function of (spec, master_seed).

    Samples are sigma * z with sigma = sqrt(W^2/dt) and z standard normal
    from the keyed stream, so paths at intensities W^2 and 4 W^2 on the
    same stream differ exactly by a factor of 2.
    """
    gen = stream_generator(master_seed, spec.stream_key)
    z = gen.standard_normal(spec.n_steps)
    sigma = math.sqrt(spec.intensity / spec.dt)
    return NoiseRealization(samples=sigma * z, dt=spec.dt)


def psd_estimate(realization: NoiseRealization) -> np.ndarray:
    """Periodogram of a realization as an array of (frequency, power) rows.

    One-sided density normalization: for white noise of intensity W^2 the
    mean power is flat at 2 W^2 up to the Nyquist frequency 1/(2 dt).
    Requires at least 256 samples.
    """
    if realization.n_steps < 256:
        raise ValueError(f"need at least 256 samples for a PSD estimate, got {realization.n_steps}")
    freqs, power = signal.periodogram(realization.samples, fs=1.0 / realization.dt,
                                      detrend=False)
    return np.column_stack([freqs, power])


def mean_psd(realizations: list[NoiseRealization]) -> np.ndarray:
    """Periodogram averaged over several realizations (variance reduction)."""
    if not realizations:
        raise ValueError("need at least one realization")
    first = psd_estimate(realizations[0])
    freqs = first[:, 0]
    total = first[:, 1].copy()
    for r in realizations[1:]:
        total += psd_estimate(r)[:, 1]
    return np.column_stack([freqs, total / len(realizations)])


class ModulationChannel(enum.Enum):
    FM = "fm"
    AM = "am"


@dataclass(frozen=True)
class ModulationSpec:
    """Hardware noise knob: FM deviation in kHz, or AM depth in [0, 1]."""

    channel: ModulationChannel
    deviation_khz: float | None = None
    depth: float | None = None

    def __post_init__(self) -> None:
        if self.channel is ModulationChannel.FM:
            if self.deviation_khz is None or self.deviation_khz < 0.0:
                raise ValueError(f"FM deviation must be >= 0 kHz, got {self.deviation_khz}")
        else:
            if self.depth is None or not 0.0 <= self.depth <= 1.0:
                raise ValueError(f"AM depth must lie in [0, 1], got {self.depth}")


def modulation_to_intensity(m: ModulationSpec) -> float:
    """Dimensionless relative intensity W^2 of a modulation setting.

    FM: (F / 60 kHz)^2; AM: A^2.  This is the unit the scaling analysis
    plots against; the sweep layer converts it to simulation units through
    its ``noise_unit`` calibration factor.
    """
    if m.channel is ModulationChannel.FM:
        return (m.deviation_khz / FM_REFERENCE_KHZ) ** 2
    return m.depth**2


def lag_autocorrelation(samples: np.ndarray, lag: int) -> float:
    """Normalized empirical autocorrelation at the given positive lag."""
    if lag < 1 or lag >= samples.shape[0]:
        raise ValueError(f"lag must lie in [1, n_steps), got {lag}")
    x = samples - samples.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-lag], x[lag:]) / denom)


def write_realization_csv(realization: NoiseRealization, path) -> None:
    """Dump a realization as rows of (step_index, t, eta)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_index", "t", "eta"])
        for i, eta in enumerate(realization.samples):
            writer.writerow([i, format(i * realization.dt, ".17g"), format(eta, ".17g")])
