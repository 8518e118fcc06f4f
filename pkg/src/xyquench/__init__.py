"""Noisy linear quenches of the transverse-field XY chain, mode by mode.

The chain decouples into independent two-level pseudomomentum modes; this
package drives each mode across its critical point under a noisy control
field, accumulates defect densities by Monte-Carlo averaging over noise
paths, and fits the power laws that govern the optimal quench time.
"""

__version__ = "0.1.0"

from .model import (
    DegenerateGapError,
    Eigensystem,
    LZParams,
    PauliCoefficients,
    Protocol,
    ProtocolSpec,
    SingularModeError,
    gapless_protocol,
    hamiltonian_coefficients,
    instantaneous_eigensystem,
    lz_substitution,
    lz_window,
    make_protocol,
    multicritical_protocol,
    transverse_protocol,
)
from .noise import (
    ModulationChannel,
    ModulationSpec,
    NoiseRealization,
    NoiseSpec,
    modulation_to_intensity,
    psd_estimate,
    sample_realization,
)
from .evolve import (
    EvolutionConfig,
    GridMismatchError,
    NonFiniteStateError,
    QubitState,
    excitation_probability,
    landau_zener_formula,
    lz_excitation_probability,
    native_excitation_probability,
    prepare_ground_state,
    propagate,
    substituted_excitation_probability,
)
from .sweep import (
    DefectRecord,
    MissingModeError,
    PkTable,
    SweepPlan,
    SweepResult,
    defect_density,
    k_grid,
    run_mode,
    run_sweep,
)
from .scaling import (
    ALPHA_THEORY,
    BETA_THEORY,
    InsufficientDataError,
    MissingBaselineError,
    NoMinimumError,
    PipelineFit,
    fit_alpha,
    fit_kz_exponent,
    fit_noise_rate,
    fit_pipeline,
    optimal_quench_time,
)

__all__ = [name for name in dir() if not name.startswith("_")]
