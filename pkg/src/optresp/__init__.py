"""Optimal kernel perturbations for the linear response of 1-D gradient SDEs.

The transfer operator of ``dY = -V'(Y) dt + eps dW`` at time ``T`` is
discretized from implicit Fokker-Planck solves.  From it the package
computes the invariant density, the linear response to kernel
perturbations supported on ``D x D``, and the unit-norm perturbation that
maximizes the rate of change of an observable's expectation.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, parse_config
from .errors import AuditFailure, ConfigurationError, NumericError
from .fpe import (
    OUParams,
    PotentialSpec,
    analytic_ou_density,
    dirac_approximation,
    drift_samples,
    solve_fpe,
    step_implicit,
)
from .mesh import build_grid, build_time_grid, integrate, restrict_to_domain, simpson_weights
from .optimal import (
    CoefficientTable,
    ObservableSpec,
    WaveletBasis,
    WaveletIndex,
    assemble_optimal,
    coefficient,
    coefficient_table,
    enumerate_basis,
    eval_wavelet,
    objective_value,
)
from .response import (
    PerturbationKernel,
    Resolvent,
    apply_dot,
    expectation_rate,
    perturb_kernel,
    resolvent_solve,
    response,
)
from .transfer import (
    KernelMatrix,
    apply,
    build_kernel,
    invariant_density,
    norms,
    spectral_gap_estimate,
)
