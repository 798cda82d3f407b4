"""Path-space importance sampling for SDE observation densities."""
from .bridge import PathEnsemble, brownian_kernel, ou_kernel, sample_bridge_ensemble, sample_brownian
from .core import (
    DegenerateBridgeError,
    DensityUndefinedError,
    DiffusionSchedule,
    DivergenceError,
    EstimationError,
    ObservationError,
    ObservationSet,
    PathweaverError,
    TimeGrid,
    build_grid,
)
from .drift import ConstantDrift, FunctionDrift, LinearDrift, ZeroDrift
from .girsanov import LogProbEstimate, action, log_prob, log_prob_grad, log_prob_gradients, marginal_log_prob
from .integrator import euler_maruyama, gradient_variance_probe, mse_grad, mse_loss
from .nn import MLP, AdamState, MlpSpec, adam_step, load_checkpoint, save_checkpoint
from .rng import RngKey, Role
from .transform import AffineMap, LogMap, reconstruct_sde, transformed_log_prob

__version__ = "0.1.0"
