"""fracgrad: fractional-gradient optimization lab.

Fractional derivative kernels, classical and fractional-order
optimizers, a meta-learned optimizer that predicts the derivative order
and step size per update, and chaotic benchmarks (a 1D chaotic loss and
Lorenz parameter recovery) behind a convergence-rate harness.
"""

__version__ = "0.1.0"

from .frac_calculus import (FracConfig, FracJacobian2x2, PoleError,  # noqa: F401
                            frac_jacobian_example, frac_taylor_direction,
                            gamma_fn, gen_binomial, gl_derivative,
                            grid_transform, recip_gamma, rl_quadrature)
from .objectives import ObjectiveFn, lookup, registry, sample_start  # noqa: F401
from .optimizers import (OptimizerState, baseline_step, fgf_coefficients,  # noqa: F401
                         fgf_step, frac_gd_step, make_state)
from .meta_optimizer import (MetaNet, MetaTrainConfig, forward,  # noqa: F401
                             fourier_features, load_checkpoint, meta_gradient,
                             meta_loss, meta_train, save_checkpoint)
from .chaotic_lab import (DivergenceError, LorenzOptConfig, LorenzParams,  # noqa: F401
                          LorenzState, SweepGrid, es_gradient,
                          landscape_sweep, lorenz_loss, lorenz_rhs,
                          optimize_lorenz, simulate, tbtt_gradient)
from .bench import (BenchConfig, RunReport, converged, emit_report,  # noqa: F401
                    run_benchmark)
