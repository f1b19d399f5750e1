"""Lagrangian mean-field simulator for kinetic systems with inverse
power-law interaction, plus the long-time scattering diagnostics suite."""

from .kernel import RieszParams, potential, grad, hessian
from .initial_data import (GaussianData, QuadratureSpec, Ensemble, NormBundle,
                           evaluate_f0, grad_f0, smallness_norms, discretize,
                           sample_ensemble, write_ensemble_csv, read_ensemble_csv)
from .meanfield import (FieldSample, TreeParams, field_direct, field_gradient,
                        field_hessian_fd, field_tree, sample_field,
                        sup_field_norms, build_probes, core_spacing,
                        diagnostic_params)
from .tree import Octree, build_octree
from .characteristics import (TimeSchedule, FlowState, FlowHistory, step,
                              evolve, trace_points, backward_trace,
                              liouville_check, total_energy)
from .scattering import (log_free_coefficient, velocity_correction,
                         velocity_correction_gradient, velocity_correction_rate,
                         velocity_softening, node_accelerations, ref_flow,
                         MomentumLimits, momentum_limit, WaveTable,
                         wave_operator, wave_operator_limit, tail_limit_fit,
                         trace_seed_trajectories, modified_distribution,
                         transport_field, transport_field_divergence,
                         ResidualSeries, scattering_residual, seed_grid)
from .analysis import (RateFit, rate_fit, RadialGaussianDensity,
                       interpolation_ratio, build_report)
from .config import RunConfig, load_config, default_config, ci_config
from . import runner

__version__ = "0.1.0"
