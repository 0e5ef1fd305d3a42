"""Particle-system simulation and Monte Carlo measure-derivative estimation.

The package simulates interacting particle systems whose drift depends on
the empirical law of the system, integrates the associated variational
(tangent) flows, and assembles stochastic-integral weights into estimators
for derivatives of expectation functionals, both in a starting point and
along perturbations of the initial law.  A verification layer cross-checks
every estimator against common-random-number finite differences, Gaussian
quadrature closed forms, and empirical stability and moment bounds.
"""

__version__ = "0.1.0"

from .bismut import (BetaInvarianceReport, Estimate, WeightVector,
                     batch_estimate, beta_invariance_check,
                     dual_norm_lower_bound, estimate_classical,
                     estimate_intrinsic, weight_frozen, weight_meanfield)
from .errors import (ConfigError, GridMismatch, HeuristicRegime,
                     MeasureDependence, MemoryBudgetExceeded, MissingGradSigma,
                     MVGradError, NonFinite, ScheduleMismatch, SingularDiffusion,
                     SizeCap, UnequalSupport, UnknownFamily, UnsupportedScenario)
from .measure import (EmpiricalMeasure, TransportPlan, dual_exponent, lk_norm,
                      load_points_csv,
                      moments, pushforward, sample_initial, save_points_csv,
                      wasserstein)
from .model import (BismutSchedule, CylindricalDrift, Diffusion, EllipticityReport,
                    ModelSpec, Observable, PerturbationField, SingularDrift,
                    drift_eval, linear_schedule, lions_derivative,
                    quadratic_schedule, schedule_by_name, sine_schedule,
                    validate_ellipticity, zeta)
from .oracle import (MomentReport, StabilityReport, TVScalingReport,
                     finite_difference_intrinsic, fit_loglog_slope,
                     gaussian_quadrature_reference, moment_report,
                     richardson_intrinsic, stability_report, tv_gradient_scaling,
                     tv_sign_reference)
from .scenarios import (Scenario, all_scenarios, build_family, get_scenario,
                        scenario_names)
from .simulate import (FrozenFlow, ParticlePaths, TimeGrid, brownian_increments,
                       load_states, particle_increments, save_moment_flow_csv,
                       save_paths, simulate_decoupled, simulate_particles)
from .tangent import (TangentPaths, coupling_direct, cylindrical_coupling,
                      frozen_tangent, meanfield_tangent)
