"""Energy-stable parametric finite element solver for anisotropic curve shortening flow."""

from .anisotropy import AnisotropyDensity, make_density, perp, vec_norm
from .curve import (ElementField, EdgeStats, PeriodicGrid, PolygonalCurve,
                    circle_map, discrete_energy, discrete_phi_energy,
                    element_stats, is_convex, lumped_inner, mikula_map,
                    regular_polygon, sample_initial)
from .density import DensityBundle, midpoint_convexity_report
from .errors import (AnisoflowError, ConfigurationError,
                     DegenerateDirectionError, DegenerateEdgeError,
                     NonconvergenceError, StabilityViolationError)
from .geodesic import (FlatSurface, GraphSurface, MountainSurface, bump,
                       bump_derivatives, geodesic_bundle, lift, metric,
                       mountain_phi)
from .scheme import (CyclicBlockTridiagonal, Forcing, SchemeParams, StepReport,
                     Trajectory, assemble_jacobian, assemble_residual,
                     default_extinction_threshold, run, solve_step)
from .verify import (EocRecord, EocScenario, circle_tracking_error, eoc_study,
                     exact_circle_radius, fd_check,
                     isotropic_reference_residual, isotropic_reference_step,
                     polyline_is_convex, run_property_suite, wulff_boundary)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
