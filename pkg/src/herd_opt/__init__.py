"""Anti-virus license allocation over heterogeneous regions via herd-immunity thresholds."""
from . import allocator, meanfield, montecarlo, spreading
from ._kernels import BACKEND
from .allocator import AllocationPlan, DeploymentSchedule, exhaustive_allocate, greedy_allocate, online_policy
from .errors import (CalibrationOverflowError, ConsistencyError, HerdOptError, InfeasibleError,
                     InstanceTooLargeError, InvalidArgumentError, RangeViolationError)
from .meanfield import (HitResult, RCurve, convexity_check, delta, h_offline, hit_natural, hit_online,
                        hit_with_events, r_curve, r_hat_offline, r_hat_online)
from .montecarlo import Population, SimReport, aggregate, run_episode, run_episodes, sample_population, simulate
from .spreading import (SpreadingProfile, build_empirical, build_gamma, build_homogeneous, build_powerlaw,
                        normalize_mean, validate)

__version__ = "0.1.0"
