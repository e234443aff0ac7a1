"""Monte Carlo laboratory for branching Brownian motion among Poissonian trap
fields, paired with deterministic rate-function numerics."""

from .branching import (
    BranchingParams,
    OffspringLaw,
    SkeletonParams,
    dyadic,
    extinction_probability,
    poisson_tail_bound,
    population_path,
    sample_population,
    skeleton_decomposition,
    subcritical_survival_bound,
    yule_tail,
)
from .errors import (
    AcceptanceError,
    BBMTrapsError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DomainError,
    LawError,
    LowAcceptanceWarning,
    SubcriticalError,
    TruncationError,
    WindowError,
)
from .estimators import (
    BallRule,
    ConditionalPopulationResult,
    EstimateResult,
    MCConfig,
    estimate_annealed_survival,
    estimate_conditional_population,
    estimate_conditional_range,
    estimate_trap_presence_given_survival,
    survival_curve,
    window_for,
)
from .fields import (
    POINT_FREE,
    TRAP_SET_FREE,
    TrapField,
    TrapFieldSpec,
    ball_volume,
    clearing_probability,
    field_measure,
    is_trap_free,
    sample_field,
    segment_hits_trap,
    sphere_surface,
)
from .rates import (
    Lemma1Bound,
    RateResult,
    critical_intensity,
    g_d,
    lemma1_bound,
    minimize_variational,
    objective,
    uniform_rate,
)
from .simulator import (
    PLAIN,
    TWO_TYPE,
    ParticleTree,
    SimulationConfig,
    default_dt,
    doomed_alive_along_line,
    extinction_decision,
    first_trapping_time,
    lookahead_horizon,
    population_at,
    range_radius,
    simulate,
)

__version__ = "0.1.0"
