"""sqglab: spectral solvers, minimum-action optimization, and rare-event
Monte Carlo for the dissipative quasi-geostrophic equation on the torus."""

from .errors import BlowUpError, ConfigurationError, FormatError
from .spectral import (
    PhysicalField,
    SpectralField,
    WaveGrid,
    apply_lambda_power,
    galerkin_project,
    lp_norm,
    make_grid,
    poisson_mollify,
    random_field,
    riesz_velocity,
    sobolev_norm,
    to_physical,
    to_spectral,
    unit_mode,
    zero_field,
)

__version__ = "0.1.0"

from .action import (  # noqa: E402
    ActionProblem,
    ObservableSpec,
    RateEstimate,
    TargetSpec,
    action,
    analytic_rate_linear,
    forward_observable,
    gradient_action_penalty,
    minimize_action,
)
from .dynamics import (  # noqa: E402
    DynamicsConfig,
    Trajectory,
    monitor_apriori,
    nonlinear_term,
    solve_delayed_mollified,
    solve_deterministic,
    solve_skeleton,
)
from .montecarlo import (  # noqa: E402
    RareEventSpec,
    ScalingStudy,
    estimate_probability,
    exponential_equivalence,
    lp_tail_study,
    run_scaling_study,
    scaling_fit,
    wilson_interval,
)
from .noise import (  # noqa: E402
    Control,
    GFunction,
    NoiseModel,
    NoisePath,
    apply_g,
    hs_norm_g,
    mix64,
    validate_hypotheses,
)
from .processes import (  # noqa: E402
    simulate_diffusion_only,
    simulate_small_noise,
    simulate_small_time,
    simulate_tilted,
)
from .io import (  # noqa: E402
    RunConfig,
    load_snapshot,
    parse_config,
    run_experiment,
    save_snapshot,
    write_table,
)
