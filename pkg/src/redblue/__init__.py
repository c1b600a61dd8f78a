"""Risk-aware continual Q-learning on the two-state red/blue pill worlds,
with an empirical tail-risk toolkit and a reproducible experiment CLI.

The learner optimizes the left-tail CVaR of its per-step reward by feeding
a quantile-hinged transform of each reward into an average-reward style
Q-update, while tracking running VaR and CVaR estimates alongside the
Q-table. The toolkit supplies the matching empirical estimators, exact
oracles for the built-in reward distributions, coherence axiom checks, and
probes for plasticity and risk-ordering stability.
"""

from .agent import (
    AgentState,
    DivergenceError,
    Hyperparameters,
    greedy_action,
    red_transform,
    select_action,
    update,
)
from .env import (
    ContinualTask,
    Gaussian,
    Mixture,
    Pill,
    PointMass,
    RewardDistribution,
    RpbpPhase,
    Schedule,
    World,
    active_phase,
    best_state_cvar,
    build_s_rpbp,
    build_tau_rpbp,
    dist_cvar,
    rpbp_step,
    sample_reward,
    sample_rewards,
)
from .risk import (
    AxiomCheck,
    AxiomReport,
    check_coherence,
    empirical_cvar,
    empirical_var,
    gaussian_cvar,
    mixture_cvar,
    tail_count,
    uniform_pair_source,
)
from .runner import (
    MetricSeries,
    ProbeReport,
    RollingSeries,
    RunRecord,
    aggregate_ci,
    derive_run_seeds,
    ordering_stability_probe,
    plasticity_probe,
    rolling_cvar,
    rolling_occupancy,
    rollout_policy,
    run_stream,
    stay_policy,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "AxiomCheck",
    "AxiomReport",
    "ContinualTask",
    "DivergenceError",
    "Gaussian",
    "Hyperparameters",
    "MetricSeries",
    "Mixture",
    "Pill",
    "PointMass",
    "ProbeReport",
    "RewardDistribution",
    "RollingSeries",
    "RpbpPhase",
    "RunRecord",
    "Schedule",
    "World",
    "active_phase",
    "aggregate_ci",
    "best_state_cvar",
    "build_s_rpbp",
    "build_tau_rpbp",
    "check_coherence",
    "derive_run_seeds",
    "dist_cvar",
    "empirical_cvar",
    "empirical_var",
    "gaussian_cvar",
    "greedy_action",
    "mixture_cvar",
    "ordering_stability_probe",
    "plasticity_probe",
    "red_transform",
    "rolling_cvar",
    "rolling_occupancy",
    "rollout_policy",
    "rpbp_step",
    "run_stream",
    "sample_reward",
    "sample_rewards",
    "select_action",
    "stay_policy",
    "tail_count",
    "uniform_pair_source",
    "update",
]
