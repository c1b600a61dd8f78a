"""The red-pill/blue-pill worlds: reward distributions, phase schedules,
and the two built-in continual tasks.

The MDP has two states (worlds) and two actions (pills). Swallowing a pill
deterministically lands the agent in the matching world, and the reward for
the step is drawn from the DESTINATION world's distribution. A task is a
sequence of phases, each phase owning both world distributions and the tail
level tau the agent should care about while that phase is active, plus a
schedule of breakpoints saying when the phases switch.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping, Union

import numpy as np

from .risk import gaussian_cvar, mixture_cvar

__all__ = [
    "ContinualTask",
    "Gaussian",
    "Mixture",
    "Pill",
    "PointMass",
    "RewardDistribution",
    "RpbpPhase",
    "Schedule",
    "World",
    "active_phase",
    "best_state_cvar",
    "build_s_rpbp",
    "build_tau_rpbp",
    "dist_cvar",
    "dist_from_config",
    "dist_to_config",
    "phase_from_config",
    "phase_to_config",
    "rpbp_step",
    "sample_reward",
    "sample_rewards",
    "task_from_config",
    "task_to_config",
]


class World(IntEnum):
    RED = 0
    BLUE = 1


class Pill(IntEnum):
    """Actions. The pill's color is the world you wake up in."""

    RED = 0
    BLUE = 1


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in the open interval (0, 1), got {tau}")
    return tau


@dataclass(frozen=True)
class PointMass:
    value: float


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Mixture:
    components: tuple[Gaussian, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        # accept any sequences, store canonical tuples
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        if len(self.weights) != len(self.components):
            raise ValueError(
                f"{len(self.components)} components but {len(self.weights)} weights"
            )
        if any(not isinstance(c, Gaussian) for c in self.components):
            raise ValueError("mixture components must be Gaussian")
        if any(w < 0 for w in self.weights):
            raise ValueError("mixture weights must be nonnegative")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total!r}")


RewardDistribution = Union[PointMass, Gaussian, Mixture]


def sample_reward(dist: RewardDistribution, rng: np.random.Generator) -> float:
    """Draw one reward from the distribution using the supplied generator."""
    kind = type(dist)
    if kind is PointMass:
        return float(dist.value)
    if kind is Gaussian:
        return float(dist.mu + dist.sigma * rng.standard_normal())
    if kind is Mixture:
        u = rng.random()
        acc = 0.0
        for comp, w in zip(dist.components, dist.weights):
            acc += w
            if u < acc:
                break
        # float slack in the cumulative sum falls through to the last component
        return float(comp.mu + comp.sigma * rng.standard_normal())
    raise TypeError(f"unknown reward distribution: {dist!r}")


def sample_rewards(dist: RewardDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized draw of n rewards; same distributions as sample_reward."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    kind = type(dist)
    if kind is PointMass:
        return np.full(n, float(dist.value))
    if kind is Gaussian:
        return dist.mu + dist.sigma * rng.standard_normal(n)
    if kind is Mixture:
        cum = np.cumsum(dist.weights)
        idx = np.searchsorted(cum, rng.random(n), side="right")
        idx = np.minimum(idx, len(dist.components) - 1)  # cumulative float slack
        mus = np.array([c.mu for c in dist.components])
        sigmas = np.array([c.sigma for c in dist.components])
        return mus[idx] + sigmas[idx] * rng.standard_normal(n)
    raise TypeError(f"unknown reward distribution: {dist!r}")


@dataclass(frozen=True)
class RpbpPhase:
    """One stretch of the task: both world distributions plus the tail level
    the agent is asked to optimize while the phase is active."""

    red_dist: RewardDistribution
    blue_dist: RewardDistribution
    tau: float

    def __post_init__(self):
        _check_tau(self.tau)


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing breakpoints; phase i is active on
    [breakpoints[i-1], breakpoints[i]), with the last phase open-ended."""

    breakpoints: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(int(b) for b in self.breakpoints))
        for i, b in enumerate(self.breakpoints):
            if b < 1:
                raise ValueError(f"breakpoints must be >= 1, got {b}")
            if i > 0 and b <= self.breakpoints[i - 1]:
                raise ValueError(f"breakpoints must be strictly increasing: {self.breakpoints}")

    @property
    def phase_count(self) -> int:
        return len(self.breakpoints) + 1


def active_phase(schedule: Schedule, t: int) -> int:
    """Index of the phase active at time step t (nondecreasing in t)."""
    if t < 0:
        raise ValueError(f"time step must be >= 0, got {t}")
    return bisect_right(schedule.breakpoints, t)


@dataclass(frozen=True)
class ContinualTask:
    phases: tuple[RpbpPhase, ...]
    schedule: Schedule

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if len(self.phases) != self.schedule.phase_count:
            raise ValueError(
                f"{len(self.phases)} phases but schedule defines "
                f"{self.schedule.phase_count}"
            )


def rpbp_step(
    state: World, action: Pill, phase: RpbpPhase, rng: np.random.Generator
) -> tuple[World, float]:
    """One transition. The pill decides the destination world regardless of
    the current state; the reward is drawn from the destination's
    distribution."""
    next_state = World.RED if action == Pill.RED else World.BLUE
    dist = phase.red_dist if next_state is World.RED else phase.blue_dist
    return next_state, sample_reward(dist, rng)


def build_tau_rpbp() -> ContinualTask:
    """Two phases with identical rewards; only the tail level moves,
    from 0.9 (close to risk-neutral) to 0.1 (risk-averse) at step 50000.

    Red pays Gaussian(-0.7, 0.05). Blue pays a half/half mixture of
    Gaussian(-1.0, 0.05) and Gaussian(-0.2, 0.05): a better mean than red
    but a much worse left tail, so the preferred world flips with tau.
    """
    red = Gaussian(-0.7, 0.05)
    blue = Mixture((Gaussian(-1.0, 0.05), Gaussian(-0.2, 0.05)), (0.5, 0.5))
    return ContinualTask(
        phases=(
            RpbpPhase(red, blue, tau=0.9),
            RpbpPhase(red, blue, tau=0.1),
        ),
        schedule=Schedule((50000,)),
    )


def build_s_rpbp() -> ContinualTask:
    """Three phases with shifting reward means at a fixed tail level 0.25,
    switching at steps 40000 and 80000. The best world alternates
    red, blue, red as the means move."""

    def phase(red_mu: float, blue_mu_a: float, blue_mu_b: float) -> RpbpPhase:
        return RpbpPhase(
            red_dist=Gaussian(red_mu, 0.05),
            blue_dist=Mixture(
                (Gaussian(blue_mu_a, 0.05), Gaussian(blue_mu_b, 0.05)), (0.5, 0.5)
            ),
            tau=0.25,
        )

    return ContinualTask(
        phases=(
            phase(-0.7, -1.0, -0.2),
            phase(-1.5, -1.25, -1.0),
            phase(-0.5, -0.9, -0.5),
        ),
        schedule=Schedule((40000, 80000)),
    )


def dist_cvar(dist: RewardDistribution, tau: float) -> float:
    """Oracle CVaR of a reward distribution at tail level tau."""
    kind = type(dist)
    if kind is PointMass:
        _check_tau(tau)
        return float(dist.value)
    if kind is Gaussian:
        return gaussian_cvar(dist.mu, dist.sigma, tau)
    if kind is Mixture:
        return mixture_cvar(
            [(c.mu, c.sigma) for c in dist.components], dist.weights, tau
        )
    raise TypeError(f"unknown reward distribution: {dist!r}")


def best_state_cvar(phase: RpbpPhase, tau: float | None = None) -> tuple[World, float]:
    """The world with the higher oracle CVaR in this phase, and that value.

    tau defaults to the phase's own tail level. Ties go to red.
    """
    if tau is None:
        tau = phase.tau
    red_value = dist_cvar(phase.red_dist, tau)
    blue_value = dist_cvar(phase.blue_dist, tau)
    if red_value >= blue_value:
        return World.RED, red_value
    return World.BLUE, blue_value


# --- config mappings -------------------------------------------------------
# Plain JSON-friendly dicts so tasks can live in config files. Unknown or
# missing keys are rejected loudly rather than ignored.

def _require_keys(data: Mapping, expected: set[str], what: str) -> None:
    got = set(data)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        parts = []
        if missing:
            parts.append(f"missing {missing}")
        if extra:
            parts.append(f"unknown {extra}")
        raise ValueError(f"bad {what} keys: " + ", ".join(parts))


def dist_to_config(dist: RewardDistribution) -> dict:
    kind = type(dist)
    if kind is PointMass:
        return {"kind": "pointmass", "value": float(dist.value)}
    if kind is Gaussian:
        return {"kind": "gaussian", "mu": float(dist.mu), "sigma": float(dist.sigma)}
    if kind is Mixture:
        return {
            "kind": "mixture",
            "components": [[float(c.mu), float(c.sigma)] for c in dist.components],
            "weights": [float(w) for w in dist.weights],
        }
    raise TypeError(f"unknown reward distribution: {dist!r}")


def dist_from_config(data: Mapping) -> RewardDistribution:
    if not isinstance(data, Mapping):
        raise ValueError(f"distribution config must be a mapping, got {type(data).__name__}")
    kind = data.get("kind")
    if kind == "pointmass":
        _require_keys(data, {"kind", "value"}, "pointmass")
        return PointMass(float(data["value"]))
    if kind == "gaussian":
        _require_keys(data, {"kind", "mu", "sigma"}, "gaussian")
        return Gaussian(float(data["mu"]), float(data["sigma"]))
    if kind == "mixture":
        _require_keys(data, {"kind", "components", "weights"}, "mixture")
        comps = tuple(Gaussian(float(m), float(s)) for m, s in data["components"])
        return Mixture(comps, tuple(data["weights"]))
    raise ValueError(f"unknown distribution kind: {kind!r}")


def phase_to_config(phase: RpbpPhase) -> dict:
    return {
        "red": dist_to_config(phase.red_dist),
        "blue": dist_to_config(phase.blue_dist),
        "tau": float(phase.tau),
    }


def phase_from_config(data: Mapping) -> RpbpPhase:
    if not isinstance(data, Mapping):
        raise ValueError(f"phase config must be a mapping, got {type(data).__name__}")
    _require_keys(data, {"red", "blue", "tau"}, "phase")
    return RpbpPhase(
        red_dist=dist_from_config(data["red"]),
        blue_dist=dist_from_config(data["blue"]),
        tau=float(data["tau"]),
    )


def task_to_config(task: ContinualTask) -> dict:
    return {
        "phases": [phase_to_config(p) for p in task.phases],
        "breakpoints": list(task.schedule.breakpoints),
    }


def task_from_config(data: Mapping) -> ContinualTask:
    if not isinstance(data, Mapping):
        raise ValueError(f"task config must be a mapping, got {type(data).__name__}")
    _require_keys(data, {"phases", "breakpoints"}, "task")
    phases = tuple(phase_from_config(p) for p in data["phases"])
    return ContinualTask(phases=phases, schedule=Schedule(tuple(data["breakpoints"])))
