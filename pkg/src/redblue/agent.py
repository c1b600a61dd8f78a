"""Tabular CVaR Q-learning.

Each step rewrites the observed reward through a hinge around the running
quantile estimate, then applies three coupled recursions in a fixed order:
the Q entry for the visited pair, the running CVaR estimate, and the running
VaR estimate. The VaR recursion branches on whether the raw reward cleared
the quantile threshold held BEFORE the step, and mixes in the CVaR value
from AFTER its own update; tests pin that ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Pill

__all__ = [
    "AgentState",
    "DivergenceError",
    "Hyperparameters",
    "greedy_action",
    "red_transform",
    "select_action",
    "update",
]


class DivergenceError(RuntimeError):
    """A value estimate left the finite range; the run is unusable."""


@dataclass(frozen=True)
class Hyperparameters:
    """Constant step sizes. The CVaR and VaR recursions move on the faster
    scale alpha * eta_cvar and alpha * eta_var respectively."""

    alpha: float = 2e-2
    eta_cvar: float = 0.1
    eta_var: float = 0.1
    epsilon: float = 0.1

    def __post_init__(self):
        # alpha = 0 is allowed: it freezes the agent, useful as a null case
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.eta_cvar < 0 or self.eta_var < 0:
            raise ValueError("eta_cvar and eta_var must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def alpha_cvar(self) -> float:
        return self.eta_cvar * self.alpha

    @property
    def alpha_var(self) -> float:
        return self.eta_var * self.alpha


@dataclass
class AgentState:
    """Q-table plus the two scalar tail estimates. One agent per run."""

    q: np.ndarray
    cvar_est: float = 0.0
    var_est: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 2:
            raise ValueError(f"q must be 2-d (states x actions), got shape {self.q.shape}")
        if not np.isfinite(self.q).all():
            raise ValueError("q contains non-finite entries")

    @classmethod
    def zeros(cls, n_states: int = 2, n_actions: int = 2) -> "AgentState":
        return cls(q=np.zeros((n_states, n_actions)))

    def copy(self) -> "AgentState":
        return AgentState(q=self.q.copy(), cvar_est=self.cvar_est, var_est=self.var_est)

    def to_snapshot(self) -> dict:
        """Plain-number form for logging and fixtures."""
        return {
            "q": [[float(v) for v in row] for row in self.q],
            "cvar_est": float(self.cvar_est),
            "var_est": float(self.var_est),
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "AgentState":
        return cls(
            q=np.asarray(snap["q"], dtype=float),
            cvar_est=float(snap["cvar_est"]),
            var_est=float(snap["var_est"]),
        )


def red_transform(r: float, var_est: float, tau: float) -> float:
    """Hinge rewrite of a reward around the quantile estimate: rewards at or
    above var_est clip to var_est, shortfalls below it are magnified by
    1/tau. Monotone in r, slope 1/tau below the threshold."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in the open interval (0, 1), got {tau}")
    gap = var_est - r
    if gap > 0.0:
        return var_est - gap / tau
    return var_est


def greedy_action(q_row) -> int:
    """Index of the larger of the two entries; ties go to the lower index."""
    return 0 if q_row[0] >= q_row[1] else 1


def select_action(
    agent: AgentState, s: int, epsilon: float, rng: np.random.Generator
) -> Pill:
    """Epsilon-greedy over the state's Q-row."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return Pill(int(rng.integers(2)))
    return Pill(greedy_action(agent.q[s]))


def update(
    agent: AgentState,
    s: int,
    a: int,
    r: float,
    s_next: int,
    tau: float,
    h: Hyperparameters,
) -> AgentState:
    """Apply one transition in place and return the same agent.

    Order is fixed: Q first, then CVaR, then VaR. The temporal-difference
    error uses the transformed reward with the running CVaR playing the role
    of the average-reward offset:

        delta = red_transform(r) - cvar_est + max_a' q[s_next, a'] - q[s, a]

    The VaR branch compares r against the threshold from before this call;
    when r falls short, the step is scaled by tau/(tau - 1), the derivative
    of the transform's shortfall arm. Exactly one Q entry changes.

    Raises DivergenceError (leaving the agent untouched) as soon as any new
    estimate is non-finite.
    """
    q = agent.q
    var_prev = agent.var_est
    r_t = red_transform(r, var_prev, tau)
    nxt = q[s_next]
    best_next = nxt[0] if nxt[0] >= nxt[1] else nxt[1]
    delta = r_t - agent.cvar_est + best_next - q[s, a]
    q_new = q[s, a] + h.alpha * delta
    cvar_new = agent.cvar_est + h.eta_cvar * h.alpha * delta
    if r >= var_prev:
        var_new = var_prev + h.eta_var * h.alpha * (delta + cvar_new - var_prev)
    else:
        var_new = var_prev + h.eta_var * h.alpha * (
            tau / (tau - 1.0) * delta + cvar_new - var_prev
        )
    if not (math.isfinite(q_new) and math.isfinite(cvar_new) and math.isfinite(var_new)):
        raise DivergenceError(
            f"non-finite estimate after transition (s={s}, a={a}, r={r}): "
            f"q={q_new}, cvar={cvar_new}, var={var_new}"
        )
    q[s, a] = q_new
    agent.cvar_est = cvar_new
    agent.var_est = var_new
    return agent
