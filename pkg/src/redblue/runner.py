"""Seeded experiment orchestration: learning runs, fixed-policy rollouts,
rolling-window metrics with cross-run confidence bands, and the empirical
plasticity and ordering-stability probes.

Runs are shared-nothing: every run owns one generator seeded from a master
seed, so records are bitwise reproducible and runs can execute in any order
or in parallel without talking to each other.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .agent import AgentState, Hyperparameters, select_action, update
from .env import ContinualTask, Pill, RpbpPhase, Schedule, World, rpbp_step

__all__ = [
    "MetricSeries",
    "ProbeReport",
    "RollingSeries",
    "RunRecord",
    "aggregate_ci",
    "derive_run_seeds",
    "ordering_stability_probe",
    "plasticity_probe",
    "rolling_cvar",
    "rolling_occupancy",
    "rollout_policy",
    "run_stream",
    "stay_policy",
]


@dataclass
class RunRecord:
    """Per-step log of one seeded run. states holds the world the agent was
    in when it chose the action; the reward came from the world the action
    led to."""

    seed: int
    steps: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    phases: np.ndarray
    snapshots: tuple = ()
    final_agent: AgentState | None = None

    def __post_init__(self):
        for name in ("states", "actions", "rewards", "phases"):
            arr = getattr(self, name)
            if len(arr) != self.steps:
                raise ValueError(f"{name} has length {len(arr)}, expected {self.steps}")


@dataclass(frozen=True)
class RollingSeries:
    """One run's rolling statistic. times[i] is the step at the right edge
    of the window that produced values[i]."""

    times: np.ndarray
    values: np.ndarray
    window: int
    label: str = ""


@dataclass(frozen=True)
class MetricSeries:
    """Cross-run aggregate of aligned rolling series."""

    times: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    runs: int
    window: int
    label: str = ""

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.mean) == len(self.ci_low) == len(self.ci_high) == n):
            raise ValueError("times, mean, ci_low, ci_high must have equal lengths")
        if not (np.all(self.ci_low <= self.mean) and np.all(self.mean <= self.ci_high)):
            raise ValueError("confidence band must bracket the mean")


@dataclass
class ProbeReport:
    kind: str
    passed: bool
    thresholds: dict
    max_gap: float | None = None
    gap_times: np.ndarray | None = None
    gap_values: np.ndarray | None = None
    sign_changes: int | None = None
    sub_margin_fraction: float | None = None
    dominant: str | None = None
    notes: str = ""


def derive_run_seeds(master_seed: int, n: int) -> list[int]:
    """n per-run seeds expanded from one master seed.

    Uses the numpy seed-sequence hash, so the mapping is stable across
    sessions and distinct runs never share a generator stream.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    words = np.random.SeedSequence(int(master_seed)).generate_state(n, dtype=np.uint64)
    return [int(w) for w in words]


def _segments(schedule: Schedule, steps: int):
    """Yield (start, stop, phase_index) covering range(steps) in order."""
    start = 0
    for k, b in enumerate(schedule.breakpoints):
        if b >= steps:
            break
        yield start, b, k
        start = b
    yield start, steps, len([b for b in schedule.breakpoints if b < steps])


def run_stream(
    task: ContinualTask,
    h: Hyperparameters,
    steps: int,
    seed: int,
    snapshot_interval: int = 0,
) -> RunRecord:
    """Run epsilon-greedy learning for `steps` transitions, starting in the
    blue world with all estimates at zero. Each step reads tau from the
    phase active at that step. Deterministic given (task, h, steps, seed).

    snapshot_interval > 0 additionally records the agent every that many
    steps; it is off by default because it costs time and memory.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if snapshot_interval < 0:
        raise ValueError(f"snapshot_interval must be >= 0, got {snapshot_interval}")
    rng = np.random.default_rng(seed)
    agent = AgentState.zeros()
    states = np.empty(steps, dtype=np.int8)
    actions = np.empty(steps, dtype=np.int8)
    rewards = np.empty(steps, dtype=np.float64)
    phases = np.empty(steps, dtype=np.int8)
    snapshots = []
    eps = h.epsilon
    s = World.BLUE
    for start, stop, k in _segments(task.schedule, steps):
        phase = task.phases[k]
        tau = phase.tau
        for t in range(start, stop):
            a = select_action(agent, s, eps, rng)
            s_next, r = rpbp_step(s, a, phase, rng)
            states[t] = s
            actions[t] = a
            rewards[t] = r
            phases[t] = k
            update(agent, s, a, r, s_next, tau, h)
            s = s_next
            if snapshot_interval and (t + 1) % snapshot_interval == 0:
                snapshots.append((t + 1, agent.to_snapshot()))
    return RunRecord(
        seed=int(seed),
        steps=steps,
        states=states,
        actions=actions,
        rewards=rewards,
        phases=phases,
        snapshots=tuple(snapshots),
        final_agent=agent.copy(),
    )


def stay_policy(world: World) -> dict[World, Pill]:
    """The stationary policy that always swallows the pill for `world`."""
    pill = Pill(int(world))
    return {World.RED: pill, World.BLUE: pill}


def rollout_policy(
    task: ContinualTask,
    policy: Mapping[World, Pill],
    steps: int,
    seed: int,
    start_state: World = World.BLUE,
) -> RunRecord:
    """Log `steps` transitions of a fixed stationary policy, no learning."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = np.random.default_rng(seed)
    states = np.empty(steps, dtype=np.int8)
    actions = np.empty(steps, dtype=np.int8)
    rewards = np.empty(steps, dtype=np.float64)
    phases = np.empty(steps, dtype=np.int8)
    s = World(start_state)
    for start, stop, k in _segments(task.schedule, steps):
        phase = task.phases[k]
        for t in range(start, stop):
            a = policy[s]
            s_next, r = rpbp_step(s, a, phase, rng)
            states[t] = s
            actions[t] = a
            rewards[t] = r
            phases[t] = k
            s = s_next
    return RunRecord(
        seed=int(seed), steps=steps, states=states, actions=actions,
        rewards=rewards, phases=phases,
    )


def _check_window(window: int, steps: int) -> None:
    if not 1 <= window <= steps:
        raise ValueError(f"window must lie in [1, {steps}], got {window}")


def rolling_occupancy(record: RunRecord, target_state: World, window: int) -> RollingSeries:
    """Fraction of the trailing `window` steps spent in target_state, for
    every step from `window` to the record length."""
    _check_window(window, record.steps)
    hits = np.zeros(record.steps + 1)
    np.cumsum(record.states == int(target_state), out=hits[1:])
    values = (hits[window:] - hits[:-window]) / window
    times = np.arange(window, record.steps + 1, dtype=np.int64)
    label = f"occupancy_{World(target_state).name.lower()}"
    return RollingSeries(times=times, values=values, window=window, label=label)


def rolling_cvar(record: RunRecord, tau: float, window: int) -> RollingSeries:
    """Left-tail mean (empirical CVaR) of the trailing `window` rewards at
    level tau, for every step from `window` to the record length."""
    _check_window(window, record.steps)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in the open interval (0, 1), got {tau}")
    rewards = np.ascontiguousarray(record.rewards, dtype=float)
    if not np.isfinite(rewards).all():
        raise ValueError("record rewards contain non-finite values")
    k = math.ceil(tau * window)
    values = _rolling_tail_mean(rewards, k, window)
    times = np.arange(window, record.steps + 1, dtype=np.int64)
    return RollingSeries(times=times, values=values, window=window, label=f"cvar_tau{tau:g}")


def _rolling_tail_mean(values: np.ndarray, k: int, window: int, resync: int = 4096) -> np.ndarray:
    """Mean of the k smallest entries of every length-`window` slice.

    Two lazily pruned heaps split each window into its k-tail (max-heap
    `low`, entries (-value, -index)) and the rest (min-heap `high`); a
    running sum tracks the tail. The sum is rebuilt with an exact fsum every
    `resync` slides, which bounds float drift: against a per-window sort and
    fsum this stays within ~1e-15. Cost is O(n log window).
    """
    n = values.size
    out = np.empty(n - window + 1)
    removed = np.zeros(n, dtype=bool)  # slid out of the window, may linger in a heap
    in_low = np.zeros(n, dtype=bool)
    low: list = []
    high: list = []

    def rebuild(start: int) -> float:
        order = np.argsort(values[start:start + window], kind="stable") + start
        tail_idx = order[:k]
        rest_idx = order[k:]
        low[:] = [(-values[i], -i) for i in tail_idx]
        high[:] = [(values[i], i) for i in rest_idx]
        heapq.heapify(low)
        heapq.heapify(high)
        in_low[tail_idx] = True
        in_low[rest_idx] = False
        return math.fsum(values[i] for i in tail_idx)

    tail_sum = rebuild(0)
    low_n, high_n = k, window - k
    out[0] = tail_sum / k
    for t in range(window, n):
        pos = t - window + 1
        if pos % resync == 0:
            tail_sum = rebuild(pos)
            low_n, high_n = k, window - k
            out[pos] = tail_sum / k
            continue
        v = values[t]
        while low and removed[-low[0][1]]:
            heapq.heappop(low)
        if low_n < k or (low and v < -low[0][0]):
            heapq.heappush(low, (-v, -t))
            in_low[t] = True
            low_n += 1
            tail_sum += v
        else:
            heapq.heappush(high, (v, t))
            high_n += 1
        leaving = t - window
        removed[leaving] = True
        if in_low[leaving]:
            low_n -= 1
            tail_sum -= values[leaving]
        else:
            high_n -= 1
        while low_n > k:
            while removed[-low[0][1]]:
                heapq.heappop(low)
            neg_v, neg_i = heapq.heappop(low)
            low_n -= 1
            tail_sum += neg_v  # neg_v is -value
            in_low[-neg_i] = False
            heapq.heappush(high, (-neg_v, -neg_i))
            high_n += 1
        while low_n < k and high_n > 0:
            while removed[high[0][1]]:
                heapq.heappop(high)
            v2, i2 = heapq.heappop(high)
            high_n -= 1
            heapq.heappush(low, (-v2, -i2))
            in_low[i2] = True
            low_n += 1
            tail_sum += v2
        out[pos] = tail_sum / k
    return out


# two-sided z values for the normal-approximation band
_Z_TABLE = {0.90: 1.645, 0.95: 1.96, 0.99: 2.576}


def aggregate_ci(series: Sequence[RollingSeries], level: float = 0.95) -> MetricSeries:
    """Pointwise cross-run mean with a normal-approximation confidence band:
    mean +- z * sd / sqrt(n), sample sd (ddof 1).

    All series must come from runs of equal length, so they share one time
    grid; anything misaligned is an error, not a resample.
    """
    if len(series) < 2:
        raise ValueError(f"need at least 2 runs to aggregate, got {len(series)}")
    z = _Z_TABLE.get(level)
    if z is None:
        raise ValueError(f"unsupported confidence level {level}; known: {sorted(_Z_TABLE)}")
    base = series[0]
    for other in series[1:]:
        if not np.array_equal(other.times, base.times):
            raise ValueError("series have misaligned time grids")
        if other.window != base.window:
            raise ValueError("series have mixed window lengths")
    data = np.vstack([s.values for s in series])
    mean = data.mean(axis=0)
    half = z * data.std(axis=0, ddof=1) / math.sqrt(len(series))
    return MetricSeries(
        times=base.times.copy(),
        mean=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        runs=len(series),
        window=base.window,
        label=base.label,
    )


def plasticity_probe(
    task: ContinualTask,
    policy: Mapping[World, Pill],
    variants: Sequence[tuple[World, int]],
    horizon: int = 100000,
    window: int = 10000,
    eps_gap: float = 0.02,
) -> ProbeReport:
    """Check that where a fixed policy's rolling tail risk settles does not
    depend on how the run began.

    variants gives two (start_state, seed) pairs; hand them different seeds
    so the two histories genuinely differ from the first step on. Both
    rollouts use the single phase's own tau. PASS iff the absolute gap
    between the two rolling CVaR curves stays within eps_gap over the last
    quarter of the horizon.
    """
    if len(task.phases) != 1:
        raise ValueError("plasticity probe needs a single-phase task")
    if horizon < 4 * window:
        raise ValueError(f"horizon must be >= 4 * window, got {horizon} < {4 * window}")
    (start_a, seed_a), (start_b, seed_b) = variants
    tau = task.phases[0].tau
    series_a = rolling_cvar(rollout_policy(task, policy, horizon, seed_a, start_a), tau, window)
    series_b = rolling_cvar(rollout_policy(task, policy, horizon, seed_b, start_b), tau, window)
    gap = np.abs(series_a.values - series_b.values)
    mask = series_a.times > horizon - horizon // 4
    max_gap = float(gap[mask].max())
    passed = max_gap <= eps_gap
    notes = ""
    if not passed:
        n_over = int(np.count_nonzero(gap[mask] > eps_gap))
        notes = f"gap exceeds eps_gap at {n_over} of {int(mask.sum())} checked steps"
    return ProbeReport(
        kind="plasticity",
        passed=passed,
        thresholds={"eps_gap": eps_gap, "horizon": horizon, "window": window},
        max_gap=max_gap,
        gap_times=series_a.times[mask],
        gap_values=gap[mask],
        notes=notes,
    )


def ordering_stability_probe(
    phase: RpbpPhase,
    policy_a: Mapping[World, Pill],
    policy_b: Mapping[World, Pill],
    tau: float,
    burn_in: int = 20000,
    horizon: int = 100000,
    margin: float = 0.05,
    window: int = 1000,
    seeds: tuple[int, int] = (0, 1),
    labels: tuple[str, str] = ("a", "b"),
) -> ProbeReport:
    """Check that one policy's rolling CVaR stays on the same side of the
    other's for the whole post-burn-in stretch.

    Steps where the difference sits inside +-margin are ignored as too close
    to call, but if they make up 5% or more of the checked steps the probe
    fails, unless NO step clears the margin at all, which is the degenerate
    tie case and passes by convention (e.g. comparing a policy to itself).
    """
    if not burn_in < horizon:
        raise ValueError(f"burn_in must be < horizon, got {burn_in} >= {horizon}")
    if burn_in < window:
        raise ValueError(f"burn_in must be >= window, got {burn_in} < {window}")
    task = ContinualTask(phases=(phase,), schedule=Schedule(()))
    series_a = rolling_cvar(rollout_policy(task, policy_a, horizon, seeds[0]), tau, window)
    series_b = rolling_cvar(rollout_policy(task, policy_b, horizon, seeds[1]), tau, window)
    mask = series_a.times >= burn_in
    diff = series_a.values[mask] - series_b.values[mask]
    over = np.abs(diff) > margin
    sub_margin_fraction = float(1.0 - over.sum() / diff.size)
    thresholds = {
        "margin": margin,
        "burn_in": burn_in,
        "horizon": horizon,
        "window": window,
        "max_sub_margin_fraction": 0.05,
    }
    if not over.any():
        return ProbeReport(
            kind="ordering-stability",
            passed=True,
            thresholds=thresholds,
            sign_changes=0,
            sub_margin_fraction=sub_margin_fraction,
            dominant=None,
            notes="degenerate: no step cleared the margin; tie passes by convention",
        )
    signs = np.sign(diff[over])
    sign_changes = int(np.count_nonzero(np.diff(signs)))
    passed = sign_changes == 0 and sub_margin_fraction < 0.05
    dominant = None
    if sign_changes == 0:
        dominant = labels[0] if signs[0] > 0 else labels[1]
    notes = ""
    if sign_changes > 0:
        notes = f"dominance flips {sign_changes} times past the margin"
    elif not passed:
        notes = f"sub-margin fraction {sub_margin_fraction:.3f} >= 0.05, too close to call"
    return ProbeReport(
        kind="ordering-stability",
        passed=passed,
        thresholds=thresholds,
        sign_changes=sign_changes,
        sub_margin_fraction=sub_margin_fraction,
        dominant=dominant,
        notes=notes,
    )
