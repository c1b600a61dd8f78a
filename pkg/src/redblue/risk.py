"""Tail-risk functionals: empirical VaR/CVaR estimators, closed-form and
numerical CVaR oracles, and a Monte-Carlo checker for the coherence axioms.

Everything here works in reward units, not losses, so the tail of interest
is the LEFT tail (low rewards). VaR is the lower tau-quantile of a sample
set and CVaR is the mean of the worst tau-fraction. Under this orientation
CVaR is concave, which flips the usual subadditivity axiom into
superadditivity; the axiom checker carries an explicit orientation flag
for exactly that reason.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.stats import norm

__all__ = [
    "AxiomCheck",
    "AxiomReport",
    "EPS",
    "RiskFunctional",
    "check_coherence",
    "empirical_cvar",
    "empirical_var",
    "gaussian_cvar",
    "mixture_cvar",
    "tail_count",
    "uniform_pair_source",
]

EPS = float(np.finfo(float).eps)

# A risk functional maps a sample set to a real number. Any tail level is
# bound beforehand, e.g. lambda v: empirical_cvar(v, 0.25).
RiskFunctional = Callable[[Sequence[float]], float]


def _as_samples(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sample set, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty sample set")
    if not np.isfinite(arr).all():
        raise ValueError("sample set contains non-finite values")
    return arr


def _check_tau(tau: float) -> float:
    tau = float(tau)
    # the open interval matters: tau = 0 has an empty tail, tau = 1 is the mean
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in the open interval (0, 1), got {tau}")
    return tau


def tail_count(n: int, tau: float) -> int:
    """Number of samples that make up the lower tau-tail: ceil(tau * n)."""
    return math.ceil(tau * n)


def empirical_var(samples: Sequence[float], tau: float) -> float:
    """Lower sample tau-quantile: the k-th smallest value with k = ceil(tau*n).

    The result is always an element of the sample set.
    """
    arr = _as_samples(samples)
    tau = _check_tau(tau)
    k = tail_count(arr.size, tau)
    return float(np.partition(arr, k - 1)[k - 1])


def empirical_cvar(samples: Sequence[float], tau: float) -> float:
    """Mean of the k = ceil(tau*n) smallest samples (the left-tail mean).

    The tail is summed with fsum so the mean is exactly rounded; that keeps
    translation invariance and positive homogeneity true to within a couple
    of machine epsilons instead of accumulating partition-order noise.
    """
    arr = _as_samples(samples)
    tau = _check_tau(tau)
    k = tail_count(arr.size, tau)
    tail = np.partition(arr, k - 1)[:k]
    return math.fsum(tail) / k


def gaussian_cvar(mu: float, sigma: float, tau: float) -> float:
    """Closed-form left-tail CVaR of a Gaussian: mu - sigma * phi(z_tau) / tau.

    phi is the standard normal density and z_tau its tau-quantile. sigma = 0
    degenerates to the point mass at mu.
    """
    tau = _check_tau(tau)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    z = norm.ppf(tau)
    return float(mu - sigma * norm.pdf(z) / tau)


def mixture_cvar(
    components: Sequence[tuple[float, float]],
    weights: Sequence[float],
    tau: float,
) -> float:
    """Left-tail CVaR of a finite Gaussian mixture, computed numerically.

    The tau-quantile is found by root bracketing on the mixture CDF and the
    tail expectation by adaptive quadrature from far below the lowest
    component. Both stages run well inside the documented 1e-4 contract
    (quantile residual ~1e-12, quadrature target 1e-11 absolute).

    Component sigmas must be strictly positive so the CDF is invertible;
    degenerate spreads have exact formulas and do not need this path.
    """
    tau = _check_tau(tau)
    if len(components) == 0:
        raise ValueError("mixture needs at least one component")
    mus = np.array([float(m) for m, _ in components])
    sigmas = np.array([float(s) for _, s in components])
    w = np.asarray(weights, dtype=float)
    if w.shape != mus.shape:
        raise ValueError(f"{mus.size} components but {w.size} weights")
    if (w < 0).any():
        raise ValueError("mixture weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"mixture weights must sum to 1, got {w.sum()!r}")
    if (sigmas <= 0).any():
        raise ValueError("mixture component sigmas must be > 0")

    def cdf(x: float) -> float:
        return float(np.dot(w, norm.cdf((x - mus) / sigmas)))

    def pdf(x: float) -> float:
        return float(np.dot(w, norm.pdf((x - mus) / sigmas) / sigmas))

    # 13 sigmas leaves < 1e-38 of any component's mass outside the bracket
    span = 13.0 * float(sigmas.max())
    lo = float((mus - 13.0 * sigmas).min())
    hi = float((mus + 13.0 * sigmas).max())
    while cdf(lo) >= tau:
        lo -= span
    while cdf(hi) <= tau:
        hi += span
    quantile = brentq(lambda x: cdf(x) - tau, lo, hi, xtol=1e-12)

    tail_mass, _ = quad(
        lambda x: x * pdf(x), lo, quantile, epsabs=1e-11, epsrel=1e-9, limit=200
    )
    return float(tail_mass / tau)


@dataclass(frozen=True)
class AxiomCheck:
    """Outcome of one axiom over a batch of Monte-Carlo trials."""

    name: str
    trials: int
    violations: int
    worst: float
    tol: float

    def __post_init__(self):
        if not 0 <= self.violations <= self.trials:
            raise ValueError(f"violations must lie in [0, {self.trials}]")
        if self.worst < 0:
            raise ValueError("worst violation magnitude must be >= 0")


@dataclass(frozen=True)
class AxiomReport:
    checks: tuple[AxiomCheck, ...]
    orientation: str

    @property
    def passed(self) -> bool:
        return all(c.violations == 0 for c in self.checks)

    def check(self, name: str) -> AxiomCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def uniform_pair_source(
    n_min: int = 2, n_max: int = 400, low: float = -10.0, high: float = 10.0
):
    """Default sample-pair source: two independent equal-length uniform sets.

    The second set is shuffled after drawing so the elementwise pairing
    carries no comonotonic structure.
    """
    if not 1 <= n_min <= n_max:
        raise ValueError(f"need 1 <= n_min <= n_max, got ({n_min}, {n_max})")

    def draw(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        n = int(rng.integers(n_min, n_max + 1))
        x = rng.uniform(low, high, n)
        y = rng.permutation(rng.uniform(low, high, n))
        return x, y

    return draw


def check_coherence(
    functional: RiskFunctional,
    pair_source=None,
    trials: int = 1000,
    tol: float = 8 * EPS,
    additivity_tol: float = 1e-9,
    orientation: str = "reward",
    seed: int = 0,
) -> AxiomReport:
    """Monte-Carlo check of the four coherence axioms on paired sample sets.

    Each trial draws a pair (x, y) of equal-length sample sets from
    pair_source, plus a shift c ~ U(-8, 8) and a scale lam ~ U(0, 5), and
    checks:

      monotonicity            rho(min(x, y)) <= rho(max(x, y)),
                              with the elementwise min/max pairing
      translation invariance  rho(x + c) == rho(x) + c
      positive homogeneity    rho(lam * x) == lam * rho(x)
      additivity direction    reward: rho(x + y) >= rho(x) + rho(y)
                              loss:   rho(x + y) <= rho(x) + rho(y)

    `tol` is relative: each comparison tolerates tol * scale where scale
    covers both operands and the input magnitudes. `additivity_tol` is
    absolute. Violations are counted and reported, never raised.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if tol < 0 or additivity_tol < 0:
        raise ValueError("tolerances must be >= 0")
    if orientation not in ("reward", "loss"):
        raise ValueError(f"orientation must be 'reward' or 'loss', got {orientation!r}")
    if pair_source is None:
        pair_source = uniform_pair_source()

    additivity_name = "superadditivity" if orientation == "reward" else "subadditivity"
    names = ("monotonicity", "translation_invariance", "positive_homogeneity", additivity_name)
    violations = dict.fromkeys(names, 0)
    worst = dict.fromkeys(names, 0.0)

    def record(name: str, defect: float, allowance: float):
        if defect > allowance:
            violations[name] += 1
            worst[name] = max(worst[name], defect)

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        x, y = pair_source(rng)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = float(rng.uniform(-8.0, 8.0))
        lam = float(rng.uniform(0.0, 5.0))
        mag = float(max(np.abs(x).max(), np.abs(y).max()))
        rho_x = functional(x)
        rho_y = functional(y)

        lower = functional(np.minimum(x, y))
        upper = functional(np.maximum(x, y))
        record("monotonicity", lower - upper,
               tol * max(1.0, abs(lower), abs(upper), mag))

        shifted = functional(x + c)
        record("translation_invariance", abs(shifted - (rho_x + c)),
               tol * max(1.0, abs(shifted), abs(rho_x + c), mag + abs(c)))

        scaled = functional(lam * x)
        record("positive_homogeneity", abs(scaled - lam * rho_x),
               tol * max(1.0, abs(scaled), abs(lam * rho_x), lam * mag))

        joint = functional(x + y)
        parts = rho_x + rho_y
        defect = parts - joint if orientation == "reward" else joint - parts
        record(additivity_name, defect, additivity_tol)

    tols = dict.fromkeys(names, tol)
    tols[additivity_name] = additivity_tol
    checks = tuple(
        AxiomCheck(name=n, trials=trials, violations=violations[n],
                   worst=worst[n], tol=tols[n])
        for n in names
    )
    return AxiomReport(checks=checks, orientation=orientation)
