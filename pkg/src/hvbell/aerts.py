"""Aerts' mass-on-a-circle model.

A probe sits at angle ``alpha`` on the unit circle. A device places mass
``m1`` at ``axis`` and ``1 - m1`` at ``axis + pi``; the result is +1 when the
inverse-square pull of ``m1`` wins, after which the probe sits on the winning
mass. Over chord distances ``2|sin(d/2)|`` and ``2|cos(d/2)|`` the comparison
reduces to ``m1 > sin^2(d/2)`` with ``d = alpha - axis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def _wrap(angle: float) -> float:
    return float(np.mod(angle, TWO_PI))


@dataclass(frozen=True)
class CircleState:
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _wrap(self.alpha))


@dataclass(frozen=True)
class DeviceConfig:
    axis: float
    m1: float

    def __post_init__(self):
        if not 0.0 <= self.m1 <= 1.0:
            raise ValueError(f"m1={self.m1} outside [0, 1]")
        object.__setattr__(self, "axis", _wrap(self.axis))

    @property
    def m2(self) -> float:
        return 1.0 - self.m1


def plus_one(alpha, axis, m1):
    """Force rule, vectorized. Ties go to -1."""
    return m1 > np.sin((np.asarray(alpha) - axis) / 2.0) ** 2


def measure(s: CircleState, d: DeviceConfig) -> tuple[int, CircleState]:
    if plus_one(s.alpha, d.axis, d.m1):
        return 1, CircleState(d.axis)
    return -1, CircleState(d.axis + math.pi)


def malus_probability(delta: float) -> float:
    """P(+1) at relative angle ``delta`` when m1 is uniform on [0, 1]."""
    return math.cos(delta / 2.0) ** 2


def counterfactual_joint(theta: float) -> float:
    """P(A = +1 and A' = +1) for devices ``theta`` apart, on one unmeasured (alpha, m1)."""
    return 0.5 - abs(math.sin(theta / 2.0)) / math.pi


def counterfactual_correlation(delta: float) -> float:
    """E[X_phi X_psi] for two force-rule variables on the same (alpha, m1), ``delta = phi - psi``."""
    return 1.0 - 4.0 * abs(math.sin(delta / 2.0)) / math.pi


@dataclass(frozen=True)
class SequentialCounts:
    n: int
    first_plus: int
    both_plus: int

    @property
    def conditional_rate(self) -> float:
        return self.both_plus / self.first_plus

    @property
    def conditional_se(self) -> float:
        return _binomial_se(self.conditional_rate, self.first_plus)

    @property
    def joint_rate(self) -> float:
        return self.both_plus / self.n

    @property
    def joint_se(self) -> float:
        return _binomial_se(self.joint_rate, self.n)


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def sequential_run(rng: np.random.Generator, theta: float, n_pairs: int) -> SequentialCounts:
    """Measure at axis 0, then at axis ``theta`` with a fresh m1, on ``n_pairs`` probes."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    alpha = rng.random(n_pairs) * TWO_PI
    m1_first = rng.random(n_pairs)
    m1_second = rng.random(n_pairs)
    first = plus_one(alpha, 0.0, m1_first)
    alpha = np.where(first, 0.0, math.pi)
    second = plus_one(alpha, theta, m1_second)
    return SequentialCounts(n_pairs, int(first.sum()), int((first & second).sum()))


def single_rate(rng: np.random.Generator, delta: float, n: int) -> tuple[float, float]:
    """Empirical P(+1) at relative angle ``delta`` with m1 uniform, and its SE."""
    hits = int(plus_one(np.full(n, delta), 0.0, rng.random(n)).sum())
    p = hits / n
    return p, _binomial_se(p, n)


def counterfactual_joint_mc(rng: np.random.Generator, theta: float, n: int) -> tuple[float, float]:
    """Monte Carlo P(A = +1 and A' = +1) over uniform (alpha, m1); returns (estimate, se)."""
    alpha = rng.random(n) * TWO_PI
    m1 = rng.random(n)
    both = plus_one(alpha, 0.0, m1) & plus_one(alpha, theta, m1)
    p = float(both.mean())
    return p, _binomial_se(p, n)


@dataclass(frozen=True)
class CounterfactualChsh:
    bell: float
    se: float
    correlations: tuple  # AB, AB', A'B, A'B'
    n: int


def counterfactual_chsh(rng: np.random.Generator, angles, n: int = 1_000_000) -> CounterfactualChsh:
    """Bell combination of four force-rule variables evaluated on the same (alpha, m1).

    ``angles`` are the device axes for A, A', B, B'. Since all four are defined
    on every sample, the per-sample Bell variable is +-2.
    """
    angles = tuple(float(x) for x in angles)
    if len(angles) != 4:
        raise ValueError(f"need exactly four angles, got {len(angles)}")
    alpha = rng.random(n) * TWO_PI
    m1 = rng.random(n)
    a, a2, b, b2 = (np.where(plus_one(alpha, phi, m1), 1, -1).astype(np.int8) for phi in angles)
    products = (a * b, a * b2, a2 * b, a2 * b2)
    per_sample = products[0].astype(np.int64) + products[1] + products[2] - products[3]
    corrs = tuple(float(p.mean()) for p in products)
    bell = float(per_sample.mean())
    se = float(per_sample.std(ddof=1) / math.sqrt(n)) if n > 1 else 2.0
    return CounterfactualChsh(bell, se, corrs, n)


def counterfactual_chsh_exact(angles) -> float:
    a, a2, b, b2 = (float(x) for x in angles)
    c = counterfactual_correlation
    return c(a - b) + c(a - b2) + c(a2 - b) - c(a2 - b2)
