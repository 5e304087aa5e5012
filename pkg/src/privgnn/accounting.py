"""Renyi-DP accounting: mechanism curves, composition, conversion to
(epsilon, delta)-DP, and numerical noise calibration.

Everything here is deterministic and uses natural logarithms. Curves are
functions of the Renyi order alpha > 1; composition is pointwise addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Default evaluation grid: integer orders (the subsampled Gaussian formula is
# only defined there) plus two fractional low orders for high-budget regimes.
DEFAULT_ALPHA_GRID = (1.25, 1.5) + tuple(float(a) for a in range(2, 65))


class InfeasibleBudgetError(Exception):
    """Raised when noise calibration cannot reach the target budget."""


def dense_alpha_grid(lo=1.001, hi=4000.0, points=4000):
    """Geometrically spaced orders for mechanisms defined at all alpha > 1.

    Dense enough that the grid optimum of a Gaussian curve is within ~1e-5
    relative of the true infimum over real orders.
    """
    ratio = (hi - 1.0) / (lo - 1.0)
    return tuple(
        1.0 + (lo - 1.0) * ratio ** (i / (points - 1)) for i in range(points)
    )


class RdpCurve:
    """RDP cost of a mechanism as a function of the order alpha.

    evaluate(alpha) returns epsilon(alpha) >= 0 and may raise ValueError for
    orders where the mechanism's formula is undefined (the conversion skips
    those grid points).
    """

    def __init__(self, fn, label=""):
        self._fn = fn
        self.label = label

    def evaluate(self, alpha):
        if alpha <= 1.0:
            raise ValueError("RDP order must be > 1")
        return self._fn(alpha)

    def evaluate_many(self, alphas):
        """Evaluate on an array of orders; undefined orders come back as inf.

        Curves whose formula broadcasts over numpy arrays are evaluated in one
        shot; anything else falls back to a scalar loop.
        """
        alphas = np.asarray(alphas, dtype=np.float64)
        try:
            values = np.asarray(self._fn(alphas), dtype=np.float64)
            if values.shape == alphas.shape:
                return values
        except (ValueError, TypeError):
            pass
        values = np.full(alphas.shape, np.inf)
        for i, alpha in enumerate(alphas):
            try:
                values[i] = self._fn(float(alpha))
            except ValueError:
                continue
        return values

    def __call__(self, alpha):
        return self.evaluate(alpha)

    @classmethod
    def zero(cls):
        return cls(lambda alpha: 0.0 * alpha, label="zero")


def gaussian_rdp(sensitivity, sigma) -> RdpCurve:
    """Gaussian mechanism curve: epsilon(alpha) = sensitivity^2 * alpha / (2 sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    factor = sensitivity * sensitivity / (2.0 * sigma * sigma)
    return RdpCurve(lambda alpha: factor * alpha, label=f"gaussian(s={sigma:g})")


def compose(curves) -> RdpCurve:
    """Adaptive composition: pointwise sum of the curves."""
    curves = list(curves)
    if not curves:
        raise ValueError("cannot compose an empty list of curves")
    return RdpCurve(
        lambda alpha: sum(c._fn(alpha) for c in curves),
        label="+".join(c.label for c in curves),
    )


@dataclass(frozen=True)
class SampledGaussianParams:
    """Per-step parameters of subsampled Gaussian iterations (Poisson model)."""

    noise_multiplier: float  # noise std divided by the clipping norm
    sampling_rate: float  # q = batch_size / train_set_size
    steps: int

    def __post_init__(self):
        if self.noise_multiplier <= 0:
            raise ValueError("noise_multiplier must be positive")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError("sampling_rate must be in (0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


def _log_binom(n, k):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _sampled_gaussian_eps(q, sigma, alpha):
    """One-step RDP of the Poisson-subsampled Gaussian at integer alpha >= 2.

    epsilon(alpha) = log( sum_k C(alpha,k) (1-q)^(alpha-k) q^k
                          exp(k(k-1)/(2 sigma^2)) ) / (alpha - 1),
    summed in log space with a max shift so large exponents cannot overflow.
    """
    log_q = math.log(q) if q > 0 else -math.inf
    log_1mq = math.log1p(-q) if q < 1 else -math.inf
    log_terms = []
    for k in range(alpha + 1):
        if q == 1.0 and k < alpha:
            continue  # zero coefficient
        term = _log_binom(alpha, k) + k * (k - 1) / (2.0 * sigma * sigma)
        if k > 0:
            term += k * log_q
        if k < alpha:
            term += (alpha - k) * log_1mq
        log_terms.append(term)
    shift = max(log_terms)
    total = shift + math.log(sum(math.exp(t - shift) for t in log_terms))
    return total / (alpha - 1)


def sampled_gaussian_rdp(params: SampledGaussianParams) -> RdpCurve:
    """RDP curve of ``steps`` subsampled Gaussian iterations.

    Defined on integer orders alpha >= 2 only; at q = 1 it coincides with the
    plain Gaussian curve alpha / (2 sigma^2) per step.
    """
    q, sigma, steps = params.sampling_rate, params.noise_multiplier, params.steps

    def fn(alpha):
        if alpha != int(alpha) or alpha < 2:
            raise ValueError(
                "subsampled Gaussian curve is defined on integer orders >= 2"
            )
        return steps * _sampled_gaussian_eps(q, sigma, int(alpha))

    return RdpCurve(fn, label=f"sgm(q={q:g},s={sigma:g},T={steps})")


def rdp_to_dp(curve: RdpCurve, delta, alpha_grid=DEFAULT_ALPHA_GRID):
    """Convert an RDP curve to (epsilon, delta)-DP, optimizing the order.

    Returns (epsilon, best_alpha) minimizing
    epsilon(alpha) + log(1/delta) / (alpha - 1) over the grid. Grid points
    where the curve is undefined are skipped.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    alphas = np.asarray(list(alpha_grid), dtype=np.float64)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    if alphas.min() <= 1.0:
        raise ValueError("all grid orders must be > 1")
    converted = curve.evaluate_many(alphas) + math.log(1.0 / delta) / (alphas - 1.0)
    best = int(np.argmin(converted))
    if not math.isfinite(converted[best]):
        raise ValueError("curve is undefined on the whole alpha grid")
    return float(converted[best]), float(alphas[best])


@dataclass(frozen=True)
class PrivacyBudget:
    """Target (epsilon, delta) at a given privacy level ('edge' or 'node').

    delta must additionally be smaller than the inverse number of private
    entities; that is checked where the graph is known (pipeline entry).
    """

    epsilon: float
    delta: float
    level: str

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.level not in ("edge", "node"):
            raise ValueError("level must be 'edge' or 'node'")


_SIGMA_LO = 1e-4
_SIGMA_HI = 1e6


def calibrate_sigma(
    target: PrivacyBudget,
    curve_builder,
    alpha_grid=DEFAULT_ALPHA_GRID,
    rel_tol=1e-6,
):
    """Smallest noise scale meeting the target budget, by bracketed bisection.

    ``curve_builder(sigma)`` must yield curves whose converted epsilon is
    non-increasing in sigma. The returned sigma is rounded to the conservative
    side: its achieved epsilon never exceeds target.epsilon, and is within
    ``rel_tol`` relative of it (unless the target is loose even at the
    smallest bracket edge).
    """

    def achieved(sigma):
        return rdp_to_dp(curve_builder(sigma), target.delta, alpha_grid)[0]

    lo = _SIGMA_LO
    if achieved(lo) <= target.epsilon:
        return lo
    hi = 1.0
    while achieved(hi) > target.epsilon:
        hi *= 4.0
        if hi > _SIGMA_HI:
            raise InfeasibleBudgetError(
                f"cannot reach epsilon={target.epsilon:g} with sigma <= {_SIGMA_HI:g}"
            )
    # Invariant: achieved(lo) > target >= achieved(hi).
    for _ in range(200):
        eps_hi = achieved(hi)
        if eps_hi >= target.epsilon * (1.0 - rel_tol):
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if achieved(mid) <= target.epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def node_level_total(
    pma_curve: RdpCurve,
    encoder_curve: RdpCurve,
    classifier_curve: RdpCurve,
    delta,
    alpha_grid=DEFAULT_ALPHA_GRID,
):
    """Total node-level (epsilon, delta) of the three composed training stages."""
    total = compose([encoder_curve, pma_curve, classifier_curve])
    return rdp_to_dp(total, delta, alpha_grid)
