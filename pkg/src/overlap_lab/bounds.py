"""Closed-form consequences of strict overlap.

Strict overlap with bound ``eta`` and treatment share ``pi`` confines the
covariate likelihood ratio ``dP1/dP0`` to a band ``[b_min, b_max]``. Every
function here maps that band (or its inputs) to an upper bound on some
discrepancy between the treated and control covariate laws. Nothing in this
module samples or looks at data.

Divergence directions follow one convention throughout: ``forward`` bounds
``D(P1 || P0) = E_P0[f(dP1/dP0)]`` and ``reverse`` bounds
``D(P0 || P1) = E_P1[f(dP0/dP1)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ._validation import check_eta, check_nonnegative, check_positive_int, check_probability

__all__ = [
    "OverlapSpec",
    "LikelihoodRatioBand",
    "DivergenceBounds",
    "MomentSummary",
    "RetentionBound",
    "lr_band",
    "chi2_bounds",
    "kl_bounds",
    "tv_bounds",
    "chi_alpha_bounds",
    "rukhin_f_bound",
    "mean_discrepancy_bound",
    "mad_bound",
    "functional_discrepancy_bound",
    "holder_discrepancy_bound",
    "classifier_accuracy_bound",
    "trimming_retention_bound",
    "efficiency_bound_term",
    "chi2_bound_balanced",
    "kl_bound_balanced",
]


@dataclass(frozen=True)
class OverlapSpec:
    """Strict-overlap regime: propensity in ``[eta, 1 - eta]``, treated share ``pi``."""

    eta: float
    pi: float = 0.5

    def __post_init__(self):
        eta = check_eta(self.eta)
        pi = float(self.pi)
        if not (eta <= pi <= 1.0 - eta):
            raise ValueError(f"pi must lie in [eta, 1 - eta] = [{eta}, {1.0 - eta}], got {pi!r}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "pi", pi)


@dataclass(frozen=True)
class LikelihoodRatioBand:
    b_min: float
    b_max: float

    def __post_init__(self):
        b_min, b_max = float(self.b_min), float(self.b_max)
        if not (0.0 < b_min <= 1.0 <= b_max < math.inf):
            raise ValueError(f"band must satisfy 0 < b_min <= 1 <= b_max < inf, got ({b_min}, {b_max})")
        object.__setattr__(self, "b_min", b_min)
        object.__setattr__(self, "b_max", b_max)

    @classmethod
    def from_overlap(cls, eta, pi=0.5):
        return lr_band(OverlapSpec(eta, pi))

    @property
    def degenerate(self):
        return self.b_min == self.b_max

    def inverted(self):
        """Band on ``dP0/dP1`` implied by this band on ``dP1/dP0``."""
        return LikelihoodRatioBand(1.0 / self.b_max, 1.0 / self.b_min)


@dataclass(frozen=True)
class DivergenceBounds:
    forward: float
    reverse: float
    kind: str

    def direction(self, name):
        if name in ("forward", "1||0"):
            return self.forward
        if name in ("reverse", "0||1"):
            return self.reverse
        raise ValueError(f"unknown direction {name!r}")


@dataclass(frozen=True)
class MomentSummary:
    """Group means and covariance operator norms of the covariate vector."""

    mean_0: np.ndarray
    mean_1: np.ndarray
    opnorm_0: float
    opnorm_1: float

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.mean_0, dtype=float))
        m1 = np.atleast_1d(np.asarray(self.mean_1, dtype=float))
        if m0.shape != m1.shape or m0.ndim != 1:
            raise ValueError("mean vectors must be 1-d and share a length")
        if not (self.opnorm_0 >= 0 and self.opnorm_1 >= 0):
            raise ValueError("operator norms must be nonnegative")
        object.__setattr__(self, "mean_0", m0)
        object.__setattr__(self, "mean_1", m1)

    @property
    def dim(self):
        return self.mean_0.size

    @property
    def mean_gap(self):
        return float(np.linalg.norm(self.mean_0 - self.mean_1))

    @property
    def mad(self):
        return float(np.mean(np.abs(self.mean_0 - self.mean_1)))


class RetentionBound(NamedTuple):
    raw: float
    clamped: float


def lr_band(spec: OverlapSpec) -> LikelihoodRatioBand:
    """Likelihood-ratio band equivalent to strict overlap, via Bayes' theorem."""
    odds = (1.0 - spec.pi) / spec.pi
    # at pi = eta or 1 - eta one endpoint is 1 in exact arithmetic; keep rounding from crossing it
    return LikelihoodRatioBand(
        b_min=min(odds * (spec.eta / (1.0 - spec.eta)), 1.0),
        b_max=max(odds * ((1.0 - spec.eta) / spec.eta), 1.0),
    )


def rukhin_f_bound(band: LikelihoodRatioBand, f: Callable[[float], float], kind="custom-f") -> DivergenceBounds:
    """Extremal f-divergence bound under a likelihood-ratio band.

    ``f`` must be convex with its minimum at 1. The forward bound is the
    value of ``D_f`` on the two-point law whose ratio only takes the band
    endpoints; the reverse bound is the same construction on the inverted
    band. A degenerate band ``(1, 1)`` forces identical laws and returns
    ``f(1)`` in both directions.
    """
    if band.degenerate:
        # b_min <= 1 <= b_max, so a zero-width band is exactly (1, 1)
        v = float(f(1.0))
        return DivergenceBounds(v, v, kind)
    return DivergenceBounds(_rukhin_one_side(band, f), _rukhin_one_side(band.inverted(), f), kind)


def _rukhin_one_side(band, f):
    lo, hi = band.b_min, band.b_max
    width = hi - lo
    return ((hi - 1.0) * f(lo) + (1.0 - lo) * f(hi)) / width


def chi2_bounds(band: LikelihoodRatioBand) -> DivergenceBounds:
    forward = (1.0 - band.b_min) * (band.b_max - 1.0)
    reverse = (1.0 - 1.0 / band.b_max) * (1.0 / band.b_min - 1.0)
    return DivergenceBounds(forward, reverse, "chi2")


def chi2_bound_balanced(eta):
    """Chi-square bound at ``pi = 0.5``; both directions coincide."""
    eta = check_eta(eta)
    return 1.0 / (eta * (1.0 - eta)) - 4.0


def kl_bounds(band: LikelihoodRatioBand) -> DivergenceBounds:
    if band.degenerate:
        return DivergenceBounds(0.0, 0.0, "kl")
    lo, hi = band.b_min, band.b_max
    width = hi - lo
    log_lo, log_hi = math.log(lo), math.log(hi)
    forward = ((1.0 - lo) * hi * log_hi + (hi - 1.0) * lo * log_lo) / width
    reverse = -((1.0 - lo) * log_hi + (hi - 1.0) * log_lo) / width
    return DivergenceBounds(forward, reverse, "kl")


def kl_bound_balanced(eta):
    """KL bound at ``pi = 0.5``; both directions coincide."""
    eta = check_eta(eta)
    return (1.0 - 2.0 * eta) * abs(math.log(eta / (1.0 - eta)))


def tv_bounds(band: LikelihoodRatioBand) -> DivergenceBounds:
    """Total-variation bound, ``f(t) = |t - 1| / 2``. Symmetric in direction."""
    if band.degenerate:
        return DivergenceBounds(0.0, 0.0, "tv")
    lo, hi = band.b_min, band.b_max
    value = (hi - 1.0) * (1.0 - lo) / (hi - lo)
    return DivergenceBounds(value, value, "tv")


def chi_alpha_bounds(band: LikelihoodRatioBand, alpha: float) -> DivergenceBounds:
    """Bounds on ``E_P0 |dP1/dP0 - 1|**alpha`` (forward) and its mirror."""
    alpha = float(alpha)
    if not alpha >= 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha!r}")
    kind = f"chi_alpha({alpha:g})"
    if band.degenerate:
        return DivergenceBounds(0.0, 0.0, kind)
    return DivergenceBounds(
        _chi_alpha_one_side(band.b_min, band.b_max, alpha),
        _chi_alpha_one_side(1.0 / band.b_max, 1.0 / band.b_min, alpha),
        kind,
    )


def _chi_alpha_one_side(lo, hi, alpha):
    below, above = 1.0 - lo, hi - 1.0
    return above * below * (below ** (alpha - 1.0) + above ** (alpha - 1.0)) / (hi - lo)


def _branch(scale, bound):
    # identical laws (bound 0) give zero discrepancy even for an infinite scale
    if bound == 0.0:
        return 0.0
    return math.sqrt(scale) * math.sqrt(bound)


def mean_discrepancy_bound(opnorm_0, opnorm_1, band: LikelihoodRatioBand) -> float:
    """Upper bound on ``||mu_0 - mu_1||`` from covariance operator norms.

    Free of the dimension: only the operator norms carry any ``p``
    dependence.
    """
    return functional_discrepancy_bound(opnorm_0, opnorm_1, band)


def mad_bound(p, opnorm_0, opnorm_1, band: LikelihoodRatioBand) -> float:
    """Bound on the mean absolute per-covariate mean gap, ``(1/p) sum_k |mu_0k - mu_1k|``."""
    p = check_positive_int(p, "p")
    return mean_discrepancy_bound(opnorm_0, opnorm_1, band) / math.sqrt(p)


def functional_discrepancy_bound(var_0, var_1, band: LikelihoodRatioBand) -> float:
    """Bound on ``|E_P1 g - E_P0 g|`` from the variances of ``g`` under each group.

    Infinite variances are allowed; if both are infinite the result is
    ``inf`` (a vacuous but valid bound).
    """
    var_0 = check_nonnegative(var_0, "var_0")
    var_1 = check_nonnegative(var_1, "var_1")
    chi2 = chi2_bounds(band)
    return min(_branch(var_0, chi2.forward), _branch(var_1, chi2.reverse))


def holder_discrepancy_bound(central_moment_q, alpha, band: LikelihoodRatioBand, direction=0) -> float:
    """Hoelder-type bound on ``|E_P1 g - E_P0 g|``.

    Parameters
    ----------
    central_moment_q : float
        ``||g - C||`` in ``L_q`` of the base measure, with ``q = alpha / (alpha - 1)``.
    alpha : float
        Exponent of the chi-alpha divergence, strictly greater than 1.
    direction : {0, 1}
        Base measure: 0 pairs the P0 moment with the forward chi-alpha
        bound, 1 pairs the P1 moment with the reverse bound.
    """
    alpha = float(alpha)
    if not alpha > 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha!r}")
    moment = check_nonnegative(central_moment_q, "central_moment_q")
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    chi = chi_alpha_bounds(band, alpha)
    bound = chi.forward if direction == 0 else chi.reverse
    if bound == 0.0 or moment == 0.0:
        return 0.0
    return moment * bound ** (1.0 / alpha)


def classifier_accuracy_bound(eta) -> float:
    """No classifier of treatment from covariates beats ``1 - eta``."""
    return 1.0 - check_eta(eta)


def trimming_retention_bound(bayes_accuracy, eta_tilde) -> RetentionBound:
    """Cap on the share of units a trimming rule at ``eta_tilde`` can keep.

    Returns both the raw ratio (which may exceed 1, meaning the bound is
    vacuous) and the value clamped to ``[0, 1]``.
    """
    acc = float(bayes_accuracy)
    if not (0.5 <= acc <= 1.0):
        raise ValueError(f"bayes_accuracy must lie in [0.5, 1], got {acc!r}")
    eta_tilde = check_eta(eta_tilde, "eta_tilde")
    raw = (1.0 - acc) / eta_tilde
    return RetentionBound(raw, min(max(raw, 0.0), 1.0))


def efficiency_bound_term(e, var1, var0, tau_x, tau_ate) -> float:
    """Pointwise integrand of the semiparametric efficiency bound.

    The ``n**-1/2`` prefactor is not applied; this is a population-level
    quantity. A zero propensity with positive treated variance (or a unit
    propensity with positive control variance) gives ``inf``.
    """
    e = check_probability(e, "e")
    var1 = check_nonnegative(var1, "var1")
    var0 = check_nonnegative(var0, "var0")
    return _ratio(var1, e) + _ratio(var0, 1.0 - e) + (float(tau_x) - float(tau_ate)) ** 2


def _ratio(var, prob):
    if prob == 0.0:
        return math.inf if var > 0.0 else 0.0
    return var / prob
