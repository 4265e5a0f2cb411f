"""Exact computations on finite-support covariate laws.

A :class:`DiscretePair` holds the control law ``P0``, the treated law ``P1``
and the treated share ``pi`` on a common finite support. Everything the
bounds module asserts can be evaluated exactly here by summation, which is
what makes these routines the reference oracle for the closed forms.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import check_eta, check_probability_vector
from .bounds import LikelihoodRatioBand, MomentSummary, efficiency_bound_term

__all__ = [
    "DiscretePair",
    "ProductPair",
    "OutcomeMoments",
    "OverlapExtremes",
    "ChainRuleKL",
    "MAX_JOINT_SUPPORT",
    "propensity",
    "overlap_extremes",
    "divergence",
    "bayes_accuracy",
    "overlap_mass",
    "chain_rule_kl",
    "extremal_pair",
    "efficiency_bound",
    "exact_moments",
    "product_to_joint",
    "random_overlap_pair",
    "random_pair",
    "random_joint",
]

MAX_JOINT_SUPPORT = 2**16


@dataclass(frozen=True, eq=False)
class DiscretePair:
    """Control/treated laws on a shared finite support.

    ``coords`` optionally attaches a numeric vector to every support point so
    that moment-based bounds can be checked exactly.
    """

    support: tuple
    p0: np.ndarray
    p1: np.ndarray
    pi: float
    coords: np.ndarray | None = None

    def __post_init__(self):
        p0 = check_probability_vector(self.p0, "p0")
        p1 = check_probability_vector(self.p1, "p1")
        if p0.shape != p1.shape:
            raise ValueError("p0 and p1 must have the same length")
        support = tuple(_freeze(s) for s in self.support)
        if len(support) != p0.size:
            raise ValueError("support length must match the probability vectors")
        if len(set(support)) != len(support):
            raise ValueError("support points must be distinct")
        if np.any((p0 == 0) & (p1 == 0)):
            raise ValueError("support points with p0 = p1 = 0 are not allowed")
        pi = float(self.pi)
        if not 0.0 < pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {pi!r}")
        coords = self.coords
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != p0.size:
                raise ValueError("coords must have one row per support point")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "coords", coords)

    @property
    def size(self):
        return self.p0.size

    @property
    def mixture(self):
        """Marginal covariate law ``pi * P1 + (1 - pi) * P0``."""
        return self.pi * self.p1 + (1.0 - self.pi) * self.p0

    def to_dict(self):
        out = {
            "support": [_thaw(s) for s in self.support],
            "p0": self.p0.tolist(),
            "p1": self.p1.tolist(),
            "pi": self.pi,
        }
        if self.coords is not None:
            out["coords"] = self.coords.tolist()
        return out

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(d["support"], d["p0"], d["p1"], d["pi"], d.get("coords"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _freeze(s):
    return tuple(_freeze(x) for x in s) if isinstance(s, (list, tuple)) else s


def _thaw(s):
    return [_thaw(x) for x in s] if isinstance(s, tuple) else s


@dataclass(frozen=True)
class ProductPair:
    """Independent coordinates under both groups; the joint is the product."""

    coordinates: tuple

    def __post_init__(self):
        coords = tuple(self.coordinates)
        if not coords:
            raise ValueError("a product pair needs at least one coordinate")
        pis = {c.pi for c in coords}
        if len(pis) != 1:
            raise ValueError("every coordinate must share the same pi")
        object.__setattr__(self, "coordinates", coords)

    @property
    def pi(self):
        return self.coordinates[0].pi

    @property
    def dim(self):
        return len(self.coordinates)


@dataclass(frozen=True, eq=False)
class OutcomeMoments:
    var1: np.ndarray
    var0: np.ndarray
    tau_x: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.var1, self.var0, self.tau_x)]
        if len({a.shape for a in arrs}) != 1:
            raise ValueError("var1, var0 and tau_x must have equal lengths")
        if np.any(arrs[0] < 0) or np.any(arrs[1] < 0):
            raise ValueError("conditional variances must be nonnegative")
        for name, a in zip(("var1", "var0", "tau_x"), arrs):
            object.__setattr__(self, name, a)


class OverlapExtremes(NamedTuple):
    e_min: float
    e_max: float
    eta_star: float


class ChainRuleKL(NamedTuple):
    terms: np.ndarray
    total: float

    @property
    def average(self):
        return self.total / len(self.terms)


def propensity(pair: DiscretePair) -> np.ndarray:
    """``P(T = 1 | X = x)`` at every support point."""
    treated = pair.pi * pair.p1
    return treated / (treated + (1.0 - pair.pi) * pair.p0)


def overlap_extremes(pair: DiscretePair) -> OverlapExtremes:
    e = propensity(pair)
    e_min, e_max = float(e.min()), float(e.max())
    return OverlapExtremes(e_min, e_max, min(e_min, 1.0 - e_max))


def _f_divergence_terms(q_num, q_den, kind, alpha):
    """Sum of ``q_den * f(q_num / q_den)``, with the measure-theoretic limits."""
    if kind == "tv":
        return 0.5 * float(np.abs(q_num - q_den).sum())
    if kind == "kl":
        if np.any((q_den == 0) & (q_num > 0)):
            return math.inf
        mask = q_num > 0
        return float(np.sum(q_num[mask] * np.log(q_num[mask] / q_den[mask])))
    if kind in ("chi2", "chi_alpha"):
        a = 2.0 if kind == "chi2" else float(alpha)
        if np.any((q_den == 0) & (q_num > 0)):
            return math.inf
        mask = q_den > 0
        ratio = q_num[mask] / q_den[mask]
        return float(np.sum(q_den[mask] * np.abs(ratio - 1.0) ** a))
    raise ValueError(f"unknown divergence kind {kind!r}")


def divergence(pair: DiscretePair, kind: str, direction: str = "forward", alpha: float | None = None) -> float:
    """Exact f-divergence between the two laws of ``pair``.

    ``kind`` is one of ``chi2``, ``kl``, ``chi_alpha`` (needs ``alpha``) or
    ``tv``. ``forward`` is ``D(P1 || P0)``; ``reverse`` is ``D(P0 || P1)``.
    """
    if kind == "chi_alpha":
        if alpha is None or not float(alpha) >= 1.0:
            raise ValueError("chi_alpha needs alpha >= 1")
    if direction in ("forward", "1||0"):
        return _f_divergence_terms(pair.p1, pair.p0, kind, alpha)
    if direction in ("reverse", "0||1"):
        return _f_divergence_terms(pair.p0, pair.p1, kind, alpha)
    raise ValueError(f"unknown direction {direction!r}")


def bayes_accuracy(pair: DiscretePair) -> float:
    """Accuracy of the rule that predicts treatment iff ``e(x) >= 0.5``."""
    e = propensity(pair)
    return float(np.sum(np.maximum(e, 1.0 - e) * pair.mixture))


def overlap_mass(pair: DiscretePair, eta: float) -> float:
    """Marginal mass of ``{eta <= e(x) <= 1 - eta}``."""
    eta = check_eta(eta)
    e = propensity(pair)
    inside = (e >= eta) & (e <= 1.0 - eta)
    return float(pair.mixture[inside].sum())


def chain_rule_kl(pair, direction: str = "forward") -> ChainRuleKL:
    """Per-coordinate terms of the KL chain rule.

    For a :class:`ProductPair` each term is the marginal KL of that
    coordinate. For a joint :class:`DiscretePair` whose support points are
    equal-length tuples, the ``k``-th term is the expected KL between the
    conditional laws of coordinate ``k`` given coordinates ``< k``, the
    expectation taken under the numerator law. Terms are computed from the
    conditionals directly rather than by telescoping joint marginals.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError(f"unknown direction {direction!r}")
    if isinstance(pair, ProductPair):
        terms = np.array([divergence(c, "kl", direction) for c in pair.coordinates])
        return ChainRuleKL(terms, float(terms.sum()))

    dims = {len(s) if isinstance(s, tuple) else -1 for s in pair.support}
    if len(dims) != 1 or -1 in dims:
        raise ValueError("joint support must consist of equal-length coordinate tuples")
    if pair.size > MAX_JOINT_SUPPORT:
        raise ValueError(f"joint support exceeds {MAX_JOINT_SUPPORT} points; use a ProductPair")
    (p,) = dims
    num, den = (pair.p1, pair.p0) if direction == "forward" else (pair.p0, pair.p1)

    terms = np.zeros(p)
    for k in range(p):
        # prefix -> {value of coordinate k: (num mass, den mass)}
        table = defaultdict(lambda: defaultdict(lambda: [0.0, 0.0]))
        for s, a, b in zip(pair.support, num, den):
            cell = table[s[:k]][s[k]]
            cell[0] += a
            cell[1] += b
        term = 0.0
        for cells in table.values():
            num_prefix = sum(c[0] for c in cells.values())
            den_prefix = sum(c[1] for c in cells.values())
            if num_prefix == 0.0:
                continue
            if den_prefix == 0.0:
                term = math.inf
                break
            for a, b in cells.values():
                if a == 0.0:
                    continue
                if b == 0.0:
                    term = math.inf
                    break
                cond_num, cond_den = a / num_prefix, b / den_prefix
                term += a * math.log(cond_num / cond_den)
            if term == math.inf:
                break
        terms[k] = term
    return ChainRuleKL(terms, float(terms.sum()))


def extremal_pair(band: LikelihoodRatioBand, pi: float) -> DiscretePair:
    """Two-point pair whose likelihood ratio sits exactly on the band edges.

    The ratio ``p1 / p0`` equals ``b_min`` on the first point and ``b_max``
    on the second, which makes every extremal f-divergence bound tight.
    """
    lo, hi = band.b_min, band.b_max
    if not lo < 1.0 < hi:
        raise ValueError("extremal pair needs b_min < 1 < b_max")
    width = hi - lo
    p0 = np.array([(hi - 1.0) / width, (1.0 - lo) / width])
    p1 = np.array([lo * p0[0], hi * p0[1]])
    # renormalize away the last ulp so the probability-vector check is exact
    p1 = p1 / p1.sum()
    return DiscretePair(("low", "high"), p0, p1, pi, coords=[[0.0], [1.0]])


def efficiency_bound(pair: DiscretePair, moments: OutcomeMoments) -> float:
    """Population efficiency bound (without the sample-size prefactor)."""
    if moments.var1.size != pair.size:
        raise ValueError("outcome moments must align with the support")
    w = pair.mixture
    tau_ate = float(np.sum(w * moments.tau_x))
    e = propensity(pair)
    total = 0.0
    for wi, ei, v1, v0, tx in zip(w, e, moments.var1, moments.var0, moments.tau_x):
        if wi == 0.0:
            continue
        term = efficiency_bound_term(ei, v1, v0, tx, tau_ate)
        if term == math.inf:
            return math.inf
        total += wi * term
    return total


def exact_moments(pair: DiscretePair) -> MomentSummary:
    """Group means and covariance operator norms of the attached coordinates."""
    if pair.coords is None:
        raise ValueError("pair has no numeric coordinates")
    X = pair.coords
    out = []
    for w in (pair.p0, pair.p1):
        mu = w @ X
        centered = X - mu
        cov = (centered * w[:, None]).T @ centered
        out.append((mu, float(np.linalg.eigvalsh(cov)[-1])))
    (mu0, op0), (mu1, op1) = out
    return MomentSummary(mu0, mu1, max(op0, 0.0), max(op1, 0.0))


def product_to_joint(pair: ProductPair) -> DiscretePair:
    """Enumerate the joint of a product pair (capped at ``MAX_JOINT_SUPPORT`` points)."""
    sizes = [c.size for c in pair.coordinates]
    if math.prod(sizes) > MAX_JOINT_SUPPORT:
        raise ValueError(f"joint support exceeds {MAX_JOINT_SUPPORT} points")
    support, p0, p1 = [], [], []
    for idx in itertools.product(*(range(s) for s in sizes)):
        support.append(tuple(c.support[i] for c, i in zip(pair.coordinates, idx)))
        p0.append(math.prod(float(c.p0[i]) for c, i in zip(pair.coordinates, idx)))
        p1.append(math.prod(float(c.p1[i]) for c, i in zip(pair.coordinates, idx)))
    p0, p1 = np.array(p0), np.array(p1)
    keep = (p0 > 0) | (p1 > 0)
    support = [s for s, k in zip(support, keep) if k]
    return DiscretePair(support, p0[keep] / p0.sum(), p1[keep] / p1.sum(), pair.pi)


# -- random instances for property checks -------------------------------------------------


def random_overlap_pair(rng: np.random.Generator, eta: float, m: int | None = None, coord_dim: int = 0,
                        edge_prob: float = 0.25) -> DiscretePair:
    """Random pair whose propensity lies in ``[eta, 1 - eta]`` at every point.

    The marginal law is uniform on the simplex and each propensity is uniform
    on ``[eta, 1 - eta]``, snapped to an endpoint with probability
    ``edge_prob`` so near-extremal instances are common. ``P0``, ``P1`` and
    ``pi`` then follow from Bayes' theorem.
    """
    eta = check_eta(eta)
    if m is None:
        m = int(rng.integers(2, 9))
    w = rng.dirichlet(np.ones(m))
    e = rng.uniform(eta, 1.0 - eta, size=m)
    snap = rng.random(m) < edge_prob
    e[snap] = np.where(rng.random(snap.sum()) < 0.5, eta, 1.0 - eta)
    pi = float(np.sum(w * e))
    p1 = w * e / pi
    p0 = w * (1.0 - e) / (1.0 - pi)
    coords = rng.normal(size=(m, coord_dim)) if coord_dim else None
    return DiscretePair(list(range(m)), p0 / p0.sum(), p1 / p1.sum(), pi, coords)


def random_pair(rng: np.random.Generator, m: int | None = None, zero_prob: float = 0.1) -> DiscretePair:
    """Unconstrained random pair; entries are zeroed at random to exercise overlap failure."""
    if m is None:
        m = int(rng.integers(2, 9))
    while True:
        p0 = rng.dirichlet(np.ones(m))
        p1 = rng.dirichlet(np.ones(m))
        p0[rng.random(m) < zero_prob] = 0.0
        p1[rng.random(m) < zero_prob] = 0.0
        if p0.sum() > 0 and p1.sum() > 0 and not np.any((p0 == 0) & (p1 == 0)):
            break
    pi = float(rng.uniform(0.05, 0.95))
    return DiscretePair(list(range(m)), p0 / p0.sum(), p1 / p1.sum(), pi)


def random_joint(rng: np.random.Generator, dims: Sequence[int] | None = None, zero_prob: float = 0.0) -> DiscretePair:
    """Random joint pair over a small product alphabet, with dependent coordinates."""
    if dims is None:
        p = int(rng.integers(2, 5))
        dims = [int(rng.integers(2, 4)) for _ in range(p)]
    cells = list(itertools.product(*(range(d) for d in dims)))
    m = len(cells)
    while True:
        p0 = rng.dirichlet(np.ones(m))
        p1 = rng.dirichlet(np.ones(m))
        if zero_prob:
            p0[rng.random(m) < zero_prob] = 0.0
        keep = (p0 > 0) | (p1 > 0)
        if p0.sum() > 0:
            break
    support = [c for c, k in zip(cells, keep) if k]
    p0, p1 = p0[keep], p1[keep]
    return DiscretePair(support, p0 / p0.sum(), p1 / p1.sum(), float(rng.uniform(0.1, 0.9)))
