"""Generative covariate families and covariance tooling.

Each process spec describes the joint law of ``(T, X_1..X_p)``. Some
families satisfy strict overlap for every ``p`` by construction (the
likelihood-ratio-budgeted Bernoulli products and the balancing-score
scenarios); others exist to study covariance structure (MA(1), factor
models) or to show how overlap fails (Gaussian mean shifts).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import ClassVar, NamedTuple

import numpy as np
from scipy.special import expit

from ._validation import check_positive_int
from .bounds import LikelihoodRatioBand, MomentSummary, OverlapSpec, lr_band
from .dataset import Dataset
from .discrete import DiscretePair, ProductPair

__all__ = [
    "ProcessSpec",
    "IndependentBernoulli",
    "LRBudgetedBernoulli",
    "GaussianShift",
    "MA1",
    "Factor",
    "BalancingScenario",
    "CovarianceMatrix",
    "OperatorNormConvergenceError",
    "BalancingReport",
    "spec_from_dict",
    "covariance",
    "operator_norm",
    "ma1_eigenvalues",
    "lr_budget_allocator",
    "log_lr_interval",
    "joint_eta_star",
    "sample",
    "exact_product_moments",
    "to_product_pair",
    "product_bayes_accuracy",
    "balancing_overlap_check",
    "MAX_ENUMERATED_DIM",
]

MAX_ENUMERATED_DIM = 16

_REGISTRY: dict = {}


class ProcessSpec:
    """Base for the tagged union of covariate processes."""

    variant: ClassVar[str]

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        _REGISTRY[cls.variant] = cls

    def to_dict(self):
        d = {"variant": self.variant}
        for k, v in asdict(self).items():
            d[k] = np.asarray(v).tolist() if isinstance(v, (tuple, np.ndarray)) else v
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    @property
    def dim(self):
        return self.p


def spec_from_dict(d) -> ProcessSpec:
    d = dict(d)
    try:
        cls = _REGISTRY[d.pop("variant")]
    except KeyError as exc:
        raise ValueError(f"unknown or missing process variant: {exc}") from None
    return cls(**d)


def _tuple(v):
    return tuple(float(x) for x in np.asarray(v, dtype=float).ravel())


@dataclass(frozen=True)
class IndependentBernoulli(ProcessSpec):
    variant: ClassVar[str] = "independent_bernoulli"
    q0: tuple
    q1: tuple
    pi: float = 0.5

    def __post_init__(self):
        q0, q1 = _tuple(self.q0), _tuple(self.q1)
        if len(q0) != len(q1) or not q0:
            raise ValueError("q0 and q1 must be non-empty and equally long")
        if not all(0.0 < q < 1.0 for q in q0 + q1):
            raise ValueError("Bernoulli probabilities must lie in (0, 1)")
        if not 0.0 < self.pi < 1.0:
            raise ValueError("pi must lie in (0, 1)")
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "q1", q1)

    @property
    def p(self):
        return len(self.q0)


@dataclass(frozen=True)
class LRBudgetedBernoulli(ProcessSpec):
    """Bernoulli product whose joint likelihood ratio stays inside the overlap band."""

    variant: ClassVar[str] = "lr_budgeted_bernoulli"
    eta: float
    pi: float
    p: int

    def __post_init__(self):
        OverlapSpec(self.eta, self.pi)
        check_positive_int(self.p, "p")

    def resolve(self) -> IndependentBernoulli:
        return lr_budget_allocator(self.eta, self.pi, self.p)


@dataclass(frozen=True)
class GaussianShift(ProcessSpec):
    """Gaussian covariates with group-specific means; violates strict overlap unless ``m0 == m1``."""

    variant: ClassVar[str] = "gaussian_shift"
    m0: tuple
    m1: tuple
    variances: tuple
    pi: float = 0.5

    def __post_init__(self):
        m0, m1, var = _tuple(self.m0), _tuple(self.m1), _tuple(self.variances)
        if not (len(m0) == len(m1) == len(var) > 0):
            raise ValueError("m0, m1 and variances must be non-empty and equally long")
        if not all(v > 0 for v in var):
            raise ValueError("variances must be positive")
        if not 0.0 < self.pi < 1.0:
            raise ValueError("pi must lie in (0, 1)")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "variances", var)

    @classmethod
    def unit_gap(cls, p, gap=1.0, pi=0.5):
        return cls((0.0,) * p, (gap,) * p, (1.0,) * p, pi)

    @property
    def p(self):
        return len(self.m0)


@dataclass(frozen=True)
class MA1(ProcessSpec):
    """``X_k = e_k + theta * e_{k-1}`` with iid ``N(0, sigma2)`` innovations.

    ``shift`` is added to every coordinate of treated units.
    """

    variant: ClassVar[str] = "ma1"
    theta: float
    sigma2: float
    p: int
    pi: float = 0.5
    shift: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (-1, 1)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        check_positive_int(self.p, "p")

    @property
    def autocovariances(self):
        return self.sigma2 * (1.0 + self.theta**2), self.sigma2 * self.theta

    @property
    def spectral_bound(self):
        """Maximum of the MA(1) spectral density (no 2*pi factor); caps the operator norm."""
        return self.sigma2 * (1.0 + abs(self.theta)) ** 2


@dataclass(frozen=True, eq=False)
class Factor(ProcessSpec):
    """``X = loadings @ f + noise`` with ``f ~ N(0, I_s)`` and diagonal noise."""

    variant: ClassVar[str] = "factor"
    loadings: np.ndarray
    idiosyncratic: np.ndarray
    pi: float = 0.5
    shift: float = 0.0

    def __post_init__(self):
        L = np.asarray(self.loadings, dtype=float)
        if L.ndim == 1:
            L = L[:, None]
        d = np.asarray(self.idiosyncratic, dtype=float).ravel()
        if d.size == 1 and L.shape[0] > 1:
            d = np.full(L.shape[0], float(d[0]))
        if L.ndim != 2 or d.shape != (L.shape[0],):
            raise ValueError("loadings must be p x s and idiosyncratic variances length p")
        if L.shape[1] > L.shape[0]:
            raise ValueError("rank s must not exceed p")
        if np.any(d < 0):
            raise ValueError("idiosyncratic variances must be nonnegative")
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "idiosyncratic", d)

    @classmethod
    def blocks(cls, p, rank=1, loading=1.0, idiosyncratic=0.0, pi=0.5, shift=0.0):
        """Coordinate ``k`` loads only on factor ``k mod rank``."""
        L = np.zeros((p, rank))
        L[np.arange(p), np.arange(p) % rank] = loading
        return cls(L, np.full(p, float(idiosyncratic)), pi, shift)

    @property
    def p(self):
        return self.loadings.shape[0]

    @property
    def rank(self):
        return self.loadings.shape[1]


@dataclass(frozen=True)
class BalancingScenario(ProcessSpec):
    """Treatment depends on the covariates only through a low-dimensional score.

    ``kind`` selects the score:

    * ``sparse`` -- the first ``s`` binary covariates; ``score_propensity``
      holds ``e`` for each of the ``2**s`` cells (first coordinate is the
      most significant bit). Later covariates copy one score coordinate
      with probability controlled by ``coupling``.
    * ``latent_class`` -- an unobserved class ``U`` with weights
      ``class_weights``; covariates are conditionally independent Bernoulli
      given ``U``.
    * ``constant`` -- a randomized trial, ``e = pi`` everywhere.
    """

    variant: ClassVar[str] = "balancing_scenario"
    kind: str
    p: int
    score_propensity: tuple
    s: int = 0
    base_q: float = 0.5
    class_weights: tuple = ()
    coupling: float = 0.5

    def __post_init__(self):
        check_positive_int(self.p, "p")
        e = _tuple(self.score_propensity)
        if not e or not all(0.0 <= v <= 1.0 for v in e):
            raise ValueError("score propensities must lie in [0, 1]")
        object.__setattr__(self, "score_propensity", e)
        if self.kind == "sparse":
            if not 1 <= self.s <= self.p:
                raise ValueError("sparse scenario needs 1 <= s <= p")
            if len(e) != 2**self.s:
                raise ValueError("sparse scenario needs one propensity per score cell (2**s)")
            if not 0.0 < self.base_q < 1.0 or not 0.0 <= self.coupling < 1.0:
                raise ValueError("base_q must lie in (0, 1) and coupling in [0, 1)")
        elif self.kind == "latent_class":
            w = _tuple(self.class_weights) if self.class_weights else (1.0 / len(e),) * len(e)
            if len(w) != len(e) or abs(sum(w) - 1.0) > 1e-12 or min(w) <= 0:
                raise ValueError("class weights must be positive, sum to 1 and match the classes")
            if not 0.0 <= self.coupling < 0.5:
                raise ValueError("latent_class coupling must lie in [0, 0.5)")
            object.__setattr__(self, "class_weights", w)
        elif self.kind == "constant":
            if len(e) != 1 or not 0.0 < e[0] < 1.0:
                raise ValueError("constant scenario needs a single propensity in (0, 1)")
        else:
            raise ValueError(f"unknown balancing scenario kind {self.kind!r}")

    @classmethod
    def sparse(cls, p, s=2, e_range=(0.2, 0.8), base_q=0.5, coupling=0.6):
        lo, hi = e_range
        table = [lo + (hi - lo) * bin(c).count("1") / s for c in range(2**s)]
        return cls("sparse", p, tuple(table), s=s, base_q=base_q, coupling=coupling)

    @classmethod
    def latent_class(cls, p, e_values=(0.3, 0.7), weights=None, coupling=0.3):
        return cls("latent_class", p, tuple(e_values), class_weights=tuple(weights or ()), coupling=coupling)

    @classmethod
    def constant(cls, p, pi=0.5):
        return cls("constant", p, (pi,))

    # -- score law ----------------------------------------------------------------------

    def score_law(self):
        """Score values' probabilities and their propensities."""
        e = np.array(self.score_propensity)
        if self.kind == "sparse":
            cells = self._cells()
            ones = cells.sum(axis=1)
            w = self.base_q**ones * (1.0 - self.base_q) ** (self.s - ones)
            return w, e
        if self.kind == "latent_class":
            return np.array(self.class_weights), e
        return np.ones(1), e

    def _cells(self):
        return np.array(list(itertools.product((0, 1), repeat=self.s)), dtype=int)

    @property
    def pi(self):
        w, e = self.score_law()
        return float(np.sum(w * e))

    def downstream_prob(self, x_score):
        """``P(X_k = 1 | score cell)`` for coordinates ``s+1..p`` of a sparse scenario."""
        src = (np.arange(self.s, self.p) - self.s) % self.s
        return 0.5 + self.coupling * (np.asarray(x_score)[..., src] - 0.5)

    def class_probs(self):
        """``P(X_k = 1 | U = u)`` as a ``p x K`` array for the latent-class scenario."""
        K = len(self.score_propensity)
        k = np.arange(self.p)[:, None]
        u = np.arange(K)[None, :]
        return 0.5 + self.coupling * np.cos(2.0 * np.pi * (u + k) / K)


# -- covariance ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Symmetric PSD matrix with an optional structured representation.

    ``kind`` is ``dense``, ``diagonal``, ``tridiagonal_toeplitz`` or
    ``low_rank_plus_diagonal``; structured kinds give an ``O(p)`` or
    ``O(ps)`` matrix-vector product.
    """

    kind: str
    p: int
    data: dict = field(default_factory=dict)

    @classmethod
    def from_dense(cls, S):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(S, S.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        return cls("dense", S.shape[0], {"matrix": S})

    def matvec(self, x):
        d = self.data
        if self.kind == "dense":
            return d["matrix"] @ x
        if self.kind == "diagonal":
            return d["diag"] * x
        if self.kind == "tridiagonal_toeplitz":
            y = d["g0"] * x
            y[:-1] += d["g1"] * x[1:]
            y[1:] += d["g1"] * x[:-1]
            return y
        if self.kind == "low_rank_plus_diagonal":
            L = d["loadings"]
            return L @ (L.T @ x) + d["diag"] * x
        raise ValueError(f"unknown covariance kind {self.kind!r}")

    def dense(self):
        d = self.data
        if self.kind == "dense":
            return d["matrix"].copy()
        if self.kind == "diagonal":
            return np.diag(d["diag"])
        if self.kind == "tridiagonal_toeplitz":
            S = np.eye(self.p) * d["g0"]
            idx = np.arange(self.p - 1)
            S[idx, idx + 1] = S[idx + 1, idx] = d["g1"]
            return S
        L = d["loadings"]
        return L @ L.T + np.diag(d["diag"])

    def is_psd(self, tol=1e-9):
        return bool(np.linalg.eigvalsh(self.dense())[0] >= -tol)


class OperatorNormConvergenceError(RuntimeError):
    def __init__(self, estimate, iterations):
        super().__init__(f"power iteration did not converge in {iterations} iterations (last estimate {estimate!r})")
        self.estimate = estimate
        self.iterations = iterations


def covariance(spec: ProcessSpec, group: int) -> CovarianceMatrix:
    """Analytic covariance of ``X`` within treatment group ``group``."""
    if group not in (0, 1):
        raise ValueError("group must be 0 or 1")
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    if isinstance(spec, IndependentBernoulli):
        q = np.array(spec.q1 if group else spec.q0)
        return CovarianceMatrix("diagonal", spec.p, {"diag": q * (1.0 - q)})
    if isinstance(spec, GaussianShift):
        return CovarianceMatrix("diagonal", spec.p, {"diag": np.array(spec.variances)})
    if isinstance(spec, MA1):
        g0, g1 = spec.autocovariances
        return CovarianceMatrix("tridiagonal_toeplitz", spec.p, {"g0": g0, "g1": g1})
    if isinstance(spec, Factor):
        return CovarianceMatrix("low_rank_plus_diagonal", spec.p, {"loadings": spec.loadings, "diag": spec.idiosyncratic})
    raise ValueError(f"no analytic covariance for variant {spec.variant!r}")


def operator_norm(S, tol=1e-14, max_iter=2_000_000, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Stops once successive Rayleigh quotients differ by at most
    ``tol * max(1, lambda)``. The start vector is a seeded Gaussian draw.
    For a PSD matrix the Rayleigh quotient never decreases; if it does
    (rounding, or an indefinite input) the iterate is averaged with its
    predecessor to damp the oscillation.
    """
    return top_eigenpair(S, tol, max_iter, seed)[0]


def top_eigenpair(S, tol=1e-14, max_iter=2_000_000, seed=0):
    """``(lambda, v)`` from the power iteration behind :func:`operator_norm`."""
    if not isinstance(S, CovarianceMatrix):
        S = CovarianceMatrix.from_dense(S)
    p = S.p
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(p)
    x /= np.linalg.norm(x)
    lam = -math.inf
    for it in range(1, max_iter + 1):
        y = S.matvec(x)
        new = float(x @ y)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0, x
        y /= norm
        if new < lam - 1e-12 * max(1.0, abs(lam)):
            y = x + y
            y /= np.linalg.norm(y)
        elif abs(new - lam) <= tol * max(1.0, abs(new)):
            return max(new, 0.0), x
        x, lam = y, new
    raise OperatorNormConvergenceError(lam, max_iter)


def ma1_eigenvalues(theta, sigma2, p):
    """Closed-form spectrum of the tridiagonal Toeplitz MA(1) covariance."""
    g0, g1 = sigma2 * (1.0 + theta**2), sigma2 * theta
    k = np.arange(1, p + 1)
    return np.sort(g0 + 2.0 * g1 * np.cos(k * np.pi / (p + 1)))


# -- likelihood-ratio budget ---------------------------------------------------------------


def lr_budget_allocator(eta, pi, p) -> IndependentBernoulli:
    """Bernoulli product that satisfies strict overlap at ``eta`` for every ``p``.

    The joint log likelihood ratio is the sum of per-coordinate terms, so
    splitting the symmetric budget ``c = min(log b_max, -log b_min)`` equally
    keeps every one of the ``2**p`` outcomes inside the band. Each coordinate
    is ``Bernoulli(1/2 -+ d)`` with ``d = tanh(c / 2p) / 2``, whose two log
    ratios are exactly ``+-c/p``.
    """
    band = lr_band(OverlapSpec(eta, pi))
    p = check_positive_int(p, "p")
    budget = min(math.log(band.b_max), -math.log(band.b_min))
    d = 0.5 * math.tanh(budget / (2.0 * p))
    return IndependentBernoulli((0.5 - d,) * p, (0.5 + d,) * p, pi)


def log_lr_interval(spec) -> tuple:
    """Exact range of ``log dP1/dP0`` over all outcomes of a Bernoulli product."""
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    q0, q1 = np.array(spec.q0), np.array(spec.q1)
    one = np.log(q1 / q0)
    zero = np.log((1.0 - q1) / (1.0 - q0))
    return float(np.minimum(one, zero).sum()), float(np.maximum(one, zero).sum())


def joint_eta_star(spec) -> float:
    """Largest overlap bound satisfied by a Bernoulli product, from its log-LR range."""
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    lo, hi = log_lr_interval(spec)
    prior = math.log(spec.pi / (1.0 - spec.pi))
    return min(float(expit(prior + lo)), 1.0 - float(expit(prior + hi)))


def exact_product_moments(spec) -> MomentSummary:
    """Means and covariance operator norms of an independent Bernoulli family."""
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    if not isinstance(spec, IndependentBernoulli):
        raise ValueError("exact product moments need an independent Bernoulli family")
    q0, q1 = np.array(spec.q0), np.array(spec.q1)
    return MomentSummary(q0, q1, float(np.max(q0 * (1 - q0))), float(np.max(q1 * (1 - q1))))


def to_product_pair(spec) -> ProductPair:
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    coords = [
        DiscretePair((0, 1), [1.0 - a, a], [1.0 - b, b], spec.pi, coords=[[0.0], [1.0]])
        for a, b in zip(spec.q0, spec.q1)
    ]
    return ProductPair(tuple(coords))


def product_bayes_accuracy(spec) -> float:
    """Exact Bayes accuracy for a Bernoulli product.

    Identical coordinates reduce to a binomial count of ones; otherwise
    the ``2**p`` outcomes are enumerated (``p <= MAX_ENUMERATED_DIM``).
    """
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    q0, q1, p, pi = np.array(spec.q0), np.array(spec.q1), spec.p, spec.pi
    if np.all(q0 == q0[0]) and np.all(q1 == q1[0]):
        from scipy.stats import binom

        k = np.arange(p + 1)
        m1 = pi * binom.pmf(k, p, q1[0])
        m0 = (1.0 - pi) * binom.pmf(k, p, q0[0])
        return float(np.sum(np.maximum(m1, m0)))
    if p > MAX_ENUMERATED_DIM:
        raise ValueError("Bayes accuracy of a heterogeneous product needs p <= 16")
    x = np.array(list(itertools.product((0, 1), repeat=p)))
    m1 = pi * np.prod(np.where(x == 1, q1, 1 - q1), axis=1)
    m0 = (1.0 - pi) * np.prod(np.where(x == 1, q0, 1 - q0), axis=1)
    return float(np.sum(np.maximum(m1, m0)))


# -- sampling -----------------------------------------------------------------------------


def sample(spec: ProcessSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` iid units. Deterministic in ``(spec, n, seed)``.

    Treatment is drawn first from ``Bernoulli(pi)`` and covariates from the
    group law, except for balancing scenarios, where the score is drawn
    first, then treatment from ``e(score)``, then covariates given the score.
    """
    n = check_positive_int(n, "n")
    rng = np.random.default_rng(seed)
    if isinstance(spec, LRBudgetedBernoulli):
        spec = spec.resolve()
    if isinstance(spec, BalancingScenario):
        return _sample_balancing(spec, n, rng)
    p = spec.p
    T = (rng.random(n) < spec.pi).astype(int)
    if isinstance(spec, IndependentBernoulli):
        q = np.where(T[:, None] == 1, np.array(spec.q1), np.array(spec.q0))
        X = (rng.random((n, p)) < q).astype(float)
    elif isinstance(spec, GaussianShift):
        mean = np.where(T[:, None] == 1, np.array(spec.m1), np.array(spec.m0))
        X = mean + np.sqrt(np.array(spec.variances)) * rng.standard_normal((n, p))
    elif isinstance(spec, MA1):
        e = rng.normal(0.0, math.sqrt(spec.sigma2), size=(n, p + 1))
        X = e[:, 1:] + spec.theta * e[:, :-1] + spec.shift * T[:, None]
    elif isinstance(spec, Factor):
        f = rng.standard_normal((n, spec.rank))
        X = f @ spec.loadings.T + np.sqrt(spec.idiosyncratic) * rng.standard_normal((n, p)) + spec.shift * T[:, None]
    else:
        raise ValueError(f"cannot sample variant {spec.variant!r}")
    return Dataset(X, T)


def _sample_balancing(spec, n, rng):
    p = spec.p
    if spec.kind == "sparse":
        score = (rng.random((n, spec.s)) < spec.base_q).astype(int)
        cell = score @ (2 ** np.arange(spec.s - 1, -1, -1))
        T = (rng.random(n) < np.array(spec.score_propensity)[cell]).astype(int)
        rest = (rng.random((n, p - spec.s)) < spec.downstream_prob(score)).astype(int)
        X = np.hstack([score, rest]).astype(float)
    elif spec.kind == "latent_class":
        w = np.array(spec.class_weights)
        U = rng.choice(len(w), size=n, p=w)
        T = (rng.random(n) < np.array(spec.score_propensity)[U]).astype(int)
        X = (rng.random((n, p)) < spec.class_probs()[:, U].T).astype(float)
    else:
        T = (rng.random(n) < spec.score_propensity[0]).astype(int)
        X = (rng.random((n, p)) < 0.5).astype(float)
    return Dataset(X, T)


# -- balancing scores ----------------------------------------------------------------------


class BalancingReport(NamedTuple):
    eta_star_score: float
    eta_star_joint: float
    method: str
    projection_gap: float | None


def _overlap(e_values):
    e = np.asarray(e_values, dtype=float)
    return float(min(e.min(), 1.0 - e.max()))


def balancing_overlap_check(spec: BalancingScenario) -> BalancingReport:
    """Overlap on the score scale versus on the full covariate scale.

    For ``p <= MAX_ENUMERATED_DIM`` every covariate outcome is enumerated
    and ``e(x)`` is computed twice, by Bayes' rule on the group laws and as
    the projection ``E[e(score) | x]``; their largest disagreement is
    reported. Larger ``p`` uses the conditional-independence structure:
    the extremes of the posterior log odds are sums of per-coordinate
    extremes, which is exact because every combination has positive mass.
    """
    if not isinstance(spec, BalancingScenario):
        raise ValueError("balancing_overlap_check needs a BalancingScenario")
    w, e_score = spec.score_law()
    eta_score = _overlap(e_score[w > 0])

    if spec.kind == "constant":
        report = BalancingReport(eta_score, eta_score, "closed-form", 0.0)
    elif spec.p <= MAX_ENUMERATED_DIM:
        direct, projected = _enumerate_propensity(spec)
        report = BalancingReport(eta_score, _overlap(direct), "enumerated", float(np.max(np.abs(direct - projected))))
    elif spec.kind == "sparse":
        report = BalancingReport(eta_score, _sparse_factored(spec), "factored", None)
    elif len(spec.score_propensity) == 2:
        report = BalancingReport(eta_score, _latent_two_class_factored(spec), "factored", None)
    else:
        raise ValueError("latent-class scenarios with more than two classes need p <= 16")
    if report.eta_star_joint < report.eta_star_score - 1e-12:
        raise RuntimeError(f"score-level overlap {eta_score} not inherited by covariates: {report}")
    return report


def _enumerate_propensity(spec):
    x = np.array(list(itertools.product((0, 1), repeat=spec.p)), dtype=int)
    w, e = spec.score_law()
    if spec.kind == "sparse":
        cells = spec._cells()
        # P(x | cell) for every outcome/cell pair; zero unless x starts with the cell
        match = np.all(x[:, None, : spec.s] == cells[None, :, :], axis=2)
        q = spec.downstream_prob(x[:, : spec.s])
        rest = np.prod(np.where(x[:, spec.s :] == 1, q, 1.0 - q), axis=1)
        lik = match * rest[:, None]
    else:
        theta = spec.class_probs()
        lik = np.prod(np.where(x[:, :, None] == 1, theta[None], 1.0 - theta[None]), axis=1)
    joint = lik * w[None, :]
    pi = float(np.sum(w * e))
    # Bayes' rule on the group laws P(x | T = t)
    px_t1 = (lik * (w * e)[None, :]).sum(axis=1) / pi
    px_t0 = (lik * (w * (1.0 - e))[None, :]).sum(axis=1) / (1.0 - pi)
    direct = pi * px_t1 / (pi * px_t1 + (1.0 - pi) * px_t0)
    posterior = joint / joint.sum(axis=1, keepdims=True)
    projected = posterior @ e
    return direct, projected


def _sparse_factored(spec):
    # covariates beyond the score have the same conditional law in both arms,
    # so every outcome in a score cell shares that cell's propensity
    w, e = spec.score_law()
    return _overlap(e[w > 0])


def _latent_two_class_factored(spec):
    w, e = spec.score_law()
    theta = spec.class_probs()
    one = np.log(theta[:, 0] / theta[:, 1])
    zero = np.log((1 - theta[:, 0]) / (1 - theta[:, 1]))
    prior = math.log(w[0] / w[1])
    lo = prior + float(np.minimum(one, zero).sum())
    hi = prior + float(np.maximum(one, zero).sum())
    # e(x) = e_1 + (e_0 - e_1) * P(U = 0 | x) is monotone in the posterior log odds
    ends = [e[1] + (e[0] - e[1]) * float(expit(v)) for v in (lo, hi)]
    return _overlap(ends)
