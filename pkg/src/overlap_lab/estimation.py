"""Sample-based overlap diagnostics.

The estimators follow the scikit-learn conventions (constructor stores
hyperparameters, ``fit`` learns attributes ending in ``_``) so they drop
into pipelines and ``clone``. The audit math consumes only fitted
propensities, so any probabilistic classifier could stand in for
:class:`LogisticPropensity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_eta
from .bounds import (
    LikelihoodRatioBand,
    OverlapSpec,
    classifier_accuracy_bound,
    lr_band,
    mad_bound,
    mean_discrepancy_bound,
)
from .dataset import Dataset
from .processes import sample, top_eigenpair

__all__ = [
    "PropensityFit",
    "PropensityConvergenceError",
    "SeparationError",
    "LogisticPropensity",
    "OverlapAuditor",
    "AuditConfig",
    "OverlapAudit",
    "MeanImbalance",
    "TrimmingPoint",
    "EtaStar",
    "fit_logistic_propensity",
    "eta_star_plugin",
    "plugin_bayes_accuracy",
    "mean_imbalance",
    "trimming_analysis",
    "audit",
    "eta_star_trend",
]


@dataclass(frozen=True, eq=False)
class PropensityFit:
    coefficients: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float

    @property
    def intercept(self):
        return float(self.coefficients[0])

    @property
    def slopes(self):
        return self.coefficients[1:]


class PropensityConvergenceError(RuntimeError):
    """The propensity fit failed; ``fit`` holds the last iterate."""

    def __init__(self, message, fit):
        super().__init__(message)
        self.fit = fit


class SeparationError(PropensityConvergenceError):
    """Treatment is perfectly predictable from a linear rule; the unpenalized MLE does not exist."""


class LogisticPropensity(ClassifierMixin, BaseEstimator):
    """Penalized logistic regression fitted by damped Newton steps.

    Parameters
    ----------
    l2_penalty : float or None
        Ridge penalty on the slopes (the intercept is never penalized).
        ``None`` means ``1e-6 * n``.
    tol : float
        Convergence threshold on the Euclidean norm of the gradient of the
        per-observation penalized log-likelihood.
    max_iter : int
        Newton iterations before giving up.

    Starting from zero coefficients, the fit is deterministic. Without a
    penalty, a separable sample raises :class:`SeparationError` as soon as
    an iterate classifies every unit correctly; any other failure to reach
    ``tol`` raises :class:`PropensityConvergenceError`.
    """

    def __init__(self, l2_penalty=None, tol=1e-8, max_iter=500):
        self.l2_penalty = l2_penalty
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("treatment must be coded 0/1")
        if y.min() == y.max():
            raise ValueError("both treatment groups must be non-empty")
        self.classes_ = np.array([0, 1])
        n, p = X.shape
        lam = 1e-6 * n if self.l2_penalty is None else float(self.l2_penalty)
        if lam < 0:
            raise ValueError("l2_penalty must be nonnegative")
        Z = np.hstack([np.ones((n, 1)), X])
        ridge = np.full(p + 1, lam)
        ridge[0] = 0.0

        def objective(beta):
            eta = Z @ beta
            return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta))) - 0.5 * float(ridge @ beta**2)

        beta = np.zeros(p + 1)
        obj = objective(beta)
        grad_norm = math.inf
        for it in range(1, self.max_iter + 1):
            eta = Z @ beta
            prob = expit(eta)
            grad = Z.T @ (y - prob) - ridge * beta
            grad_norm = float(np.linalg.norm(grad)) / n
            if grad_norm <= self.tol:
                self._store(beta, prob, True, it - 1, grad_norm)
                return self
            if lam == 0.0 and it > 1 and np.all((eta > 0) == (y == 1)) and np.all(eta != 0):
                fit = self._store(beta, prob, False, it - 1, grad_norm)
                raise SeparationError(
                    f"treatment is linearly separable after {it - 1} iterations "
                    f"(|coef| = {np.linalg.norm(beta):.3g} and growing); set l2_penalty > 0",
                    fit,
                )
            w = prob * (1.0 - prob)
            H = (Z * w[:, None]).T @ Z + np.diag(ridge)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            t = 1.0
            while True:
                cand = beta + t * step
                cand_obj = objective(cand)
                if cand_obj >= obj or t < 1e-10:
                    break
                t *= 0.5
            beta, obj = cand, cand_obj
        fit = self._store(beta, expit(Z @ beta), False, self.max_iter, grad_norm)
        raise PropensityConvergenceError(
            f"no convergence in {self.max_iter} iterations (gradient norm {grad_norm:.3g})", fit
        )

    def _store(self, beta, prob, converged, iterations, grad_norm):
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.n_iter_ = iterations
        self.converged_ = converged
        self.final_gradient_norm_ = grad_norm
        self.propensity_fit_ = PropensityFit(beta.copy(), prob, converged, iterations, grad_norm)
        return self.propensity_fit_

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X):
        e = expit(self.decision_function(X))
        return np.column_stack([1.0 - e, e])

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)


def fit_logistic_propensity(data: Dataset, l2_penalty=None, tol=1e-8, max_iter=500) -> PropensityFit:
    model = LogisticPropensity(l2_penalty=l2_penalty, tol=tol, max_iter=max_iter).fit(data.X, data.T)
    return model.propensity_fit_


def _fitted(fit_or_e):
    e = fit_or_e.fitted if isinstance(fit_or_e, PropensityFit) else np.asarray(fit_or_e, dtype=float)
    if e.ndim != 1 or e.size == 0 or np.any((e < 0) | (e > 1)):
        raise ValueError("fitted propensities must be a non-empty vector in [0, 1]")
    return e


class EtaStar(NamedTuple):
    eta_star: float
    eta_att: float
    eta_atc: float


def eta_star_plugin(fit) -> EtaStar:
    """Plug-in overlap bounds from the extremes of the fitted propensities.

    ``eta_att`` only looks at the upper tail (what the effect on the treated
    needs), ``eta_atc`` only at the lower tail.
    """
    e = _fitted(fit)
    att = 1.0 - float(e.max())
    atc = float(e.min())
    return EtaStar(min(att, atc), att, atc)


def plugin_bayes_accuracy(fit) -> float:
    e = _fitted(fit)
    return float(np.mean(np.maximum(e, 1.0 - e)))


class MeanImbalance(NamedTuple):
    gaps: np.ndarray
    mad: float
    euclidean_gap: float
    opnorm_0: float
    opnorm_1: float
    gap_se: np.ndarray
    opnorm_se_0: float = 0.0
    opnorm_se_1: float = 0.0


def _opnorm_with_se(Xt, cov):
    # delta method with the top eigenvector held fixed: se of the variance along it
    lam, v = top_eigenpair(cov, tol=1e-12)
    n = Xt.shape[0]
    if n < 2:
        return lam, 0.0
    proj = (Xt - Xt.mean(axis=0)) @ v
    return lam, float(np.std(proj**2, ddof=1) / math.sqrt(n))


def mean_imbalance(data: Dataset) -> MeanImbalance:
    """Group mean gaps, their standard errors and the sample covariance operator norms."""
    data.require_both_groups()
    out = []
    for t in (0, 1):
        Xt = data.X[data.T == t]
        ddof = 1 if Xt.shape[0] > 1 else 0
        mu = Xt.mean(axis=0)
        cov = np.atleast_2d(np.cov(Xt, rowvar=False, ddof=ddof))
        out.append((mu, cov, Xt))
    (mu0, cov0, X0), (mu1, cov1, X1) = out
    gaps = np.abs(mu0 - mu1)
    se = np.sqrt(np.diag(cov0) / X0.shape[0] + np.diag(cov1) / X1.shape[0])
    op0, op0_se = _opnorm_with_se(X0, cov0)
    op1, op1_se = _opnorm_with_se(X1, cov1)
    return MeanImbalance(
        gaps=gaps,
        mad=float(gaps.mean()),
        euclidean_gap=float(np.linalg.norm(mu0 - mu1)),
        opnorm_0=op0,
        opnorm_1=op1,
        gap_se=se,
        opnorm_se_0=op0_se,
        opnorm_se_1=op1_se,
    )


class TrimmingPoint(NamedTuple):
    eta_tilde: float
    retained_fraction: float
    retention_bound: float


def trimming_analysis(fit, eta_grid: Sequence[float]) -> list:
    """Share of units kept by trimming at each ``eta_tilde``, next to its cap.

    The cap ``(1 - acc) / eta_tilde`` uses the plug-in Bayes accuracy and
    holds exactly for plug-in quantities: every retained unit contributes at
    least ``eta_tilde`` to the plug-in error rate. It is reported raw, so
    values above 1 mean the cap is vacuous.
    """
    e = _fitted(fit)
    err = 1.0 - plugin_bayes_accuracy(e)
    curve = []
    for g in sorted(check_eta(v, "eta_tilde") for v in eta_grid):
        kept = float(np.mean((e >= g) & (e <= 1.0 - g)))
        bound = err / g
        if kept > bound + 1e-12:
            raise RuntimeError(f"retained share {kept} exceeds its cap {bound} at eta_tilde={g}")
        curve.append(TrimmingPoint(g, kept, bound))
    return curve


DEFAULT_ETA_GRID = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class AuditConfig:
    eta_grid: tuple = DEFAULT_ETA_GRID
    trim_grid: tuple = DEFAULT_ETA_GRID
    l2_penalty: float | None = None
    tol: float = 1e-8
    max_iter: int = 500
    slack_se: float = 4.0


@dataclass
class OverlapAudit:
    n: int
    p: int
    treated_share: float
    eta_star_hat: float
    eta_att_hat: float
    eta_atc_hat: float
    bayes_accuracy_hat: float
    mad_observed: float
    euclidean_gap: float
    opnorm_0: float
    opnorm_1: float
    mad_bound_at: dict
    verdicts: dict
    trimming_curve: list
    fit_converged: bool
    fit_iterations: int
    high_dimensional: bool
    notes: list = field(default_factory=list)

    def consistent_etas(self):
        return [eta for eta, v in sorted(self.verdicts.items()) if v["consistent"]]

    def to_dict(self):
        return {
            "n": self.n,
            "p": self.p,
            "treated_share": self.treated_share,
            "eta_star_hat": self.eta_star_hat,
            "eta_att_hat": self.eta_att_hat,
            "eta_atc_hat": self.eta_atc_hat,
            "bayes_accuracy_hat": self.bayes_accuracy_hat,
            "mad_observed": self.mad_observed,
            "euclidean_gap": self.euclidean_gap,
            "opnorm_0": self.opnorm_0,
            "opnorm_1": self.opnorm_1,
            "mad_bound_at": {repr(k): v for k, v in sorted(self.mad_bound_at.items())},
            "verdicts": {repr(k): v for k, v in sorted(self.verdicts.items())},
            "trimming_curve": [pt._asdict() for pt in self.trimming_curve],
            "fit": {"converged": self.fit_converged, "iterations": self.fit_iterations},
            "high_dimensional": self.high_dimensional,
            "notes": list(self.notes),
        }


def _verdict(eta, acc, pi_hat, imb, n, slack_se):
    """Checks of the observed sample against every bound implied by overlap at ``eta``."""
    acc_slack = slack_se * math.sqrt(max(acc * (1 - acc), 0.25 / n) / n)
    pi_slack = slack_se * math.sqrt(pi_hat * (1 - pi_hat) / n)
    checks = {}
    checks["classifier"] = {
        "observed": acc,
        "bound": classifier_accuracy_bound(eta),
        "slack": acc_slack,
    }
    checks["treated_share"] = {
        "observed": abs(pi_hat - 0.5),
        "bound": 0.5 - eta,
        "slack": pi_slack,
    }
    pi_c = min(max(pi_hat, eta), 1.0 - eta)
    band = lr_band(OverlapSpec(eta, pi_c))
    p = imb.gaps.size
    gap = mean_discrepancy_bound(imb.opnorm_0, imb.opnorm_1, band)
    # the bound itself is a plug-in; its slack is the largest bound over the plug-ins' own intervals
    wide = _widest_gap_bound(eta, pi_hat, pi_slack, imb, slack_se)
    euclid_slack = slack_se * float(np.sqrt(np.sum(imb.gap_se**2)))
    checks["mad"] = {
        "observed": imb.mad,
        "bound": gap / math.sqrt(p),
        "slack": slack_se * float(imb.gap_se.max()) + (wide - gap) / math.sqrt(p),
    }
    checks["euclidean_gap"] = {
        "observed": imb.euclidean_gap,
        "bound": gap,
        "slack": euclid_slack + (wide - gap),
    }
    for c in checks.values():
        c["ok"] = bool(c["observed"] <= c["bound"] + c["slack"])
    return {"consistent": all(c["ok"] for c in checks.values()), "checks": checks}


def _widest_gap_bound(eta, pi_hat, pi_slack, imb, slack_se):
    op0 = imb.opnorm_0 + slack_se * imb.opnorm_se_0
    op1 = imb.opnorm_1 + slack_se * imb.opnorm_se_1
    lo = min(max(pi_hat - pi_slack, eta), 1.0 - eta)
    hi = min(max(pi_hat + pi_slack, eta), 1.0 - eta)
    return max(mean_discrepancy_bound(op0, op1, lr_band(OverlapSpec(eta, pi))) for pi in np.linspace(lo, hi, 9))


def audit(data: Dataset, config: AuditConfig | None = None) -> OverlapAudit:
    """Fit propensities, then compare observed imbalance with the bounds at each candidate ``eta``.

    A candidate is *consistent* when the sample violates none of the
    implied bounds beyond ``slack_se`` standard errors; inconsistency at
    ``eta`` is evidence that the population overlap bound is below ``eta``.
    """
    config = config or AuditConfig()
    data.require_both_groups()
    fit = fit_logistic_propensity(data, config.l2_penalty, config.tol, config.max_iter)
    star = eta_star_plugin(fit)
    acc = plugin_bayes_accuracy(fit)
    imb = mean_imbalance(data)
    pi_hat = float(data.T.mean())
    verdicts, mad_at = {}, {}
    for eta in sorted(check_eta(v) for v in config.eta_grid):
        v = _verdict(eta, acc, pi_hat, imb, data.n, config.slack_se)
        verdicts[eta] = v
        mad_at[eta] = v["checks"]["mad"]["bound"]
    notes = []
    if data.high_dimensional:
        notes.append("p >= n: propensity extremes are likely to be overfit")
    return OverlapAudit(
        n=data.n,
        p=data.p,
        treated_share=pi_hat,
        eta_star_hat=star.eta_star,
        eta_att_hat=star.eta_att,
        eta_atc_hat=star.eta_atc,
        bayes_accuracy_hat=acc,
        mad_observed=imb.mad,
        euclidean_gap=imb.euclidean_gap,
        opnorm_0=imb.opnorm_0,
        opnorm_1=imb.opnorm_1,
        mad_bound_at=mad_at,
        verdicts=verdicts,
        trimming_curve=trimming_analysis(fit, config.trim_grid),
        fit_converged=fit.converged,
        fit_iterations=fit.iterations,
        high_dimensional=data.high_dimensional,
        notes=notes,
    )


class OverlapAuditor(BaseEstimator):
    """Estimator wrapper around :func:`audit`.

    After ``fit(X, T)`` the full report is in ``audit_`` and the headline
    numbers are mirrored as ``eta_star_``, ``bayes_accuracy_`` and
    ``consistent_etas_``. ``transform`` returns the fitted propensities of
    new rows, so the auditor can sit inside a pipeline.
    """

    def __init__(self, eta_grid=DEFAULT_ETA_GRID, trim_grid=DEFAULT_ETA_GRID, l2_penalty=None, tol=1e-8,
                 max_iter=500, slack_se=4.0):
        self.eta_grid = eta_grid
        self.trim_grid = trim_grid
        self.l2_penalty = l2_penalty
        self.tol = tol
        self.max_iter = max_iter
        self.slack_se = slack_se

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        data = Dataset(X, y)
        config = AuditConfig(tuple(self.eta_grid), tuple(self.trim_grid), self.l2_penalty, self.tol,
                             self.max_iter, self.slack_se)
        self.audit_ = audit(data, config)
        self.propensity_model_ = LogisticPropensity(self.l2_penalty, self.tol, self.max_iter).fit(X, y)
        self.eta_star_ = self.audit_.eta_star_hat
        self.bayes_accuracy_ = self.audit_.bayes_accuracy_hat
        self.consistent_etas_ = self.audit_.consistent_etas()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "audit_")
        return self.propensity_model_.predict_proba(X)[:, 1]


class EtaStarTrend(NamedTuple):
    n_grid: tuple
    medians: tuple
    decreasing: bool
    per_seed: dict


def eta_star_trend(spec, n_grid: Sequence[int], seeds: Sequence[int], l2_penalty=None) -> EtaStarTrend:
    """Median plug-in overlap bound across seeds for growing sample sizes.

    Under strict overlap the plug-in bound settles near the population
    value; a median that keeps falling as ``n`` grows flags a family whose
    propensities reach arbitrarily close to 0 or 1, such as Gaussian mean
    shifts. The same seeds are reused at every ``n``.
    """
    per_seed = {}
    medians = []
    for n in n_grid:
        vals = []
        for seed in seeds:
            data = sample(spec, n, seed)
            vals.append(eta_star_plugin(fit_logistic_propensity(data, l2_penalty)).eta_star)
        per_seed[int(n)] = vals
        medians.append(float(np.median(vals)))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    return EtaStarTrend(tuple(int(n) for n in n_grid), tuple(medians), decreasing, per_seed)
