import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit
from sklearn.base import clone
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from overlap_lab import bounds as B
from overlap_lab import discrete as D
from overlap_lab import processes as P
from overlap_lab.dataset import Dataset, DatasetError
from overlap_lab.estimation import (
    AuditConfig,
    LogisticPropensity,
    OverlapAuditor,
    PropensityConvergenceError,
    SeparationError,
    audit,
    eta_star_plugin,
    eta_star_trend,
    fit_logistic_propensity,
    mean_imbalance,
    plugin_bayes_accuracy,
    trimming_analysis,
)


def extremal_dataset(eta, n, seed):
    # a single binary covariate whose two values are the extremal pair's support points
    return P.sample(P.lr_budget_allocator(eta, 0.5, 1), n, seed)


class TestLogisticPropensity:
    def test_null_model(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50000, 3))
        T = (rng.random(50000) < 0.3).astype(int)
        fit = fit_logistic_propensity(Dataset(X, T))
        assert fit.converged
        assert fit.intercept == pytest.approx(math.log(0.3 / 0.7), abs=0.03)
        np.testing.assert_allclose(fit.slopes, 0.0, atol=0.03)

    def test_recovers_truth_within_three_se(self):
        rng = np.random.default_rng(1)
        n, a, b = 100000, -0.5, 1.2
        x = rng.normal(size=n)
        T = (rng.random(n) < expit(a + b * x)).astype(int)
        model = LogisticPropensity(l2_penalty=0.0).fit(x[:, None], T)
        Z = np.column_stack([np.ones(n), x])
        e = expit(Z @ [model.intercept_, model.coef_[0]])
        se = np.sqrt(np.diag(np.linalg.inv((Z * (e * (1 - e))[:, None]).T @ Z)))
        assert abs(model.intercept_ - a) <= 3 * se[0]
        assert abs(model.coef_[0] - b) <= 3 * se[1]

    def test_separation_raises_without_penalty(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        T = np.array([0, 0, 1, 1])
        with pytest.raises(SeparationError) as info:
            LogisticPropensity(l2_penalty=0.0).fit(X, T)
        assert not info.value.fit.converged

    def test_default_penalty_handles_separation(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        T = np.array([0, 0, 1, 1])
        model = LogisticPropensity().fit(X, T)
        assert model.converged_
        assert model.predict(X).tolist() == [0, 0, 1, 1]

    def test_max_iter_exhausted(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(200, 2))
        T = (rng.random(200) < expit(X[:, 0])).astype(int)
        with pytest.raises(PropensityConvergenceError):
            LogisticPropensity(max_iter=1, tol=1e-14).fit(X, T)

    def test_deterministic(self):
        d = P.sample(P.GaussianShift.unit_gap(3), 500, 4)
        a = fit_logistic_propensity(d).coefficients
        b = fit_logistic_propensity(d).coefficients
        np.testing.assert_array_equal(a, b)

    def test_fitted_strictly_inside(self):
        d = P.sample(P.GaussianShift.unit_gap(2, gap=3.0), 500, 4)
        e = fit_logistic_propensity(d).fitted
        assert np.all((e > 0) & (e < 1))

    def test_sklearn_protocol(self):
        d = P.sample(P.GaussianShift.unit_gap(2), 400, 0)
        model = LogisticPropensity(l2_penalty=0.5)
        assert clone(model).get_params() == {"l2_penalty": 0.5, "tol": 1e-8, "max_iter": 500}
        pipe = make_pipeline(StandardScaler(), model).fit(d.X, d.T)
        proba = pipe.predict_proba(d.X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert 0.5 < pipe.score(d.X, d.T) <= 1.0

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            LogisticPropensity().fit(np.zeros((3, 1)), np.array([0, 1, 2]))

    def test_rejects_single_group(self):
        with pytest.raises(ValueError):
            LogisticPropensity().fit(np.zeros((3, 1)), np.array([1, 1, 1]))


class TestPlugins:
    def test_constant(self):
        assert eta_star_plugin(np.full(5, 0.5)) == (0.5, 0.5, 0.5)

    def test_symmetric_range(self):
        assert eta_star_plugin(np.array([0.1, 0.5, 0.9])) == pytest.approx((0.1, 0.1, 0.1))

    def test_one_sided(self):
        assert eta_star_plugin(np.array([0.2, 0.6, 0.95])) == pytest.approx((0.05, 0.05, 0.2))

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
    def test_min_identity_and_majority(self, values):
        e = np.array(values)
        star = eta_star_plugin(e)
        assert star.eta_star == min(star.eta_att, star.eta_atc)
        assert 0.5 <= plugin_bayes_accuracy(e) <= 1.0

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            eta_star_plugin(np.array([0.2, 1.2]))


class TestTrimming:
    def test_constant_half(self):
        curve = trimming_analysis(np.full(10, 0.5), [0.1, 0.3, 0.5])
        assert [pt.retained_fraction for pt in curve] == [1.0, 1.0, 1.0]
        assert [pt.retention_bound for pt in curve] == pytest.approx([5.0, 5 / 3, 1.0])

    def test_two_values(self):
        curve = trimming_analysis(np.array([0.1, 0.9] * 50), [0.2])
        assert curve[0].retained_fraction == 0.0
        assert curve[0].retention_bound == pytest.approx(0.5)

    def test_uniform_closed_form(self):
        e = (np.arange(100000) + 0.5) / 100000
        grid = [0.05, 0.1, 0.2, 0.3, 0.4]
        for pt in trimming_analysis(e, grid):
            assert pt.retained_fraction == pytest.approx(1 - 2 * pt.eta_tilde, abs=1e-4)
            # plug-in error of a uniform propensity is E min(e, 1 - e) = 1/4
            assert pt.retention_bound == pytest.approx(0.25 / pt.eta_tilde, rel=1e-6)
            assert pt.retained_fraction <= pt.retention_bound

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_cap_holds_and_curve_monotone(self, seed):
        rng = np.random.default_rng(seed)
        e = rng.beta(*rng.uniform(0.2, 5.0, size=2), size=int(rng.integers(1, 300)))
        curve = trimming_analysis(e, [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5])
        kept = [pt.retained_fraction for pt in curve]
        assert all(b <= a for a, b in zip(kept, kept[1:]))
        assert all(pt.retained_fraction <= pt.retention_bound + 1e-12 for pt in curve)


class TestMeanImbalance:
    def test_duplicated_groups(self):
        X = np.array([[0.0, 1.0], [2.0, 3.0]])
        d = Dataset(np.vstack([X, X]), np.array([0, 0, 1, 1]))
        imb = mean_imbalance(d)
        np.testing.assert_array_equal(imb.gaps, 0.0)
        assert imb.mad == 0.0

    def test_lr_budgeted_within_bound(self):
        spec = P.lr_budget_allocator(0.1, 0.5, 16)
        imb = mean_imbalance(P.sample(spec, 100000, 8))
        mom = P.exact_product_moments(spec)
        bound = B.mad_bound(16, mom.opnorm_0, mom.opnorm_1, B.lr_band(B.OverlapSpec(0.1, 0.5)))
        assert imb.mad <= bound + 4 * imb.gap_se.max()

    def test_gaussian_shift_gap(self):
        imb = mean_imbalance(P.sample(P.GaussianShift.unit_gap(8), 20000, 1))
        assert imb.euclidean_gap == pytest.approx(math.sqrt(8), abs=0.1)
        assert imb.opnorm_0 == pytest.approx(1.0, abs=0.1)

    def test_requires_both_groups(self):
        with pytest.raises(DatasetError):
            mean_imbalance(Dataset(np.zeros((3, 1)), np.array([0, 0, 0])))


class TestAudit:
    def test_constant_propensity_consistent_everywhere(self):
        d = P.sample(P.BalancingScenario.constant(3, 0.5), 5000, 2)
        report = audit(d)
        assert report.consistent_etas() == sorted(report.verdicts)

    def test_extremal_data(self):
        report = audit(extremal_dataset(0.1, 100000, 3))
        assert report.eta_star_hat == pytest.approx(0.1, abs=0.01)
        assert report.verdicts[0.1]["consistent"]
        assert not report.verdicts[0.2]["consistent"]
        assert not report.verdicts[0.2]["checks"]["classifier"]["ok"]

    def test_gaussian_shift_flagged(self):
        report = audit(P.sample(P.GaussianShift.unit_gap(8), 5000, 1), AuditConfig(eta_grid=(0.05, 0.1, 0.2)))
        # gap sqrt(8) sits under the eta = 0.05 bound sqrt(1/(0.05*0.95) - 4) ~ 4.13, but not the larger ones
        assert report.consistent_etas() == [0.05]
        assert not report.verdicts[0.1]["checks"]["classifier"]["ok"]

    def test_report_fields(self):
        report = audit(extremal_dataset(0.2, 2000, 0))
        assert report.eta_star_hat == min(report.eta_att_hat, report.eta_atc_hat)
        assert set(report.mad_bound_at) == set(report.verdicts)
        d = report.to_dict()
        assert d["fit"]["converged"]
        assert len(d["trimming_curve"]) == len(AuditConfig().trim_grid)

    def test_deterministic(self):
        d = P.sample(P.LRBudgetedBernoulli(0.2, 0.5, 3), 3000, 4)
        assert audit(d).to_dict() == audit(d).to_dict()

    def test_high_dimensional_note(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(10, 12))
        report = audit(Dataset(X, np.array([0, 1] * 5)))
        assert report.high_dimensional and report.notes

    def test_auditor_estimator(self):
        d = extremal_dataset(0.1, 20000, 5)
        auditor = OverlapAuditor(eta_grid=(0.05, 0.1, 0.3)).fit(d.X, d.T)
        assert auditor.eta_star_ == pytest.approx(0.1, abs=0.02)
        assert 0.3 not in auditor.consistent_etas_
        e = auditor.transform(np.array([[0.0], [1.0]]))
        assert e[0] == pytest.approx(0.1, abs=0.02) and e[1] == pytest.approx(0.9, abs=0.02)
        assert clone(auditor).get_params()["eta_grid"] == (0.05, 0.1, 0.3)


class TestEtaStarTrend:
    def test_gaussian_decreases(self):
        trend = eta_star_trend(P.GaussianShift.unit_gap(4), [100, 1000, 10000], range(5))
        assert trend.decreasing

    def test_discrete_oracle_pair_settles(self):
        # a two-point law: the plug-in settles on the true eta instead of drifting to 0
        pair = D.extremal_pair(B.lr_band(B.OverlapSpec(0.2, 0.5)), 0.5)
        assert D.overlap_extremes(pair).eta_star == pytest.approx(0.2)
        trend = eta_star_trend(P.lr_budget_allocator(0.2, 0.5, 1), [1000, 10000], range(5))
        assert all(abs(m - 0.2) < 0.03 for m in trend.medians)
