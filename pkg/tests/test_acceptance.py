"""End-to-end acceptance checks, one class per criterion.

A summary line per criterion is printed at the end of the run by the hook
in ``conftest.py``.
"""

import json
import math

import numpy as np
import pytest

from overlap_lab import bounds as B
from overlap_lab import discrete as D
from overlap_lab import processes as P
from overlap_lab.estimation import audit, eta_star_trend
from overlap_lab.harness import cli, suites, sweep
from overlap_lab.harness.reports import read_rows

criterion = pytest.mark.criterion

ETA_GRID = np.linspace(0.01, 0.5, 10)
PI_FRACTIONS = np.linspace(0.0, 1.0, 6)


def eta_pi_grid():
    # 10 etas x 6 positions of pi inside [eta, 1 - eta]: 60 points
    for eta in ETA_GRID:
        for f in PI_FRACTIONS:
            yield float(eta), float(eta + f * (1 - 2 * eta))


@criterion(1, "closed-form cross-checks (simple forms, alpha = 2, Rukhin specializations)")
class TestClosedFormCrossChecks:
    def test_grid_size(self):
        assert len(list(eta_pi_grid())) >= 50

    def test_balanced_simple_forms(self):
        for eta, _ in eta_pi_grid():
            b = B.lr_band(B.OverlapSpec(eta, 0.5))
            chi2, kl = B.chi2_bounds(b), B.kl_bounds(b)
            for v in (chi2.forward, chi2.reverse):
                assert v == pytest.approx(B.chi2_bound_balanced(eta), rel=1e-12, abs=1e-12)
            for v in (kl.forward, kl.reverse):
                assert v == pytest.approx(B.kl_bound_balanced(eta), rel=1e-12, abs=1e-12)

    def test_chi_alpha_two_is_chi2(self):
        for eta, pi in eta_pi_grid():
            b = B.lr_band(B.OverlapSpec(eta, pi))
            c2, ca = B.chi2_bounds(b), B.chi_alpha_bounds(b, 2.0)
            assert abs(ca.forward - c2.forward) <= 1e-12 * max(1.0, c2.forward)
            assert abs(ca.reverse - c2.reverse) <= 1e-12 * max(1.0, c2.reverse)

    def test_rukhin_reproduces_specializations(self):
        fs = {
            "chi2": (lambda t: (t - 1.0) ** 2, B.chi2_bounds),
            "kl": (lambda t: t * math.log(t), B.kl_bounds),
            "tv": (lambda t: abs(t - 1.0) / 2.0, B.tv_bounds),
        }
        for eta, pi in eta_pi_grid():
            b = B.lr_band(B.OverlapSpec(eta, pi))
            for f, closed in fs.values():
                got, want = B.rukhin_f_bound(b, f), closed(b)
                assert abs(got.forward - want.forward) <= 1e-12 * max(1.0, want.forward)
                assert abs(got.reverse - want.reverse) <= 1e-12 * max(1.0, want.reverse)


@criterion(2, "Rukhin suite: 1000 seeded pairs per run, zero violations")
class TestRukhinSuite:
    def test_cli_run(self, tmp_path, capsys):
        out = tmp_path / "rukhin.csv"
        code = cli.main(["verify", "--suite", "rukhin", "--trials", "1000", "--seed", "7", "--out", str(out),
                         "--violations", str(tmp_path / "v.json")])
        assert code == 0
        rows = read_rows(out)
        assert all(r.passed for r in rows)
        by_eta = {}
        for r in rows:
            if r.quantity == "eta_floor":
                by_eta[r.observed] = by_eta.get(r.observed, 0) + 1
        assert set(by_eta) == set(suites.RUKHIN_ETAS)
        quantities = {r.quantity for r in rows}
        for kind in ("chi2", "kl", "tv", "chi_alpha_1.5", "chi_alpha_3", "chi_alpha_4"):
            for direction in ("forward", "reverse"):
                assert f"{kind}_{direction}" in quantities
        assert sum(r.quantity != "eta_floor" for r in rows) >= 1000 * 4 * 2


@criterion(3, "attainment by the extremal pair")
class TestAttainment:
    @pytest.mark.parametrize("eta", [0.05, 0.1, 0.2, 0.3, 0.45])
    def test_extremal(self, eta):
        b = B.lr_band(B.OverlapSpec(eta, 0.5))
        pair = D.extremal_pair(b, 0.5)
        for kind, bound in (("chi2", B.chi2_bounds(b)), ("kl", B.kl_bounds(b))):
            for d in ("forward", "reverse"):
                assert abs(D.divergence(pair, kind, d) - bound.direction(d)) <= 1e-9
        assert abs(D.divergence(pair, "tv") - (1 - 2 * eta)) <= 1e-9
        assert abs(D.bayes_accuracy(pair) - (1 - eta)) <= 1e-12


P_GRID = [1, 4, 16, 64, 256]


@criterion(4, "mean discrepancy and MAD bounds on LR-budgeted families; MAD bound slope -0.5")
class TestTheoremOne:
    def test_every_p(self):
        b = B.lr_band(B.OverlapSpec(0.1, 0.5))
        for p in P_GRID:
            mom = P.exact_product_moments(P.lr_budget_allocator(0.1, 0.5, p))
            bound = B.mean_discrepancy_bound(mom.opnorm_0, mom.opnorm_1, b)
            assert mom.mean_gap <= bound + 1e-12
            assert mom.mad <= bound / math.sqrt(p) + 1e-12

    def test_slope(self):
        cfg = sweep.load_config({"schema_version": 1, "scenario": {"variant": "lr_budgeted_bernoulli"},
                                 "p_grid": P_GRID, "eta": 0.1, "pi": 0.5})
        rows, summary = sweep.run_sweep(cfg)
        assert summary["all_pass"]
        assert summary["quantities"]["mad_uniform"]["bound_slope"] == pytest.approx(-0.5, abs=0.01)
        # the same law read straight off the bound function
        ps = np.array(P_GRID, dtype=float)
        b = B.lr_band(B.OverlapSpec(0.1, 0.5))
        vals = [B.mad_bound(p, 0.25, 0.25, b) for p in P_GRID]
        assert np.polyfit(np.log(ps), np.log(vals), 1)[0] == pytest.approx(-0.5, abs=0.01)


@criterion(5, "per-coordinate KL within B_KL/p; chain rule exact on 200+ joints")
class TestChainRule:
    def test_average_kl(self):
        b = B.lr_band(B.OverlapSpec(0.1, 0.5))
        kl = B.kl_bounds(b)
        for p in P_GRID:
            prod = P.to_product_pair(P.lr_budget_allocator(0.1, 0.5, p))
            for d in ("forward", "reverse"):
                assert D.chain_rule_kl(prod, d).average <= kl.direction(d) / p + 1e-12

    def test_joint_identity(self):
        rows, violations = suites.run_suite("chainrule", 400, 1)
        assert violations == []
        totals = [r for r in rows if r.quantity.startswith("sum_minus_joint")]
        assert len({(r.replicate) for r in totals}) >= 200
        assert all(r.observed <= 1e-9 for r in totals)

    def test_small_budgeted_joints_enumerated(self):
        for p in (1, 2, 4, 8):
            prod = P.to_product_pair(P.lr_budget_allocator(0.1, 0.5, p))
            joint = D.product_to_joint(prod)
            assert abs(D.chain_rule_kl(joint).total - D.divergence(joint, "kl")) <= 1e-9


@criterion(6, "operator norms: MA(1), rank-1 factor, independent")
class TestOperatorNorms:
    @pytest.mark.parametrize("p", [3, 10, 100])
    def test_ma1_closed_form(self, p):
        op = P.operator_norm(P.covariance(P.MA1(0.5, 1.0, p), 0))
        assert abs(op - (1.25 + 2 * 0.5 * math.cos(math.pi / (p + 1)))) <= 1e-8

    def test_ma1_bounded(self):
        ops = [P.operator_norm(P.covariance(P.MA1(0.5, 1.0, p), 0)) for p in (2, 8, 64, 256, 1024)]
        assert all(op <= 2.25 for op in ops)
        assert all(b >= a for a, b in zip(ops, ops[1:]))

    @pytest.mark.parametrize("p", [4, 64, 1024])
    def test_rank_one(self, p):
        assert P.operator_norm(P.covariance(P.Factor.blocks(p, 1), 0)) == float(p)

    def test_independent(self):
        rng = np.random.default_rng(0)
        var = rng.uniform(0.1, 3.0, size=50)
        spec = P.GaussianShift((0.0,) * 50, (0.0,) * 50, tuple(var))
        assert P.operator_norm(P.covariance(spec, 0)) == pytest.approx(var.max(), abs=1e-12)


@criterion(7, "balancing-score overlap carries over to the covariates")
class TestBalancing:
    @pytest.mark.parametrize("p", [10, 100])
    def test_sparse(self, p):
        rep = P.balancing_overlap_check(P.BalancingScenario.sparse(p, e_range=(0.2, 0.8)))
        assert rep.eta_star_score == pytest.approx(0.2, abs=1e-12)
        assert rep.eta_star_joint >= 0.2 - 1e-12

    @pytest.mark.parametrize("p", [10, 100])
    def test_latent(self, p):
        rep = P.balancing_overlap_check(P.BalancingScenario.latent_class(p, e_values=(0.3, 0.7)))
        assert rep.eta_star_score == pytest.approx(0.3, abs=1e-12)
        assert rep.eta_star_joint >= 0.3 - 1e-12


@criterion(8, "trimming retention cap on 500+ propensity vectors")
class TestTrimming:
    def test_suite(self):
        rows, violations = suites.run_suite("trimming", 600, 2)
        assert violations == []
        plugin = [r for r in rows if r.quantity.startswith("plugin_retained")]
        assert len({r.replicate for r in plugin}) >= 500
        assert all(r.passed for r in plugin)


@criterion(9, "Gaussian shift eta-hat falls with n; LR-budgeted eta-hat near 0.1")
class TestRemarkDemo:
    def test_gaussian_trend(self):
        trend = eta_star_trend(P.GaussianShift.unit_gap(4), [100, 1000, 10000], range(20))
        assert trend.decreasing, trend.medians

    def test_lr_budgeted_recovery(self):
        spec = P.lr_budget_allocator(0.1, 0.5, 8)
        hits = 0
        for seed in range(20):
            report = audit(P.sample(spec, 100000, seed))
            hits += abs(report.eta_star_hat - 0.1) <= 0.01
        assert hits >= 18


@criterion(10, "byte-identical reports across runs and worker counts")
class TestDeterminism:
    def test_verify(self, tmp_path, capsys):
        paths = []
        for i, workers in enumerate(("1", "1", "2")):
            out = tmp_path / f"v{i}.csv"
            cli.main(["verify", "--suite", "all", "--trials", "150", "--seed", "5", "--workers", workers,
                      "--out", str(out)])
            paths.append(out.read_bytes())
        assert paths[0] == paths[1] == paths[2]

    def test_sweep(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"schema_version": 1, "scenario": {"variant": "lr_budgeted_bernoulli"},
                                   "p_grid": [4, 16, 64], "n": 2000, "replicates": 4, "seed": 9}))
        outputs = []
        for i, workers in enumerate(("1", "1", "2")):
            out, summ = tmp_path / f"s{i}.csv", tmp_path / f"s{i}.json"
            cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--summary", str(summ), "--workers", workers])
            outputs.append((out.read_bytes(), summ.read_bytes()))
        assert outputs[0] == outputs[1] == outputs[2]
