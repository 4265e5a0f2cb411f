"""Randomized verification suites over exact discrete oracles.

Each suite splits into ``generate(rng)``, which draws a JSON-serializable
instance, and ``evaluate(instance, seed, trial)``, which turns it into
report rows. Keeping the two apart is what makes a failing instance
replayable from its serialized form.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import bounds as B
from .. import discrete as D
from .reports import ReportRow

ORACLE_TOL = 1e-9
IDENTITY_TOL = 1e-12

RUKHIN_ETAS = (0.05, 0.1, 0.25)
RUKHIN_ALPHAS = (1.5, 2.0, 3.0, 4.0)
TRIM_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))

SUITES = ("rukhin", "chainrule", "theorem1", "trimming")


def _band(eta, pi):
    # rounding can push pi an ulp outside [eta, 1 - eta] for edge instances
    eta = min(max(eta, 1e-300), 0.5)
    pi = min(max(pi, eta), 1.0 - eta)
    return B.lr_band(B.OverlapSpec(eta, pi))


# -- rukhin ---------------------------------------------------------------------------------


def _gen_rukhin(rng, trial):
    eta = RUKHIN_ETAS[trial % len(RUKHIN_ETAS)]
    return {"eta": eta, "pair": D.random_overlap_pair(rng, eta).to_dict()}


def _eval_rukhin(inst, seed, trial):
    pair = D.DiscretePair.from_dict(inst["pair"])
    eta = inst["eta"]
    band = _band(eta, pair.pi)
    targets = [("chi2", None, B.chi2_bounds(band)), ("kl", None, B.kl_bounds(band)), ("tv", None, B.tv_bounds(band))]
    targets += [("chi_alpha", a, B.chi_alpha_bounds(band, a)) for a in RUKHIN_ALPHAS]
    rows = []
    for kind, alpha, bnd in targets:
        label = kind if alpha is None else f"chi_alpha_{alpha:g}"
        for direction in ("forward", "reverse"):
            rows.append(
                ReportRow("rukhin", pair.size, f"{label}_{direction}", D.divergence(pair, kind, direction, alpha),
                          bnd.direction(direction), ORACLE_TOL, seed, trial)
            )
    rows.append(ReportRow("rukhin", pair.size, "eta_floor", eta, D.overlap_extremes(pair).eta_star,
                          IDENTITY_TOL, seed, trial))
    return rows


# -- chain rule -------------------------------------------------------------------------------


def _gen_chainrule(rng, trial):
    if trial % 2 == 0:
        return {"kind": "joint", "pair": D.random_joint(rng).to_dict()}
    p = int(rng.integers(2, 6))
    coords = []
    pi = float(rng.uniform(0.1, 0.9))
    for _ in range(p):
        m = int(rng.integers(2, 4))
        coords.append(D.DiscretePair(list(range(m)), rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m)), pi).to_dict())
    return {"kind": "product", "coordinates": coords}


def _eval_chainrule(inst, seed, trial):
    rows = []
    if inst["kind"] == "joint":
        joint = D.DiscretePair.from_dict(inst["pair"])
        product_terms = None
    else:
        prod = D.ProductPair(tuple(D.DiscretePair.from_dict(c) for c in inst["coordinates"]))
        joint = D.product_to_joint(prod)
        product_terms = {d: D.chain_rule_kl(prod, d).terms for d in ("forward", "reverse")}
    m = joint.size
    dim = len(joint.support[0])
    for direction in ("forward", "reverse"):
        chain = D.chain_rule_kl(joint, direction)
        total = D.divergence(joint, "kl", direction)
        rows.append(ReportRow("chainrule", m, f"sum_minus_joint_{direction}", abs(chain.total - total), 0.0,
                              ORACLE_TOL, seed, trial))
        for k in range(dim):
            marginal = _coordinate_marginal(joint, k)
            rows.append(ReportRow("chainrule", m, f"marginal_{k}_vs_joint_{direction}",
                                  D.divergence(marginal, "kl", direction), total, ORACLE_TOL, seed, trial))
        if product_terms is not None:
            err = float(np.max(np.abs(chain.terms - product_terms[direction])))
            rows.append(ReportRow("chainrule", m, f"product_terms_{direction}", err, 0.0, ORACLE_TOL, seed, trial))
    return rows


def _coordinate_marginal(joint, k):
    values = sorted({s[k] for s in joint.support})
    idx = {v: i for i, v in enumerate(values)}
    p0 = np.zeros(len(values))
    p1 = np.zeros(len(values))
    for s, a, b in zip(joint.support, joint.p0, joint.p1):
        p0[idx[s[k]]] += a
        p1[idx[s[k]]] += b
    return D.DiscretePair(values, p0 / p0.sum(), p1 / p1.sum(), joint.pi)


# -- mean discrepancy, MAD and accuracy ----------------------------------------------------


def _gen_theorem1(rng, trial):
    eta = float(rng.uniform(0.02, 0.45))
    pair = D.random_overlap_pair(rng, eta, coord_dim=int(rng.integers(1, 5)))
    g = rng.normal(size=pair.size).tolist()
    return {"pair": pair.to_dict(), "g": g}


def _eval_theorem1(inst, seed, trial):
    pair = D.DiscretePair.from_dict(inst["pair"])
    g = np.asarray(inst["g"], dtype=float)
    ext = D.overlap_extremes(pair)
    band = _band(ext.eta_star, pair.pi)
    mom = D.exact_moments(pair)
    m = pair.size
    rows = [
        ReportRow("theorem1", m, "mean_gap", mom.mean_gap, B.mean_discrepancy_bound(mom.opnorm_0, mom.opnorm_1, band),
                  ORACLE_TOL, seed, trial),
        ReportRow("theorem1", m, "mad", mom.mad, B.mad_bound(mom.dim, mom.opnorm_0, mom.opnorm_1, band),
                  ORACLE_TOL, seed, trial),
        ReportRow("theorem1", m, "bayes_accuracy", D.bayes_accuracy(pair), 1.0 - ext.eta_star, IDENTITY_TOL, seed, trial),
    ]
    e0, e1 = float(pair.p0 @ g), float(pair.p1 @ g)
    var0 = float(pair.p0 @ (g - e0) ** 2)
    var1 = float(pair.p1 @ (g - e1) ** 2)
    rows.append(ReportRow("theorem1", m, "functional_gap", abs(e1 - e0),
                          B.functional_discrepancy_bound(var0, var1, band), ORACLE_TOL, seed, trial))
    for alpha in (1.5, 3.0):
        q = alpha / (alpha - 1.0)
        mom0 = float(pair.p0 @ np.abs(g - e0) ** q) ** (1.0 / q)
        mom1 = float(pair.p1 @ np.abs(g - e1) ** q) ** (1.0 / q)
        bound = min(B.holder_discrepancy_bound(mom0, alpha, band, 0), B.holder_discrepancy_bound(mom1, alpha, band, 1))
        rows.append(ReportRow("theorem1", m, f"holder_gap_{alpha:g}", abs(e1 - e0), bound, ORACLE_TOL, seed, trial))
    return rows


# -- trimming ---------------------------------------------------------------------------------


def _gen_trimming(rng, trial):
    n = int(rng.integers(20, 400))
    a, b = rng.uniform(0.2, 5.0, size=2)
    e = rng.beta(a, b, size=n)
    return {"pair": D.random_pair(rng).to_dict(), "propensities": e.tolist()}


def _eval_trimming(inst, seed, trial):
    pair = D.DiscretePair.from_dict(inst["pair"])
    m = pair.size
    acc = D.bayes_accuracy(pair)
    rows = [ReportRow("trimming", m, "bayes_accuracy", acc, 1.0 - D.overlap_extremes(pair).eta_star,
                      IDENTITY_TOL, seed, trial)]
    for g in TRIM_GRID:
        rows.append(ReportRow("trimming", m, f"overlap_mass_{g:g}", D.overlap_mass(pair, g),
                              B.trimming_retention_bound(min(max(acc, 0.5), 1.0), g).raw, IDENTITY_TOL, seed, trial))
    e = np.asarray(inst["propensities"])
    err = float(np.mean(np.minimum(e, 1.0 - e)))
    for g in TRIM_GRID:
        kept = float(np.mean((e >= g) & (e <= 1.0 - g)))
        rows.append(ReportRow("trimming", m, f"plugin_retained_{g:g}", kept, err / g, IDENTITY_TOL, seed, trial))
    return rows


GENERATORS = {"rukhin": _gen_rukhin, "chainrule": _gen_chainrule, "theorem1": _gen_theorem1, "trimming": _gen_trimming}
EVALUATORS = {"rukhin": _eval_rukhin, "chainrule": _eval_chainrule, "theorem1": _eval_theorem1, "trimming": _eval_trimming}


def trial_rng(seed, suite, trial):
    return np.random.default_rng([int(seed), SUITES.index(suite), int(trial)])


def run_trial(suite, seed, trial):
    inst = GENERATORS[suite](trial_rng(seed, suite, trial), trial)
    rows = EVALUATORS[suite](inst, seed, trial)
    bad = not all(r.passed for r in rows)
    return rows, ({"suite": suite, "seed": seed, "trial": trial, "instance": inst} if bad else None)


def _run_chunk(args):
    suite, seed, trials = args
    rows, violations = [], []
    for t in trials:
        r, v = run_trial(suite, seed, t)
        rows.extend(r)
        if v is not None:
            violations.append(v)
    return rows, violations


def run_suite(suite, trials, seed, workers=1):
    """Run ``trials`` seeded instances of one suite (or ``all``); return rows and failing instances."""
    if int(trials) < 1:
        raise ValueError("trials must be >= 1")
    suites = SUITES if suite == "all" else (suite,)
    for s in suites:
        if s not in SUITES:
            raise ValueError(f"unknown suite {s!r}")
    jobs = []
    chunk = max(1, math.ceil(trials / max(1, 4 * workers)))
    for s in suites:
        for start in range(0, trials, chunk):
            jobs.append((s, seed, range(start, min(trials, start + chunk))))
    rows, violations = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    for r, v in results:
        rows.extend(r)
        violations.extend(v)
    rows.sort(key=ReportRow.sort_key)
    violations.sort(key=lambda v: (v["suite"], v["trial"]))
    return rows, violations


def replay(record):
    """Re-evaluate a serialized instance produced by :func:`run_suite`."""
    return EVALUATORS[record["suite"]](record["instance"], record["seed"], record["trial"])
