"""Dimension sweeps: how bounds and observed discrepancies scale with ``p``."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .. import bounds as B
from .. import discrete as D
from .. import processes as P
from ..estimation import mean_imbalance
from .reports import ReportRow

SCHEMA_VERSION = 1
# any Bernoulli variance is at most 1/4, so this caps both operator norms for every p
BERNOULLI_VAR_CAP = 0.25

SWEEP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "overlap-lab sweep config",
    "type": "object",
    "required": ["schema_version", "scenario", "p_grid"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "id": {"type": "string", "minLength": 1},
        "scenario": {
            "type": "object",
            "required": ["variant"],
            "properties": {"variant": {"enum": ["lr_budgeted_bernoulli", "ma1", "factor"]}},
            "allOf": [
                {
                    "if": {"properties": {"variant": {"const": "lr_budgeted_bernoulli"}}},
                    "then": {"properties": {"variant": True}, "additionalProperties": False},
                },
                {
                    "if": {"properties": {"variant": {"const": "ma1"}}},
                    "then": {
                        "properties": {
                            "variant": True,
                            "theta": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                            "sigma2": {"type": "number", "exclusiveMinimum": 0},
                        },
                        "required": ["theta", "sigma2"],
                        "additionalProperties": False,
                    },
                },
                {
                    "if": {"properties": {"variant": {"const": "factor"}}},
                    "then": {
                        "properties": {
                            "variant": True,
                            "rank": {"type": "integer", "minimum": 1},
                            "loading": {"type": "number"},
                            "idiosyncratic": {"type": "number", "minimum": 0},
                        },
                        "additionalProperties": False,
                    },
                },
            ],
        },
        "p_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "pi": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n": {"type": "integer", "minimum": 0},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "tolerance": {"type": "number", "minimum": 0},
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rows": {"type": "string"}, "summary": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    scenario: dict
    p_grid: tuple
    eta: float = 0.1
    pi: float = 0.5
    n: int = 0
    replicates: int = 1
    seed: int = 0
    tolerance: float = 1e-9
    outputs: dict = field(default_factory=dict)
    id: str = ""

    @property
    def scenario_id(self):
        return self.id or self.scenario["variant"]


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else "/"


def load_config(source) -> SweepConfig:
    """Validate a config given as a dict, a JSON string or a path."""
    if isinstance(source, dict):
        raw = source
    else:
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    validator = jsonschema.Draft202012Validator(SWEEP_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
        raise ConfigError("invalid sweep config:\n  " + "\n  ".join(msgs))
    grid = raw["p_grid"]
    for i in range(1, len(grid)):
        if grid[i] <= grid[i - 1]:
            raise ConfigError(f"invalid sweep config:\n  /p_grid/{i}: p_grid must be strictly ascending")
    cfg = SweepConfig(
        scenario=dict(raw["scenario"]),
        p_grid=tuple(grid),
        eta=raw.get("eta", 0.1),
        pi=raw.get("pi", 0.5),
        n=raw.get("n", 0),
        replicates=raw.get("replicates", 1),
        seed=raw.get("seed", 0),
        tolerance=raw.get("tolerance", 1e-9),
        outputs=dict(raw.get("outputs", {})),
        id=raw.get("id", ""),
    )
    if cfg.scenario["variant"] == "lr_budgeted_bernoulli":
        try:
            B.OverlapSpec(cfg.eta, cfg.pi)
        except ValueError as exc:
            raise ConfigError(f"invalid sweep config:\n  /pi: {exc}") from None
    return cfg


def task_seed(seed, p, replicate):
    return int(np.random.SeedSequence([int(seed), int(p), int(replicate)]).generate_state(1)[0])


def _lr_budgeted_rows(cfg, p, rep):
    sid, tol = cfg.scenario_id, cfg.tolerance
    band = B.lr_band(B.OverlapSpec(cfg.eta, cfg.pi))
    spec = P.lr_budget_allocator(cfg.eta, cfg.pi, p)
    mom = P.exact_product_moments(spec)
    seed = task_seed(cfg.seed, p, rep)
    if cfg.n > 0:
        data = P.sample(spec, cfg.n, seed)
        imb = mean_imbalance(data)
        se = imb.gap_se
        return [
            ReportRow(sid, p, "mad", imb.mad, B.mad_bound(p, mom.opnorm_0, mom.opnorm_1, band),
                      4.0 * float(se.max()), seed, rep),
            ReportRow(sid, p, "mean_gap", imb.euclidean_gap,
                      B.mean_discrepancy_bound(mom.opnorm_0, mom.opnorm_1, band),
                      4.0 * float(np.sqrt(np.sum(se**2))), seed, rep),
        ]
    kl = B.kl_bounds(band)
    prod = P.to_product_pair(spec)
    rows = [
        ReportRow(sid, p, "mad", mom.mad, B.mad_bound(p, mom.opnorm_0, mom.opnorm_1, band), tol, seed, rep),
        ReportRow(sid, p, "mad_uniform", mom.mad, B.mad_bound(p, BERNOULLI_VAR_CAP, BERNOULLI_VAR_CAP, band),
                  tol, seed, rep),
        ReportRow(sid, p, "mean_gap", mom.mean_gap, B.mean_discrepancy_bound(mom.opnorm_0, mom.opnorm_1, band),
                  tol, seed, rep),
        ReportRow(sid, p, "bayes_accuracy", P.product_bayes_accuracy(spec), B.classifier_accuracy_bound(cfg.eta),
                  tol, seed, rep),
        ReportRow(sid, p, "eta_floor", cfg.eta, P.joint_eta_star(spec), tol, seed, rep),
    ]
    for direction in ("forward", "reverse"):
        chain = D.chain_rule_kl(prod, direction)
        rows.append(ReportRow(sid, p, f"kl_avg_{direction}", chain.average, kl.direction(direction) / p, tol, seed, rep))
    return rows


def _ma1_rows(cfg, p, rep):
    sid, sc = cfg.scenario_id, cfg.scenario
    spec = P.MA1(sc["theta"], sc["sigma2"], p)
    op = P.operator_norm(P.covariance(spec, 0))
    exact = float(P.ma1_eigenvalues(spec.theta, spec.sigma2, p)[-1])
    return [
        ReportRow(sid, p, "opnorm", op, spec.spectral_bound, cfg.tolerance, 0, rep),
        ReportRow(sid, p, "opnorm_error", abs(op - exact), 0.0, 1e-8, 0, rep),
    ]


def _factor_rows(cfg, p, rep):
    sid, sc = cfg.scenario_id, cfg.scenario
    rank = min(int(sc.get("rank", 1)), p)
    spec = P.Factor.blocks(p, rank, sc.get("loading", 1.0), sc.get("idiosyncratic", 0.0))
    op = P.operator_norm(P.covariance(spec, 0))
    variances = np.sum(spec.loadings**2, axis=1) + spec.idiosyncratic
    # rank-s PSD: trace / s <= top eigenvalue; with a diagonal part fall back to the largest variance
    if np.any(spec.idiosyncratic):
        lower = float(variances.max())
    else:
        lower = float(variances.sum()) / rank
    return [ReportRow(sid, p, "opnorm_lower", lower, op, cfg.tolerance * max(1.0, op), 0, rep)]


ROW_BUILDERS = {"lr_budgeted_bernoulli": _lr_budgeted_rows, "ma1": _ma1_rows, "factor": _factor_rows}


def _task(args):
    cfg, p, rep = args
    return ROW_BUILDERS[cfg.scenario["variant"]](cfg, p, rep)


def run_sweep(cfg: SweepConfig, workers=1):
    """Evaluate every ``(p, replicate)`` cell; rows come back in a fixed order."""
    sampled = cfg.scenario["variant"] == "lr_budgeted_bernoulli" and cfg.n > 0
    reps = cfg.replicates if sampled else 1
    tasks = [(cfg, p, r) for p in cfg.p_grid for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    rows = [row for rs in results for row in rs]
    rows.sort(key=ReportRow.sort_key)
    return rows, summarize(cfg, rows)


def _slope(ps, values):
    ps, values = np.asarray(ps, float), np.asarray(values, float)
    if len(ps) < 2 or np.any(~np.isfinite(values)) or np.any(values <= 0):
        return None
    return float(np.polyfit(np.log(ps), np.log(values), 1)[0])


def summarize(cfg, rows):
    by_q = {}
    for r in rows:
        by_q.setdefault(r.quantity, {}).setdefault(r.p, []).append(r)
    quantities = {}
    for q, per_p in sorted(by_q.items()):
        ps = sorted(per_p)
        obs = [float(np.mean([r.observed for r in per_p[p]])) for p in ps]
        bnd = [float(np.mean([r.bound for r in per_p[p]])) for p in ps]
        quantities[q] = {
            "observed_slope": _slope(ps, obs),
            "bound_slope": _slope(ps, bnd),
            "observed_nondecreasing": all(b >= a for a, b in zip(obs, obs[1:])),
            "all_pass": all(r.passed for p in ps for r in per_p[p]),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.scenario_id,
        "variant": cfg.scenario["variant"],
        "p_grid": list(cfg.p_grid),
        "mode": "sampled" if cfg.n > 0 and cfg.scenario["variant"] == "lr_budgeted_bernoulli" else "exact",
        "rows": len(rows),
        "all_pass": all(r.passed for r in rows),
        "quantities": quantities,
    }


def summary_json(summary):
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False, default=_no_nan) + "\n"


def _no_nan(obj):
    raise TypeError(f"cannot serialize {obj!r}")
