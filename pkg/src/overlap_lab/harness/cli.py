"""``overlap-lab`` command line.

Exit codes: 0 when everything passes, 1 when a bound is violated (or the
audited data are perfectly separated), 2 for usage, config or input errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .. import bounds as B
from ..dataset import DatasetError, read_dataset_csv
from ..estimation import DEFAULT_ETA_GRID, AuditConfig, PropensityConvergenceError, SeparationError, audit
from . import suites, sweep
from .reports import COLUMN_HELP, rows_to_csv

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
SEED_ENV = "OVERLAP_LAB_SEED"


class UsageError(Exception):
    pass


def default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- bounds -----------------------------------------------------------------------------------


def bound_table(eta, pi, alphas=()):
    band = B.lr_band(B.OverlapSpec(eta, pi))
    chi2, kl, tv = B.chi2_bounds(band), B.kl_bounds(band), B.tv_bounds(band)
    table = {
        "eta": eta,
        "pi": pi,
        "b_min": band.b_min,
        "b_max": band.b_max,
        "chi2_forward": chi2.forward,
        "chi2_reverse": chi2.reverse,
        "kl_forward": kl.forward,
        "kl_reverse": kl.reverse,
        "tv": tv.forward,
        "accuracy_max": B.classifier_accuracy_bound(eta),
    }
    for a in alphas:
        ca = B.chi_alpha_bounds(band, a)
        table[f"chi_alpha_{a:g}_forward"] = ca.forward
        table[f"chi_alpha_{a:g}_reverse"] = ca.reverse
    return table


def cmd_bounds(args):
    alphas = args.alpha or []
    for a in alphas:
        if not a > 1:
            raise UsageError(f"alpha must be > 1, got {a:g}")
    table = bound_table(args.eta, args.pi, alphas)
    if args.json:
        print(json.dumps({k: _json_float(v) for k, v in table.items()}, indent=2))
    else:
        width = max(len(k) for k in table)
        for k, v in table.items():
            print(f"{k:<{width}}  {v:.6g}")
    return EXIT_OK


# -- verify -----------------------------------------------------------------------------------


def cmd_verify(args):
    seed = default_seed() if args.seed is None else args.seed
    rows, violations = suites.run_suite(args.suite, args.trials, seed, args.workers)
    _write_text(args.out, rows_to_csv(rows))
    failed = sum(not r.passed for r in rows)
    print(f"verify {args.suite}: {args.trials} trials, {len(rows)} rows, {failed} failed", file=sys.stderr)
    if violations:
        path = args.violations
        with open(path, "w") as fh:
            json.dump(violations, fh, indent=1)
        print(f"{len(violations)} violating instances written to {path} (replay with --replay)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_replay(args):
    try:
        with open(args.replay) as fh:
            records = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read replay file: {exc}") from None
    rows = [row for rec in records for row in suites.replay(rec)]
    _write_text(args.out, rows_to_csv(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_VIOLATION


# -- sweep ------------------------------------------------------------------------------------


def cmd_sweep(args):
    try:
        cfg = sweep.load_config(args.config)
    except sweep.ConfigError as exc:
        raise UsageError(str(exc)) from None
    rows, summary = sweep.run_sweep(cfg, args.workers)
    _write_text(args.out or cfg.outputs.get("rows"), rows_to_csv(rows))
    summary_path = args.summary or cfg.outputs.get("summary")
    if summary_path:
        _write_text(summary_path, sweep.summary_json(summary))
    failed = sum(not r.passed for r in rows)
    print(f"sweep {cfg.scenario_id}: {len(rows)} rows, {failed} failed", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_VIOLATION


# -- audit ------------------------------------------------------------------------------------


def format_audit(report):
    lines = [
        f"n = {report.n}, p = {report.p}, treated share = {report.treated_share:.4f}",
        f"plug-in eta* = {report.eta_star_hat:.4f} (ATT side {report.eta_att_hat:.4f}, ATC side {report.eta_atc_hat:.4f})",
        f"plug-in Bayes accuracy = {report.bayes_accuracy_hat:.4f}",
        f"MAD = {report.mad_observed:.4g}, mean gap = {report.euclidean_gap:.4g}",
        "",
        "trimming   retained   bound",
    ]
    for pt in report.trimming_curve:
        lines.append(f"{pt.eta_tilde:8.3f}   {pt.retained_fraction:8.4f}   {pt.retention_bound:.4f}")
    lines += ["", "eta        verdict        failing checks"]
    for eta, v in sorted(report.verdicts.items()):
        bad = [name for name, c in v["checks"].items() if not c["ok"]]
        verdict = "consistent" if v["consistent"] else "inconsistent"
        lines.append(f"{eta:8.3f}   {verdict:<13}  {', '.join(bad) or '-'}")
    lines += [f"note: {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


def cmd_audit(args):
    try:
        data = read_dataset_csv(args.csv, args.treatment)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    except OSError as exc:
        raise UsageError(f"cannot read {args.csv}: {exc}") from None
    config = AuditConfig(
        eta_grid=tuple(args.eta_grid or DEFAULT_ETA_GRID),
        trim_grid=tuple(args.trim_grid or DEFAULT_ETA_GRID),
        l2_penalty=args.l2_penalty,
    )
    try:
        report = audit(data, config)
    except SeparationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except PropensityConvergenceError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = json.dumps(report.to_dict(), indent=2, default=_json_float)
    if args.out:
        _write_text(args.out, text + "\n")
    sys.stdout.write(format_audit(report))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="overlap-lab", description="Strict-overlap bounds, verification and audits.",
                     epilog=f"{COLUMN_HELP}\n\nexit codes: 0 pass, 1 bound violation, 2 usage/config error\n"
                     f"{SEED_ENV} sets the default --seed.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", help="closed-form bounds for an overlap level")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--pi", type=float, default=0.5, help="treated share (default 0.5)")
    p.add_argument("--alpha", type=float, action="append", help="chi^alpha order, repeatable")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="randomized checks against exact oracles", epilog=COLUMN_HELP,
                       formatter_class=fmt)
    p.add_argument("--suite", choices=(*suites.SUITES, "all"), default="all")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV report path (default stdout)")
    p.add_argument("--violations", default="violations.json", help="where failing instances go")
    p.add_argument("--replay", help="re-evaluate instances from a violations file instead")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="dimension sweep from a JSON config", epilog=COLUMN_HELP,
                       formatter_class=fmt)
    p.add_argument("--config", required=True, help="path to a JSON config")
    p.add_argument("--out", help="CSV report path (default: config outputs.rows, else stdout)")
    p.add_argument("--summary", help="summary JSON path (default: config outputs.summary)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("audit", help="overlap audit of a CSV dataset")
    p.add_argument("--csv", required=True)
    p.add_argument("--treatment", default="T", help="name of the 0/1 treatment column")
    p.add_argument("--eta-grid", type=_float_list)
    p.add_argument("--trim-grid", type=_float_list)
    p.add_argument("--l2-penalty", type=float, default=None)
    p.add_argument("--out", help="audit JSON path")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        if args.command == "verify" and args.replay:
            return cmd_replay(args)
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
