"""Report rows and their CSV encoding."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

COLUMNS = ("scenario", "p", "quantity", "observed", "bound", "margin", "tolerance", "pass", "seed", "replicate")

COLUMN_HELP = """\
report columns (CSV, header row always present):
  scenario   suite or sweep scenario id
  p          dimension (sweeps) or support size (verify suites)
  quantity   what was compared, e.g. mad, kl_avg_forward, chi2_reverse
  observed   the exact or sampled value
  bound      the value it must not exceed
  margin     bound - observed
  tolerance  allowed negative margin (numerical or sampling slack)
  pass       1 iff margin >= -tolerance
  seed       seed of the instance
  replicate  trial or replicate index
floats are written with 17 significant digits."""


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    p: int
    quantity: str
    observed: float
    bound: float
    tolerance: float
    seed: int
    replicate: int

    @property
    def margin(self):
        if self.bound == self.observed:
            return 0.0
        return self.bound - self.observed

    @property
    def passed(self):
        m = self.margin
        return not math.isnan(m) and m >= -self.tolerance

    def sort_key(self):
        return (self.scenario, self.p, self.replicate, self.quantity)

    def as_record(self):
        return {
            "scenario": self.scenario,
            "p": self.p,
            "quantity": self.quantity,
            "observed": self.observed,
            "bound": self.bound,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "pass": int(self.passed),
            "seed": self.seed,
            "replicate": self.replicate,
        }


def fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in sorted(rows, key=ReportRow.sort_key):
        rec = row.as_record()
        w.writerow([fmt(rec[c]) for c in COLUMNS])
    return buf.getvalue()


def write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_rows(path):
    """Parse a report back; ``pass`` is recomputed from the numeric fields."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                ReportRow(
                    rec["scenario"],
                    int(rec["p"]),
                    rec["quantity"],
                    float(rec["observed"]),
                    float(rec["bound"]),
                    float(rec["tolerance"]),
                    int(rec["seed"]),
                    int(rec["replicate"]),
                )
            )
    return out
