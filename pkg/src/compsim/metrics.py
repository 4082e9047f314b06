"""Summary statistics of simulation runs and CoMP gain tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional, Sequence

import numpy as np

EDGE_PERCENTILE = 0.05

REPORT_COLUMNS = ("scenario", "scheme", "n_tx", "target_ru", "achieved_ru", "mean_upt_bps",
                  "edge_upt_bps", "mean_gain_pct", "edge_gain_pct", "n_samples", "n_seeds")


def percentile(samples, p: float) -> float:
    """Linear interpolation between order statistics at rank p * (n - 1)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return float(np.quantile(x, p, method="linear"))


@dataclass
class RunSummary:
    scenario: str
    scheme: str
    n_tx: int
    mean_upt: float
    edge_upt: float
    achieved_ru: float
    n_samples: int
    seed: Optional[int] = None
    target_ru: Optional[float] = None
    lambda_per_s: Optional[float] = None
    n_seeds: int = 1
    busy_trp_ttis: int = 0
    trp_ttis: int = 0
    samples: np.ndarray = field(default=None, repr=False)

    def record(self) -> dict:
        """Structured record written next to the per-transfer CSV."""
        return {
            "scenario": self.scenario,
            "scheme": self.scheme,
            "n_tx": self.n_tx,
            "target_ru": self.target_ru,
            "achieved_ru": self.achieved_ru,
            "lambda": self.lambda_per_s,
            "mean_upt_bps": self.mean_upt,
            "edge_upt_bps": self.edge_upt,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def summarize(samples, scenario, scheme, n_tx, busy_trp_ttis, trp_ttis, **kw) -> RunSummary:
    x = np.asarray(samples, dtype=float)
    mean = float(x.mean()) if x.size else float("nan")
    edge = percentile(x, EDGE_PERCENTILE) if x.size else float("nan")
    ru = busy_trp_ttis / trp_ttis if trp_ttis else 0.0
    return RunSummary(scenario, scheme, n_tx, mean, edge, ru, int(x.size),
                      busy_trp_ttis=busy_trp_ttis, trp_ttis=trp_ttis, samples=x, **kw)


def pool(summaries: Sequence[RunSummary]) -> RunSummary:
    """Pool runs over seeds: UPT samples are concatenated, RU is busy/total."""
    if not summaries:
        raise ValueError("nothing to pool")
    first = summaries[0]
    for s in summaries[1:]:
        if (s.scenario, s.scheme, s.n_tx) != (first.scenario, first.scheme, first.n_tx):
            raise ValueError("cannot pool runs of different cells")
    samples = np.concatenate([s.samples for s in summaries])
    busy = sum(s.busy_trp_ttis for s in summaries)
    total = sum(s.trp_ttis for s in summaries)
    return summarize(samples, first.scenario, first.scheme, first.n_tx, busy, total,
                     target_ru=first.target_ru, lambda_per_s=first.lambda_per_s,
                     n_seeds=len(summaries))


def gains(candidate: RunSummary, baseline: RunSummary):
    """Relative mean and cell-edge UPT gains in percent."""
    if baseline.mean_upt <= 0 or baseline.edge_upt <= 0:
        raise ValueError("baseline UPT must be positive")
    return (100.0 * (candidate.mean_upt / baseline.mean_upt - 1.0),
            100.0 * (candidate.edge_upt / baseline.edge_upt - 1.0))


def gain_rows(cells: dict) -> list:
    """Report rows from pooled summaries.

    `cells` maps (scenario, n_tx, target_ru, scheme) to a pooled
    RunSummary.  Gains are taken against the matching baseline cell; cells
    without one get empty gain fields.
    """
    rows = []
    for (scenario, n_tx, target, scheme), s in sorted(cells.items(), key=lambda kv: (
            kv[0][0], kv[0][1], kv[0][2], _SCHEME_ORDER.get(kv[0][3], 9))):
        base = cells.get((scenario, n_tx, target, "baseline"))
        if scheme == "baseline":
            mg, eg = 0.0, 0.0
        elif base is not None:
            mg, eg = gains(s, base)
        else:
            mg = eg = None
        rows.append({
            "scenario": scenario, "scheme": scheme, "n_tx": n_tx, "target_ru": target,
            "achieved_ru": s.achieved_ru, "mean_upt_bps": s.mean_upt, "edge_upt_bps": s.edge_upt,
            "mean_gain_pct": mg, "edge_gain_pct": eg, "n_samples": s.n_samples,
            "n_seeds": s.n_seeds,
        })
    return rows


_SCHEME_ORDER = {"baseline": 0, "dps": 1, "ncjt": 2}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_report_csv(rows: Iterable[dict], fh, header_lines=()) -> None:
    for line in header_lines:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def format_table(rows: Sequence[dict]) -> str:
    """Aligned plain-text rendering of report rows."""
    cells = [list(REPORT_COLUMNS)]
    for row in rows:
        r = []
        for c in REPORT_COLUMNS:
            v = row[c]
            if c.endswith("_bps") and v is not None:
                r.append(f"{v / 1e6:.2f}M")
            elif c.endswith("_pct") and v is not None:
                r.append(f"{v:+.1f}")
            elif c.endswith("_ru") and v is not None:
                r.append(f"{v:.3f}")
            else:
                r.append(_fmt(v))
        cells.append(r)
    widths = [max(len(r[i]) for r in cells) for i in range(len(REPORT_COLUMNS))]
    out = io.StringIO()
    for r in cells:
        out.write("  ".join(v.rjust(w) for v, w in zip(r, widths)).rstrip() + "\n")
    return out.getvalue()
