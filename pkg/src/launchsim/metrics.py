"""Launch records, aggregate metrics, and policy comparison tables.

Percentiles use nearest-rank semantics (no interpolation) and floats are
formatted to fixed precision at serialization time, so identical runs emit
byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

USABILITY_CLIFF_MS = 1000   # launches at or above this read as frozen


class LaunchKind(Enum):
    COLD = "cold"
    WARM = "warm"
    HOT = "hot"


@dataclass(frozen=True)
class LaunchRecord:
    app_id: str
    kind: LaunchKind
    t_io: int
    t_cpu: int
    t_alloc: int
    total: int
    under_1s: bool
    start_ms: int
    relaunch: bool
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "kind": self.kind.value,
            "t_io": self.t_io,
            "t_cpu": self.t_cpu,
            "t_alloc": self.t_alloc,
            "total": self.total,
            "under_1s": self.under_1s,
            "start_ms": self.start_ms,
            "relaunch": self.relaunch,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaunchRecord":
        d = dict(d)
        d["kind"] = LaunchKind(d["kind"])
        return cls(**d)


def nearest_rank(values, pct: float):
    """p-th percentile, nearest-rank: the ceil(p/100 * n)-th smallest value."""
    if not values:
        return 0
    ordered = sorted(values)
    rank = -(-int(pct) * len(ordered) // 100)   # ceil
    rank = min(max(rank, 1), len(ordered))
    return ordered[rank - 1]


def metrics_from_records(records) -> dict:
    """Aggregates recomputable from launch records alone."""
    ok = [r for r in records if not r.failed]
    cold = [r.total for r in ok if r.kind is LaunchKind.COLD]
    n = len(ok)
    return {
        "launch_count": n,
        "cold_launch_count": len(cold),
        "mean_cold_ms": round(sum(cold) / len(cold), 3) if cold else 0.0,
        "p50_cold_ms": nearest_rank(cold, 50),
        "p95_cold_ms": nearest_rank(cold, 95),
        "cold_relaunch_count": sum(
            1 for r in ok if r.kind is LaunchKind.COLD and r.relaunch
        ),
        "hot_relaunch_count": sum(1 for r in ok if r.kind is LaunchKind.HOT),
        "pct_under_1s": round(100.0 * sum(1 for r in ok if r.under_1s) / n, 3) if n else 0.0,
        "launch_failures": sum(1 for r in records if r.failed),
    }


@dataclass
class MetricsReport:
    scenario: str
    policy: str
    seed: int
    launches: list
    reclaim_events: list = field(default_factory=list)
    kill_events: list = field(default_factory=list)
    io_timeline: list = field(default_factory=list)   # [bucket_start_ms, bytes_per_s]
    peak_preloaded: int = 0
    direct_reclaim_count: int = 0
    kill_count: int = 0
    scan_cost_ms: int = 0
    protected_evicted_bytes: int = 0
    sim_end_ms: int = 0

    @property
    def aggregates(self) -> dict:
        agg = metrics_from_records(self.launches)
        agg.update({
            "direct_reclaim_count": self.direct_reclaim_count,
            "kill_count": self.kill_count,
            "peak_preloaded_bytes": self.peak_preloaded,
            "protected_evicted_bytes": self.protected_evicted_bytes,
            "scan_cost_ms": self.scan_cost_ms,
            "sim_end_ms": self.sim_end_ms,
        })
        return agg

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "seed": self.seed,
            "aggregates": self.aggregates,
            "launches": [r.to_dict() for r in self.launches],
            "reclaim_events": self.reclaim_events,
            "kill_events": self.kill_events,
            "io_timeline": self.io_timeline,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# -- comparison --------------------------------------------------------------

COMPARE_FIELDS = [
    "mean_cold_ms",
    "p50_cold_ms",
    "p95_cold_ms",
    "cold_relaunch_count",
    "hot_relaunch_count",
    "pct_under_1s",
    "direct_reclaim_count",
    "kill_count",
    "launch_failures",
]

# lower is better for these; deltas are reported as percent change vs reference
_DELTA_FIELDS = ["mean_cold_ms", "cold_relaunch_count", "direct_reclaim_count", "kill_count"]


def comparison_rows(reports) -> list:
    """One row per policy with aggregates plus percent deltas vs the baseline
    policy if present (first report otherwise)."""
    ref = next((r for r in reports if r.policy == "baseline"), reports[0])
    ref_agg = ref.aggregates
    rows = []
    for rep in reports:
        agg = rep.aggregates
        row = {"policy": rep.policy}
        for f in COMPARE_FIELDS:
            row[f] = agg[f]
        for f in _DELTA_FIELDS:
            base = ref_agg[f]
            row[f"delta_{f}_pct"] = (
                round(100.0 * (agg[f] - base) / base, 3) if base else 0.0
            )
        rows.append(row)
    return rows


def rows_to_text(rows) -> str:
    cols = list(rows[0].keys())
    cells = [[str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps(rows, sort_keys=True, indent=2) + "\n"


def compare(scenario, policies, seed=None) -> list:
    """Run each policy on the scenario and return the comparison rows."""
    from .engine import simulate   # local import avoids a module cycle

    reports = [simulate(scenario, p, seed=seed) for p in policies]
    return comparison_rows(reports)
