"""Selective file preloader: cutoff planning and the two preload phases.

Each app gets a per-app cutoff s: files smaller than s (plus hot segments of
larger files) are staged before launch with small blocks, the rest is
streamed during launch with the largest block.  Cutoff selection across apps
is a multiple-choice knapsack under the shared preload budget, solved by
dynamic programming over a quantized budget axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .device import MIB, DeviceConfig, Direction, IoRequest, Priority, io_time_ms
from .errors import ConfigError
from .workload import LaunchProfile, IoPhase

PLAN_STEP = MIB   # default budget quantization for the knapsack axis


@dataclass(frozen=True)
class CutoffCandidate:
    """One (cutoff, preload size, stream bandwidth, predicted I/O) row for an app."""

    cutoff: int
    preload_size: int
    stream_bw: float
    predicted_io_ms: float


@dataclass
class CutoffPlan:
    selected: dict            # app_id -> CutoffCandidate
    total_preload: int
    objective_ms: float
    budget_exceeded: bool = False

    def cutoff_of(self, app_id: str) -> int:
        return self.selected[app_id].cutoff

    def preload_of(self, app_id: str) -> int:
        return self.selected[app_id].preload_size

    def __contains__(self, app_id: str) -> bool:
        return app_id in self.selected

    def to_dict(self) -> dict:
        return {
            "apps": {
                app: {
                    "cutoff": c.cutoff,
                    "preload_bytes": c.preload_size,
                    "predicted_io_ms": round(c.predicted_io_ms, 3),
                }
                for app, c in sorted(self.selected.items())
            },
            "total_preload": self.total_preload,
            "objective_ms": round(self.objective_ms, 3),
            "budget_exceeded": self.budget_exceeded,
        }


def candidates(profile: LaunchProfile, block_sizes, device: DeviceConfig) -> list:
    """Profile P(s) and V(s) at the discrete block sizes.

    P(s) counts the accessed bytes of files below s plus hot segments of files
    at or above s (hot segments are preloaded bytes, so they are charged to
    the budget).  V(s) is the device bandwidth streaming at block size s, and
    the predicted I/O time covers the bytes the stream still has to move.
    """
    if not block_sizes:
        raise ConfigError("candidates() needs at least one block size")
    sizes = sorted(block_sizes)
    for s in sizes:
        if s <= 0 or s & (s - 1):
            raise ConfigError(f"block sizes must be powers of two, got {s}")
    out = []
    for s in sizes:
        preload = 0
        for f in profile.files:
            if f.size < s or f.is_hot:
                preload += f.accessed_bytes
        bw = device.bandwidth(s)
        remaining = profile.total_file_bytes - preload
        out.append(
            CutoffCandidate(
                cutoff=s,
                preload_size=preload,
                stream_bw=bw,
                predicted_io_ms=io_time_ms(remaining, s, bw),
            )
        )
    return out


def plan_cutoffs(tables, budget: int, step: int = PLAN_STEP) -> CutoffPlan:
    """Pick one candidate per app minimizing total predicted I/O under the budget.

    ``tables`` maps app_id to its candidate list (ascending cutoffs).  Ties
    break toward smaller total preload, then smaller cutoff.  If even the
    minimal candidates blow the budget, the minimal plan is returned with
    ``budget_exceeded`` set.
    """
    if budget < 0:
        raise ConfigError("budget must be >= 0")
    if step <= 0:
        raise ConfigError("step must be positive")
    apps = list(tables)
    for app in apps:
        if not tables[app]:
            raise ConfigError(f"app {app} has no cutoff candidates")

    minimal = {app: min(tables[app], key=lambda c: (c.preload_size, c.cutoff))
               for app in apps}
    if sum(c.preload_size for c in minimal.values()) > budget:
        return CutoffPlan(
            selected=minimal,
            total_preload=sum(c.preload_size for c in minimal.values()),
            objective_ms=sum(c.predicted_io_ms for c in minimal.values()),
            budget_exceeded=True,
        )

    napps = len(apps)
    ncand = max(len(tables[app]) for app in apps)
    units = budget // step
    # ceil-quantized weights keep every DP-feasible pick truly within budget
    weights = np.zeros((napps, ncand), dtype=np.int64)
    costs = np.full((napps, ncand), np.inf)
    for j, app in enumerate(apps):
        for k, c in enumerate(tables[app]):
            weights[j, k] = -(-c.preload_size // step)
            costs[j, k] = c.predicted_io_ms

    B = units + 1
    grid = np.arange(B)
    idx = grid[None, None, :] - weights[:, :, None]
    bad = (idx < 0) | np.isinf(costs)[:, :, None]
    np.clip(idx, 0, None, out=idx)
    dp = np.zeros(B)
    choices = np.empty((napps, B), dtype=np.int16)
    cand = np.empty((ncand, B))
    for j in range(napps):
        np.take(dp, idx[j], out=cand)
        cand += costs[j][:, None]
        cand[bad[j]] = np.inf
        am = cand.argmin(axis=0)
        choices[j] = am
        dp = cand[am, grid]

    # smallest budget cell reaching the optimum -> smallest quantized preload
    best = dp[B - 1]
    b = int(np.argmax(dp <= best))
    selected = {}
    for j in range(napps - 1, -1, -1):
        k = int(choices[j, b])
        selected[apps[j]] = tables[apps[j]][k]
        b -= int(weights[j, k])
    selected = {app: selected[app] for app in apps}
    return CutoffPlan(
        selected=selected,
        total_preload=sum(c.preload_size for c in selected.values()),
        objective_ms=float(sum(c.predicted_io_ms for c in selected.values())),
        budget_exceeded=False,
    )


def plan_for_profiles(profiles, device: DeviceConfig, budget: int | None = None,
                      block_sizes=None, step: int = PLAN_STEP) -> CutoffPlan:
    """Convenience wrapper: build candidate tables from profiles, then solve."""
    if budget is None:
        budget = device.preload_budget
    if block_sizes is None:
        block_sizes = device.block_sizes
    tables = {p.app_id: candidates(p, block_sizes, device) for p in profiles}
    return plan_cutoffs(tables, budget, step)


# -- preload phase jobs ------------------------------------------------------


class ProtectedPhase(Enum):
    BEFORE_LAUNCH = "before"
    DURING_LAUNCH = "during"
    CLEARED = "cleared"


@dataclass
class ProtectedList:
    app_id: str
    file_ids: tuple = ()
    phase: ProtectedPhase = ProtectedPhase.CLEARED


class ProtectionRegistry:
    """Published preloaded-file lists, one active list per app.

    The registry always tracks what the preloader staged; whether the
    reclaimer honors it is the policy's retention switch.
    """

    def __init__(self):
        self.lists: dict[str, ProtectedList] = {}

    def register_before(self, app_id: str, file_ids):
        self.lists[app_id] = ProtectedList(app_id, tuple(file_ids),
                                           ProtectedPhase.BEFORE_LAUNCH)

    def extend_during(self, app_id: str, file_ids):
        cur = self.lists.get(app_id)
        known = cur.file_ids if cur and cur.phase is not ProtectedPhase.CLEARED else ()
        merged = list(known) + [f for f in file_ids if f not in known]
        self.lists[app_id] = ProtectedList(app_id, tuple(merged),
                                           ProtectedPhase.DURING_LAUNCH)

    def clear(self, app_id: str):
        """Idempotent; clearing an unknown app is a no-op."""
        self.lists[app_id] = ProtectedList(app_id, (), ProtectedPhase.CLEARED)

    def is_active(self, app_id: str) -> bool:
        lst = self.lists.get(app_id)
        return lst is not None and lst.phase is not ProtectedPhase.CLEARED

    def phase_of(self, app_id: str) -> ProtectedPhase:
        lst = self.lists.get(app_id)
        return lst.phase if lst else ProtectedPhase.CLEARED

    def active_apps(self) -> list:
        return [a for a, lst in self.lists.items()
                if lst.phase is not ProtectedPhase.CLEARED]

    def before_launch_apps(self) -> list:
        return [a for a, lst in self.lists.items()
                if lst.phase is ProtectedPhase.BEFORE_LAUNCH]


def plan_coverage(profile: LaunchProfile, plan: CutoffPlan) -> dict:
    """file_id -> bytes staged by the before-launch phase under the plan."""
    cutoff = plan.cutoff_of(profile.app_id)
    covered = {}
    for f in profile.files:
        if f.size < cutoff or f.is_hot:
            covered[f.file_id] = f.accessed_bytes
    return covered


def streamed_files(profile: LaunchProfile, plan: CutoffPlan) -> list:
    """(file_id, bytes) the during-launch stream covers, in launch order."""
    covered = plan_coverage(profile, plan)
    seen = {}
    for ph in profile.phases:
        if isinstance(ph, IoPhase) and ph.file_id not in covered:
            seen[ph.file_id] = seen.get(ph.file_id, 0) + ph.length
    return list(seen.items())


def before_launch_jobs(profile: LaunchProfile, plan: CutoffPlan,
                       registry: ProtectionRegistry, min_block: int) -> list:
    """Frequency-first phase: one small-block read per small file / hot segment.

    Registers every covered file on the app's protected list.  Issuing the
    jobs is the engine's business; memory-shortage deferral happens there.
    """
    if profile.app_id not in plan:
        raise ConfigError(f"plan has no entry for {profile.app_id}")
    cutoff = plan.cutoff_of(profile.app_id)
    jobs = []
    covered = []
    for f in profile.files:
        if f.size < cutoff:
            jobs.append(IoRequest(
                stream_id=f"pre:{profile.app_id}:{f.file_id}",
                bytes_remaining=f.accessed_bytes,
                block_size=min_block,
                priority=Priority.LOW,
            ))
            covered.append(f.file_id)
        elif f.is_hot:
            for i, (_, length) in enumerate(f.segments):
                jobs.append(IoRequest(
                    stream_id=f"pre:{profile.app_id}:{f.file_id}:seg{i}",
                    bytes_remaining=length,
                    block_size=min_block,
                    priority=Priority.LOW,
                ))
            covered.append(f.file_id)
    registry.register_before(profile.app_id, covered)
    total = sum(j.bytes_remaining for j in jobs)
    expected = plan.preload_of(profile.app_id)
    if total != expected:
        raise ConfigError(
            f"before-launch bytes {total} disagree with planned preload {expected}"
        )
    return jobs


def during_launch_job(profile: LaunchProfile, plan: CutoffPlan,
                      registry: ProtectionRegistry, max_block: int) -> IoRequest:
    """Throughput-first phase: one low-priority stream over the remaining bytes."""
    remaining = streamed_files(profile, plan)
    registry.extend_during(profile.app_id, [fid for fid, _ in remaining])
    return IoRequest(
        stream_id=f"stream:{profile.app_id}",
        bytes_remaining=sum(n for _, n in remaining),
        block_size=max_block,
        priority=Priority.LOW,
    )


def clear_protection(app_id: str, registry: ProtectionRegistry):
    registry.clear(app_id)
