"""Deterministic discrete-event loop executing scenarios under a policy.

Time is a float millisecond clock with ties broken by a monotone sequence
number, so identical inputs replay identically.  Launch latency decomposes
into I/O wait, CPU work, and allocation-blocked time; every wall interval of
a launch is attributed to exactly one bucket, which makes the decomposition
identity exact by construction.

Memory accounting is checked at every event boundary; a breach aborts the
simulation (bug trap, not user error).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum

from . import killer as killer_mod
from .device import (KIB, MIB, PAGE_BYTES, Direction, IoRequest, MemoryState,
                     Priority)
from .errors import ConfigError, InvariantError
from .metrics import LaunchKind, LaunchRecord, MetricsReport
from .preloader import (CutoffPlan, ProtectionRegistry, before_launch_jobs,
                        plan_coverage, plan_for_profiles, streamed_files)
from .reclaimer import (REBALANCE_BATCH, SCAN_INTERVAL_MS, PoolEntry,
                        ReclaimMode, ReclaimPools, Reclaimer)
from .workload import CpuPhase, IoPhase, Scenario, TimelineAction

# foreground reads are capped at a readahead-window block; preload streams may
# exceed this, which is where the large-block advantage comes from
READAHEAD_CAP = 128 * KIB
GROWTH_FACTOR = 1.4
GROWTH_HORIZON_MS = 30 * 60 * 1000
# direct-reclaim rounds before a launch is declared unsatisfiable
MAX_ALLOC_RETRIES = 8
# low-memory killer floor, as a fraction of the free watermark: when periodic
# reclaim cannot hold free memory above this, background apps are killed
KILL_FLOOR_DIV = 4


class EventKind(Enum):
    LAUNCH_REQUEST = "launch_request"
    SWITCH_REQUEST = "switch_request"
    IO_PROGRESS = "io_progress"
    RECLAIM_TICK = "reclaim_tick"
    ALLOC_BURST = "alloc_burst"
    SCAN_TICK = "scan_tick"
    LAUNCH_COMPLETE = "launch_complete"


@dataclass(frozen=True)
class PolicyConfig:
    name: str
    preload: bool
    adaptive_reclaim: bool
    retention: bool
    context_killer: bool


POLICIES = {
    "baseline": PolicyConfig("baseline", False, False, False, False),
    "preload_only": PolicyConfig("preload_only", True, False, False, False),
    "reclaim_only": PolicyConfig("reclaim_only", False, True, False, False),
    "naive_combined": PolicyConfig("naive_combined", True, True, False, False),
    "appflow": PolicyConfig("appflow", True, True, True, True),
}


class AppState(Enum):
    DEAD = "dead"
    BACKGROUND = "background"
    FOREGROUND = "foreground"
    LAUNCHING = "launching"


def fg_block_size(length: int, min_block: int) -> int:
    """Largest power of two at most `length`, clamped to the readahead window."""
    b = min_block
    while b * 2 <= length and b * 2 <= READAHEAD_CAP:
        b *= 2
    return b


class _Stream:
    """One live transfer on the channel.

    kind: "before" | "during" (low-priority preload into the staging pool),
    "fg" (foreground read into the launching app's resident file pages),
    "swap" (reclaim write-back; carries inflated work for the slowdown factor).
    """

    __slots__ = ("sid", "app", "kind", "block", "priority", "total", "done",
                 "frac", "rate", "inflation", "paused", "jobs", "job_idx",
                 "job_off", "prefix", "file_bytes", "waiters", "writes",
                 "on_done")

    def __init__(self, sid, app, kind, block, priority, total, inflation=1.0,
                 jobs=None, writes=None, on_done=None):
        self.sid = sid
        self.app = app
        self.kind = kind
        self.block = block
        self.priority = priority
        self.total = total
        self.done = 0
        self.frac = 0.0
        self.rate = 0.0
        self.inflation = inflation
        self.paused = False
        self.jobs = jobs or []          # [(file_id, bytes)] in delivery order
        self.job_idx = 0
        self.job_off = 0
        self.prefix = {}
        self.file_bytes = {}
        acc = 0
        for fid, n in self.jobs:
            self.prefix[fid] = acc
            self.file_bytes[fid] = n
            acc += n
        self.waiters = []               # [(threshold_bytes, launch)] sorted
        self.writes = writes or []      # [(app_id, bytes)] applied on completion
        self.on_done = on_done

    @property
    def remaining(self) -> int:
        return self.total - self.done

    def request(self) -> IoRequest:
        direction = Direction.WRITE if self.kind == "swap" else Direction.READ
        return IoRequest(self.sid, max(1, self.remaining), self.block,
                         self.priority, direction)


class _Launch:
    __slots__ = ("app", "profile", "kind", "relaunch", "start", "attr",
                 "attr_since", "buckets", "idx", "alloc_applied", "alloc_plan",
                 "phase_done", "consumed_total", "during", "retries",
                 "blocked_need", "fg_stream")

    def __init__(self, app, profile, kind, relaunch, now, alloc_plan):
        self.app = app
        self.profile = profile
        self.kind = kind
        self.relaunch = relaunch
        self.start = now
        self.attr = "cpu"
        self.attr_since = now
        self.buckets = {"io": 0.0, "cpu": 0.0, "alloc": 0.0}
        self.idx = 0
        self.alloc_applied = -1        # highest phase index whose burst ran
        self.alloc_plan = alloc_plan
        self.phase_done = 0            # bytes of the current io phase consumed
        self.consumed_total = 0
        self.during = None
        self.retries = 0
        self.blocked_need = 0
        self.fg_stream = None

    def set_attr(self, attr, now):
        self.buckets[self.attr] += now - self.attr_since
        self.attr = attr
        self.attr_since = now


class _AppRuntime:
    __slots__ = ("profile", "state", "last_used", "launch_count", "ledger",
                 "pool_touch", "growth_anchor_fp", "growth_anchor_t",
                 "before_stream")

    def __init__(self, profile):
        self.profile = profile
        self.state = AppState.DEAD
        self.last_used = 0
        self.launch_count = 0
        self.ledger = {}               # file_id -> staged unconsumed bytes
        self.pool_touch = 0.0
        self.growth_anchor_fp = 0
        self.growth_anchor_t = 0.0
        self.before_stream = None


class Simulation:
    def __init__(self, scenario: Scenario, policy: PolicyConfig,
                 seed: int | None = None, event_log: list | None = None):
        scenario.validate()
        self.scenario = scenario
        self.policy = policy
        self.seed = scenario.seed if seed is None else seed
        self.device = scenario.device
        self.state = MemoryState(self.device)
        self.reclaimer = Reclaimer(self.device, adaptive=policy.adaptive_reclaim)
        self.registry = ProtectionRegistry()
        self.runtimes = {p.app_id: _AppRuntime(p) for p in scenario.apps}
        self.fg_app = None
        self.now = 0.0
        self._seq = 0
        self._heap = []
        self._io_gen = 0
        self._io_last = 0.0
        self.streams: dict[str, _Stream] = {}
        self._sid = 0
        self.launches: dict[str, _Launch] = {}
        self.blocked: list = []
        self._tick_count = 0
        self.plan: CutoffPlan | None = None
        self.event_log = event_log
        self._last_timeline = scenario.timeline[-1].time_ms if scenario.timeline else 0
        # metrics accumulators
        self.records = []
        self.reclaim_events = []
        self.kill_events = []
        self.buckets_io: dict[int, int] = {}
        self.peak_preloaded = 0
        self.direct_reclaims = 0
        self.kills = 0
        self.scan_cost = 0
        self.protected_evicted = 0
        self.failures = 0

    # -- event plumbing ------------------------------------------------------

    def _push(self, t, kind, fn):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind.value, fn))

    def _log(self, tag, **fields):
        if self.event_log is not None:
            entry = {"t": round(self.now, 3), "event": tag}
            entry.update(fields)
            self.event_log.append(entry)

    def run(self) -> MetricsReport:
        if self.policy.preload:
            self.plan = plan_for_profiles(self.scenario.apps, self.device)
            for prof in self.scenario.apps:
                self._issue_before_preload(prof.app_id, initial=True)
        for ev in self.scenario.timeline:
            if ev.action is TimelineAction.BACKGROUND:
                self._push(float(ev.time_ms), EventKind.SWITCH_REQUEST,
                           lambda a=ev.app_id: self._handle_background(a))
            else:
                kind = (EventKind.LAUNCH_REQUEST if ev.action is TimelineAction.LAUNCH
                        else EventKind.SWITCH_REQUEST)
                self._push(float(ev.time_ms), kind,
                           lambda a=ev.app_id: self.handle_switch(a))
        self._push(float(self.device.reclaim_tick), EventKind.RECLAIM_TICK,
                   self._on_tick)
        if self.policy.retention:
            self._push(float(SCAN_INTERVAL_MS), EventKind.SCAN_TICK, self._on_scan)

        while self._heap:
            t, _seq, _kind, fn = heapq.heappop(self._heap)
            if t < self.now - 1e-9:
                raise InvariantError("event time regressed")
            self.now = max(self.now, t)
            self._advance_io(self.now)
            fn()
            self.state.check()

        if self.launches:
            raise InvariantError("event heap drained with launches in flight")
        return self._report()

    def _keep_ticking(self) -> bool:
        if self.now < self._last_timeline:
            return True
        if self.launches or self.blocked:
            return True
        if any(not s.paused and s.remaining > 0 for s in self.streams.values()):
            return True
        return self.reclaimer.rebalance_deficit > 0

    # -- I/O system ------------------------------------------------------------

    def _new_sid(self, tag):
        self._sid += 1
        return f"{tag}#{self._sid}"

    def _add_stream(self, stream: _Stream):
        self.streams[stream.sid] = stream
        if stream.total <= 0:
            self._finish_stream(stream)
            return
        self._reprogram()

    def _active(self):
        return [s for s in self.streams.values() if not s.paused and s.remaining > 0]

    def _reprogram(self):
        self._io_gen += 1
        active = self._active()
        if not active:
            return
        shares = self.device.contention_split([s.request() for s in active])
        soonest = None
        for s in active:
            s.rate = shares[s.sid]
            if s.rate <= 0:
                continue
            left = max(0.0, s.remaining - s.frac)
            # floor the step at 1 ns so sub-ULP residues cannot stall the clock
            eta = self.now + max(1e-6, left * s.inflation / s.rate * 1000.0)
            if soonest is None or eta < soonest:
                soonest = eta
        if soonest is not None:
            gen = self._io_gen
            self._push(soonest, EventKind.IO_PROGRESS, lambda g=gen: self._on_io(g))

    def _on_io(self, gen):
        if gen != self._io_gen:
            return
        self._reprogram()

    def _advance_io(self, to_t):
        dt = to_t - self._io_last
        self._io_last = to_t
        if not self.streams:
            return
        finished = []
        for s in list(self.streams.values()):
            if s.paused or s.remaining <= 0:
                continue
            avail = s.frac
            if dt > 1e-12 and s.rate > 0:
                avail += s.rate * dt / 1000.0 / s.inflation
            if avail < 1.0 and avail < s.remaining - 1e-3:
                s.frac = avail
                continue
            grant = min(s.remaining, int(avail))
            if avail >= s.remaining - 1e-3:
                grant = s.remaining
            s.frac = min(avail - grant, 1.0)
            if grant > 0:
                granted = self._deliver(s, grant)
                s.done += granted
            if s.remaining <= 0 and s.sid in self.streams:
                finished.append(s)
        for s in finished:
            self._finish_stream(s)

    def _deliver(self, s: _Stream, grant: int) -> int:
        """Move granted bytes into memory pools, honoring free-memory gates."""
        if s.kind == "swap":
            return grant                       # memory moves on completion
        if s.kind in ("before", "during"):
            if s.kind == "before":
                # idle preloading never dips below the free watermark
                room = self.state.free - self.device.free_threshold
            else:
                room = self.state.free
            granted = max(0, min(grant, room))
            if granted > 0:
                self.state.preload_deliver(s.app, granted)
                self._track_preload_peak()
                self.runtimes[s.app].pool_touch = self.now
                self.reclaimer.meter.record_alloc(granted // PAGE_BYTES)
                self._walk_jobs(s, granted)
                self._bucket_read(granted)
            if granted < grant:
                s.paused = True
                s.frac = 0.0
                self._reprogram()
            if s.kind == "during" and granted > 0:
                self._wake_waiters(s, granted_only=True)
            return granted
        # foreground read
        granted = min(grant, self.state.free)
        if granted > 0:
            self.state.alloc_file(s.app, granted)
            self.reclaimer.meter.record_alloc(granted // PAGE_BYTES)
            self._bucket_read(granted)
        if granted < grant:
            s.paused = True
            s.frac = 0.0
            launch = self.launches.get(s.app)
            if launch is not None:
                self._block_on_memory(launch, s.remaining - granted)
            self._reprogram()
        return granted

    def _walk_jobs(self, s: _Stream, granted: int):
        rt = self.runtimes[s.app]
        left = granted
        while left > 0 and s.job_idx < len(s.jobs):
            fid, total = s.jobs[s.job_idx]
            take = min(total - s.job_off, left)
            rt.ledger[fid] = rt.ledger.get(fid, 0) + take
            s.job_off += take
            left -= take
            if s.job_off >= total:
                s.job_idx += 1
                s.job_off = 0

    def _wake_waiters(self, s: _Stream, granted_only=False):
        # s.done is updated by the caller after _deliver; account for the
        # in-flight grant by comparing against delivered job progress instead
        delivered = s.done if not granted_only else self._job_progress(s)
        while s.waiters and s.waiters[0][0] <= delivered:
            _, launch = s.waiters.pop(0)
            if launch.app in self.launches:
                launch.set_attr(launch.attr, self.now)
                self._advance(launch)

    @staticmethod
    def _job_progress(s: _Stream) -> int:
        done = sum(n for _, n in s.jobs[: s.job_idx])
        return done + s.job_off

    def _finish_stream(self, s: _Stream):
        self.streams.pop(s.sid, None)
        if s.kind == "swap":
            for app, amount in s.writes:
                # the planned amount may have shrunk under us (app killed,
                # swap filled by a concurrent write): apply what still fits
                doable = min(amount, self.state.resident_anon.get(app, 0),
                             self.state.swap_room)
                if doable > 0:
                    self.state.swap_out_anon(app, doable)
            self._check_blocked()
        elif s.kind == "during":
            while s.waiters:
                _, launch = s.waiters.pop(0)
                if launch.app in self.launches:
                    launch.set_attr(launch.attr, self.now)
                    self._advance(launch)
        if s.on_done is not None:
            s.on_done()
        self._reprogram()

    def _bucket_read(self, nbytes: int):
        bucket = int(self.now // self.device.reclaim_tick)
        self.buckets_io[bucket] = self.buckets_io.get(bucket, 0) + nbytes

    def _track_preload_peak(self):
        total = self.state.preloaded_total
        if total > self.peak_preloaded:
            self.peak_preloaded = total

    # -- preload issuance --------------------------------------------------------

    def _issue_before_preload(self, app: str, initial=False):
        if not self.policy.preload or self.plan is None or app not in self.plan:
            return
        rt = self.runtimes[app]
        if rt.state is not AppState.DEAD and not initial:
            return
        if rt.before_stream is not None and rt.before_stream.sid in self.streams:
            return
        coverage = plan_coverage(rt.profile, self.plan)
        if initial:
            jobs = before_launch_jobs(rt.profile, self.plan, self.registry,
                                      self.device.min_block)
            queue = [(f.file_id, coverage[f.file_id])
                     for f in rt.profile.files if f.file_id in coverage]
            total = sum(j.bytes_remaining for j in jobs)
        else:
            queue = [(fid, cov - rt.ledger.get(fid, 0))
                     for fid, cov in coverage.items()
                     if cov - rt.ledger.get(fid, 0) > 0]
            total = sum(n for _, n in queue)
            if total > 0:
                self.registry.register_before(app, list(coverage))
        if total <= 0:
            return
        s = _Stream(self._new_sid(f"pre:{app}"), app, "before",
                    self.device.min_block, Priority.LOW, total, jobs=queue)
        rt.before_stream = s
        self._log("preload_issue", app=app, bytes=total)
        self._add_stream(s)

    # -- timeline -----------------------------------------------------------------

    def handle_switch(self, app: str):
        self._log("switch", app=app)
        prev = self.fg_app
        if prev is not None and prev != app:
            if self.runtimes[prev].state is AppState.FOREGROUND:
                self._to_background(prev)
        self.fg_app = app
        rt = self.runtimes[app]
        if rt.state is AppState.DEAD:
            self._start_launch(app)
        elif rt.state is AppState.BACKGROUND:
            rt.state = AppState.FOREGROUND
            rt.last_used = self.now
            self._record(LaunchRecord(
                app_id=app, kind=LaunchKind.HOT, t_io=0, t_cpu=0, t_alloc=0,
                total=0, under_1s=True, start_ms=int(self.now), relaunch=True,
            ))
        # launching or already foreground: nothing to do

    def _handle_background(self, app: str):
        self._log("push_background", app=app)
        if self.fg_app == app:
            self.fg_app = None
        if self.runtimes[app].state is AppState.FOREGROUND:
            self._to_background(app)

    def _to_background(self, app: str):
        rt = self.runtimes[app]
        rt.state = AppState.BACKGROUND
        rt.last_used = self.now
        rt.growth_anchor_fp = self.state.footprint_of(app)
        rt.growth_anchor_t = self.now

    # -- launch execution -----------------------------------------------------------

    def _start_launch(self, app: str):
        rt = self.runtimes[app]
        prof = rt.profile
        file_pages, _ = self.state.resident_of(app)
        kind = LaunchKind.WARM if file_pages > 0 else LaunchKind.COLD
        anon_total = int(prof.anon_file_split * prof.total_alloc)
        n = max(1, len(prof.phases))
        per = anon_total // n
        alloc_plan = [per] * n
        alloc_plan[0] += anon_total - per * n
        launch = _Launch(app, prof, kind, rt.launch_count > 0, self.now, alloc_plan)
        rt.state = AppState.LAUNCHING
        self.launches[app] = launch
        self._log("launch_start", app=app, kind=kind.value, relaunch=launch.relaunch)
        if rt.before_stream is not None and rt.before_stream.sid in self.streams:
            # the before phase stops here: staged bytes stay usable, anything
            # missing is covered on demand during the launch
            self.streams.pop(rt.before_stream.sid)
            rt.before_stream = None
            self._reprogram()
        if self.policy.preload and self.plan is not None and app in self.plan:
            remaining = streamed_files(prof, self.plan)
            self.registry.extend_during(app, [fid for fid, _ in remaining])
            total = sum(n for _, n in remaining)
            if total > 0:
                s = _Stream(self._new_sid(f"stream:{app}"), app, "during",
                            self.device.max_block, Priority.LOW, total,
                            jobs=remaining)
                launch.during = s
                self._add_stream(s)
        self._advance(launch)

    @staticmethod
    def _resident_ratio(prof) -> float:
        """Fraction of consumed file bytes that stays resident."""
        if prof.total_file_bytes == 0:
            return 0.0
        keep = (1.0 - prof.anon_file_split) * prof.total_alloc
        return min(1.0, keep / prof.total_file_bytes)

    def _advance(self, launch: _Launch):
        prof = launch.profile
        while True:
            if launch.idx >= len(prof.phases):
                self._complete(launch)
                return
            ph = prof.phases[launch.idx]
            if launch.alloc_applied < launch.idx:
                inc = launch.alloc_plan[launch.idx]
                if inc > self.state.free:
                    self._block_on_memory(launch, inc)
                    return
                if inc > 0:
                    self.state.alloc_anon(launch.app, inc)
                    self.reclaimer.meter.record_alloc(inc // PAGE_BYTES)
                launch.alloc_applied = launch.idx
            if isinstance(ph, CpuPhase):
                launch.set_attr("cpu", self.now)
                launch.idx += 1
                launch.phase_done = 0
                self._push(self.now + ph.duration_ms, EventKind.ALLOC_BURST,
                           lambda l=launch: self._resume(l))
                return
            if self._consume_io(launch, ph):
                launch.idx += 1
                launch.phase_done = 0
                continue
            return   # waiting on I/O or memory

    def _resume(self, launch: _Launch):
        if launch.app not in self.launches:
            return
        launch.set_attr(launch.attr, self.now)
        self._advance(launch)

    def _consume_io(self, launch: _Launch, ph: IoPhase) -> bool:
        """Try to satisfy an I/O phase; True when fully consumed."""
        rt = self.runtimes[launch.app]
        fid = ph.file_id
        need = ph.length - launch.phase_done
        staged = rt.ledger.get(fid, 0)
        if staged > 0 and need > 0:
            hit = min(staged, need)
            rt.ledger[fid] = staged - hit
            self.state.evict_preload(launch.app, hit)
            self.state.alloc_file(launch.app, hit)
            need -= hit
            launch.phase_done += hit
            launch.consumed_total += hit
        if need <= 0:
            self._trim_resident_file(launch)
            return True
        s = launch.during
        if s is not None and s.sid in self.streams and fid in s.prefix:
            threshold = s.prefix[fid] + s.file_bytes[fid]
            if self._job_progress(s) < threshold:
                launch.set_attr("io", self.now)
                if not any(w[1] is launch for w in s.waiters):
                    s.waiters.append((threshold, launch))
                    s.waiters.sort(key=lambda w: w[0])
                if s.paused:
                    self._block_on_memory(launch, need)
                return False
        # on-demand foreground read of whatever is missing
        launch.set_attr("io", self.now)
        block = fg_block_size(ph.length, self.device.min_block)
        stream = _Stream(self._new_sid(f"fg:{launch.app}"), launch.app, "fg",
                         block, Priority.FOREGROUND, need,
                         on_done=lambda l=launch, n=need: self._fg_read_done(l, n))
        launch.fg_stream = stream
        self._add_stream(stream)
        return False

    def _fg_read_done(self, launch: _Launch, nbytes: int):
        if launch.app not in self.launches:
            return
        launch.fg_stream = None
        launch.phase_done += nbytes
        launch.consumed_total += nbytes
        launch.set_attr(launch.attr, self.now)
        launch.idx += 1
        launch.phase_done = 0
        self._trim_resident_file(launch)
        self._advance(launch)

    def _trim_resident_file(self, launch: _Launch):
        """Keep only the profile's resident share of consumed file bytes."""
        ratio = self._resident_ratio(launch.profile)
        if ratio >= 1.0:
            return
        target = int(launch.consumed_total * ratio)
        have = self.state.resident_file.get(launch.app, 0)
        if have > target:
            self.state.drop_file(launch.app, have - target)

    def _complete(self, launch: _Launch):
        app = launch.app
        rt = self.runtimes[app]
        launch.set_attr(launch.attr, self.now)
        total = int(round(self.now - launch.start))
        t_io = int(round(launch.buckets["io"]))
        t_cpu = int(round(launch.buckets["cpu"]))
        t_alloc = total - t_io - t_cpu
        if t_alloc < 0:
            t_io = max(0, t_io + t_alloc)
            t_alloc = total - t_io - t_cpu
            if t_alloc < 0:
                t_cpu = max(0, t_cpu + t_alloc)
                t_alloc = total - t_io - t_cpu
        self.state.absorb_preload(app)
        self._settle(app, launch)
        self.registry.clear(app)
        if launch.during is not None and launch.during.sid in self.streams:
            self.streams.pop(launch.during.sid)
            self._reprogram()
        del self.launches[app]
        self.blocked = [l for l in self.blocked if l is not launch]
        rt.launch_count += 1
        rt.last_used = self.now
        rt.ledger = {}
        if self.fg_app == app:
            rt.state = AppState.FOREGROUND
        else:
            self._to_background(app)
        self._record(LaunchRecord(
            app_id=app, kind=launch.kind, t_io=t_io, t_cpu=t_cpu,
            t_alloc=t_alloc, total=total, under_1s=total < 1000,
            start_ms=int(launch.start), relaunch=launch.relaunch,
        ))
        self._log("launch_complete", app=app, total=total, t_io=t_io,
                  t_cpu=t_cpu, t_alloc=t_alloc)
        self._check_blocked()

    def _settle(self, app: str, launch: _Launch):
        """Post-launch footprint drops to the baseline working set."""
        prof = launch.profile
        f_have, a_have = self.state.resident_of(app)
        target = min(prof.baseline_footprint, f_have + a_have)
        target_anon = min(a_have, int(prof.anon_file_split * target))
        target_file = min(f_have, target - target_anon)
        target_anon = min(a_have, target - target_file)
        if a_have > target_anon:
            self.state.release_anon(app, a_have - target_anon)
        if f_have > target_file:
            self.state.drop_file(app, f_have - target_file)

    def _record(self, rec: LaunchRecord):
        if rec.total != rec.t_io + rec.t_cpu + rec.t_alloc:
            raise InvariantError("latency decomposition identity violated")
        self.records.append(rec)

    # -- memory pressure ---------------------------------------------------------

    def _build_pools(self) -> ReclaimPools:
        file_entries = []
        anon_entries = []
        protected = set()
        for app, rt in self.runtimes.items():
            if rt.state is AppState.BACKGROUND:
                f, a = self.state.resident_of(app)
                if f > 0:
                    file_entries.append(PoolEntry(rt.last_used, app, "cache", f))
                if a > 0:
                    anon_entries.append(PoolEntry(rt.last_used, app, "anon", a))
            p = self.state.preloaded_of(app)
            if p > 0:
                file_entries.append(PoolEntry(rt.pool_touch, app, "preload", p))
                if self.policy.retention and self.registry.is_active(app):
                    protected.add(app)
        pools = ReclaimPools(
            file_entries=file_entries,
            anon_entries=anon_entries,
            swap_room=max(0, self.state.swap_room - self._pending_swap_bytes()),
            protected=frozenset(protected),
        )
        return pools.sort()

    def _pending_swap_bytes(self) -> int:
        return sum(sum(n for _, n in s.writes)
                   for s in self.streams.values() if s.kind == "swap")

    def _swap_writer_busy(self) -> bool:
        return any(s.kind == "swap" and s.remaining > 0
                   for s in self.streams.values())

    def _apply_reclaim(self, outcome, takes, mode, direct):
        """Realize a reclaim plan: instant file drops, swap writes as a stream."""
        writes = []
        for entry, amount in takes:
            if entry.source == "cache":
                self.state.drop_file(entry.app_id, amount)
            elif entry.source == "preload":
                self._evict_preload_bytes(entry.app_id, amount)
            else:
                writes.append((entry.app_id, amount))
        if writes:
            total = sum(n for _, n in writes)
            self._add_stream(_Stream(
                self._new_sid("swap"), "", "swap", self.device.max_block,
                Priority.FOREGROUND, total,
                inflation=self.device.anon_reclaim_slowdown, writes=writes))
        self.reclaim_events.append({
            "t": round(self.now, 3),
            "mode": mode.value,
            "freed_file": outcome.freed_file,
            "freed_anon": outcome.freed_anon,
            "io_write_bytes": outcome.io_write_bytes,
            "direct": direct,
        })
        self._log("reclaim", mode=mode.value, freed_file=outcome.freed_file,
                  freed_anon=outcome.freed_anon, direct=direct)

    def _evict_preload_bytes(self, app: str, amount: int):
        rt = self.runtimes[app]
        left = amount
        for fid in list(rt.ledger):
            if left <= 0:
                break
            take = min(rt.ledger[fid], left)
            rt.ledger[fid] -= take
            if rt.ledger[fid] == 0:
                del rt.ledger[fid]
            left -= take
        self.state.evict_preload(app, amount)
        if self.registry.is_active(app):
            self.protected_evicted += amount
            self._log("preload_evict", app=app, bytes=amount, protected=True)

    def _block_on_memory(self, launch: _Launch, need: int):
        """A launch allocation stalled: direct reclaim, then killer escalation."""
        launch.set_attr("alloc", self.now)
        launch.blocked_need = need
        # the app's own stream must not eat what direct reclaim frees
        if launch.during is not None and launch.during.sid in self.streams \
                and not launch.during.paused:
            launch.during.paused = True
            self._reprogram()
        launch.retries += 1
        if launch.retries > MAX_ALLOC_RETRIES:
            self._fail_launch(launch)
            return
        self.direct_reclaims += 1
        deficit = need - self.state.free
        if deficit <= 0:
            deficit = need
        # a blocked allocation is itself burst evidence: consider the running
        # window too, not only the last completed sample
        meter = self.reclaimer.meter
        rate = max(meter.last_rate, meter.count_this_window)
        mode = self.reclaimer.select_mode(self.state.free, rate)
        outcome, takes = self.reclaimer.reclaim(
            deficit, mode, self._build_pools(), direct=True)
        self._apply_reclaim(outcome, takes, mode, direct=True)
        covered = outcome.freed_file + outcome.freed_anon
        if covered < deficit and mode is ReclaimMode.EFFICIENCY_FIRST:
            out2, takes2 = self.reclaimer.reclaim(
                deficit - covered, ReclaimMode.DEFAULT, self._build_pools(),
                direct=True)
            self._apply_reclaim(out2, takes2, ReclaimMode.DEFAULT, direct=True)
            covered += out2.freed_file + out2.freed_anon
        if covered < deficit:
            self._invoke_killer(deficit - covered)
        if not any(l is launch for l in self.blocked):
            self.blocked.append(launch)
        cpu_delay = max(0.1, outcome.freed_file / (64 * MIB))
        self._push(self.now + cpu_delay, EventKind.ALLOC_BURST,
                   lambda: self._check_blocked())

    def _invoke_killer(self, demand: int):
        if demand <= 0:
            return
        candidates = []
        for app, rt in self.runtimes.items():
            if rt.state is AppState.BACKGROUND:
                candidates.append(killer_mod.KillCandidate(
                    app_id=app,
                    current_footprint=self.state.footprint_of(app),
                    relaunch_footprint=rt.profile.baseline_footprint,
                    last_used=int(rt.last_used),
                ))
        if self.policy.context_killer:
            decision = killer_mod.select_victims(
                candidates, demand, int(self.now), self.device.recency_window)
        else:
            decision = killer_mod.lmk_baseline(candidates, demand)
        for victim, phase in zip(decision.victims, decision.phases):
            self._kill(victim, phase, decision.demand)

    def _kill(self, victim, phase: int, demand: int):
        rt = self.runtimes[victim.app_id]
        freed = self.state.kill(victim.app_id)
        rt.state = AppState.DEAD
        self.kills += 1
        self.kill_events.append({
            "t": round(self.now, 3),
            "victim": victim.app_id,
            "delta_m": victim.delta_m,
            "phase": phase,
            "demand": demand,
            "freed": freed,
        })
        self._log("kill", victim=victim.app_id, delta_m=victim.delta_m,
                  phase=phase, freed=freed)
        self._issue_before_preload(victim.app_id)

    def _check_blocked(self):
        pending = self.blocked
        self.blocked = []
        for launch in pending:
            if launch.app not in self.launches:
                continue
            if self.state.free >= launch.blocked_need:
                launch.blocked_need = 0
                launch.retries = 0
                self._unblock(launch)
            elif self._swap_writer_busy():
                self.blocked.append(launch)   # in-flight write-back frees memory
            else:
                launch.set_attr(launch.attr, self.now)
                self._block_on_memory(launch, launch.blocked_need)

    def _unblock(self, launch: _Launch):
        launch.set_attr(launch.attr, self.now)
        waiting_on_stream = (
            launch.during is not None and launch.during.sid in self.streams
            and any(w[1] is launch for w in launch.during.waiters)
        )
        resumed_stream = False
        if launch.during is not None and launch.during.paused:
            launch.during.paused = False
            resumed_stream = True
        if launch.fg_stream is not None and launch.fg_stream.sid in self.streams:
            launch.fg_stream.paused = False
            launch.set_attr("io", self.now)
            resumed_stream = True
        if resumed_stream:
            self._reprogram()
        if waiting_on_stream:
            launch.set_attr("io", self.now)
        elif launch.fg_stream is None:
            self._advance(launch)

    def _fail_launch(self, launch: _Launch):
        app = launch.app
        rt = self.runtimes[app]
        launch.set_attr(launch.attr, self.now)
        t_io = int(round(launch.buckets["io"]))
        t_cpu = int(round(launch.buckets["cpu"]))
        t_alloc = max(0, int(round(self.now - launch.start)) - t_io - t_cpu)
        self.failures += 1
        self.state.kill(app)
        self.state.check()
        rt.state = AppState.DEAD
        rt.launch_count += 1
        self.registry.clear(app)
        for s in (launch.during, launch.fg_stream):
            if s is not None and s.sid in self.streams:
                self.streams.pop(s.sid)
        self._reprogram()
        del self.launches[app]
        self.blocked = [l for l in self.blocked if l is not launch]
        if self.fg_app == app:
            self.fg_app = None
        self.records.append(LaunchRecord(
            app_id=app, kind=launch.kind, t_io=t_io, t_cpu=t_cpu,
            t_alloc=t_alloc, total=t_io + t_cpu + t_alloc, under_1s=False,
            start_ms=int(launch.start), relaunch=launch.relaunch, failed=True,
        ))
        self._log("launch_failed", app=app)

    # -- periodic work --------------------------------------------------------------

    def _on_tick(self):
        self._tick_count += 1
        rate = self.reclaimer.on_tick(int(self.now), self.state.free)
        self._grow_background()
        if self._tick_count % 10 == 0:
            self._restage_preloads()
        free = self.state.free
        threshold = self.device.free_threshold
        if free < threshold:
            mode = self.reclaimer.select_mode(free, rate)
            writer_busy = self._swap_writer_busy()
            demand = threshold - free
            if writer_busy and mode is not ReclaimMode.EFFICIENCY_FIRST:
                if self.policy.adaptive_reclaim:
                    # the adaptive reclaimer sidesteps its stalled write-back
                    # by dropping file pages instead of waiting on it
                    mode = ReclaimMode.EFFICIENCY_FIRST
                else:
                    # the even-alternation reclaimer stalls behind write-back
                    demand = 0
            if mode is ReclaimMode.EFFICIENCY_FIRST and demand > 0:
                # under pressure, build headroom beyond the bare watermark
                demand += threshold // 2
            if demand > 0:
                outcome, takes = self.reclaimer.reclaim(
                    demand, mode, self._build_pools(), direct=False)
                self._apply_reclaim(outcome, takes, mode, direct=False)
            floor = threshold // KILL_FLOOR_DIV
            if self.state.free < floor:
                self._invoke_killer(floor - self.state.free)
        elif (self.policy.adaptive_reclaim
              and self.reclaimer.rebalance_deficit > 0
              and not self._swap_writer_busy()
              and self.state.swap_room - self._pending_swap_bytes()
                  > self.device.swap_limit // 2):
            # idle write-back keeps half the swap budget in reserve for
            # direct pressure
            demand = min(REBALANCE_BATCH, self.reclaimer.rebalance_deficit)
            outcome, takes = self.reclaimer.reclaim(
                demand, ReclaimMode.REBALANCING, self._build_pools(),
                direct=False)
            self._apply_reclaim(outcome, takes, ReclaimMode.REBALANCING,
                                direct=False)
        blocked_apps = {l.app for l in self.blocked}
        resumed = False
        for s in self.streams.values():
            if not s.paused:
                continue
            if s.kind == "before" and self.state.free > self.device.free_threshold:
                s.paused = False
                resumed = True
            elif (s.kind == "during" and self.state.free > 0
                  and s.app not in blocked_apps):
                s.paused = False
                resumed = True
        if resumed:
            self._reprogram()
        self._check_blocked()
        if self._keep_ticking():
            self._push(self.now + self.device.reclaim_tick,
                       EventKind.RECLAIM_TICK, self._on_tick)

    def _restage_preloads(self):
        """Idle repair of evicted before-launch pools for dead apps."""
        if self.plan is None or self.state.free <= self.device.free_threshold:
            return
        for app, rt in self.runtimes.items():
            if rt.state is AppState.DEAD and app in self.plan \
                    and self.state.preloaded_of(app) < self.plan.preload_of(app):
                self._issue_before_preload(app)

    def _grow_background(self):
        for app, rt in self.runtimes.items():
            if rt.state is not AppState.BACKGROUND:
                continue
            base = rt.profile.baseline_footprint
            cap = int(base * GROWTH_FACTOR)
            if rt.growth_anchor_fp >= cap:
                continue
            dt = self.now - rt.growth_anchor_t
            if dt >= GROWTH_HORIZON_MS:
                target = cap
            else:
                target = min(cap, rt.growth_anchor_fp
                             + int(base * (GROWTH_FACTOR - 1.0) * dt
                                   / GROWTH_HORIZON_MS))
            inc = target - self.state.footprint_of(app)
            if 0 < inc <= self.state.free:
                self.state.alloc_anon(app, inc)
                self.reclaimer.meter.record_alloc(inc // PAGE_BYTES)

    def _on_scan(self):
        before = self.registry.before_launch_apps()
        live = [a for a in before if self.state.preloaded_of(a) > 0]
        if live:
            cost = self.reclaimer.touch_protected(int(self.now), live)
            self.scan_cost += cost
            for app in live:
                self.runtimes[app].pool_touch = self.now
            self._log("scan", apps=live, cost_ms=cost)
        if self._keep_ticking() or live:
            self._push(self.now + SCAN_INTERVAL_MS, EventKind.SCAN_TICK,
                       self._on_scan)

    # -- report -------------------------------------------------------------------

    def _report(self) -> MetricsReport:
        tick = self.device.reclaim_tick
        timeline = [[b * tick, self.buckets_io[b] * 1000 // tick]
                    for b in sorted(self.buckets_io)]
        return MetricsReport(
            scenario=self.scenario.name,
            policy=self.policy.name,
            seed=self.seed,
            launches=self.records,
            reclaim_events=self.reclaim_events,
            kill_events=self.kill_events,
            io_timeline=timeline,
            peak_preloaded=self.peak_preloaded,
            direct_reclaim_count=self.direct_reclaims,
            kill_count=self.kills,
            scan_cost_ms=self.scan_cost,
            protected_evicted_bytes=self.protected_evicted,
            sim_end_ms=int(self.now),
        )


def resolve_policy(policy) -> PolicyConfig:
    if isinstance(policy, PolicyConfig):
        return policy
    try:
        return POLICIES[policy]
    except KeyError:
        raise ConfigError(
            f"unknown policy '{policy}'; choose from {', '.join(POLICIES)}"
        ) from None


def simulate(scenario: Scenario, policy, seed: int | None = None,
             event_log: list | None = None) -> MetricsReport:
    """Run one scenario under one policy; deterministic in its inputs."""
    return Simulation(scenario, resolve_policy(policy), seed, event_log).run()
