"""Adaptive page reclaimer: mode selection and page-type-decoupled freeing.

File-backed pages drop instantly (CPU-only cost); anonymous pages must be
written to swap first, which is both bandwidth-bound and capped by swap
capacity.  Mode selection keys off free memory and the page-allocation rate:
under memory-sensitive pressure only file pages are touched
(efficiency-first); afterwards a rebalancing pass restores the file:anon
ratio the even-alternation default would have produced.

The reclaimer is a planner: :meth:`Reclaimer.reclaim` picks victims from a
pool snapshot and reports what to free; applying the byte movements (and
realizing swap writes as I/O streams) is the engine's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .device import MIB, DeviceConfig
from .errors import ConfigError

# cost model constants
FILE_DROP_BYTES_PER_MS = 64 * MIB      # dropping clean pages is near-instant
DEFAULT_BATCH = 2 * MIB                # kswapd-style alternation batch
REBALANCE_BATCH = 16 * MIB             # anon bytes written back per idle tick
SCAN_INTERVAL_MS = 10_000              # before-launch retention touch period
SCAN_COST_MS = 10                      # CPU charge per touch scan per list


class ReclaimMode(Enum):
    EFFICIENCY_FIRST = "efficiency_first"
    REBALANCING = "rebalancing"
    DEFAULT = "default"


@dataclass
class AllocMeter:
    """Page-allocation counter polled once per tick window."""

    window_ms: int = 100
    count_this_window: int = 0
    last_sample_time: int = 0
    last_rate: int = 0

    def record_alloc(self, pages: int):
        if pages < 0:
            raise ConfigError("cannot record a negative allocation")
        self.count_this_window += pages

    def sample_rate(self, now: int) -> int:
        """Return the completed window's count and roll the window."""
        if now < self.last_sample_time:
            raise ConfigError("sample_rate() called with a past timestamp")
        self.last_rate = self.count_this_window
        self.count_this_window = 0
        self.last_sample_time = now
        return self.last_rate


@dataclass(frozen=True)
class ReclaimOutcome:
    freed_file: int
    freed_anon: int
    io_write_bytes: int
    elapsed_ms: float
    direct_reclaim: bool
    shortfall: int = 0


@dataclass
class PoolEntry:
    """One reclaimable byte range: an app's cached file pages, staged preload
    bytes, or anonymous pages."""

    timestamp: int
    app_id: str
    source: str        # "cache" | "preload" | "anon"
    amount: int


@dataclass
class ReclaimPools:
    """Victim snapshot handed to the planner.

    Staged-but-unused preload pages live on the inactive list: they are
    evicted before any app's working set unless a protection list (honored
    by the caller via ``protected``) or a touch scan keeps them alive.
    Within a class, eviction is LRU by timestamp.
    """

    file_entries: list
    anon_entries: list
    swap_room: int
    protected: frozenset = frozenset()

    def sort(self):
        self.file_entries.sort(
            key=lambda e: (0 if e.source == "preload" else 1, e.timestamp, e.app_id)
        )
        self.anon_entries.sort(key=lambda e: (e.timestamp, e.app_id))
        return self


def is_memory_sensitive(free: int, rate: int, config: DeviceConfig) -> bool:
    """Both signals strict: low free memory AND a hot allocation rate."""
    return free < config.free_threshold and rate > config.alloc_threshold


class Reclaimer:
    """Mode bookkeeping plus the victim-selection planner."""

    def __init__(self, config: DeviceConfig, adaptive: bool = True):
        self.config = config
        self.adaptive = adaptive
        self.meter = AllocMeter(window_ms=config.reclaim_tick)
        self.episode_active = False
        self.episode_freed_file = 0
        self.episode_freed_anon = 0
        self.rebalance_deficit = 0
        self._skip_this_episode: set = set()

    # -- mode control ------------------------------------------------------

    def on_tick(self, now: int, free: int) -> int:
        """Sample the allocation rate and run episode transitions."""
        rate = self.meter.sample_rate(now)
        if not self.adaptive:
            return rate
        sensitive = is_memory_sensitive(free, rate, self.config)
        if sensitive and not self.episode_active:
            self.episode_active = True
            self.episode_freed_file = 0
            self.episode_freed_anon = 0
            self._skip_this_episode.clear()
        elif not sensitive and self.episode_active:
            self.episode_active = False
            self.rebalance_deficit = max(
                0, self.episode_freed_file - self.episode_freed_anon
            )
        return rate

    def select_mode(self, free: int, rate: int) -> ReclaimMode:
        if not self.adaptive:
            return ReclaimMode.DEFAULT
        if is_memory_sensitive(free, rate, self.config):
            return ReclaimMode.EFFICIENCY_FIRST
        if self.rebalance_deficit > 0:
            return ReclaimMode.REBALANCING
        return ReclaimMode.DEFAULT

    # -- planning ----------------------------------------------------------

    def reclaim(self, demand: int, mode: ReclaimMode, pools: ReclaimPools,
                write_bandwidth: float | None = None,
                direct: bool = False):
        """Plan victim evictions for ``demand`` bytes in the given mode.

        Returns (outcome, takes) where takes is a list of (PoolEntry, bytes)
        the engine must apply.  Protected file entries are never taken, in
        any mode; in efficiency-first they are additionally marked active so
        later passes of the same pressure episode skip them outright.
        """
        if demand <= 0:
            raise ConfigError("reclaim demand must be positive")
        if write_bandwidth is None:
            write_bandwidth = self.config.bandwidth(self.config.max_block)

        takes = []
        freed_file = freed_anon = 0

        def eligible_file():
            for e in pools.file_entries:
                if e.app_id in pools.protected:
                    if mode is ReclaimMode.EFFICIENCY_FIRST:
                        self._skip_this_episode.add(e.app_id)
                    continue
                if e.app_id in self._skip_this_episode:
                    continue
                if e.amount > 0:
                    yield e

        def take_file(want):
            nonlocal freed_file
            got = 0
            for e in eligible_file():
                chunk = min(e.amount, want - got)
                if chunk <= 0:
                    break
                takes.append((e, chunk))
                e.amount -= chunk
                got += chunk
                if got >= want:
                    break
            freed_file += got
            return got

        def take_anon(want):
            nonlocal freed_anon
            want = min(want, pools.swap_room - freed_anon)
            got = 0
            for e in pools.anon_entries:
                if e.amount <= 0:
                    continue
                chunk = min(e.amount, want - got)
                if chunk <= 0:
                    break
                takes.append((e, chunk))
                e.amount -= chunk
                got += chunk
                if got >= want:
                    break
            freed_anon += got
            return got

        if mode is ReclaimMode.EFFICIENCY_FIRST:
            take_file(demand)
        elif mode is ReclaimMode.REBALANCING:
            owed = min(demand, self.rebalance_deficit)
            take_anon(owed)
            self._alternate(demand - freed_anon, take_file, take_anon)
        else:
            self._alternate(demand, take_file, take_anon)

        if self.episode_active:
            self.episode_freed_file += freed_file
            self.episode_freed_anon += freed_anon
        if mode is ReclaimMode.REBALANCING:
            self.rebalance_deficit = max(0, self.rebalance_deficit - freed_anon)

        elapsed = freed_file / FILE_DROP_BYTES_PER_MS
        elapsed += (freed_anon * self.config.anon_reclaim_slowdown
                    / write_bandwidth * 1000.0)
        outcome = ReclaimOutcome(
            freed_file=freed_file,
            freed_anon=freed_anon,
            io_write_bytes=freed_anon,
            elapsed_ms=elapsed,
            direct_reclaim=direct,
            shortfall=max(0, demand - freed_file - freed_anon),
        )
        return outcome, takes

    @staticmethod
    def _alternate(demand, take_file, take_anon):
        """Even alternation in fixed byte batches, file side first."""
        remaining = demand
        stalled_file = stalled_anon = False
        while remaining > 0 and not (stalled_file and stalled_anon):
            if not stalled_file:
                got = take_file(min(DEFAULT_BATCH, remaining))
                remaining -= got
                stalled_file = got == 0
                if remaining <= 0:
                    break
            if not stalled_anon:
                got = take_anon(min(DEFAULT_BATCH, remaining))
                remaining -= got
                stalled_anon = got == 0

    # -- retention scans -----------------------------------------------------

    def touch_protected(self, now: int, before_apps) -> int:
        """Cost of one touch pass over active before-launch lists (ms).

        The engine calls this every SCAN_INTERVAL_MS and re-stamps the touched
        preload pools as most recently used; lists that moved to the
        during-launch phase are dropped from scans.
        """
        return SCAN_COST_MS * len(list(before_apps))
