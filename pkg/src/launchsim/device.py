"""Simulated device: memory pools, page kinds, and the flash I/O channel.

The I/O model is a bandwidth curve over block sizes (larger blocks stream
faster) plus a strict two-level priority split of the channel between
foreground and low-priority streams.  All memory accounting is byte-granular
and lives in :class:`MemoryState`, which enforces the conservation equality

    sys_reserved + free + sum(preloaded) + sum(resident) == dram_total

at every mutation.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ConfigError, InvariantError

KIB = 1024
MIB = 1024 ** 2
GIB = 1024 ** 3
PAGE_BYTES = 4 * KIB


class PageKind(Enum):
    FILE_BACKED = "file"
    ANONYMOUS = "anon"


class Priority(Enum):
    FOREGROUND = "fg"
    LOW = "low"


class Direction(Enum):
    READ = "read"
    WRITE = "write"


def default_bandwidth_curve(base_bps: float = 70.0 * MIB, peak_ratio: float = 22.8) -> tuple:
    """Seven-point curve from 4 KiB to 1 MiB with geometric interior.

    Only the endpoint ratio (1 MiB streams peak_ratio times faster than
    4 KiB) is calibrated; absolute levels are a desk-scale choice and should
    be re-measured for any real device.
    """
    sizes = [4 * KIB, 8 * KIB, 16 * KIB, 32 * KIB, 64 * KIB, 128 * KIB, MIB]
    span = math.log2(sizes[-1] / sizes[0])
    return tuple(
        (s, base_bps * peak_ratio ** (math.log2(s / sizes[0]) / span)) for s in sizes
    )


def interpolate_bandwidth(curve, block_size: int) -> float:
    """Curve lookup, linear in log2(block_size) between points, clamped outside."""
    if not curve:
        raise ConfigError("bandwidth curve is empty")
    if block_size <= 0:
        raise ConfigError(f"block_size must be positive, got {block_size}")
    sizes = [s for s, _ in curve]
    i = bisect_left(sizes, block_size)
    if i < len(sizes) and sizes[i] == block_size:
        return curve[i][1]
    if i == 0:
        return curve[0][1]
    if i == len(sizes):
        return curve[-1][1]
    (s0, b0), (s1, b1) = curve[i - 1], curve[i]
    t = (math.log2(block_size) - math.log2(s0)) / (math.log2(s1) - math.log2(s0))
    return b0 + (b1 - b0) * t


def io_time_ms(nbytes: int, block_size: int, effective_bw: float) -> float:
    """Transfer time in ms at a fixed effective bandwidth (bytes/second).

    block_size is the request shaping already reflected in effective_bw; it is
    validated but does not enter the quotient.
    """
    if block_size <= 0:
        raise ConfigError(f"block_size must be positive, got {block_size}")
    if effective_bw <= 0:
        raise ConfigError(f"effective bandwidth must be positive, got {effective_bw}")
    return nbytes / effective_bw * 1000.0


@dataclass
class IoRequest:
    """One schedulable transfer on the flash channel."""

    stream_id: str
    bytes_remaining: int
    block_size: int
    priority: Priority = Priority.FOREGROUND
    direction: Direction = Direction.READ


@dataclass(frozen=True)
class DeviceConfig:
    """Static device parameters; sizes in bytes, times in milliseconds."""

    dram_total: int
    sys_reserved: int
    swap_capacity: int
    zram_fraction: float
    bandwidth_curve: tuple = ()
    reclaim_tick: int = 100
    preload_budget: int = 100 * MIB
    free_threshold: int = 0          # 0 resolves to 10% of dram_total
    alloc_threshold: int = 12800     # pages per reclaim_tick interval
    anon_reclaim_slowdown: float = 5.0
    recency_window: int = 30 * 60 * 1000

    def __post_init__(self):
        if not self.bandwidth_curve:
            object.__setattr__(self, "bandwidth_curve", default_bandwidth_curve())
        object.__setattr__(
            self, "bandwidth_curve", tuple((int(s), float(b)) for s, b in self.bandwidth_curve)
        )
        if self.free_threshold == 0:
            object.__setattr__(self, "free_threshold", self.dram_total // 10)
        self._validate()

    def _validate(self):
        if self.sys_reserved < 0 or self.dram_total <= self.sys_reserved:
            raise ConfigError("need dram_total > sys_reserved >= 0")
        for name in ("swap_capacity", "reclaim_tick", "preload_budget",
                     "free_threshold", "alloc_threshold", "recency_window"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.zram_fraction <= 1.0:
            raise ConfigError("zram_fraction must lie in [0, 1]")
        if self.anon_reclaim_slowdown <= 0:
            raise ConfigError("anon_reclaim_slowdown must be positive")
        curve = self.bandwidth_curve
        if not curve:
            raise ConfigError("bandwidth curve is empty")
        for (s0, b0), (s1, b1) in zip(curve, curve[1:]):
            if s1 <= s0:
                raise ConfigError("bandwidth curve must be sorted by block size")
            if b1 <= b0:
                raise ConfigError("bandwidth curve must be strictly increasing in bandwidth")
        if any(s <= 0 or b <= 0 for s, b in curve):
            raise ConfigError("bandwidth curve entries must be positive")

    @property
    def swap_limit(self) -> int:
        """Total writable swap: partition plus the zRAM fraction of DRAM."""
        return self.swap_capacity + int(self.zram_fraction * self.dram_total)

    @property
    def block_sizes(self) -> tuple:
        return tuple(s for s, _ in self.bandwidth_curve)

    @property
    def min_block(self) -> int:
        return self.bandwidth_curve[0][0]

    @property
    def max_block(self) -> int:
        return self.bandwidth_curve[-1][0]

    def bandwidth(self, block_size: int) -> float:
        return interpolate_bandwidth(self.bandwidth_curve, block_size)

    def contention_split(self, active: list) -> dict:
        """Share the channel among active requests.

        Every stream demands its solo bandwidth at its block size.  Channel
        capacity is the largest demand in the mix.  Foreground streams are
        served first with max-min fairness (equal split capped by demand);
        low-priority streams share only the residual the same way, so a
        saturated channel starves them entirely.
        """
        if not active:
            return {}
        for r in active:
            if r.bytes_remaining <= 0:
                raise ConfigError(f"stream {r.stream_id} has no bytes remaining")
        demand = {r.stream_id: self.bandwidth(r.block_size) for r in active}
        capacity = max(demand.values())
        shares = dict.fromkeys(demand, 0.0)

        def fill(group, cap):
            left = sorted(group, key=lambda r: (demand[r.stream_id], r.stream_id))
            remaining = cap
            while left and remaining > 0:
                fair = remaining / len(left)
                r = left.pop(0)
                give = min(demand[r.stream_id], fair)
                shares[r.stream_id] = give
                remaining -= give
            return remaining

        fg = [r for r in active if r.priority is Priority.FOREGROUND]
        lp = [r for r in active if r.priority is Priority.LOW]
        residual = fill(fg, capacity)
        if lp:
            fill(lp, residual)
        return shares

    def to_dict(self) -> dict:
        return {
            "dram_total": self.dram_total,
            "sys_reserved": self.sys_reserved,
            "swap_capacity": self.swap_capacity,
            "zram_fraction": self.zram_fraction,
            "bandwidth_curve": [[s, b] for s, b in self.bandwidth_curve],
            "reclaim_tick": self.reclaim_tick,
            "preload_budget": self.preload_budget,
            "free_threshold": self.free_threshold,
            "alloc_threshold": self.alloc_threshold,
            "anon_reclaim_slowdown": self.anon_reclaim_slowdown,
            "recency_window": self.recency_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown device config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "bandwidth_curve" in kwargs:
            kwargs["bandwidth_curve"] = tuple(tuple(p) for p in kwargs["bandwidth_curve"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "DeviceConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "DeviceConfig":
        """4 GiB device with pixel-like swap and the calibrated default curve."""
        return cls(
            dram_total=4 * GIB,
            sys_reserved=600 * MIB,
            swap_capacity=1 * GIB,
            zram_fraction=0.25,
        )


class MemoryState:
    """Live byte accounting for DRAM pools and swap.

    Pools: ``free``, per-app preloaded bytes (page cache staged ahead of a
    launch), and per-app resident bytes split by page kind.  Every mutation
    is a transfer between pools, so the conservation equality holds by
    construction; :meth:`check` re-derives it from scratch as a bug trap.
    """

    def __init__(self, config: DeviceConfig):
        self.config = config
        self.free = config.dram_total - config.sys_reserved
        self.preloaded: dict[str, int] = {}
        self.resident_file: dict[str, int] = {}
        self.resident_anon: dict[str, int] = {}
        self.swapped: dict[str, int] = {}
        self.swap_used = 0

    # -- queries ---------------------------------------------------------

    def preloaded_of(self, app: str) -> int:
        return self.preloaded.get(app, 0)

    def resident_of(self, app: str) -> tuple:
        return self.resident_file.get(app, 0), self.resident_anon.get(app, 0)

    def footprint_of(self, app: str) -> int:
        return self.resident_file.get(app, 0) + self.resident_anon.get(app, 0)

    @property
    def preloaded_total(self) -> int:
        return sum(self.preloaded.values())

    # -- transfers -------------------------------------------------------

    def _take_free(self, amount: int):
        if amount < 0:
            raise InvariantError(f"negative transfer: {amount}")
        if amount > self.free:
            raise InvariantError(f"free pool underflow: need {amount}, have {self.free}")
        self.free -= amount

    def preload_deliver(self, app: str, amount: int):
        self._take_free(amount)
        self.preloaded[app] = self.preloaded.get(app, 0) + amount

    def evict_preload(self, app: str, amount: int):
        have = self.preloaded.get(app, 0)
        if amount < 0 or amount > have:
            raise InvariantError(f"preload pool underflow for {app}: {amount} > {have}")
        self.preloaded[app] = have - amount
        self.free += amount

    def absorb_preload(self, app: str):
        """Launch finished: staged pages become the app's resident file pages."""
        moved = self.preloaded.pop(app, 0)
        self.resident_file[app] = self.resident_file.get(app, 0) + moved
        return moved

    def alloc_file(self, app: str, amount: int):
        self._take_free(amount)
        self.resident_file[app] = self.resident_file.get(app, 0) + amount

    def alloc_anon(self, app: str, amount: int):
        self._take_free(amount)
        self.resident_anon[app] = self.resident_anon.get(app, 0) + amount

    def drop_file(self, app: str, amount: int):
        have = self.resident_file.get(app, 0)
        if amount < 0 or amount > have:
            raise InvariantError(f"file pool underflow for {app}: {amount} > {have}")
        self.resident_file[app] = have - amount
        self.free += amount

    def release_anon(self, app: str, amount: int):
        """App-voluntary free (no swap traffic)."""
        have = self.resident_anon.get(app, 0)
        if amount < 0 or amount > have:
            raise InvariantError(f"anon pool underflow for {app}: {amount} > {have}")
        self.resident_anon[app] = have - amount
        self.free += amount

    def swap_out_anon(self, app: str, amount: int):
        have = self.resident_anon.get(app, 0)
        if amount < 0 or amount > have:
            raise InvariantError(f"anon pool underflow for {app}: {amount} > {have}")
        if self.swap_used + amount > self.config.swap_limit:
            raise InvariantError(
                f"swap overflow: {self.swap_used + amount} > {self.config.swap_limit}"
            )
        self.resident_anon[app] = have - amount
        self.swapped[app] = self.swapped.get(app, 0) + amount
        self.swap_used += amount
        self.free += amount

    def kill(self, app: str) -> int:
        """Free the whole resident footprint and release the app's swap slots."""
        freed = self.footprint_of(app)
        self.free += freed
        self.resident_file.pop(app, None)
        self.resident_anon.pop(app, None)
        self.swap_used -= self.swapped.pop(app, 0)
        return freed

    @property
    def swap_room(self) -> int:
        return self.config.swap_limit - self.swap_used

    def check(self):
        """Re-derive the conservation equality and bounds; raise on breach."""
        cfg = self.config
        total = cfg.sys_reserved + self.free + sum(self.preloaded.values())
        total += sum(self.resident_file.values()) + sum(self.resident_anon.values())
        if total != cfg.dram_total:
            raise InvariantError(
                f"memory conservation violated: accounted {total} != dram {cfg.dram_total}"
            )
        if self.swap_used > cfg.swap_limit:
            raise InvariantError(f"swap bound violated: {self.swap_used} > {cfg.swap_limit}")
        if self.swap_used != sum(self.swapped.values()):
            raise InvariantError("swap ledger out of sync")
        pools = [self.free, self.swap_used]
        pools += list(self.preloaded.values()) + list(self.resident_file.values())
        pools += list(self.resident_anon.values()) + list(self.swapped.values())
        if any(v < 0 for v in pools):
            raise InvariantError("negative pool entry")
