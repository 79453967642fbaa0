"""App launch profiles: parsing, validation, and seeded synthesis.

A profile is the per-app record of what a launch does: an ordered list of CPU
and file-read phases, the file population behind those reads, and the memory
demand.  Scenario files are JSON lines: one ``profile`` object per app plus a
single ``timeline`` object (see docs/scenario_format.md).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .device import KIB, MIB, GIB, DeviceConfig, interpolate_bandwidth
from .errors import ScenarioError

SMALL_FILE_CUTOFF = 128 * KIB   # the small/large boundary used for stats and generation
HOT_ACCESS_COUNT = 2            # files read at least this often have hot segments


class AppClass(Enum):
    GB_SCALE = "gb"
    LOW_MEMORY = "low"


@dataclass(frozen=True)
class FileRecord:
    file_id: str
    size: int
    access_count: int
    segments: tuple    # ((offset, length), ...) in launch order

    def validate(self, where: str):
        if self.size <= 0:
            raise ScenarioError(f"{where}: file size must be positive")
        if self.access_count < 1:
            raise ScenarioError(f"{where}: access_count must be >= 1")
        for i, (off, length) in enumerate(self.segments):
            if off < 0 or length <= 0 or off + length > self.size:
                raise ScenarioError(
                    f"{where}.segments[{i}]: segment ({off}, {length}) outside [0, {self.size})"
                )

    @property
    def accessed_bytes(self) -> int:
        return sum(length for _, length in self.segments)

    @property
    def is_hot(self) -> bool:
        return self.access_count >= HOT_ACCESS_COUNT


@dataclass(frozen=True)
class CpuPhase:
    duration_ms: int


@dataclass(frozen=True)
class IoPhase:
    file_id: str
    offset: int
    length: int


@dataclass(frozen=True)
class LaunchProfile:
    app_id: str
    phases: tuple
    total_file_bytes: int
    total_alloc: int
    anon_file_split: float
    baseline_footprint: int
    files: tuple

    def validate(self):
        where = f"profile {self.app_id}"
        by_id = {}
        for f in self.files:
            f.validate(f"{where}.files[{f.file_id}]")
            if f.file_id in by_id:
                raise ScenarioError(f"{where}: duplicate file_id {f.file_id}")
            by_id[f.file_id] = f
        io_total = 0
        for i, ph in enumerate(self.phases):
            if isinstance(ph, IoPhase):
                rec = by_id.get(ph.file_id)
                if rec is None:
                    raise ScenarioError(f"{where}.phases[{i}]: unknown file_id {ph.file_id}")
                if ph.offset < 0 or ph.length <= 0 or ph.offset + ph.length > rec.size:
                    raise ScenarioError(f"{where}.phases[{i}]: read outside file bounds")
                io_total += ph.length
            elif isinstance(ph, CpuPhase):
                if ph.duration_ms < 0:
                    raise ScenarioError(f"{where}.phases[{i}]: negative duration")
            else:
                raise ScenarioError(f"{where}.phases[{i}]: unknown phase type")
        if io_total != self.total_file_bytes:
            raise ScenarioError(
                f"{where}: io phases sum to {io_total}, total_file_bytes says {self.total_file_bytes}"
            )
        if not 0.0 <= self.anon_file_split <= 1.0:
            raise ScenarioError(f"{where}: anon_file_split outside [0, 1]")
        # the file-backed share of the allocation cannot exceed what is read
        file_share = int((1.0 - self.anon_file_split) * self.total_alloc)
        if file_share > self.total_file_bytes:
            raise ScenarioError(
                f"{where}: file-backed share {file_share} of total_alloc exceeds "
                f"bytes read {self.total_file_bytes}"
            )
        if self.baseline_footprint > self.total_alloc or self.baseline_footprint < 0:
            raise ScenarioError(f"{where}: baseline_footprint outside [0, total_alloc]")

    def file(self, file_id: str) -> FileRecord:
        for f in self.files:
            if f.file_id == file_id:
                return f
        raise KeyError(file_id)

    @property
    def cpu_total_ms(self) -> int:
        return sum(p.duration_ms for p in self.phases if isinstance(p, CpuPhase))

    @property
    def anon_alloc(self) -> int:
        """Runtime allocation beyond the file-backed working set."""
        return self.total_alloc - self.total_file_bytes


class TimelineAction(Enum):
    LAUNCH = "launch"
    SWITCH = "switch"
    BACKGROUND = "background"


@dataclass(frozen=True)
class TimelineEvent:
    time_ms: int
    action: TimelineAction
    app_id: str


@dataclass
class Scenario:
    device: DeviceConfig
    apps: list
    timeline: list
    seed: int = 0
    name: str = "scenario"

    def validate(self):
        ids = set()
        for p in self.apps:
            p.validate()
            if p.app_id in ids:
                raise ScenarioError(f"duplicate app_id {p.app_id}")
            ids.add(p.app_id)
        last = -1
        for i, ev in enumerate(self.timeline):
            if ev.time_ms < last:
                raise ScenarioError(f"timeline[{i}]: times must be nondecreasing")
            last = ev.time_ms
            if ev.app_id not in ids:
                raise ScenarioError(f"timeline[{i}]: unknown app_id {ev.app_id}")

    def profile(self, app_id: str) -> LaunchProfile:
        for p in self.apps:
            if p.app_id == app_id:
                return p
        raise KeyError(app_id)


# -- serialization ---------------------------------------------------------


def profile_to_dict(p: LaunchProfile) -> dict:
    phases = []
    for ph in p.phases:
        if isinstance(ph, CpuPhase):
            phases.append(["cpu", ph.duration_ms])
        else:
            phases.append(["io", ph.file_id, ph.offset, ph.length])
    return {
        "kind": "profile",
        "app_id": p.app_id,
        "total_file_bytes": p.total_file_bytes,
        "total_alloc": p.total_alloc,
        "anon_file_split": p.anon_file_split,
        "baseline_footprint": p.baseline_footprint,
        "files": [
            {
                "file_id": f.file_id,
                "size": f.size,
                "access_count": f.access_count,
                "segments": [[o, n] for o, n in f.segments],
            }
            for f in p.files
        ],
        "phases": phases,
    }


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ScenarioError(f"{where}: missing field '{key}'")
    return obj[key]


def profile_from_dict(obj: dict, where: str) -> LaunchProfile:
    app_id = _require(obj, "app_id", where)
    files = []
    for j, fd in enumerate(_require(obj, "files", where)):
        fwhere = f"{where}: files[{j}]"
        files.append(
            FileRecord(
                file_id=_require(fd, "file_id", fwhere),
                size=int(_require(fd, "size", fwhere)),
                access_count=int(fd.get("access_count", 1)),
                segments=tuple((int(o), int(n)) for o, n in _require(fd, "segments", fwhere)),
            )
        )
    phases = []
    for j, ph in enumerate(_require(obj, "phases", where)):
        pwhere = f"{where}: phases[{j}]"
        if not ph:
            raise ScenarioError(f"{pwhere}: empty phase entry")
        if ph[0] == "cpu":
            phases.append(CpuPhase(int(ph[1])))
        elif ph[0] == "io":
            if len(ph) != 4:
                raise ScenarioError(f"{pwhere}: io phase needs [io, file_id, offset, length]")
            phases.append(IoPhase(ph[1], int(ph[2]), int(ph[3])))
        else:
            raise ScenarioError(f"{pwhere}: unknown phase tag '{ph[0]}'")
    prof = LaunchProfile(
        app_id=app_id,
        phases=tuple(phases),
        total_file_bytes=int(_require(obj, "total_file_bytes", where)),
        total_alloc=int(_require(obj, "total_alloc", where)),
        anon_file_split=float(_require(obj, "anon_file_split", where)),
        baseline_footprint=int(_require(obj, "baseline_footprint", where)),
        files=tuple(files),
    )
    try:
        prof.validate()
    except ScenarioError as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    return prof


def parse_scenario(path, default_device: DeviceConfig | None = None) -> Scenario:
    """Load and fully validate a JSON-lines scenario file."""
    apps = []
    timeline = None
    seed = 0
    device = default_device
    name = str(path)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"{where}: invalid JSON ({exc})") from None
            kind = obj.get("kind")
            if kind == "profile":
                apps.append(profile_from_dict(obj, where))
            elif kind == "timeline":
                if timeline is not None:
                    raise ScenarioError(f"{where}: duplicate timeline object")
                timeline = []
                seed = int(obj.get("seed", 0))
                name = obj.get("name", name)
                if "device" in obj:
                    device = DeviceConfig.from_dict(obj["device"])
                for j, ev in enumerate(obj.get("events", [])):
                    ewhere = f"{where}: events[{j}]"
                    if len(ev) != 3:
                        raise ScenarioError(f"{ewhere}: expected [time_ms, action, app_id]")
                    t, action, app = ev
                    try:
                        act = TimelineAction(action)
                    except ValueError:
                        raise ScenarioError(f"{ewhere}: unknown action '{action}'") from None
                    timeline.append(TimelineEvent(int(t), act, app))
            else:
                raise ScenarioError(f"{where}: field 'kind' must be 'profile' or 'timeline'")
    if device is None:
        device = DeviceConfig.default()
    scen = Scenario(device=device, apps=apps, timeline=timeline or [], seed=seed, name=name)
    try:
        scen.validate()
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scen


def write_scenario(path, scenario: Scenario, include_device: bool = True):
    with open(path, "w") as fh:
        for p in scenario.apps:
            fh.write(json.dumps(profile_to_dict(p), sort_keys=True) + "\n")
        tl = {
            "kind": "timeline",
            "name": scenario.name,
            "seed": scenario.seed,
            "events": [[ev.time_ms, ev.action.value, ev.app_id] for ev in scenario.timeline],
        }
        if include_device:
            tl["device"] = scenario.device.to_dict()
        fh.write(json.dumps(tl, sort_keys=True) + "\n")


# -- statistics ------------------------------------------------------------


@dataclass(frozen=True)
class FileStats:
    small_count: int
    large_count: int
    small_bytes: int
    large_bytes: int


def profile_stats(profile: LaunchProfile, cutoff: int = SMALL_FILE_CUTOFF) -> FileStats:
    """Partition the file population at a size cutoff; sums are exact."""
    if cutoff <= 0:
        raise ScenarioError("cutoff must be positive")
    sc = lc = sb = lb = 0
    for f in profile.files:
        if f.size < cutoff:
            sc += 1
            sb += f.size
        else:
            lc += 1
            lb += f.size
    return FileStats(sc, lc, sb, lb)


# -- synthesis ---------------------------------------------------------------

_CLASS_SALT = {AppClass.GB_SCALE: 0, AppClass.LOW_MEMORY: 1}

# fraction of an uncontended launch spent on CPU work
CPU_SHARE = 0.30
# fraction of large files whose hot leading segment is re-read across launches
HOT_FILE_FRACTION = 0.08

_REFERENCE_CURVE = DeviceConfig.default().bandwidth_curve


def _lognormal_sizes(rng, mean_bytes, sigma, lo, hi, count):
    mu = math.log(mean_bytes) - sigma * sigma / 2
    out = []
    for _ in range(count):
        v = int(rng.lognormvariate(mu, sigma))
        out.append(max(lo, min(hi, v)))
    return out


def _scale_to_total(sizes, target, lo, hi):
    """Rescale sizes toward a target sum, respecting per-entry clamps."""
    for _ in range(3):
        cur = sum(sizes)
        if cur == 0:
            break
        factor = target / cur
        sizes = [max(lo, min(hi, int(s * factor))) for s in sizes]
        if abs(sum(sizes) - target) <= max(len(sizes), target // 200):
            break
    return sizes


def _interleave_phases(rng, io_entries, cpu_total_ms, n_cpu):
    """Alternate CPU slices with runs of file reads."""
    phases = []
    per_cpu = max(1, cpu_total_ms // n_cpu)
    chunk = max(1, len(io_entries) // n_cpu)
    idx = 0
    for i in range(n_cpu):
        phases.append(CpuPhase(per_cpu))
        hi = len(io_entries) if i == n_cpu - 1 else idx + chunk
        phases.extend(io_entries[idx:hi])
        idx = hi
    return phases


def generate_profile(seed: int, app_class: AppClass) -> LaunchProfile:
    """Deterministic synthetic profile for one app of the given class."""
    rng = random.Random(seed * 2 + _CLASS_SALT[app_class])
    tag = app_class.value
    if app_class is AppClass.GB_SCALE:
        return _generate_gb(rng, f"{tag}{seed}")
    return _generate_low(rng, f"{tag}{seed}")


def _generate_gb(rng, app_id: str) -> LaunchProfile:
    # large files first: draw until the accessed mass clears 1 GiB even after
    # hot files shed their unread tails
    target_large_accessed = int(rng.uniform(1.05, 1.45) * GIB)
    large = []
    accessed_large = 0
    i = 0
    while accessed_large < target_large_accessed:
        size = _lognormal_sizes(rng, 12 * MIB, 0.9, 256 * KIB, 64 * MIB, 1)[0]
        hot = rng.random() < HOT_FILE_FRACTION
        fid = f"{app_id}/L{i}"
        if hot:
            hot_len = rng.randrange(64 * KIB, 512 * KIB, 4 * KIB)
            hot_len = min(hot_len, size - 4 * KIB)
            rec = FileRecord(fid, size, rng.randint(2, 5), ((0, hot_len),))
        else:
            rec = FileRecord(fid, size, 1, ((0, size),))
        large.append(rec)
        accessed_large += rec.accessed_bytes
        i += 1

    large_size_total = sum(f.size for f in large)
    small_count = int(len(large) * rng.uniform(5.5, 7.5))
    pct = rng.uniform(0.028, 0.045)
    sizes = _lognormal_sizes(rng, 48 * KIB, 0.8, 2 * KIB, SMALL_FILE_CUTOFF - KIB, small_count)
    sizes = _scale_to_total(sizes, int(pct * large_size_total), KIB, SMALL_FILE_CUTOFF - KIB)
    small = [
        FileRecord(f"{app_id}/s{j}", s, 1, ((0, s),)) for j, s in enumerate(sizes)
    ]

    files = tuple(small + large)
    total_file = sum(f.accessed_bytes for f in files)
    split = 0.66
    total_alloc = int(total_file * rng.uniform(1.50, 1.62))
    baseline = int(total_alloc * rng.uniform(0.48, 0.56))

    # reads in launch order: small files sprinkled among large streams
    order = list(files)
    rng.shuffle(order)
    io_entries = [IoPhase(f.file_id, off, n) for f in order for off, n in f.segments]
    cpu_ms = _estimated_cpu_ms(small, large)
    phases = _interleave_phases(rng, io_entries, cpu_ms, n_cpu=8)
    prof = LaunchProfile(
        app_id=app_id,
        phases=tuple(phases),
        total_file_bytes=total_file,
        total_alloc=total_alloc,
        anon_file_split=split,
        baseline_footprint=baseline,
        files=files,
    )
    prof.validate()
    return prof


def _generate_low(rng, app_id: str) -> LaunchProfile:
    count = rng.randint(15, 40)
    sizes = _lognormal_sizes(rng, 900 * KIB, 1.1, 8 * KIB, 8 * MIB, count)
    total = sum(sizes)
    cap = 120 * MIB
    if total > cap:
        sizes = _scale_to_total(sizes, cap, 8 * KIB, 8 * MIB)
    files = tuple(
        FileRecord(f"{app_id}/f{j}", s, 1, ((0, s),)) for j, s in enumerate(sizes)
    )
    total_file = sum(f.accessed_bytes for f in files)
    split = 0.50
    total_alloc = min(300 * MIB, int(total_file * 1.5))
    baseline = int(total_alloc * rng.uniform(0.55, 0.70))
    order = list(files)
    rng.shuffle(order)
    io_entries = [IoPhase(f.file_id, off, n) for f in order for off, n in f.segments]
    small = [f for f in files if f.size < SMALL_FILE_CUTOFF]
    large = [f for f in files if f.size >= SMALL_FILE_CUTOFF]
    cpu_ms = _estimated_cpu_ms(small, large)
    phases = _interleave_phases(rng, io_entries, cpu_ms, n_cpu=3)
    prof = LaunchProfile(
        app_id=app_id,
        phases=tuple(phases),
        total_file_bytes=total_file,
        total_alloc=total_alloc,
        anon_file_split=split,
        baseline_footprint=baseline,
        files=files,
    )
    prof.validate()
    return prof


def _estimated_cpu_ms(small, large) -> int:
    """CPU budget sized so an uncontended launch is roughly CPU_SHARE compute."""
    small_bytes = sum(f.accessed_bytes for f in small)
    large_bytes = sum(f.accessed_bytes for f in large)
    io_s = small_bytes / interpolate_bandwidth(_REFERENCE_CURVE, 8 * KIB)
    io_s += large_bytes / interpolate_bandwidth(_REFERENCE_CURVE, 128 * KIB)
    return max(10, int(io_s * 1000 * CPU_SHARE / (1.0 - CPU_SHARE)))


def reference_media_profile(app_id: str = "media_ref") -> LaunchProfile:
    """Fixed profile matching measured media-app hot-set statistics.

    1,002 small files totaling 23 MB next to 134 large files totaling 575 MB:
    a 7.47x count ratio where the small set is 4% of the large set's bytes.
    Used as a calibration fixture; its totals are below the generator's
    GB-scale floor on purpose.
    """
    rng = random.Random(20240707)
    small_sizes = _lognormal_sizes(rng, 23 * 1000 * 1000 // 1002, 0.6, 2 * KIB,
                                   SMALL_FILE_CUTOFF - KIB, 1002)
    small_sizes = _scale_to_total(small_sizes, 23 * 1000 * 1000, KIB, SMALL_FILE_CUTOFF - KIB)
    drift = 23 * 1000 * 1000 - sum(small_sizes)
    if 0 < drift and small_sizes[0] + drift < SMALL_FILE_CUTOFF:
        small_sizes[0] += drift
    elif drift < 0:
        small_sizes[0] = max(KIB, small_sizes[0] + drift)
    large_sizes = _lognormal_sizes(rng, 575 * 1000 * 1000 // 134, 0.5, 256 * KIB,
                                   32 * MIB, 134)
    large_sizes = _scale_to_total(large_sizes, 575 * 1000 * 1000, 256 * KIB, 32 * MIB)
    drift = 575 * 1000 * 1000 - sum(large_sizes)
    large_sizes[0] = max(256 * KIB, large_sizes[0] + drift)
    files = [
        FileRecord(f"{app_id}/s{j}", s, 1, ((0, s),)) for j, s in enumerate(small_sizes)
    ] + [
        FileRecord(f"{app_id}/L{j}", s, 1, ((0, s),)) for j, s in enumerate(large_sizes)
    ]
    order = list(files)
    rng.shuffle(order)
    io_entries = [IoPhase(f.file_id, off, n) for f in order for off, n in f.segments]
    total_file = sum(f.accessed_bytes for f in files)
    split = 0.60
    total_alloc = int(total_file * 1.75)
    phases = _interleave_phases(rng, io_entries,
                                _estimated_cpu_ms(files[:1002], files[1002:]), n_cpu=6)
    prof = LaunchProfile(
        app_id=app_id,
        phases=tuple(phases),
        total_file_bytes=total_file,
        total_alloc=total_alloc,
        anon_file_split=split,
        baseline_footprint=int(total_alloc * 0.5),
        files=tuple(files),
    )
    prof.validate()
    return prof
