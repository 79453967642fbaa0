"""Bundled scenario builders.

Three workload tiers mirror the evaluation setup: a GB-scale target app under
five low-memory apps (low), fifteen (medium), and fifteen plus a second
GB-scale app (high).  Timelines ramp every app up once and then multitask with
recency-biased switching, so kill pressure and relaunch behavior differ by
policy.  The desk-scale device compresses the recency window; everything else
keeps package defaults.
"""

from __future__ import annotations

import random

from .device import GIB, MIB, DeviceConfig
from .workload import (AppClass, Scenario, TimelineAction, TimelineEvent,
                       generate_profile)

WORKLOADS = ("low", "medium", "high")

# desk-scale timelines run minutes, not days; the recency window shrinks with
# them so the stale/recent distinction still exists
SCENARIO_RECENCY_MS = 2 * 60 * 1000


def scenario_device() -> DeviceConfig:
    """Memory-constrained variant of the default device.

    Two GB-scale apps plus fifteen low-memory apps oversubscribe 3 GiB once
    settled, so reclaim, swap exhaustion, and kills all occur on the high
    workload; the default 4 GiB device would absorb it silently.
    """
    base = DeviceConfig.default()
    return DeviceConfig(
        dram_total=3 * GIB,
        sys_reserved=512 * MIB,
        swap_capacity=512 * MIB,
        zram_fraction=0.20,
        bandwidth_curve=base.bandwidth_curve,
        recency_window=SCENARIO_RECENCY_MS,
    )


def build_scenario(workload: str, seed: int = 1) -> Scenario:
    if workload not in WORKLOADS:
        raise ValueError(f"workload must be one of {WORKLOADS}")
    rng = random.Random(10_000 + seed)
    n_low = 5 if workload == "low" else 15
    n_gb = 2 if workload == "high" else 1
    apps = []
    for i in range(n_gb):
        apps.append(generate_profile(seed * 100 + i, AppClass.GB_SCALE))
    for i in range(n_low):
        apps.append(generate_profile(seed * 100 + i, AppClass.LOW_MEMORY))
    gb_ids = [p.app_id for p in apps[:n_gb]]
    low_ids = [p.app_id for p in apps[n_gb:]]

    events = []
    t = 1000
    # ramp: bring every app up once, low apps first, GB apps in the middle
    ramp = low_ids[: n_low // 2] + gb_ids[:1] + low_ids[n_low // 2:] + gb_ids[1:]
    for app in ramp:
        events.append(TimelineEvent(t, TimelineAction.LAUNCH, app))
        t += rng.randrange(2_500, 6_000, 500)

    # multitask: recency-biased switching with periodic GB-scale returns
    all_ids = low_ids + gb_ids
    recent = list(reversed(ramp))
    switches = 6 * len(all_ids)
    for i in range(switches):
        t += rng.randrange(3_000, 9_000, 500)
        if i % 6 == 5:
            app = gb_ids[(i // 6) % len(gb_ids)]
        else:
            r = rng.random()
            if r < 0.55:
                app = recent[rng.randrange(0, min(4, len(recent)))]
            elif r < 0.85:
                app = all_ids[rng.randrange(0, len(all_ids))]
            else:
                app = recent[-1 - rng.randrange(0, min(4, len(recent)))]
        events.append(TimelineEvent(t, TimelineAction.SWITCH, app))
        recent.remove(app)
        recent.insert(0, app)

    scen = Scenario(
        device=scenario_device(),
        apps=apps,
        timeline=events,
        seed=seed,
        name=f"{workload}_workload_s{seed}",
    )
    scen.validate()
    return scen


def build_interference_scenario() -> Scenario:
    """Three apps on a small device, tuned so reclaim pressure lands between
    the target's before-launch preload and its launch.

    Without retention the staged pages are the oldest file pool and get
    evicted; with retention they survive and the launch hits them.
    """
    from .workload import CpuPhase, FileRecord, IoPhase, LaunchProfile

    def flat_app(app_id, n_small, small_sz, large_sizes, cpu_ms, split, alloc_factor,
                 baseline_frac):
        files = [FileRecord(f"{app_id}/s{i}", small_sz, 1, ((0, small_sz),))
                 for i in range(n_small)]
        files += [FileRecord(f"{app_id}/L{i}", sz, 1, ((0, sz),))
                  for i, sz in enumerate(large_sizes)]
        phases = [CpuPhase(cpu_ms)]
        phases += [IoPhase(f.file_id, 0, f.size) for f in files]
        phases.append(CpuPhase(cpu_ms))
        total_file = sum(f.size for f in files)
        total_alloc = int(total_file * alloc_factor)
        return LaunchProfile(
            app_id=app_id,
            phases=tuple(phases),
            total_file_bytes=total_file,
            total_alloc=total_alloc,
            anon_file_split=split,
            baseline_footprint=int(total_alloc * baseline_frac),
            files=tuple(files),
        )

    target = flat_app("target", n_small=400, small_sz=100 * 1024,
                      large_sizes=[40 * MIB, 40 * MIB, 40 * MIB],
                      cpu_ms=120, split=0.5, alloc_factor=1.3, baseline_frac=0.6)
    filler = flat_app("filler", n_small=8, small_sz=64 * 1024,
                      large_sizes=[120 * MIB, 120 * MIB],
                      cpu_ms=60, split=0.35, alloc_factor=1.2, baseline_frac=0.9)
    hog = flat_app("hog", n_small=4, small_sz=64 * 1024,
                   large_sizes=[64 * MIB],
                   cpu_ms=100, split=0.87, alloc_factor=7.0, baseline_frac=0.5)

    device = DeviceConfig(
        dram_total=1 * GIB,
        sys_reserved=128 * MIB,
        swap_capacity=256 * MIB,
        zram_fraction=0.0,
        free_threshold=96 * MIB,
        recency_window=SCENARIO_RECENCY_MS,
    )
    events = [
        TimelineEvent(500, TimelineAction.LAUNCH, "filler"),
        TimelineEvent(8_000, TimelineAction.LAUNCH, "hog"),
        TimelineEvent(30_000, TimelineAction.SWITCH, "target"),
    ]
    scen = Scenario(device=device, apps=[target, filler, hog], timeline=events,
                    seed=7, name="interference")
    scen.validate()
    return scen


def build_handtrace_scenario() -> Scenario:
    """Two apps, two-point curve, ample memory: traced by hand in
    docs/hand_trace.md and frozen into the engine tests."""
    from .workload import CpuPhase, FileRecord, IoPhase, LaunchProfile

    a_file = FileRecord("a/f1", 10 * MIB, 1, ((0, 10 * MIB),))
    a = LaunchProfile(
        app_id="a",
        phases=(CpuPhase(100), IoPhase("a/f1", 0, 10 * MIB)),
        total_file_bytes=10 * MIB,
        total_alloc=40 * MIB,
        anon_file_split=0.75,
        baseline_footprint=20 * MIB,
        files=(a_file,),
    )
    b_file = FileRecord("b/f1", 100 * MIB, 1, ((0, 100 * MIB),))
    b = LaunchProfile(
        app_id="b",
        phases=(CpuPhase(20), IoPhase("b/f1", 0, 100 * MIB)),
        total_file_bytes=100 * MIB,
        total_alloc=150 * MIB,
        anon_file_split=0.3333333333333333,
        baseline_footprint=80 * MIB,
        files=(b_file,),
    )
    device = DeviceConfig(
        dram_total=2 * GIB,
        sys_reserved=256 * MIB,
        swap_capacity=512 * MIB,
        zram_fraction=0.0,
        bandwidth_curve=((4 * 1024, 104857600.0), (1024 * 1024, 1048576000.0)),
        free_threshold=64 * MIB,
    )
    events = [
        TimelineEvent(0, TimelineAction.LAUNCH, "a"),
        TimelineEvent(50, TimelineAction.LAUNCH, "b"),
    ]
    scen = Scenario(device=device, apps=[a, b], timeline=events, seed=1,
                    name="handtrace")
    scen.validate()
    return scen
