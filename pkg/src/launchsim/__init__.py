"""launchsim: discrete-event simulator of memory scheduling policies for
app cold launches on flash-storage devices."""

from .device import DeviceConfig, IoRequest, MemoryState, PageKind
from .engine import POLICIES, PolicyConfig, Simulation, simulate
from .metrics import LaunchKind, LaunchRecord, MetricsReport, metrics_from_records
from .preloader import CutoffCandidate, CutoffPlan, candidates, plan_cutoffs
from .workload import (AppClass, LaunchProfile, Scenario, generate_profile,
                       parse_scenario, profile_stats)

__version__ = "0.1.0"

__all__ = [
    "AppClass",
    "CutoffCandidate",
    "CutoffPlan",
    "DeviceConfig",
    "IoRequest",
    "LaunchKind",
    "LaunchProfile",
    "LaunchRecord",
    "MemoryState",
    "MetricsReport",
    "PageKind",
    "POLICIES",
    "PolicyConfig",
    "Scenario",
    "Simulation",
    "candidates",
    "generate_profile",
    "metrics_from_records",
    "parse_scenario",
    "plan_cutoffs",
    "profile_stats",
    "simulate",
]
