"""Process killers: net-freed-memory ordering with recency deferment, and the
plain LRU low-memory killer used as the baseline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError

# extra demand covered per kill round so the next allocation does not
# immediately re-trigger the killer
DEMAND_HEADROOM = 0.10


class CandidateState(Enum):
    BACKGROUND = "background"
    FOREGROUND = "foreground"


@dataclass(frozen=True)
class KillCandidate:
    app_id: str
    current_footprint: int
    relaunch_footprint: int
    last_used: int
    state: CandidateState = CandidateState.BACKGROUND

    @property
    def delta_m(self) -> int:
        """Net freed memory: what dies now minus what a relaunch brings back."""
        return self.current_footprint - self.relaunch_footprint


@dataclass(frozen=True)
class KillDecision:
    victims: tuple
    phases: tuple      # 1 = stale-by-delta ordering, 2 = recency fallback, 0 = LRU
    shortfall: int
    demand: int        # headroom-adjusted target


def net_freed(candidate: KillCandidate) -> int:
    if candidate.state is CandidateState.FOREGROUND:
        raise ConfigError(f"{candidate.app_id} is foreground; not a kill candidate")
    return candidate.delta_m


def _target(demand: int) -> int:
    # ceil(demand * (1 + headroom))
    scaled = demand * (100 + int(DEMAND_HEADROOM * 100))
    return -(-scaled // 100)


def select_victims(candidates, demand: int, now: int, recency_window: int) -> KillDecision:
    """Two-phase selection.

    Phase 1 considers only apps idle longer than the recency window, ordered
    by descending net freed memory (older last_used breaks ties).  Phase 2
    extends with recent apps in LRU order only if phase 1 cannot cover the
    demand.  The returned list may still be short; the caller handles the
    flagged shortfall.
    """
    if demand <= 0:
        raise ConfigError("kill demand must be positive")
    pool = [c for c in candidates if c.state is CandidateState.BACKGROUND]
    target = _target(demand)
    stale = [c for c in pool if now - c.last_used > recency_window]
    recent = [c for c in pool if now - c.last_used <= recency_window]
    stale.sort(key=lambda c: (-c.delta_m, c.last_used, c.app_id))
    recent.sort(key=lambda c: (c.last_used, c.app_id))

    victims, phases = [], []
    covered = 0
    for c in stale:
        if covered >= target:
            break
        victims.append(c)
        phases.append(1)
        covered += c.current_footprint
    if covered < target:
        for c in recent:
            if covered >= target:
                break
            victims.append(c)
            phases.append(2)
            covered += c.current_footprint
    return KillDecision(
        victims=tuple(victims),
        phases=tuple(phases),
        shortfall=max(0, target - covered),
        demand=target,
    )


def lmk_baseline(candidates, demand: int) -> KillDecision:
    """Background-to-foreground order: oldest last_used dies first."""
    if demand <= 0:
        raise ConfigError("kill demand must be positive")
    pool = [c for c in candidates if c.state is CandidateState.BACKGROUND]
    pool.sort(key=lambda c: (c.last_used, c.app_id))
    target = _target(demand)
    victims = []
    covered = 0
    for c in pool:
        if covered >= target:
            break
        victims.append(c)
        covered += c.current_footprint
    return KillDecision(
        victims=tuple(victims),
        phases=tuple(0 for _ in victims),
        shortfall=max(0, target - covered),
        demand=target,
    )
