"""Scheduling policies over the block ledger: the DPF family and FCFS/RR baselines.

A scheduler owns its ledger and wait queue during a pass; passes are
serialized and deterministic, so identical inputs replay identically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .accounting import AlphaGrid
from .blocks import ATOL, ClaimState, Ledger, Mode


class Policy(enum.Enum):
    DPF_N = "DPF_N"
    DPF_T = "DPF_T"
    FCFS = "FCFS"
    RR_N = "RR_N"
    RR_T = "RR_T"


ARRIVAL_UNLOCKING = (Policy.DPF_N, Policy.RR_N)
TIMER_UNLOCKING = (Policy.DPF_T, Policy.RR_T)
DPF_POLICIES = (Policy.DPF_N, Policy.DPF_T)


@dataclass(frozen=True)
class PolicyConfig:
    policy: Policy
    mode: Mode = Mode.BASIC
    n: int | None = None
    lifetime_ticks: int | None = None
    unlock_interval: int = 1
    grid: AlphaGrid | None = None

    def __post_init__(self):
        if self.policy in ARRIVAL_UNLOCKING:
            if self.n is None or self.n < 1:
                raise ValueError(f"{self.policy.value} needs a fair-share divisor n >= 1")
        if self.policy in TIMER_UNLOCKING:
            if self.lifetime_ticks is None or self.lifetime_ticks < 1:
                raise ValueError(f"{self.policy.value} needs lifetime_ticks >= 1")
            if not 0 < self.unlock_interval <= self.lifetime_ticks:
                raise ValueError("unlock_interval must be in (0, lifetime_ticks]")
        if self.mode is Mode.RENYI:
            grid = self.grid or AlphaGrid.default().finite()
            if grid.has_inf:
                raise ValueError("scheduling grid must be finite")
            object.__setattr__(self, "grid", grid)
        elif self.grid is not None:
            raise ValueError("grid is only meaningful in renyi mode")

    def name(self) -> str:
        if self.mode is Mode.RENYI and self.policy in DPF_POLICIES:
            return self.policy.value.replace("DPF", "DPF_RENYI")
        return self.policy.value

    def make_ledger(self) -> Ledger:
        return Ledger(self.mode, self.grid)


@dataclass
class CheckRecord:
    """One claim's examination within a pass, in examination order."""

    claim_id: int
    dominant_share: float
    runnable: bool
    granted: bool
    denied: bool = False


@dataclass
class PassResult:
    tick: int
    granted: list[int] = field(default_factory=list)
    denied: list[int] = field(default_factory=list)
    checks: list[CheckRecord] = field(default_factory=list)


class Scheduler:
    def __init__(self, ledger: Ledger, config: PolicyConfig):
        if ledger.mode is not config.mode:
            raise ValueError("ledger and policy disagree on accounting mode")
        self.ledger = ledger
        self.config = config
        self.queue: list[int] = []
        self._shares: dict[int, tuple[float, ...]] = {}

    # ----------------------------------------------------------- unlocking
    def fair_share(self, blk_id: int) -> np.ndarray:
        """Per-event unlock increment for one block under the active policy."""
        total = self.ledger.blocks[blk_id].registers.total
        if self.config.policy in ARRIVAL_UNLOCKING:
            return total / self.config.n
        if self.config.policy in TIMER_UNLOCKING:
            return total * (self.config.unlock_interval / self.config.lifetime_ticks)
        return total.copy()  # FCFS: everything, at creation

    def on_block_create(self, blk_id: int) -> None:
        if self.config.policy is Policy.FCFS:
            self.ledger.unlock_all(blk_id)

    def on_pipeline_arrival(self, claim_id: int) -> None:
        """Unlock one fair share on every block the claim positively demands."""
        if self.config.policy not in ARRIVAL_UNLOCKING:
            return
        claim = self.ledger.claims[claim_id]
        for blk_id in sorted(claim.demand):
            blk = self.ledger.blocks.get(blk_id)
            if blk is not None and not blk.retired:
                self.ledger.unlock(blk_id, self.fair_share(blk_id))

    def on_unlock_timer(self) -> None:
        if self.config.policy not in TIMER_UNLOCKING:
            raise ValueError(f"{self.config.policy.value} has no unlock timer")
        for blk in self.ledger.live_blocks():
            self.ledger.unlock(blk.blk_id, self.fair_share(blk.blk_id))

    # ------------------------------------------------------------ ordering
    def share_vector(self, claim_id: int) -> tuple[float, ...]:
        """Per-block budget shares, sorted descending; cached (totals are fixed)."""
        cached = self._shares.get(claim_id)
        if cached is not None:
            return cached
        claim = self.ledger.claims[claim_id]
        if not claim.demand:
            raise ValueError(f"claim {claim_id} has an empty demand vector")
        shares = []
        for blk_id, vec in claim.demand.items():
            blk = self.ledger.blocks.get(blk_id)
            if blk is None:
                shares.append(math.inf)
                continue
            total = blk.registers.total
            usable = total > 0
            if not np.any(usable):
                shares.append(math.inf)
            else:
                shares.append(float(np.max(vec[usable] / total[usable])))
        out = tuple(sorted(shares, reverse=True))
        self._shares[claim_id] = out
        return out

    def dominant_share(self, claim_id: int) -> float:
        return self.share_vector(claim_id)[0]

    def enqueue(self, claim_id: int) -> None:
        self.queue.append(claim_id)
        self.share_vector(claim_id)

    def order_queue(self) -> list[int]:
        if self.config.policy in DPF_POLICIES:
            key = lambda cid: (self.share_vector(cid),
                               self.ledger.claims[cid].arrival_tick, cid)
        else:  # FCFS and both RR variants examine claims in arrival order
            key = lambda cid: (self.ledger.claims[cid].arrival_tick, cid)
        return sorted(self.queue, key=key)

    # -------------------------------------------------------------- passes
    def _demands_dead_block(self, claim_id: int) -> bool:
        for blk_id in self.ledger.claims[claim_id].demand:
            blk = self.ledger.blocks.get(blk_id)
            if blk is None or blk.retired:
                return True
        return False

    def can_run(self, claim_id: int) -> bool:
        return self.ledger.can_allocate(claim_id)

    def run_pass(self, tick: int) -> PassResult:
        """One ordered pass: grant every runnable claim, skip blocked ones,
        deny claims whose demanded blocks are gone. Grants only shrink the
        unlocked pool, so a single pass reaches a fixed point."""
        result = PassResult(tick)
        for cid in self.order_queue():
            ds = self.dominant_share(cid)
            if self._demands_dead_block(cid):
                self.ledger.deny(cid)
                result.denied.append(cid)
                result.checks.append(CheckRecord(cid, ds, False, False, denied=True))
                continue
            ok = self.can_run(cid)
            granted = bool(ok and self.ledger.allocate(cid))
            result.checks.append(CheckRecord(cid, ds, ok, granted))
            if granted:
                result.granted.append(cid)
        done = set(result.granted) | set(result.denied)
        if done:
            self.queue = [cid for cid in self.queue if cid not in done]
        return result

    def waiting_runnable(self) -> list[int]:
        """Claims still queued that could run right now; empty after any pass."""
        return [cid for cid in self.queue if self.can_run(cid)]
