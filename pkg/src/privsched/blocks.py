"""Private-block ledger: five-register budget accounting and the claim lifecycle.

Budgets are vectors over the scheduling grid (length 1 in basic-composition
mode), so both accounting modes share one code path. All register motion is
paired add/subtract between registers, keeping the identity
``total == locked + unlocked + allocated + consumed`` exact up to float drift.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .accounting import AlphaGrid, RdpCurve

# Slack for budget comparisons; covers float drift from paired register moves
# without ever admitting a materially infeasible demand.
ATOL = 1e-9


class Mode(enum.Enum):
    BASIC = "basic"
    RENYI = "renyi"


class BlockKind(enum.Enum):
    TIME_WINDOW = "time_window"
    USER_GROUP = "user_group"
    USER_TIME_CELL = "user_time_cell"


class StateError(RuntimeError):
    """A claim operation was applied in the wrong lifecycle state."""


def _ranges_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


@dataclass(frozen=True)
class BlockDescriptor:
    """Which slice of the stream a block covers: a time window, a user group, or both."""

    kind: BlockKind
    time_window: tuple[int, int] | None = None
    user_range: tuple[int, int] | None = None

    def __post_init__(self):
        needs_time = self.kind in (BlockKind.TIME_WINDOW, BlockKind.USER_TIME_CELL)
        needs_user = self.kind in (BlockKind.USER_GROUP, BlockKind.USER_TIME_CELL)
        if needs_time != (self.time_window is not None):
            raise ValueError(f"{self.kind.value} descriptor time_window mismatch")
        if needs_user != (self.user_range is not None):
            raise ValueError(f"{self.kind.value} descriptor user_range mismatch")
        for rng in (self.time_window, self.user_range):
            if rng is not None:
                lo, hi = rng
                if not lo < hi:
                    raise ValueError(f"half-open range must be non-empty, got {rng}")

    def overlaps(self, other: "BlockDescriptor") -> bool:
        if self.kind is not other.kind:
            return False
        if self.time_window is not None and not _ranges_overlap(self.time_window, other.time_window):
            return False
        if self.user_range is not None and not _ranges_overlap(self.user_range, other.user_range):
            return False
        return True

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.time_window is not None:
            out["time_window"] = list(self.time_window)
        if self.user_range is not None:
            out["user_range"] = list(self.user_range)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BlockDescriptor":
        return cls(
            BlockKind(obj["kind"]),
            tuple(obj["time_window"]) if "time_window" in obj else None,
            tuple(obj["user_range"]) if "user_range" in obj else None,
        )


@dataclass(frozen=True)
class BlockSelector:
    """Kind-matched predicate over block descriptors (time and/or user ranges)."""

    kind: BlockKind
    time_range: tuple[int, int] | None = None
    user_range: tuple[int, int] | None = None

    def __post_init__(self):
        needs_time = self.kind in (BlockKind.TIME_WINDOW, BlockKind.USER_TIME_CELL)
        needs_user = self.kind in (BlockKind.USER_GROUP, BlockKind.USER_TIME_CELL)
        if needs_time and self.time_range is None:
            raise ValueError(f"{self.kind.value} selector needs time_range")
        if needs_user and self.user_range is None:
            raise ValueError(f"{self.kind.value} selector needs user_range")

    def matches(self, desc: BlockDescriptor) -> bool:
        if desc.kind is not self.kind:
            return False
        if self.time_range is not None and not _ranges_overlap(self.time_range, desc.time_window):
            return False
        if self.user_range is not None and not _ranges_overlap(self.user_range, desc.user_range):
            return False
        return True

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.time_range is not None:
            out["time_range"] = list(self.time_range)
        if self.user_range is not None:
            out["user_range"] = list(self.user_range)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BlockSelector":
        return cls(
            BlockKind(obj["kind"]),
            tuple(obj["time_range"]) if "time_range" in obj else None,
            tuple(obj["user_range"]) if "user_range" in obj else None,
        )


class BudgetRegisters:
    """total/locked/unlocked/allocated/consumed vectors for one block."""

    __slots__ = ("total", "locked", "unlocked", "allocated", "consumed")

    def __init__(self, total: np.ndarray):
        self.total = total.copy()
        self.locked = total.copy()
        self.unlocked = np.zeros_like(total)
        self.allocated = np.zeros_like(total)
        self.consumed = np.zeros_like(total)

    def as_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in self.__slots__}


@dataclass
class PrivateBlock:
    blk_id: int
    descriptor: BlockDescriptor
    registers: BudgetRegisters
    created_at: int
    retired: bool = False


class ClaimState(enum.Enum):
    PENDING = "pending"
    ALLOCATED = "allocated"
    PARTIALLY_CONSUMED = "partially_consumed"
    CONSUMED = "consumed"
    RELEASED = "released"
    DENIED = "denied"


_TRANSITIONS = {
    ClaimState.PENDING: {ClaimState.ALLOCATED, ClaimState.DENIED},
    ClaimState.ALLOCATED: {ClaimState.PARTIALLY_CONSUMED, ClaimState.CONSUMED, ClaimState.RELEASED},
    ClaimState.PARTIALLY_CONSUMED: {ClaimState.CONSUMED, ClaimState.RELEASED},
    ClaimState.CONSUMED: set(),
    ClaimState.RELEASED: set(),
    ClaimState.DENIED: set(),
}


@dataclass
class PrivacyClaim:
    claim_id: int
    selector: BlockSelector
    demand: dict[int, np.ndarray]
    arrival_tick: int
    state: ClaimState = ClaimState.PENDING
    bound_blocks: set[int] = field(default_factory=set)
    # Per-block remaining allocation and cumulative consumption.
    allocated_left: dict[int, np.ndarray] = field(default_factory=dict)
    consumed: dict[int, np.ndarray] = field(default_factory=dict)

    def advance(self, new: ClaimState) -> None:
        if new not in _TRANSITIONS[self.state]:
            raise StateError(f"claim {self.claim_id}: {self.state.value} -> {new.value}")
        self.state = new


@dataclass(frozen=True)
class AuditViolation:
    blk_id: int
    alpha: float | None
    message: str


class Ledger:
    """Single logical state machine over blocks and claims; apply operations sequentially."""

    def __init__(self, mode: Mode = Mode.BASIC, grid: AlphaGrid | None = None,
                 retire_floor: float = ATOL):
        if mode is Mode.RENYI:
            if grid is None:
                grid = AlphaGrid.default().finite()
            if grid.has_inf:
                raise ValueError("scheduling grid must be finite (drop the +inf order)")
        else:
            grid = None
        self.mode = mode
        self.grid = grid
        self.retire_floor = retire_floor
        self.width = 1 if grid is None else len(grid)
        self.blocks: dict[int, PrivateBlock] = {}
        self.claims: dict[int, PrivacyClaim] = {}
        self._next_block = 0
        self._next_claim = 0

    # ------------------------------------------------------------ budgets
    def as_budget(self, value) -> np.ndarray:
        """Coerce a scalar / curve / sequence into a register-width vector."""
        if isinstance(value, RdpCurve):
            if self.mode is not Mode.RENYI:
                raise ValueError("curve budgets require renyi mode")
            if value.grid.orders != self.grid.orders:
                raise ValueError("curve grid does not match the ledger grid")
            return np.array(value.eps, dtype=float)
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.shape != (self.width,):
            raise ValueError(f"budget must have width {self.width}, got {arr.shape}")
        return arr.copy()

    def as_demand(self, value) -> np.ndarray:
        vec = self.as_budget(value)
        if np.any(vec < 0) or np.any(np.isinf(vec)):
            raise ValueError("demands must be finite and non-negative per order")
        return vec

    # ------------------------------------------------------------- blocks
    def create_block(self, descriptor: BlockDescriptor, initial_budget, created_at: int = 0) -> int:
        for blk in self.blocks.values():
            if not blk.retired and blk.descriptor.overlaps(descriptor):
                raise ValueError(f"descriptor overlaps live block {blk.blk_id}")
        total = self.as_budget(initial_budget)
        blk = PrivateBlock(self._next_block, descriptor, BudgetRegisters(total), created_at)
        self._next_block += 1
        self.blocks[blk.blk_id] = blk
        self._maybe_retire(blk)
        return blk.blk_id

    def live_blocks(self) -> list[PrivateBlock]:
        return [b for b in self.blocks.values() if not b.retired]

    def match_blocks(self, selector: BlockSelector) -> list[int]:
        return sorted(b.blk_id for b in self.live_blocks() if selector.matches(b.descriptor))

    def find_block(self, descriptor: BlockDescriptor) -> int | None:
        for blk in self.blocks.values():
            if blk.descriptor == descriptor:
                return blk.blk_id
        return None

    def unlock(self, blk_id: int, amount) -> np.ndarray:
        """Move budget locked -> unlocked, clamped so the cumulative unlocked
        amount can never pass the block total (the locked register is the
        remaining capacity; releases refill unlocked without touching it)."""
        blk = self.blocks[blk_id]
        inc = np.atleast_1d(np.asarray(amount, dtype=float))
        if inc.shape != (self.width,):
            raise ValueError("unlock amount has the wrong width")
        if self.mode is Mode.BASIC and np.any(inc < 0):
            raise ValueError("unlock amount must be non-negative")
        take = np.clip(inc, np.minimum(0.0, blk.registers.locked),
                       np.maximum(0.0, blk.registers.locked))
        blk.registers.locked -= take
        blk.registers.unlocked += take
        return take

    def unlock_all(self, blk_id: int) -> np.ndarray:
        return self.unlock(blk_id, self.blocks[blk_id].registers.locked.copy())

    def _maybe_retire(self, blk: PrivateBlock) -> None:
        if blk.retired:
            return
        reg = blk.registers
        if self.mode is Mode.BASIC:
            if reg.consumed[0] >= reg.total[0] - self.retire_floor:
                blk.retired = True
        else:
            slack = reg.total - reg.allocated - reg.consumed
            if not np.any(slack >= self.retire_floor):
                blk.retired = True

    # ------------------------------------------------------------- claims
    def register_claim(self, selector: BlockSelector, demand: dict[int, object],
                       arrival_tick: int, claim_id: int | None = None) -> PrivacyClaim:
        if claim_id is None:
            claim_id = self._next_claim
        if claim_id in self.claims:
            raise ValueError(f"duplicate claim id {claim_id}")
        self._next_claim = max(self._next_claim, claim_id + 1)
        matched = set(self.match_blocks(selector))
        vecs = {}
        for blk_id, value in demand.items():
            if blk_id not in matched:
                raise ValueError(f"demand names block {blk_id} outside the selector match")
            vec = self.as_demand(value)
            if np.any(vec > 0):  # an all-zero entry is no demand at all
                vecs[int(blk_id)] = vec
        claim = PrivacyClaim(claim_id, selector, vecs, arrival_tick)
        self.claims[claim_id] = claim
        return claim

    def deny(self, claim_id: int) -> None:
        self.claims[claim_id].advance(ClaimState.DENIED)

    def _fits(self, demand: np.ndarray, registers: BudgetRegisters) -> bool:
        # Some order must fit, and only orders with positive block budget can
        # ever support the global guarantee (basic mode is the one-order case).
        usable = registers.total > 0
        return bool(np.any(usable & (demand <= registers.unlocked + ATOL)))

    def can_allocate(self, claim_id: int) -> bool:
        claim = self.claims[claim_id]
        if not claim.demand:
            return False
        for blk_id, vec in claim.demand.items():
            blk = self.blocks.get(blk_id)
            if blk is None or blk.retired:
                return False
            if not self._fits(vec, blk.registers):
                return False
        return True

    def allocate(self, claim_id: int) -> bool:
        """All-or-nothing: move every demanded budget unlocked -> allocated, or nothing."""
        claim = self.claims[claim_id]
        if claim.state is not ClaimState.PENDING:
            raise StateError(f"allocate on {claim.state.value} claim {claim_id}")
        if not self.can_allocate(claim_id):
            return False
        for blk_id, vec in claim.demand.items():
            reg = self.blocks[blk_id].registers
            reg.unlocked -= vec
            reg.allocated += vec
            claim.allocated_left[blk_id] = vec.copy()
            claim.consumed[blk_id] = np.zeros_like(vec)
            claim.bound_blocks.add(blk_id)
        claim.advance(ClaimState.ALLOCATED)
        for blk_id in claim.demand:
            self._maybe_retire(self.blocks[blk_id])
        return True

    def consume(self, claim_id: int, amounts: dict[int, object]) -> bool:
        """Move allocated -> consumed; rejects amounts above the remaining allocation."""
        claim = self.claims[claim_id]
        if claim.state not in (ClaimState.ALLOCATED, ClaimState.PARTIALLY_CONSUMED):
            raise StateError(f"consume on {claim.state.value} claim {claim_id}")
        vecs = {}
        for blk_id, value in amounts.items():
            vec = self.as_demand(value)
            left = claim.allocated_left.get(int(blk_id))
            if left is None or np.any(vec > left + ATOL):
                return False
            vecs[int(blk_id)] = vec
        for blk_id, vec in vecs.items():
            reg = self.blocks[blk_id].registers
            reg.allocated -= vec
            reg.consumed += vec
            claim.allocated_left[blk_id] -= vec
            claim.consumed[blk_id] += vec
        exhausted = all(np.all(left <= ATOL) for left in claim.allocated_left.values())
        claim.advance(ClaimState.CONSUMED if exhausted else ClaimState.PARTIALLY_CONSUMED)
        for blk_id in vecs:
            self._maybe_retire(self.blocks[blk_id])
        return True

    def consume_all(self, claim_id: int) -> bool:
        claim = self.claims[claim_id]
        return self.consume(claim_id, {j: v.copy() for j, v in claim.allocated_left.items()})

    def release(self, claim_id: int) -> None:
        """Return the unconsumed remainder of an allocation to the unlocked pool."""
        claim = self.claims[claim_id]
        if claim.state not in (ClaimState.ALLOCATED, ClaimState.PARTIALLY_CONSUMED):
            raise StateError(f"release on {claim.state.value} claim {claim_id}")
        for blk_id, left in claim.allocated_left.items():
            reg = self.blocks[blk_id].registers
            reg.allocated -= left
            reg.unlocked += left
            claim.allocated_left[blk_id] = np.zeros_like(left)
        claim.advance(ClaimState.RELEASED)
        claim.bound_blocks.clear()

    # -------------------------------------------------------------- audit
    def audit(self, include_claims: bool = True) -> list[AuditViolation]:
        """Register invariants on every block; with ``include_claims``, also
        cross-check that per-claim consumption sums to the block registers
        (an O(claims) pass, so busy simulations run it at checkpoints)."""
        out = []
        alphas = self.grid.orders if self.grid is not None else (None,)

        def flag(blk_id, i, msg):
            out.append(AuditViolation(blk_id, alphas[i], msg))

        for blk in self.blocks.values():
            reg = blk.registers
            gap = reg.total - (reg.locked + reg.unlocked + reg.allocated + reg.consumed)
            for i in np.nonzero(np.abs(gap) > ATOL)[0]:
                flag(blk.blk_id, i, f"register identity broken by {gap[i]:.3e}")
            for name in ("allocated", "consumed"):
                vec = getattr(reg, name)
                for i in np.nonzero(vec < -ATOL)[0]:
                    flag(blk.blk_id, i, f"{name} register negative: {vec[i]:.3e}")
            if self.mode is Mode.BASIC:
                for name in ("locked", "unlocked"):
                    vec = getattr(reg, name)
                    for i in np.nonzero(vec < -ATOL)[0]:
                        flag(blk.blk_id, i, f"{name} register negative: {vec[i]:.3e}")
                if reg.consumed[0] > reg.total[0] + ATOL:
                    flag(blk.blk_id, 0, "consumed exceeds total")
            elif not blk.retired:
                ok = (reg.unlocked >= -ATOL) & \
                     (reg.allocated + reg.consumed <= reg.total + ATOL)
                if not np.any(ok):
                    out.append(AuditViolation(
                        blk.blk_id, None, "no order with non-negative unlocked budget"))
        if not include_claims:
            return out
        # claim-side conservation: per-block consumed totals match the register
        spent: dict[int, np.ndarray] = {}
        for claim in self.claims.values():
            for blk_id, vec in claim.consumed.items():
                spent[blk_id] = spent.get(blk_id, np.zeros(self.width)) + vec
        for blk_id, blk in self.blocks.items():
            total_spent = spent.get(blk_id, np.zeros(self.width))
            gap = blk.registers.consumed - total_spent
            for i in np.nonzero(np.abs(gap) > ATOL)[0]:
                flag(blk_id, i, f"claim consumption does not sum to register ({gap[i]:.3e})")
        return out

    # ----------------------------------------------------------- snapshot
    def snapshot(self) -> dict:
        return {
            "mode": self.mode.value,
            "grid": list(self.grid.orders) if self.grid is not None else None,
            "blocks": [
                {
                    "blk_id": b.blk_id,
                    "descriptor": b.descriptor.to_json(),
                    "created_at": b.created_at,
                    "retired": b.retired,
                    "registers": b.registers.as_dict(),
                }
                for b in sorted(self.blocks.values(), key=lambda b: b.blk_id)
            ],
            "claims": [
                {
                    "claim_id": c.claim_id,
                    "selector": c.selector.to_json(),
                    "arrival_tick": c.arrival_tick,
                    "state": c.state.value,
                    "bound_blocks": sorted(c.bound_blocks),
                    "demand": {str(j): v.tolist() for j, v in sorted(c.demand.items())},
                    "allocated_left": {str(j): v.tolist() for j, v in sorted(c.allocated_left.items())},
                    "consumed": {str(j): v.tolist() for j, v in sorted(c.consumed.items())},
                }
                for c in sorted(self.claims.values(), key=lambda c: c.claim_id)
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict, retire_floor: float = ATOL) -> "Ledger":
        mode = Mode(snap["mode"])
        grid = AlphaGrid(tuple(snap["grid"])) if snap["grid"] is not None else None
        ledger = cls(mode, grid, retire_floor)
        for b in snap["blocks"]:
            blk = PrivateBlock(
                b["blk_id"], BlockDescriptor.from_json(b["descriptor"]),
                BudgetRegisters(np.asarray(b["registers"]["total"], dtype=float)),
                b["created_at"], b["retired"])
            for name in ("locked", "unlocked", "allocated", "consumed"):
                setattr(blk.registers, name, np.asarray(b["registers"][name], dtype=float))
            ledger.blocks[blk.blk_id] = blk
            ledger._next_block = max(ledger._next_block, blk.blk_id + 1)
        for c in snap["claims"]:
            claim = PrivacyClaim(
                c["claim_id"], BlockSelector.from_json(c["selector"]),
                {int(j): np.asarray(v, dtype=float) for j, v in c["demand"].items()},
                c["arrival_tick"], ClaimState(c["state"]), set(c["bound_blocks"]),
                {int(j): np.asarray(v, dtype=float) for j, v in c["allocated_left"].items()},
                {int(j): np.asarray(v, dtype=float) for j, v in c["consumed"].items()})
            ledger.claims[claim.claim_id] = claim
            ledger._next_claim = max(ledger._next_claim, claim.claim_id + 1)
        return ledger
