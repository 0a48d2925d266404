"""Deterministic discrete-event simulator over the ledger and scheduler.

Per-tick event order is fixed: block creation, unlock tick, pipeline
arrivals, releases, consumes. Arrivals, unlock ticks, and releases each
trigger a scheduler pass. The ledger is audited after every event and the
Pareto fixed point is asserted after every pass; a violation aborts the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .accounting import AlphaGrid, block_initial_curve
from .blocks import (
    ATOL,
    BlockDescriptor,
    BlockKind,
    BlockSelector,
    ClaimState,
    Ledger,
    Mode,
)
from .scheduling import DPF_POLICIES, PassResult, Policy, PolicyConfig, Scheduler
from .semantics import Semantic, SemanticConfig, SemanticsManager, binary_mechanism_rdp_curve
from .workload import DemandTemplate, PipelineArrival, WorkloadSpec, check_workload, generate_workload

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class SimInvariantError(RuntimeError):
    """A ledger audit or scheduler fixed-point assertion failed mid-run."""


@dataclass(frozen=True)
class GlobalBudget:
    epsilon: float = 10.0
    delta: float = 1e-7
    claim_delta: float = 1e-9

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("global epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("global delta must be in (0, 1)")
        if not 0.0 < self.claim_delta < 1.0:
            raise ValueError("claim delta must be in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    policy: PolicyConfig
    semantic: SemanticConfig
    workload: WorkloadSpec
    budget: GlobalBudget = GlobalBudget()
    horizon: int = 100
    name: str = ""
    # Paired-replay hook: scale one pipeline's demand without touching the rest.
    demand_scale: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    def scale_for(self, pid: int) -> float:
        for target, factor in self.demand_scale:
            if target == pid:
                return factor
        return 1.0


@dataclass
class SimEvent:
    seq: int
    tick: int
    kind: str  # BlockCreate | UnlockTick | PipelineArrive | Grant | Deny | Consume | Release
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "tick": self.tick, "kind": self.kind, **self.payload}


@dataclass
class Metrics:
    policy: str
    mode: str
    n_pipelines: int
    arrived: int
    granted: int
    denied: int
    waiting: int
    not_arrived: int
    granted_by_class: dict
    arrived_by_class: dict
    delays: list
    delay_mean: float | None
    delay_median: float | None
    delay_p95: float | None
    delay_max: int | None
    blocks: list
    workload_check: dict

    def to_row(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "policy": self.policy,
            "mode": self.mode,
            "n_pipelines": self.n_pipelines,
            "arrived": self.arrived,
            "granted": self.granted,
            "denied": self.denied,
            "waiting": self.waiting,
            "granted_mice": self.granted_by_class.get("mice", 0),
            "granted_elephant": self.granted_by_class.get("elephant", 0),
            "delay_mean": _fmt(self.delay_mean),
            "delay_median": _fmt(self.delay_median),
            "delay_p95": _fmt(self.delay_p95),
            "delay_max": self.delay_max if self.delay_max is not None else "",
        }

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "policy": self.policy,
            "mode": self.mode,
            "n_pipelines": self.n_pipelines,
            "arrived": self.arrived,
            "granted": self.granted,
            "denied": self.denied,
            "waiting": self.waiting,
            "not_arrived": self.not_arrived,
            "granted_by_class": self.granted_by_class,
            "arrived_by_class": self.arrived_by_class,
            "scheduling_delay": {
                "per_claim": self.delays,
                "mean": self.delay_mean,
                "median": self.delay_median,
                "p95": self.delay_p95,
                "max": self.delay_max,
            },
            "blocks": self.blocks,
            "workload_check": self.workload_check,
        }


def _fmt(x):
    return "" if x is None else round(x, 6)


@dataclass
class SimResult:
    config: SimConfig
    metrics: Metrics
    events: list
    ledger: Ledger
    grant_tick: dict
    passes: list


class Simulation:
    def __init__(self, config: SimConfig):
        if config.policy.mode is Mode.RENYI and config.policy.grid is None:
            raise ValueError("renyi runs need a scheduling grid")
        self.config = config
        self.ledger = config.policy.make_ledger()
        self.scheduler = Scheduler(self.ledger, config.policy)
        seed = config.workload.seed
        self.manager = SemanticsManager(config.semantic,
                                        rng=np.random.default_rng([seed, 1]))
        self._user_rng = np.random.default_rng([seed, 2])
        self._next_user = 0
        self.events: list[SimEvent] = []
        self.passes: list[PassResult] = []
        self.grant_tick: dict[int, int] = {}
        self.arrival_info: dict[int, PipelineArrival] = {}
        self._completions: dict[int, list] = {}
        self._demand_cache: dict[DemandTemplate, np.ndarray] = {}
        self._initial_budget = self._block_budget()

    # ------------------------------------------------------------- budgets
    def _block_budget(self) -> np.ndarray:
        cfg, budget = self.config, self.config.budget
        counter = cfg.semantic.counter
        eps_count = counter.eps_count if (counter is not None and
                                          cfg.semantic.semantic is not Semantic.EVENT) else 0.0
        if cfg.policy.mode is Mode.BASIC:
            return np.array([budget.epsilon - eps_count])
        grid = cfg.policy.grid
        tight = None
        if cfg.semantic.tight_counter_curve and eps_count > 0:
            tight = binary_mechanism_rdp_curve(eps_count, counter.horizon, grid)
        curve = block_initial_curve(budget.epsilon, budget.delta, grid,
                                    eps_count=eps_count, counter_curve=tight)
        return np.asarray(curve.eps, dtype=float)

    def _demand_vector(self, template: DemandTemplate) -> np.ndarray:
        vec = self._demand_cache.get(template)
        if vec is None:
            vec = template.resolve(self._initial_budget, self.config.policy.mode,
                                   self.config.policy.grid, self.config.budget.claim_delta,
                                   self.config.workload.fair_share_n)
            self._demand_cache[template] = vec
        return vec

    # -------------------------------------------------------------- events
    def _emit(self, tick: int, kind: str, payload: dict) -> SimEvent:
        ev = SimEvent(len(self.events), tick, kind, payload)
        self.events.append(ev)
        self._audit(ev)
        return ev

    def _audit(self, ev: SimEvent) -> None:
        violations = self.ledger.audit(include_claims=False)
        if violations:
            raise SimInvariantError(
                f"audit failed after event {ev.seq} ({ev.kind}@{ev.tick}): {violations[:3]}")

    def _run_pass(self, tick: int) -> PassResult:
        result = self.scheduler.run_pass(tick)
        for cid in result.granted:
            self.grant_tick[cid] = tick
            info = self.arrival_info.get(cid)
            share = info.release_share if info is not None else None
            self._completions.setdefault(tick + 1, []).append((cid, share))
        for check in result.checks:
            if check.granted:
                self._emit(tick, "Grant", {
                    "claim_id": check.claim_id,
                    "decision": "grant",
                    "dominant_share": check.dominant_share,
                    "policy": self.config.policy.name(),
                })
            elif check.denied:
                self._emit(tick, "Deny", {
                    "claim_id": check.claim_id,
                    "decision": "deny",
                    "dominant_share": check.dominant_share,
                    "policy": self.config.policy.name(),
                    "reason": "blocks_gone",
                })
        runnable = self.scheduler.waiting_runnable()
        if runnable:
            raise SimInvariantError(
                f"pass at tick {tick} left runnable claims waiting: {runnable}")
        if self.config.policy.policy in DPF_POLICIES:
            shares = [c.dominant_share for c in result.checks]
            if any(b < a - ATOL for a, b in zip(shares, shares[1:])):
                raise SimInvariantError(f"pass at tick {tick} examined claims out of order")
        self.passes.append(result)
        return result

    # --------------------------------------------------------------- steps
    def _users_at(self, tick: int) -> list[int]:
        stream = self.config.semantic.user_stream
        if stream is None or self.config.semantic.semantic is Semantic.EVENT:
            return []
        kind, value = stream
        if kind == "fixed":
            count = int(value)
        else:
            count = int(self._user_rng.poisson(value))
        users = list(range(self._next_user, self._next_user + count))
        self._next_user += count
        return users

    def _create_blocks(self, tick: int, descriptors) -> None:
        for desc in descriptors:
            if self.ledger.find_block(desc) is not None:
                continue
            blk_id = self.ledger.create_block(desc, self._initial_budget, created_at=tick)
            self.scheduler.on_block_create(blk_id)
            self._emit(tick, "BlockCreate", {
                "blk_id": blk_id,
                "descriptor": desc.to_json(),
                "total": self.ledger.blocks[blk_id].registers.total.tolist(),
            })

    def _selector_for(self, arrival: PipelineArrival) -> BlockSelector | None:
        cfg = self.config.semantic
        if arrival.explicit is not None:
            return self._explicit_selector(arrival.explicit)
        if cfg.semantic is Semantic.EVENT:
            windows = [d.time_window for d in self.manager.requestable(arrival.tick)]
            if not windows:
                return None
            k = min(arrival.n_blocks, len(windows))
            if self.config.workload.selector_policy == "random_window":
                offset = int(arrival.window_u * (len(windows) - k + 1))
                chosen = windows[offset:offset + k]
            else:  # latest_k
                chosen = windows[-k:]
            return BlockSelector(BlockKind.TIME_WINDOW,
                                 time_range=(chosen[0][0], chosen[-1][1]))
        groups = self.manager.requestable_user_groups(arrival.tick)
        if groups == 0:
            return None
        g = cfg.user_group_size
        if cfg.semantic is Semantic.USER:
            if self.config.workload.selector_policy == "all_users":
                return BlockSelector(BlockKind.USER_GROUP, user_range=(0, groups * g))
            k = min(arrival.n_blocks, groups)
            return BlockSelector(BlockKind.USER_GROUP,
                                 user_range=((groups - k) * g, groups * g))
        windows = sorted({d.time_window for d in self.manager.requestable(arrival.tick)})
        if not windows:
            return None
        k = min(arrival.n_blocks, len(windows))
        chosen = windows[-k:]
        return BlockSelector(BlockKind.USER_TIME_CELL,
                             time_range=(chosen[0][0], chosen[-1][1]),
                             user_range=(0, groups * g))

    def _explicit_selector(self, row: dict) -> BlockSelector | None:
        sel = row.get("selector", {})
        kind = {Semantic.EVENT: BlockKind.TIME_WINDOW,
                Semantic.USER: BlockKind.USER_GROUP,
                Semantic.USER_TIME: BlockKind.USER_TIME_CELL}[self.config.semantic.semantic]
        time_range = tuple(sel["time_range"]) if "time_range" in sel else None
        user_range = tuple(sel["user_range"]) if "user_range" in sel else None
        try:
            return BlockSelector(kind, time_range=time_range, user_range=user_range)
        except ValueError:
            return None

    def _demand_for(self, arrival: PipelineArrival, matched: list[int]) -> dict:
        scale = self.config.scale_for(arrival.pid)
        if arrival.explicit is not None:
            raw = arrival.explicit.get("demand")
            if isinstance(raw, dict):
                spec = dict(raw)
                if isinstance(spec.get("blocks"), list):
                    spec["blocks"] = tuple(spec["blocks"])
                vec = self._demand_vector(DemandTemplate(**spec))
                return {j: vec * scale for j in matched}
            if isinstance(raw, (int, float)):
                return {j: self.ledger.as_demand(float(raw) * scale) for j in matched}
            if len(raw) != len(matched):
                raise ValueError(
                    f"pipeline {arrival.pid}: demand list has {len(raw)} entries "
                    f"for {len(matched)} matched blocks")
            return {j: self.ledger.as_demand(float(v) * scale)
                    for j, v in zip(matched, raw)}
        vec = self._demand_vector(arrival.template)
        return {j: vec * scale for j in matched}

    def _arrive(self, arrival: PipelineArrival) -> None:
        tick = arrival.tick
        self.arrival_info[arrival.pid] = arrival
        selector = self._selector_for(arrival)
        matched = self.ledger.match_blocks(selector) if selector is not None else []
        if selector is None or not matched:
            if selector is None:  # nothing requestable: synthesize an empty match
                kind = {Semantic.EVENT: BlockKind.TIME_WINDOW,
                        Semantic.USER: BlockKind.USER_GROUP,
                        Semantic.USER_TIME: BlockKind.USER_TIME_CELL}[self.config.semantic.semantic]
                selector = BlockSelector(
                    kind,
                    time_range=None if kind is BlockKind.USER_GROUP else (tick, tick + 1),
                    user_range=None if kind is BlockKind.TIME_WINDOW else (0, 1))
            self.ledger.register_claim(selector, {}, tick, claim_id=arrival.pid)
            self.ledger.deny(arrival.pid)
            self._emit(tick, "PipelineArrive", {
                "claim_id": arrival.pid, "label": arrival.label,
                "selector": selector.to_json(), "demand": {}})
            self._emit(tick, "Deny", {
                "claim_id": arrival.pid, "decision": "deny", "dominant_share": None,
                "policy": self.config.policy.name(), "reason": "no_blocks"})
            return
        demand = self._demand_for(arrival, matched)
        self.ledger.register_claim(selector, demand, tick, claim_id=arrival.pid)
        self._emit(tick, "PipelineArrive", {
            "claim_id": arrival.pid, "label": arrival.label,
            "selector": selector.to_json(),
            "demand": {str(j): v.tolist() for j, v in sorted(demand.items())}})
        if not self.ledger.claims[arrival.pid].demand:
            self.ledger.deny(arrival.pid)
            self._emit(tick, "Deny", {
                "claim_id": arrival.pid, "decision": "deny", "dominant_share": None,
                "policy": self.config.policy.name(), "reason": "no_blocks"})
            return
        self.scheduler.enqueue(arrival.pid)
        self.scheduler.on_pipeline_arrival(arrival.pid)
        self._run_pass(tick)

    def _expire_waiters(self, tick: int) -> None:
        limit = self.config.workload.max_wait
        expired = []
        for cid in self.scheduler.queue:
            claim = self.ledger.claims[cid]
            info = self.arrival_info.get(cid)
            wait = limit
            if info is not None and info.explicit is not None:
                wait = info.explicit.get("max_wait", limit)
            if wait is not None and tick - claim.arrival_tick > wait:
                expired.append(cid)
        for cid in expired:
            self.scheduler.queue.remove(cid)
            self.ledger.deny(cid)
            self._emit(tick, "Deny", {
                "claim_id": cid, "decision": "deny", "dominant_share": None,
                "policy": self.config.policy.name(), "reason": "timeout"})

    def _complete(self, tick: int) -> None:
        due = self._completions.pop(tick, [])
        releases = sorted((c for c in due if c[1] is not None and c[1] > 0), key=lambda c: c[0])
        consumes = sorted((c for c in due if c[1] is None or c[1] <= 0), key=lambda c: c[0])
        for cid, share in releases:
            claim = self.ledger.claims[cid]
            if share < 1.0:
                amounts = {j: v * (1.0 - share) for j, v in claim.allocated_left.items()}
                self.ledger.consume(cid, amounts)
                self._emit(tick, "Consume", {
                    "claim_id": cid,
                    "amounts": {str(j): v.tolist() for j, v in sorted(amounts.items())}})
            self.ledger.release(cid)
            self._emit(tick, "Release", {"claim_id": cid})
        if releases:
            self._run_pass(tick)
        for cid, _ in consumes:
            claim = self.ledger.claims[cid]
            amounts = {j: v.copy() for j, v in claim.allocated_left.items()}
            self.ledger.consume_all(cid)
            self._emit(tick, "Consume", {
                "claim_id": cid,
                "amounts": {str(j): v.tolist() for j, v in sorted(amounts.items())}})

    # ----------------------------------------------------------------- run
    def run(self) -> SimResult:
        cfg = self.config
        arrivals = generate_workload(cfg.workload, cfg.horizon)
        by_tick: dict[int, list[PipelineArrival]] = {}
        for a in arrivals:
            by_tick.setdefault(a.tick, []).append(a)
        timer = cfg.policy.policy in (Policy.DPF_T, Policy.RR_T)

        for tick in range(cfg.horizon):
            if tick == 0:
                self._create_blocks(0, self.manager.bootstrap_descriptors())
            self._expire_waiters(tick)
            self._create_blocks(tick, self.manager.advance(tick, self._users_at(tick)))
            if timer and tick > 0 and tick % cfg.policy.unlock_interval == 0:
                self.scheduler.on_unlock_timer()
                self._emit(tick, "UnlockTick", {})
                self._run_pass(tick)
            for arrival in by_tick.get(tick, []):
                self._arrive(arrival)
            self._complete(tick)

        final = self.ledger.audit(include_claims=True)
        if final:
            raise SimInvariantError(f"final audit failed: {final[:3]}")
        metrics = self._metrics(arrivals)
        return SimResult(cfg, metrics, self.events, self.ledger, self.grant_tick, self.passes)

    def _metrics(self, arrivals) -> Metrics:
        cfg = self.config
        n = cfg.workload.n_pipelines or len(arrivals)
        arrived_by: dict[str, int] = {}
        granted_by: dict[str, int] = {}
        delays = []
        granted = denied = 0
        for a in arrivals:
            arrived_by[a.label] = arrived_by.get(a.label, 0) + 1
            claim = self.ledger.claims.get(a.pid)
            if claim is None:
                continue
            if a.pid in self.grant_tick:
                granted += 1
                granted_by[a.label] = granted_by.get(a.label, 0) + 1
                delays.append(self.grant_tick[a.pid] - a.tick)
            elif claim.state is ClaimState.DENIED:
                denied += 1
        waiting = len(arrivals) - granted - denied
        arr = np.asarray(delays, dtype=float) if delays else None
        check = check_workload(cfg.workload, self._initial_budget, cfg.policy.mode,
                               cfg.policy.grid, cfg.budget.claim_delta)
        blocks = [{
            "blk_id": b.blk_id,
            "descriptor": b.descriptor.to_json(),
            "retired": b.retired,
            "registers": b.registers.as_dict(),
        } for b in sorted(self.ledger.blocks.values(), key=lambda b: b.blk_id)]
        return Metrics(
            policy=cfg.policy.name(), mode=cfg.policy.mode.value,
            n_pipelines=n, arrived=len(arrivals), granted=granted, denied=denied,
            waiting=waiting, not_arrived=n - len(arrivals),
            granted_by_class=granted_by, arrived_by_class=arrived_by,
            delays=delays,
            delay_mean=float(arr.mean()) if arr is not None else None,
            delay_median=float(np.median(arr)) if arr is not None else None,
            delay_p95=float(np.percentile(arr, 95)) if arr is not None else None,
            delay_max=int(arr.max()) if arr is not None else None,
            blocks=blocks, workload_check=check)


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()


def compare_policies(configs: list[SimConfig]) -> list[SimResult]:
    """Run several policies over one shared workload; rows line up by config order."""
    base = configs[0]
    for cfg in configs[1:]:
        if cfg.workload != base.workload or cfg.horizon != base.horizon \
                or cfg.budget != base.budget or cfg.semantic != base.semantic:
            raise ValueError("compare_policies requires identical workloads")
    return [run(cfg) for cfg in configs]


def replay_events(events, config: SimConfig) -> Ledger:
    """Rebuild a ledger by applying a recorded event log to fresh state.

    Arrivals and unlock ticks re-run the policy's deterministic unlock hooks;
    grant/deny/consume/release decisions are applied exactly as logged.
    """
    ledger = config.policy.make_ledger()
    scheduler = Scheduler(ledger, config.policy)
    for ev in events:
        ev = ev.to_json() if isinstance(ev, SimEvent) else dict(ev)
        kind = ev["kind"]
        if kind == "meta":
            continue
        if kind == "BlockCreate":
            blk_id = ledger.create_block(BlockDescriptor.from_json(ev["descriptor"]),
                                         np.asarray(ev["total"], dtype=float),
                                         created_at=ev["tick"])
            assert blk_id == ev["blk_id"]
            scheduler.on_block_create(blk_id)
        elif kind == "UnlockTick":
            scheduler.on_unlock_timer()
        elif kind == "PipelineArrive":
            demand = {int(j): np.asarray(v, dtype=float) for j, v in ev["demand"].items()}
            ledger.register_claim(BlockSelector.from_json(ev["selector"]), demand,
                                  ev["tick"], claim_id=ev["claim_id"])
            if demand:
                scheduler.on_pipeline_arrival(ev["claim_id"])
        elif kind == "Grant":
            if not ledger.allocate(ev["claim_id"]):
                raise SimInvariantError(f"replay could not re-grant claim {ev['claim_id']}")
        elif kind == "Deny":
            ledger.deny(ev["claim_id"])
        elif kind == "Consume":
            amounts = {int(j): np.asarray(v, dtype=float) for j, v in ev["amounts"].items()}
            if not ledger.consume(ev["claim_id"], amounts):
                raise SimInvariantError(f"replay could not re-consume claim {ev['claim_id']}")
        elif kind == "Release":
            ledger.release(ev["claim_id"])
        else:
            raise ValueError(f"unknown event kind {kind!r}")
    return ledger
