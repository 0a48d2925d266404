"""Shared builders for randomized scheduler workloads used across test modules."""

import numpy as np
import pytest

from privsched.blocks import Mode
from privsched.engine import GlobalBudget, SimConfig
from privsched.scheduling import Policy, PolicyConfig
from privsched.semantics import Semantic, SemanticConfig
from privsched.workload import ArrivalSpec, DemandTemplate, WorkloadSpec


def random_fair_workload(rng: np.random.Generator, mode: Mode = Mode.BASIC,
                         n_fair: int = 5):
    """Random DPF-N instance with ``n_fair`` injected fair-demand claims.

    A fair claim demands at most one fair share of every selected block and
    arrives while every selected block still has fewer than N requesters.
    The builder tracks per-block requester counts and reserves slots for the
    fair claims it has yet to place, so condition (a) holds by construction
    while unfair traffic still contends freely. Returns (config, fair ids).
    """
    n = int(rng.integers(2, 51))
    n_blocks = int(rng.integers(max(1, -(-n_fair // n)), 5))
    blocks = list(range(-n_blocks, 0))  # bootstrap window start ticks

    # round-robin reservation of fair claims onto blocks
    pending = {b: 0 for b in blocks}
    for i in range(n_fair):
        pending[blocks[i % n_blocks]] += 1
    count = {b: 0 for b in blocks}

    def random_selector():
        lo = int(rng.integers(-n_blocks, 0))
        hi = int(rng.integers(lo + 1, 1))
        return {"time_range": [lo, hi]}

    def unfair_demand():
        if mode is Mode.RENYI and rng.random() < 0.5:
            return {"kind": "gaussian", "value": float(rng.uniform(0.5, 6.0))}
        return {"kind": "fair_fraction", "value": float(rng.uniform(0.2, 6.0))}

    rows, fair_pids = [], []
    fair_queue = [b for b in blocks for _ in range(pending[b])]
    rng.shuffle(fair_queue)
    n_unfair = int(rng.integers(0, 16))
    tick = 1
    while fair_queue or n_unfair > 0:
        place_fair = not n_unfair or (fair_queue and rng.random() < 0.4)
        if place_fair:
            b = fair_queue.pop()
            pending[b] -= 1
            lo = hi = b
            while rng.random() < 0.3 and hi + 1 in blocks and \
                    count[hi + 1] + pending[hi + 1] < n:
                hi += 1  # widen the fair claim while room remains
            fair_pids.append(len(rows))
            rows.append({
                "tick": tick,
                "selector": {"time_range": [lo, hi + 1]},
                "demand": {"kind": "fair_fraction", "value": float(rng.uniform(0.05, 1.0))},
                "label": "fair",
            })
            for bb in range(lo, hi + 1):
                count[bb] += 1
                assert count[bb] <= n
        else:
            n_unfair -= 1
            sel = random_selector()
            matched = list(range(sel["time_range"][0], sel["time_range"][1]))
            if fair_queue and any(count[b] + 1 + pending[b] > n for b in matched):
                continue  # would crowd out a reserved fair slot
            rows.append({"tick": tick, "selector": sel, "demand": unfair_demand()})
            for b in matched:
                count[b] += 1
        tick += 1

    config = SimConfig(
        policy=PolicyConfig(Policy.DPF_N, n=n, mode=mode),
        semantic=SemanticConfig(Semantic.EVENT, bootstrap_windows=n_blocks),
        workload=WorkloadSpec(arrival=ArrivalSpec("trace", pipelines=tuple(rows)),
                              fair_share_n=n),
        budget=GlobalBudget(epsilon=10.0),
        horizon=tick + 2,
    )
    return config, fair_pids


def random_generated_config(rng: np.random.Generator, policy: Policy = Policy.DPF_N,
                            mode: Mode = Mode.BASIC, n_pipelines: int = 40):
    """Small generated workload with a random mice/elephant mix."""
    n = int(rng.integers(5, 40))
    seed = int(rng.integers(0, 2 ** 31))
    if mode is Mode.RENYI:
        mice = DemandTemplate("gaussian", float(rng.uniform(4.0, 10.0)), blocks=1)
        elephant = DemandTemplate("gaussian", float(rng.uniform(1.0, 3.0)),
                                  blocks=(1, 2))
    else:
        mice = DemandTemplate("fair_fraction", float(rng.uniform(0.2, 0.9)), blocks=1)
        elephant = DemandTemplate("fair_fraction", float(rng.uniform(1.5, 8.0)),
                                  blocks=(1, 2))
    kw = {"n": n} if policy in (Policy.DPF_N, Policy.RR_N) else {}
    if policy in (Policy.DPF_T, Policy.RR_T):
        kw = {"lifetime_ticks": 30, "unlock_interval": 1}
    return SimConfig(
        policy=PolicyConfig(policy, mode=mode, **kw),
        semantic=SemanticConfig(Semantic.EVENT, bootstrap_windows=2),
        workload=WorkloadSpec(
            arrival=ArrivalSpec("poisson", rate=1.5),
            n_pipelines=n_pipelines,
            mice_fraction=float(rng.uniform(0.0, 1.0)),
            mice=mice,
            elephant=elephant,
            seed=seed,
            fair_share_n=n,
        ),
        budget=GlobalBudget(epsilon=10.0),
        horizon=60,
    )


def assert_envy_free_order(result, tol=1e-12):
    """Order-level envy check: when j is granted while i waits in the same
    pass, either i's dominant share is no smaller, or i was examined (and
    failed) before j's grant."""
    for p in result.passes:
        for i_pos, ci in enumerate(p.checks):
            if ci.granted or ci.denied:
                continue
            for g_pos, cg in enumerate(p.checks):
                if not cg.granted:
                    continue
                ok = (ci.dominant_share >= cg.dominant_share - tol) or \
                     (i_pos < g_pos and not ci.runnable)
                assert ok, (
                    f"pass@{p.tick}: waiting {ci.claim_id} (ds={ci.dominant_share}) "
                    f"envies granted {cg.claim_id} (ds={cg.dominant_share})")


def assert_pareto_fixed_point(result):
    """No waiting claim is runnable against the final ledger."""
    from privsched.blocks import ClaimState

    for cid, claim in result.ledger.claims.items():
        if claim.state is ClaimState.PENDING:
            assert not result.ledger.can_allocate(cid), \
                f"claim {cid} waits although it could run"
