"""Workload generation: pipeline arrival processes and demand templates.

Everything random is drawn up front from the workload seed, so a pipeline's
demands, arrival times, and consume/release behavior are identical across
policies and across paired replays of the same seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .accounting import AlphaGrid, compose, gaussian_curve, laplace_curve, pure_dp_curve, rdp_to_dp
from .blocks import Mode

log = logging.getLogger(__name__)

MECHANISM_KINDS = ("gaussian", "laplace", "pure")
FRACTION_KINDS = ("epsilon", "budget_fraction", "fair_fraction")


@dataclass(frozen=True)
class DemandTemplate:
    """Per-block demand recipe.

    kind/value pairs: ``epsilon`` (absolute eps, basic mode only),
    ``budget_fraction`` (value x block total), ``fair_fraction`` (value x
    block total / fair_share_n), ``gaussian`` (noise stddev), ``laplace`` /
    ``pure`` (per-shot eps0). ``blocks`` is how many blocks a pipeline of
    this class selects: a fixed count or an inclusive uniform range.
    """

    kind: str
    value: float
    shots: int = 1
    blocks: int | tuple[int, int] = 1

    def __post_init__(self):
        if self.kind not in MECHANISM_KINDS + FRACTION_KINDS:
            raise ValueError(f"unknown demand kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("demand value must be positive")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if isinstance(self.blocks, int):
            if self.blocks < 1:
                raise ValueError("blocks must be >= 1")
        else:
            lo, hi = self.blocks
            if not 1 <= lo <= hi:
                raise ValueError("blocks range must satisfy 1 <= lo <= hi")

    def draw_blocks(self, rng: np.random.Generator) -> int:
        if isinstance(self.blocks, int):
            return self.blocks
        lo, hi = self.blocks
        return int(rng.integers(lo, hi + 1))

    def mechanism_curve(self, grid: AlphaGrid):
        maker = {"gaussian": gaussian_curve, "laplace": laplace_curve,
                 "pure": pure_dp_curve}[self.kind]
        return compose([maker(self.value, grid)] * self.shots, grid)

    def resolve(self, total: np.ndarray, mode: Mode, grid: AlphaGrid | None,
                claim_delta: float, fair_n: int | None) -> np.ndarray:
        """Concrete demand vector against one block's total budget."""
        if self.kind in MECHANISM_KINDS:
            if mode is Mode.RENYI:
                return np.asarray(self.mechanism_curve(grid).eps, dtype=float)
            guarantee, _ = rdp_to_dp(self.mechanism_curve(AlphaGrid.default()), claim_delta)
            return np.array([guarantee.epsilon])
        usable = np.maximum(total, 0.0)
        if self.kind == "epsilon":
            if mode is Mode.RENYI:
                raise ValueError("absolute-epsilon demands need basic mode")
            return np.array([self.value])
        if self.kind == "budget_fraction":
            return usable * self.value
        if fair_n is None:
            raise ValueError("fair_fraction demands need workload fair_share_n")
        return usable * (self.value / fair_n)


@dataclass(frozen=True)
class ArrivalSpec:
    kind: str  # poisson | fixed | trace
    rate: float | None = None          # poisson: arrivals per tick
    interarrival: float | None = None  # fixed: ticks between arrivals
    pipelines: tuple = ()              # trace: explicit pipeline dicts

    def __post_init__(self):
        if self.kind == "poisson":
            if not self.rate or self.rate <= 0:
                raise ValueError("poisson arrivals need rate > 0")
        elif self.kind == "fixed":
            if not self.interarrival or self.interarrival <= 0:
                raise ValueError("fixed arrivals need interarrival > 0")
        elif self.kind == "trace":
            if not self.pipelines:
                raise ValueError("trace arrivals need at least one pipeline")
        else:
            raise ValueError(f"unknown arrival kind {self.kind!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    arrival: ArrivalSpec
    n_pipelines: int = 0
    mice_fraction: float = 1.0
    mice: DemandTemplate | None = None
    elephant: DemandTemplate | None = None
    selector_policy: str = "latest_k"  # latest_k | random_window | all_users
    seed: int = 0
    fair_share_n: int | None = None
    release_fraction: float = 0.0
    # Deny claims still waiting after this many ticks; None waits forever.
    max_wait: int | None = None

    def __post_init__(self):
        if self.arrival.kind != "trace":
            if self.n_pipelines < 1:
                raise ValueError("generated workloads need n_pipelines >= 1")
            if not 0.0 <= self.mice_fraction <= 1.0:
                raise ValueError("mice_fraction must be in [0, 1]")
            if self.mice_fraction > 0 and self.mice is None:
                raise ValueError("mice template required when mice_fraction > 0")
            if self.mice_fraction < 1 and self.elephant is None:
                raise ValueError("elephant template required when mice_fraction < 1")
        if self.selector_policy not in ("latest_k", "random_window", "all_users"):
            raise ValueError(f"unknown selector_policy {self.selector_policy!r}")
        if not 0.0 <= self.release_fraction <= 1.0:
            raise ValueError("release_fraction must be in [0, 1]")
        if self.max_wait is not None and self.max_wait < 0:
            raise ValueError("max_wait must be >= 0")


@dataclass(frozen=True)
class PipelineArrival:
    pid: int
    tick: int
    time: float
    label: str                     # mice | elephant | trace
    n_blocks: int
    template: DemandTemplate | None = None
    window_u: float = 0.0          # pre-drawn placement for random_window
    release_share: float | None = None  # None: consume fully; else release this share
    explicit: dict | None = None   # trace rows carry selector/demand verbatim


def generate_workload(spec: WorkloadSpec, horizon: int) -> list[PipelineArrival]:
    """Deterministic pipeline list for a seed; trace specs pass through."""
    if spec.arrival.kind == "trace":
        out = []
        for pid, row in enumerate(spec.arrival.pipelines):
            out.append(PipelineArrival(
                pid=pid, tick=int(row["tick"]), time=float(row["tick"]),
                label=str(row.get("label", "trace")), n_blocks=0, explicit=dict(row),
                release_share=row.get("release_share")))
        return [p for p in sorted(out, key=lambda p: (p.tick, p.pid)) if p.tick < horizon]

    rng = np.random.default_rng(spec.seed)
    out = []
    now = 0.0
    for pid in range(spec.n_pipelines):
        if spec.arrival.kind == "poisson":
            now += float(rng.exponential(1.0 / spec.arrival.rate))
        else:
            now = pid * spec.arrival.interarrival
        is_mouse = bool(rng.random() < spec.mice_fraction)
        template = spec.mice if is_mouse else spec.elephant
        n_blocks = template.draw_blocks(rng)
        window_u = float(rng.random())
        release_share = None
        if spec.release_fraction > 0 and rng.random() < spec.release_fraction:
            release_share = float(rng.uniform(0.0, 1.0))
        out.append(PipelineArrival(
            pid=pid, tick=int(now), time=now,
            label="mice" if is_mouse else "elephant",
            n_blocks=n_blocks, template=template,
            window_u=window_u, release_share=release_share))
    return [p for p in sorted(out, key=lambda p: (p.tick, p.pid)) if p.tick < horizon]


def check_workload(spec: WorkloadSpec, total: np.ndarray, mode: Mode,
                   grid: AlphaGrid | None, claim_delta: float) -> dict:
    """Sanity report: mice should sit below the fair share, elephants above.

    Violations are reported, not enforced.
    """
    if spec.arrival.kind == "trace" or spec.fair_share_n is None:
        return {"checked": False}
    usable = np.maximum(total, 0.0)
    pos = usable > 0
    report = {"checked": True, "fair_share_n": spec.fair_share_n}
    for name, template in (("mice", spec.mice), ("elephant", spec.elephant)):
        if template is None:
            continue
        demand = template.resolve(total, mode, grid, claim_delta, spec.fair_share_n)
        share = float(np.max(demand[pos] / usable[pos])) if np.any(pos) else math.inf
        report[f"{name}_dominant_share"] = share
    fair = 1.0 / spec.fair_share_n
    report["fair_share"] = fair
    ok = True
    if "mice_dominant_share" in report and report["mice_dominant_share"] >= fair:
        ok = False
        log.warning("mice dominant share %.4g is not below the fair share %.4g",
                    report["mice_dominant_share"], fair)
    if "elephant_dominant_share" in report and report["elephant_dominant_share"] < fair:
        ok = False
        log.warning("elephant dominant share %.4g is below the fair share %.4g",
                    report["elephant_dominant_share"], fair)
    report["ok"] = ok
    return report
