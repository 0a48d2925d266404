"""Renyi-DP accounting: mechanism cost curves, composition, and translation to (eps, delta)-DP.

Curves are immutable values over a shared grid of Renyi orders. The order
``+inf`` is an explicit sentinel (``math.inf``): costs add normally there
(``x + inf == inf``) and translation at infinity carries no delta term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

INF = math.inf

# Rich default grid, suitable for small-epsilon workloads; the compact preset
# is the short set commonly used when only scheduling matters.
DEFAULT_ORDERS = (1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, INF)
COMPACT_ORDERS = (2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0)


@dataclass(frozen=True)
class AlphaGrid:
    """Strictly increasing Renyi orders, each > 1, optionally ending in +inf."""

    orders: tuple[float, ...]

    def __post_init__(self):
        orders = tuple(float(a) for a in self.orders)
        object.__setattr__(self, "orders", orders)
        if not orders:
            raise ValueError("alpha grid must be non-empty")
        for a in orders:
            if math.isnan(a) or a <= 1.0:
                raise ValueError(f"every order must be > 1, got {a}")
        for lo, hi in zip(orders, orders[1:]):
            if not lo < hi:
                raise ValueError("orders must be strictly increasing")
        if any(math.isinf(a) for a in orders[:-1]):
            raise ValueError("+inf may only appear as the last order")

    @classmethod
    def default(cls) -> "AlphaGrid":
        return cls(DEFAULT_ORDERS)

    @classmethod
    def compact(cls) -> "AlphaGrid":
        return cls(COMPACT_ORDERS)

    @property
    def has_inf(self) -> bool:
        return math.isinf(self.orders[-1])

    def finite(self) -> "AlphaGrid":
        """The same grid with the infinity order dropped."""
        if self.has_inf:
            return AlphaGrid(self.orders[:-1])
        return self

    def __len__(self) -> int:
        return len(self.orders)

    def __iter__(self):
        return iter(self.orders)


@dataclass(frozen=True)
class RdpCurve:
    """Per-order privacy loss eps(alpha) on a grid.

    Mechanism constructors only produce non-negative entries; budget curves
    held by the block ledger reuse this container and may carry negative
    entries at small orders (those orders are unusable, not invalid).
    """

    grid: AlphaGrid
    eps: tuple[float, ...]
    # Flattened summands feeding each entry, kept so that nested compositions
    # reduce to one correctly-rounded sum and stay exactly associative.
    terms: tuple[tuple[float, ...], ...] | None = field(
        default=None, compare=False, repr=False)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if len(eps) != len(self.grid):
            raise ValueError("eps must have one entry per grid order")
        if any(math.isnan(e) or e == -INF for e in eps):
            raise ValueError("curve entries must be real or +inf")

    def value_at(self, alpha: float) -> float:
        try:
            i = self.grid.orders.index(alpha)
        except ValueError:
            raise ValueError(f"order {alpha} not on grid") from None
        return self.eps[i]

    def to_json(self) -> dict:
        enc = lambda x: "inf" if math.isinf(x) else x
        return {"orders": [enc(a) for a in self.grid.orders],
                "eps": [enc(e) for e in self.eps]}

    @classmethod
    def from_json(cls, obj: dict) -> "RdpCurve":
        dec = lambda x: INF if x == "inf" else float(x)
        grid = AlphaGrid(tuple(dec(a) for a in obj["orders"]))
        return cls(grid, tuple(dec(e) for e in obj["eps"]))


@dataclass(frozen=True)
class DpGuarantee:
    """(epsilon, delta)-DP statement; epsilon may be 0 for the degenerate no-loss case."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0 or math.isnan(self.epsilon):
            raise ValueError("epsilon must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")


def zero_curve(grid: AlphaGrid | None = None) -> RdpCurve:
    grid = grid or AlphaGrid.default()
    return RdpCurve(grid, (0.0,) * len(grid))


def gaussian_curve(sigma: float, grid: AlphaGrid | None = None) -> RdpCurve:
    """Cost curve of one Gaussian mechanism with noise stddev sigma: alpha / (2 sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    grid = grid or AlphaGrid.default()
    eps = tuple(INF if math.isinf(a) else a / (2.0 * sigma * sigma) for a in grid)
    return RdpCurve(grid, eps)


def laplace_curve(eps0: float, grid: AlphaGrid | None = None) -> RdpCurve:
    """Cost curve of one pure eps0-DP Laplace mechanism (noise scale 1/eps0)."""
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    grid = grid or AlphaGrid.default()
    return RdpCurve(grid, tuple(_laplace_order(eps0, a) for a in grid))


def _laplace_order(eps0: float, alpha: float) -> float:
    if math.isinf(alpha):
        return eps0
    # log[ a/(2a-1) e^{(a-1)e0} + (a-1)/(2a-1) e^{-a e0} ] evaluated stably by
    # factoring out the dominant exponent (the first term always dominates).
    x = (alpha - 1.0) * eps0
    y = -alpha * eps0
    w1 = alpha / (2.0 * alpha - 1.0)
    w2 = (alpha - 1.0) / (2.0 * alpha - 1.0)
    return (x + math.log(w1 + w2 * math.exp(y - x))) / (alpha - 1.0)


def pure_dp_curve(eps0: float, grid: AlphaGrid | None = None) -> RdpCurve:
    """Generic curve of any pure eps0-DP mechanism: 2 eps0^2 alpha, eps0 at infinity."""
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    grid = grid or AlphaGrid.default()
    eps = tuple(eps0 if math.isinf(a) else 2.0 * eps0 * eps0 * a for a in grid)
    return RdpCurve(grid, eps)


def compose(curves: Sequence[RdpCurve], grid: AlphaGrid | None = None) -> RdpCurve:
    """Pointwise sum of cost curves; the empty composition is the zero curve."""
    if not curves:
        return zero_curve(grid)
    base = curves[0].grid
    for c in curves:
        if c.grid.orders != base.orders:
            raise ValueError("all curves must share one grid")
    terms = []
    for c in curves:
        terms.extend(c.terms if c.terms is not None else [c.eps])
    eps = []
    for i in range(len(base)):
        col = [t[i] for t in terms]
        eps.append(INF if any(math.isinf(x) for x in col) else math.fsum(col))
    return RdpCurve(base, tuple(eps), terms=tuple(terms))


def rdp_to_dp(curve: RdpCurve, delta: float) -> tuple[DpGuarantee, float]:
    """Best (epsilon, delta)-DP implied by a curve, with the minimizing order.

    Finite orders contribute eps(a) + ln(1/delta)/(a-1); the infinity order
    contributes eps(inf) exactly. Ties break toward the smaller order.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must be in (0, 1]")
    log_term = math.log(1.0 / delta)
    best_eps, best_alpha = INF, None
    for a, e in zip(curve.grid, curve.eps):
        cand = e if math.isinf(a) else e + log_term / (a - 1.0)
        if cand < best_eps:
            best_eps, best_alpha = cand, a
    if best_alpha is None:
        # every candidate is +inf: report the smallest order
        best_alpha = curve.grid.orders[0]
    return DpGuarantee(max(best_eps, 0.0), delta), best_alpha


def block_initial_curve(eps_global: float, delta_global: float, grid: AlphaGrid | None = None,
                        eps_count: float = 0.0,
                        counter_curve: RdpCurve | None = None) -> RdpCurve:
    """Signed per-order budget a fresh block starts with.

    Finite orders hold eps_global - ln(1/delta_global)/(alpha-1) minus the streaming
    counter's cost (generic 2 eps_count^2 alpha, or the tighter
    ``counter_curve`` when given); the infinity order holds eps_global - eps_count.
    Entries may be negative: such orders are unusable but tracked.
    """
    if eps_global <= 0:
        raise ValueError("eps_global must be positive")
    if not 0.0 < delta_global < 1.0:
        raise ValueError("delta_global must be in (0, 1)")
    if eps_count < 0:
        raise ValueError("eps_count must be >= 0")
    grid = grid or AlphaGrid.default()
    if counter_curve is not None and counter_curve.grid.orders != grid.orders:
        raise ValueError("counter_curve must share the block grid")
    log_term = math.log(1.0 / delta_global)
    eps = []
    for i, a in enumerate(grid):
        if math.isinf(a):
            eps.append(eps_global - eps_count)
        else:
            deduct = counter_curve.eps[i] if counter_curve is not None \
                else 2.0 * eps_count * eps_count * a
            eps.append(eps_global - log_term / (a - 1.0) - deduct)
    return RdpCurve(grid, tuple(eps))
