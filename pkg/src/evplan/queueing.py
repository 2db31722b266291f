"""M/M/c queue evaluation and mobile-charging-station fleet sizing.

Chargers at a site form a single M/M/c queue: Poisson arrivals at rate
lambda, exponential service at rate mu per charger, c chargers.  Sizing
picks the smallest charger count that keeps the queue stable and the mean
wait under the limit, then converts chargers to truck-mounted units and
prices the fleet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    BudgetExceeded,
    CapacityBoundViolated,
    NoFeasibleCount,
    Unstable,
    ValidationError,
)


@dataclass(frozen=True)
class QueueInput:
    lam: float  # arrivals per hour
    mu: float  # services per charger-hour
    c: int  # charger count

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("arrival rate must be non-negative")
        if self.mu <= 0:
            raise ValidationError("service rate must be positive")
        if self.c < 1 or self.c != int(self.c):
            raise ValidationError("charger count must be an integer >= 1")


@dataclass(frozen=True)
class QueueMetrics:
    rho: float  # utilisation lambda / (c mu)
    p0: float  # probability of an empty system
    lq: float  # mean queue length
    ls: float  # mean number in system
    tw: float  # mean wait in queue (h)


def erlang_metrics(q: QueueInput) -> QueueMetrics:
    """Steady-state M/M/c metrics; raises Unstable when rho >= 1.

    Factorial terms are evaluated in log space so charger counts in the
    hundreds stay finite.
    """
    if q.lam == 0.0:
        return QueueMetrics(rho=0.0, p0=1.0, lq=0.0, ls=0.0, tw=0.0)
    a = q.lam / q.mu  # offered load, equals c * rho
    rho = a / q.c
    if rho >= 1.0:
        raise Unstable(f"rho = {rho:.4f} >= 1 with c = {q.c}; more chargers required")
    log_a = math.log(a)
    terms = [math.exp(l * log_a - math.lgamma(l + 1)) for l in range(q.c)]
    tail = math.exp(q.c * log_a - math.lgamma(q.c + 1)) / (1.0 - rho)
    p0 = 1.0 / (sum(terms) + tail)
    lq = math.exp(q.c * log_a - math.lgamma(q.c + 1)) * rho / (1.0 - rho) ** 2 * p0
    return QueueMetrics(rho=rho, p0=p0, lq=lq, ls=lq + a, tw=lq / q.lam)


def min_servers(lam: float, mu: float, tw_limit: float, c_max: int = 500) -> int:
    """Smallest charger count with a stable queue and mean wait <= tw_limit."""
    if mu <= 0:
        raise ValidationError("service rate must be positive")
    if lam == 0.0:
        return 1
    c = max(1, math.floor(lam / mu) + 1)
    while c <= c_max:
        if lam / (c * mu) < 1.0 and erlang_metrics(QueueInput(lam, mu, c)).tw <= tw_limit:
            return c
        c += 1
    raise NoFeasibleCount(
        f"no charger count <= {c_max} meets wait limit {tw_limit} h at lambda = {lam}"
    )


def capacity_from_chargers(
    c: int,
    rate_kw: float,
    min_units: float = 0.0,
    max_units: float | None = None,
) -> float:
    """Installed kW of c chargers, checked against per-site unit bounds."""
    if c < 0:
        raise ValidationError("charger count must be non-negative")
    if c < min_units or (max_units is not None and c > max_units):
        hi = "inf" if max_units is None else f"{max_units:g}"
        raise CapacityBoundViolated(
            f"{c} charger units outside the allowed range [{min_units:g}, {hi}]"
        )
    return c * rate_kw


@dataclass(frozen=True)
class McsSiteSizing:
    node: int
    lam: float
    chargers: int
    n_mcs: int
    capacity_kw: float
    metrics: QueueMetrics


@dataclass(frozen=True)
class McsSizingResult:
    sites: tuple[McsSiteSizing, ...]
    n_mcs_total: int
    operation_cost_per_h: float
    waiting_cost_per_h: float

    @property
    def total_cost_per_h(self) -> float:
        return self.operation_cost_per_h + self.waiting_cost_per_h


def size_mcs_site(
    node: int,
    lam: float,
    mu: float,
    tw_limit: float,
    charger_kw: float = 100.0,
    chargers_per_mcs: int = 4,
    min_units: float = 0.0,
    max_units: float | None = None,
) -> McsSiteSizing:
    """Charger count, truck count and capacity for one mobile-station site."""
    c = min_servers(lam, mu, tw_limit, c_max=int(max_units) if max_units else 500)
    capacity = capacity_from_chargers(c, charger_kw, min_units, max_units)
    return McsSiteSizing(
        node=node,
        lam=lam,
        chargers=c,
        n_mcs=math.ceil(c / chargers_per_mcs),
        capacity_kw=capacity,
        metrics=erlang_metrics(QueueInput(lam, mu, c)),
    )


def mcs_cost(
    sites: list[McsSiteSizing],
    c_mo_unit: float,
    c_tc: float,
    budget_per_h: float = math.inf,
) -> McsSizingResult:
    """Hourly fleet cost: unit operation plus demand-weighted waiting cost.

    Every site must already be stable (sized); raises BudgetExceeded when
    the operation cost passes its hourly cap.
    """
    for s in sites:
        if s.lam > 0 and s.metrics.rho >= 1.0:
            raise Unstable(f"site {s.node} is not in steady state")
    n_mcs = sum(s.n_mcs for s in sites)
    operation = c_mo_unit * n_mcs
    waiting = sum(c_tc * s.lam * s.metrics.tw for s in sites)
    if operation > budget_per_h:
        raise BudgetExceeded(
            f"operation cost {operation:.2f} $/h exceeds budget {budget_per_h:.2f} $/h"
        )
    return McsSizingResult(
        sites=tuple(sites),
        n_mcs_total=n_mcs,
        operation_cost_per_h=operation,
        waiting_cost_per_h=waiting,
    )
