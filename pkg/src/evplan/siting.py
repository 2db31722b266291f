"""Exact collaborative station-location optimization on the road network.

Chooses psi station nodes per period minimizing total EV travel-time cost

    sum_i  c_tc * xi_i * D(i, sigma(i)) / v_avg

where sigma(i) is the nearest open station covering node i.  A node is
covered by station j when D_ij <= varsigma * d_ev.  Fixed-station nodes
are forced open, and mutually-nearest open stations must be spaced inside
[r_s, d_ev].  The solver is a depth-first branch-and-bound over open-set
subsets in lexicographic order, with a lower bound from nearest-candidate
relaxation; the first optimum found is therefore the lexicographically
smallest one, which makes results deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, Uncovered, ValidationError
from .transport import DistanceMatrix


@dataclass(frozen=True)
class SitingInstance:
    dm: DistanceMatrix
    xi: np.ndarray  # (n_nodes, n_periods) EV arrivals per hour
    c_tc: float  # $/h value of travel time
    v_avg: np.ndarray  # km/h per period
    psi: int  # stations to open per period
    fixed_open: frozenset[int] = frozenset()
    r_s: float = 10.0  # km, service radius = spacing lower bound
    d_ev: float = 100.0  # km, EV range = spacing upper bound
    varsigma: float = 0.3  # psychological range factor
    d_mcs_bounds: tuple[float, float] | None = None  # overrides (r_s, d_ev) spacing
    candidates: tuple[int, ...] | None = None  # None = every node may host a station

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape[0] != len(self.dm.nodes):
            raise ValidationError("xi rows must match distance-matrix nodes")
        v = np.asarray(self.v_avg, dtype=float).reshape(-1)
        if v.shape[0] != xi.shape[1]:
            raise ValidationError("v_avg must have one entry per period")
        if (v <= 0).any():
            raise ValidationError("average speeds must be positive")
        if self.psi < len(self.fixed_open):
            raise ValidationError("psi smaller than the number of fixed stations")
        if self.psi > len(self.dm.nodes):
            raise ValidationError("psi exceeds candidate count")
        if not 0.0 < self.varsigma <= 1.0:
            raise ValidationError("varsigma must lie in (0, 1]")
        if self.r_s > self.d_ev:
            raise ValidationError("service radius exceeds EV range")
        unknown = set(self.fixed_open) - set(self.dm.nodes)
        if unknown:
            raise ValidationError(f"fixed stations not in network: {sorted(unknown)}")
        if self.candidates is not None:
            pool = set(self.candidates)
            if not pool <= set(self.dm.nodes):
                raise ValidationError("candidate list contains unknown nodes")
            if not set(self.fixed_open) <= pool:
                raise ValidationError("fixed stations must be candidates")
            if self.psi > len(pool):
                raise ValidationError("psi exceeds candidate count")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "v_avg", v)

    @property
    def n_periods(self) -> int:
        return self.xi.shape[1]

    @property
    def coverage_km(self) -> float:
        return self.varsigma * self.d_ev

    @property
    def spacing(self) -> tuple[float, float]:
        return self.d_mcs_bounds if self.d_mcs_bounds is not None else (self.r_s, self.d_ev)


@dataclass
class SitingDecision:
    nodes: tuple[int, ...]
    x: np.ndarray  # (n_nodes, n_periods) 0/1
    y: np.ndarray  # (n_i, n_j, n_periods) coverage indicators
    v: np.ndarray  # (n_i, n_j, n_periods) assignment indicators
    objective: float
    period_objectives: list[float] = field(default_factory=list)

    def open_nodes(self, t: int = 0) -> list[int]:
        return [n for k, n in enumerate(self.nodes) if self.x[k, t] == 1]

    def assigned_station(self, node: int, t: int = 0) -> int:
        i = self.nodes.index(node)
        j = int(np.argmax(self.v[i, :, t]))
        return self.nodes[j]


@dataclass(frozen=True)
class SpacingCheck:
    ok: bool
    violations: tuple[tuple[int, int, float], ...] = ()


def _mutually_nearest_pairs(open_nodes: list[int], dm: DistanceMatrix):
    """Pairs of open stations that are each other's nearest open neighbour."""
    if len(open_nodes) < 2:
        return []
    nearest = {}
    for a in open_nodes:
        others = [b for b in open_nodes if b != a]
        nearest[a] = min(others, key=lambda b: (dm.dist(a, b), b))
    pairs = []
    for a in open_nodes:
        b = nearest[a]
        if nearest[b] == a and a < b:
            pairs.append((a, b, dm.dist(a, b)))
    return pairs


def check_spacing(open_nodes: list[int], dm: DistanceMatrix, inst: SitingInstance) -> SpacingCheck:
    """Verdict on the adjacent-station spacing requirement (bounds inclusive)."""
    lo, hi = inst.spacing
    bad = tuple(
        (a, b, d) for a, b, d in _mutually_nearest_pairs(open_nodes, dm)
        if not lo <= d <= hi
    )
    return SpacingCheck(ok=not bad, violations=bad)


def assign_demand(
    open_nodes: list[int], dm: DistanceMatrix, inst: SitingInstance
) -> tuple[np.ndarray, np.ndarray]:
    """Coverage matrix y and nearest-open assignment v for one period's open set.

    y[i, j] = 1 when station j is open and inside the coverage range of
    node i; v[i, j] = 1 for i's nearest covering station (distance ties to
    the smallest node id).  Raises Uncovered for an unreachable node.
    """
    nodes = dm.nodes
    n = len(nodes)
    open_idx = [dm.index(j) for j in open_nodes]
    y = np.zeros((n, n), dtype=int)
    v = np.zeros((n, n), dtype=int)
    for i in range(n):
        best_j, best_d = -1, np.inf
        for j in sorted(open_idx):
            dij = dm.d[i, j]
            if dij <= inst.coverage_km:
                y[i, j] = 1
                if dij < best_d:
                    best_j, best_d = j, dij
        if best_j < 0:
            raise Uncovered(nodes[i])
        v[i, best_j] = 1
    return y, v


def _period_cost_matrix(inst: SitingInstance, t: int) -> np.ndarray:
    """W[i, j]: travel-time cost of serving i from j; inf outside coverage."""
    w = inst.c_tc * inst.xi[:, t : t + 1] * inst.dm.d / inst.v_avg[t]
    return np.where(inst.dm.d <= inst.coverage_km, w, np.inf)


def _solve_period(inst: SitingInstance, t: int) -> tuple[list[int], float]:
    dm = inst.dm
    nodes = dm.nodes
    w = _period_cost_matrix(inst, t)
    lo_space, hi_space = inst.spacing
    fixed = sorted(inst.fixed_open)
    fixed_idx = [dm.index(f) for f in fixed]
    pool = set(inst.candidates) if inst.candidates is not None else set(nodes)
    free = [k for k, n in enumerate(nodes) if n in pool and n not in inst.fixed_open]
    n_pick = inst.psi - len(fixed)

    if fixed and min(
        (dm.d[a, b] for a in fixed_idx for b in fixed_idx if a < b), default=np.inf
    ) < lo_space:
        raise Infeasible("fixed stations violate the minimum spacing between them")

    # elementwise suffix minima of W over the free candidates, for bounding
    suffix = np.full((len(free) + 1, len(nodes)), np.inf)
    for pos in range(len(free) - 1, -1, -1):
        suffix[pos] = np.minimum(suffix[pos + 1], w[:, free[pos]])

    best_chosen = np.full(len(nodes), np.inf)
    for j in fixed_idx:
        best_chosen = np.minimum(best_chosen, w[:, j])

    incumbent_cost = np.inf
    incumbent_set: list[int] | None = None
    chosen_idx: list[int] = []

    def leaf_cost(cover: np.ndarray) -> float:
        return float(cover.sum())

    def dfs(pos: int, cover: np.ndarray, remaining: int):
        nonlocal incumbent_cost, incumbent_set
        if remaining == 0:
            open_set = sorted(nodes[k] for k in fixed_idx + chosen_idx)
            cost = leaf_cost(cover)
            if cost >= incumbent_cost or not np.isfinite(cost):
                return
            if not check_spacing(open_set, dm, inst).ok:
                return
            incumbent_cost = cost
            incumbent_set = open_set
            return
        if len(free) - pos < remaining:
            return
        bound = float(np.minimum(cover, suffix[pos]).sum())
        if bound >= incumbent_cost:
            return
        for p in range(pos, len(free) - remaining + 1):
            cand = free[p]
            # min pairwise spacing can never recover once violated
            if any(dm.d[cand, other] < lo_space for other in fixed_idx + chosen_idx):
                continue
            chosen_idx.append(cand)
            dfs(p + 1, np.minimum(cover, w[:, cand]), remaining - 1)
            chosen_idx.pop()

    dfs(0, best_chosen, n_pick)
    if incumbent_set is None:
        raise Infeasible(
            f"no {inst.psi}-station layout containing {fixed} covers all demand "
            f"within {inst.coverage_km:g} km under spacing {inst.spacing}"
        )
    return incumbent_set, incumbent_cost


def solve_siting(inst: SitingInstance) -> SitingDecision:
    """Globally optimal station layout for every period, solved independently.

    Deterministic tie-break: the lexicographically smallest open set among
    cost-optimal ones.
    """
    n = len(inst.dm.nodes)
    node_pos = {node: k for k, node in enumerate(inst.dm.nodes)}
    x = np.zeros((n, inst.n_periods), dtype=int)
    y = np.zeros((n, n, inst.n_periods), dtype=int)
    v = np.zeros((n, n, inst.n_periods), dtype=int)
    period_costs = []
    for t in range(inst.n_periods):
        open_set, cost = _solve_period(inst, t)
        for node in open_set:
            x[node_pos[node], t] = 1
        yt, vt = assign_demand(open_set, inst.dm, inst)
        y[:, :, t] = yt
        v[:, :, t] = vt
        period_costs.append(cost)
    return SitingDecision(
        nodes=inst.dm.nodes,
        x=x,
        y=y,
        v=v,
        objective=float(sum(period_costs)),
        period_objectives=period_costs,
    )


def validate_decision(dec: SitingDecision, inst: SitingInstance) -> list[str]:
    """Machine check of every constraint family on a decision; [] when clean."""
    problems = []
    dm = inst.dm
    for t in range(inst.n_periods):
        xt, yt, vt = dec.x[:, t], dec.y[:, :, t], dec.v[:, :, t]
        if not set(np.unique(xt)) <= {0, 1} or not set(np.unique(yt)) <= {0, 1} \
                or not set(np.unique(vt)) <= {0, 1}:
            problems.append(f"t={t}: non-binary indicator")
        if (yt > xt[None, :]).any():
            problems.append(f"t={t}: coverage marked at a closed station (y > x)")
        if int(xt.sum()) != inst.psi:
            problems.append(f"t={t}: {int(xt.sum())} stations open, psi = {inst.psi}")
        if (vt > yt).any() or (vt > xt[None, :]).any():
            problems.append(f"t={t}: assignment outside coverage (v > x*y)")
        if (vt.sum(axis=1) != 1).any():
            problems.append(f"t={t}: some node not assigned to exactly one station")
        open_set = dec.open_nodes(t)
        spacing = check_spacing(open_set, dm, inst)
        if not spacing.ok:
            problems.append(f"t={t}: spacing violations {spacing.violations}")
        for k in inst.fixed_open:
            if dec.x[dm.index(k), t] != 1:
                problems.append(f"t={t}: fixed station {k} not open")
        if (dm.d * yt > inst.coverage_km + 1e-9).any():
            problems.append(f"t={t}: coverage beyond varsigma * d_ev")
    if inst.c_tc < 0:
        problems.append("negative travel-time cost rate")
    return problems
