"""Road network, all-pairs shortest distances and charging-demand profiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Disconnected, ValidationError, ZeroHours


@dataclass(frozen=True)
class TransportNetwork:
    """Undirected weighted road graph with an optional grid coupling map.

    coupling maps transport node -> distribution bus and must be injective.
    """

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]
    coupling: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ValidationError("duplicate transport node ids")
        for u, v, length in self.edges:
            if u not in node_set or v not in node_set:
                raise ValidationError(f"edge ({u}, {v}) references unknown node")
            if length <= 0:
                raise ValidationError(f"edge ({u}, {v}) has non-positive length")
        for t_node in self.coupling:
            if t_node not in node_set:
                raise ValidationError(f"coupling references unknown transport node {t_node}")
        buses = list(self.coupling.values())
        if len(set(buses)) != len(buses):
            raise ValidationError("coupling map is not injective")

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        for u, v, length in self.edges:
            adj[u].append((v, length))
            adj[v].append((u, length))
        return adj


@dataclass(frozen=True)
class DistanceMatrix:
    nodes: tuple[int, ...]
    d: np.ndarray

    def index(self, node: int) -> int:
        return self.nodes.index(node)

    def dist(self, u: int, v: int) -> float:
        return float(self.d[self.index(u), self.index(v)])


def all_pairs_shortest(net: TransportNetwork) -> DistanceMatrix:
    """Exact shortest-path kilometres between every node pair (Floyd-Warshall)."""
    nodes = tuple(sorted(net.nodes))
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for u, v, length in net.edges:
        i, j = idx[u], idx[v]
        d[i, j] = min(d[i, j], length)
        d[j, i] = d[i, j]
    for k in range(n):
        np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :], out=d)
    if np.isinf(d).any():
        i, j = np.argwhere(np.isinf(d))[0]
        raise Disconnected(f"no path between nodes {nodes[i]} and {nodes[j]}")
    # structural invariants of a metric on a connected graph
    assert np.allclose(d, d.T)
    if n <= 400:
        assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-9)
    return DistanceMatrix(nodes=nodes, d=d)


def time_cost_rate(annual_income: float, annual_hours: float) -> float:
    """Hourly value of travel time: average annual income over annual working hours."""
    if annual_hours <= 0:
        raise ZeroHours("annual working hours must be positive")
    return annual_income / annual_hours


@dataclass(frozen=True)
class DemandProfile:
    """EV arrivals per hour by (node, period) plus per-period energy aggregates.

    xi has shape (n_nodes, n_periods); soc_arr/soc_dep are kWh totals of the
    arriving fleet's stored energy and its required departure energy.
    """

    nodes: tuple[int, ...]
    xi: np.ndarray
    soc_arr_kwh: np.ndarray
    soc_dep_kwh: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 2 or xi.shape[0] != len(self.nodes):
            raise ValidationError("xi must have shape (n_nodes, n_periods)")
        if (xi < 0).any():
            raise ValidationError("demand rates must be non-negative")
        arr = np.asarray(self.soc_arr_kwh, dtype=float)
        dep = np.asarray(self.soc_dep_kwh, dtype=float)
        if arr.shape != (xi.shape[1],) or dep.shape != (xi.shape[1],):
            raise ValidationError("SoC aggregates must be per-period vectors")
        if (dep < arr).any():
            raise ValidationError("departure energy below arrival energy")

    @property
    def n_periods(self) -> int:
        return np.asarray(self.xi).shape[1]

    def energy_need_kwh(self) -> np.ndarray:
        """Per-period charging energy the stations must supply."""
        return np.asarray(self.soc_dep_kwh) - np.asarray(self.soc_arr_kwh)


def synthesize_demand(
    seed: int,
    nodes: tuple[int, ...] | list[int],
    periods: int,
    intensity: float,
    battery_kwh: float = 60.0,
    arrival_soc_range: tuple[float, float] = (0.2, 0.5),
    departure_soc: float = 0.9,
) -> DemandProfile:
    """Deterministic-for-seed synthetic demand.

    Arrivals per (node, period) are Poisson with the configured mean
    intensity; each arrival carries a uniform arrival state of charge in
    `arrival_soc_range` and departs at `departure_soc` of battery_kwh.
    """
    if intensity < 0:
        raise ValidationError("intensity must be non-negative")
    rng = np.random.default_rng(seed)
    nodes = tuple(nodes)
    shape = (len(nodes), periods)
    xi = rng.poisson(intensity, shape).astype(float) if intensity > 0 else np.zeros(shape)
    arr_frac = rng.uniform(*arrival_soc_range, shape)
    per_period_arrivals = xi.sum(axis=0)
    soc_arr = (xi * arr_frac * battery_kwh).sum(axis=0)
    soc_dep = per_period_arrivals * departure_soc * battery_kwh
    return DemandProfile(nodes=nodes, xi=xi, soc_arr_kwh=soc_arr, soc_dep_kwh=soc_dep)
