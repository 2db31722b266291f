"""Radial distribution network model and forward/backward-sweep power flow.

The network is a tree of three-phase (or balanced single-phase) branches
rooted at the slack bus.  Each branch carries an impedance matrix Z and a
total shunt admittance matrix Y; the generalised line constants

    b = Z,   c = Y + (1/4) Y Z Y,   a = d = U + (1/2) Z Y

relate receiving-end voltage/current to sending-end quantities.  The sweep
alternates a backward current accumulation with a forward voltage update
until the largest voltage change between sweeps falls below tolerance.

All internal arithmetic is per-unit on the network bases; loads are
constant-PQ in kW/kvar.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotConverged, NotRadial, ValidationError

SWEEP_TOL = 1e-6
MAX_SWEEPS = 100
COLLAPSE_V = 0.25  # p.u. magnitude below which the iteration is declared diverged


def _as_matrix(value, n_phase: int) -> np.ndarray:
    """Coerce a scalar or array into an (n_phase, n_phase) complex matrix."""
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        return arr.reshape(1, 1) if n_phase == 1 else np.eye(n_phase) * arr
    if arr.shape != (n_phase, n_phase):
        raise ValidationError(f"expected {n_phase}x{n_phase} matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Branch:
    """Series element between two buses.

    z_abc/y_abc are given in ohms/siemens; scalars are accepted for
    balanced single-phase models.  ampacity is the per-phase current
    limit in amperes (inf = unlimited).
    """

    from_bus: int
    to_bus: int
    z_abc: np.ndarray
    y_abc: np.ndarray = 0.0
    ampacity: float = math.inf

    def n_phase(self) -> int:
        arr = np.asarray(self.z_abc)
        return 1 if arr.ndim == 0 else arr.shape[0]


@dataclass(frozen=True)
class BusLoad:
    """Constant-PQ load at a bus; per-phase kW / kvar (scalars when balanced)."""

    p_kw: np.ndarray
    q_kvar: np.ndarray
    category: str = "unspecified"


@dataclass(frozen=True)
class LineAbcd:
    """Generalised line constant matrices of a branch."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


def abcd_matrices(z: np.ndarray, y: np.ndarray) -> LineAbcd:
    """Line constants from series impedance and total shunt admittance."""
    n = z.shape[0]
    u = np.eye(n, dtype=complex)
    a = u + 0.5 * (z @ y)
    b = z.astype(complex)
    c = y + 0.25 * (y @ z @ y)
    return LineAbcd(a=a, b=b, c=c, d=a.copy())


def line_abcd(branch: Branch) -> LineAbcd:
    """Generalised line constants of a branch in its native units."""
    n = branch.n_phase()
    z = _as_matrix(branch.z_abc, n)
    y = _as_matrix(branch.y_abc, n)
    return abcd_matrices(z, y)


def max_loadability(v_upstream: float, z_mag: float, omega: float, phi: float) -> float:
    """Apparent-power transfer limit of a branch feeding a load.

    v_upstream is the sending-end voltage magnitude (p.u.), z_mag the branch
    impedance magnitude (p.u.), omega the impedance angle and phi the load
    angle (radians).  Returns V^2 / (4 Z cos^2((omega - phi)/2)); an
    unbounded `inf` sentinel is returned for zero impedance or when the
    cosine term vanishes.
    """
    if z_mag <= 0.0:
        return math.inf
    cos_half = math.cos((omega - phi) / 2.0)
    if abs(cos_half) < 1e-12:
        return math.inf
    return v_upstream**2 / (4.0 * z_mag * cos_half**2)


class DistributionNetwork:
    """Radial network: bus set, oriented branches and per-unit bases.

    Radiality (branch count = bus count - 1, all buses reachable from the
    slack) is asserted at construction time.
    """

    def __init__(
        self,
        branches: list[Branch],
        slack: int = 1,
        v_base_kv: float = 12.66,
        s_base_mva: float = 10.0,
        slack_v_pu: float = 1.0,
    ):
        if not branches:
            raise ValidationError("network needs at least one branch")
        self.branches = list(branches)
        self.slack = slack
        self.v_base_kv = float(v_base_kv)
        self.s_base_mva = float(s_base_mva)
        self.slack_v_pu = float(slack_v_pu)
        self.n_phase = branches[0].n_phase()
        for br in branches:
            if br.n_phase() != self.n_phase:
                raise ValidationError("mixed phase counts across branches")

        buses = {slack}
        for br in branches:
            buses.add(br.from_bus)
            buses.add(br.to_bus)
        self.buses = sorted(buses)
        if len(branches) != len(self.buses) - 1:
            raise NotRadial(
                f"{len(branches)} branches for {len(self.buses)} buses; a radial "
                "network needs exactly bus count - 1"
            )
        self._index = {b: i for i, b in enumerate(self.buses)}

        # orient branches parent -> child by BFS from the slack
        adj: dict[int, list[Branch]] = {b: [] for b in self.buses}
        for br in branches:
            adj[br.from_bus].append(br)
            adj[br.to_bus].append(br)
        order: list[tuple[int, int, Branch]] = []  # (parent, child, branch)
        seen = {slack}
        frontier = [slack]
        while frontier:
            nxt = []
            for bus in frontier:
                for br in adj[bus]:
                    other = br.to_bus if br.from_bus == bus else br.from_bus
                    if other in seen:
                        continue
                    seen.add(other)
                    order.append((bus, other, br))
                    nxt.append(other)
            frontier = nxt
        if len(seen) != len(self.buses):
            missing = sorted(set(self.buses) - seen)
            raise NotRadial(f"buses not connected to slack {slack}: {missing}")
        self.edge_order = order  # parents precede children

        # per-unit line constants; Z_base = V_LL^2 / S_3ph in ohms
        self.z_base_ohm = v_base_kv**2 / s_base_mva
        self.i_base_a = s_base_mva * 1e3 / (math.sqrt(3.0) * v_base_kv)
        self.s_base_phase_kw = s_base_mva * 1e3 / self.n_phase
        self._abcd_pu: list[LineAbcd] = []
        self._fwd: list[tuple[np.ndarray, np.ndarray]] = []  # (inv(a), inv(a) @ b)
        self._z_pu: list[np.ndarray] = []
        self._y_pu: list[np.ndarray] = []
        for _, _, br in order:
            z = _as_matrix(br.z_abc, self.n_phase) / self.z_base_ohm
            y = _as_matrix(br.y_abc, self.n_phase) * self.z_base_ohm
            self._z_pu.append(z)
            self._y_pu.append(y)
            abcd = abcd_matrices(z, y)
            a_inv = np.linalg.inv(abcd.a)
            self._abcd_pu.append(abcd)
            self._fwd.append((a_inv, a_inv @ abcd.b))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus: int) -> int:
        try:
            return self._index[bus]
        except KeyError:
            raise ValidationError(f"unknown bus {bus}") from None

    def slack_phasors(self) -> np.ndarray:
        """Slack-bus voltage phasors, one per phase (balanced set)."""
        if self.n_phase == 1:
            return np.array([self.slack_v_pu + 0j])
        ang = -2.0 * math.pi / 3.0
        return self.slack_v_pu * np.array(
            [1.0, cmath.exp(1j * ang), cmath.exp(-1j * ang)]
        )


@dataclass
class PowerFlowResult:
    """Solved operating point.

    v: complex bus voltages (n_bus, n_phase) p.u., rows in `buses` order;
    i: complex series branch currents (n_branch, n_phase) in amperes, rows
    in `edge_order`; p_loss_kw: total active loss.
    """

    buses: list[int]
    edges: list[tuple[int, int]]
    v: np.ndarray
    i: np.ndarray
    p_loss_kw: float
    converged: bool
    iterations: int
    _index: dict[int, int] = field(repr=False, default_factory=dict)

    def v_mag(self, bus: int) -> float:
        """Mean phase-voltage magnitude at a bus (the magnitude itself when balanced)."""
        return float(np.mean(np.abs(self.v[self._index[bus]])))

    def v_phases(self, bus: int) -> np.ndarray:
        return self.v[self._index[bus]]

    def min_voltage(self) -> tuple[float, int]:
        """Smallest phase-voltage magnitude and the bus where it occurs."""
        mags = np.abs(self.v).min(axis=1)
        k = int(np.argmin(mags))
        return float(mags[k]), self.buses[k]


def _loads_to_pu(net: DistributionNetwork, loads: dict[int, BusLoad] | None) -> np.ndarray:
    s = np.zeros((net.n_bus, net.n_phase), dtype=complex)
    if not loads:
        return s
    for bus, load in loads.items():
        idx = net.bus_index(bus)
        p = np.asarray(load.p_kw, dtype=float)
        q = np.asarray(load.q_kvar, dtype=float)
        if p.ndim == 0:
            p = np.full(net.n_phase, float(p) / net.n_phase)
            q = np.full(net.n_phase, float(q) / net.n_phase)
        elif p.shape != (net.n_phase,):
            raise ValidationError(
                f"load at bus {bus} has {p.shape[0]} phases, network has {net.n_phase}"
            )
        s[idx] = (p + 1j * q) / net.s_base_phase_kw
    return s


def run_power_flow(
    net: DistributionNetwork,
    loads: dict[int, BusLoad] | None = None,
    tol: float = SWEEP_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> PowerFlowResult:
    """Solve the radial load flow by forward/backward sweeps.

    Raises NotConverged when the sweep cap is exceeded or a voltage
    collapses, which signals infeasible/overloaded loading.
    """
    s_pu = _loads_to_pu(net, loads)
    if net.n_phase == 1:
        return _sweep_balanced(net, s_pu[:, 0], tol, max_sweeps)
    return _sweep_polyphase(net, s_pu, tol, max_sweeps)


def _result(net, v, i_series_pu, iterations) -> PowerFlowResult:
    loss = 0.0
    i_amps = np.empty_like(i_series_pu)
    for k, iz in enumerate(i_series_pu):
        dv = net._z_pu[k] @ iz
        loss += float(np.real(np.sum(dv * np.conj(iz))))
        i_amps[k] = iz * net.i_base_a
    edges = [(p, c) for p, c, _ in net.edge_order]
    return PowerFlowResult(
        buses=list(net.buses),
        edges=edges,
        v=v,
        i=i_amps,
        p_loss_kw=loss * net.s_base_phase_kw,
        converged=True,
        iterations=iterations,
        _index=dict(net._index),
    )


def _sweep_balanced(net, s_pu, tol, max_sweeps) -> PowerFlowResult:
    """Scalar fast path for single-phase (balanced) networks."""
    nb = net.n_bus
    slack_v = complex(net.slack_phasors()[0])
    parents = [net._index[p] for p, _, _ in net.edge_order]
    children = [net._index[c] for _, c, _ in net.edge_order]
    a = [complex(m.a[0, 0]) for m in net._abcd_pu]
    c_ = [complex(m.c[0, 0]) for m in net._abcd_pu]
    d = [complex(m.d[0, 0]) for m in net._abcd_pu]
    a_inv = [complex(m[0][0, 0]) for m in net._fwd]
    ab = [complex(m[1][0, 0]) for m in net._fwd]
    y = [complex(m[0, 0]) for m in net._y_pu]
    s = [complex(x) for x in s_pu]

    v = [slack_v] * nb
    n_edge = len(parents)
    i_down = [0j] * n_edge
    for it in range(1, max_sweeps + 1):
        acc = [(s[k] / v[k]).conjugate() if s[k] != 0 else 0j for k in range(nb)]
        for e in range(n_edge - 1, -1, -1):
            m = children[e]
            im = acc[m]
            i_down[e] = im
            acc[parents[e]] += c_[e] * v[m] + d[e] * im
        mismatch = 0.0
        for e in range(n_edge):
            vm = a_inv[e] * v[parents[e]] - ab[e] * i_down[e]
            dvm = abs(vm - v[children[e]])
            if dvm > mismatch:
                mismatch = dvm
            v[children[e]] = vm
        if any(abs(vk) < COLLAPSE_V or vk != vk for vk in v):
            raise NotConverged("voltage collapse during sweep", iterations=it)
        if mismatch <= tol:
            i_series = np.array(
                [[i_down[e] + 0.5 * y[e] * v[children[e]]] for e in range(n_edge)]
            )
            return _result(net, np.array(v, dtype=complex).reshape(nb, 1), i_series, it)
    raise NotConverged(
        f"sweep did not converge in {max_sweeps} iterations", iterations=max_sweeps
    )


def _sweep_polyphase(net, s_pu, tol, max_sweeps) -> PowerFlowResult:
    nb, nph = net.n_bus, net.n_phase
    parents = [net._index[p] for p, _, _ in net.edge_order]
    children = [net._index[c] for _, c, _ in net.edge_order]
    n_edge = len(parents)

    v = np.tile(net.slack_phasors(), (nb, 1))
    i_down = np.zeros((n_edge, nph), dtype=complex)
    for it in range(1, max_sweeps + 1):
        acc = np.conj(s_pu / v)
        for e in range(n_edge - 1, -1, -1):
            m = children[e]
            i_down[e] = acc[m]
            abcd = net._abcd_pu[e]
            acc[parents[e]] += abcd.c @ v[m] + abcd.d @ i_down[e]
        mismatch = 0.0
        for e in range(n_edge):
            a_inv, ab = net._fwd[e]
            vm = a_inv @ v[parents[e]] - ab @ i_down[e]
            mismatch = max(mismatch, float(np.max(np.abs(vm - v[children[e]]))))
            v[children[e]] = vm
        if np.any(np.abs(v) < COLLAPSE_V) or np.any(np.isnan(v)):
            raise NotConverged("voltage collapse during sweep", iterations=it)
        if mismatch <= tol:
            i_series = np.array(
                [i_down[e] + 0.5 * (net._y_pu[e] @ v[children[e]]) for e in range(n_edge)]
            )
            return _result(net, v, i_series, it)
    raise NotConverged(
        f"sweep did not converge in {max_sweeps} iterations", iterations=max_sweeps
    )
