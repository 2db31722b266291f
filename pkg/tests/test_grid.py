"""Line-model, sweep power-flow and loadability tests.

Expected IEEE-33 values are checked live against the Gauss-Seidel oracle;
small networks are checked against hand iteration of the voltage-drop
fixed point.
"""

import math
import time

import numpy as np
import pytest

from evplan.errors import NotConverged, NotRadial
from evplan.grid import (
    Branch,
    BusLoad,
    DistributionNetwork,
    abcd_matrices,
    line_abcd,
    max_loadability,
    run_power_flow,
)
from oracles import gauss_seidel_flow


def three_phase_branch(z_diag, y_diag=0.0, mutual=0.0):
    z = np.full((3, 3), mutual, dtype=complex) + np.eye(3) * (z_diag - mutual)
    y = np.eye(3, dtype=complex) * y_diag
    return Branch(1, 2, z_abc=z, y_abc=y)


class TestLineAbcd:
    def test_shunt_free_degenerate(self):
        """Y = 0 collapses the model to A = D = I, B = Z, C = 0."""
        br = three_phase_branch(0.3 + 0.6j)
        m = line_abcd(br)
        assert np.allclose(m.a, np.eye(3))
        assert np.allclose(m.d, np.eye(3))
        assert np.allclose(m.b, br.z_abc)
        assert np.allclose(m.c, 0.0)

    def test_zero_impedance(self):
        """Z = 0 forces A = I, B = 0, C = Y."""
        y = np.eye(3) * 1e-5j
        br = Branch(1, 2, z_abc=np.zeros((3, 3)), y_abc=y)
        m = line_abcd(br)
        assert np.allclose(m.a, np.eye(3))
        assert np.allclose(m.b, 0.0)
        assert np.allclose(m.c, y)

    def test_against_direct_matrix_arithmetic(self):
        """Diagonal Z/Y case verified with independently written products."""
        z = np.eye(3) * (0.1 + 0.2j)
        y = np.eye(3) * 1e-6j
        m = abcd_matrices(z, y)
        u = np.eye(3)
        assert np.allclose(m.a, u + 0.5 * z @ y, rtol=0, atol=1e-16)
        assert np.allclose(m.d, u + 0.5 * z @ y, rtol=0, atol=1e-16)
        assert np.allclose(m.b, z)
        assert np.allclose(m.c, y + 0.25 * y @ z @ y, rtol=0, atol=1e-16)

    def test_a_equals_d_always(self):
        z = np.array([[0.2 + 0.4j, 0.05j, 0.02j],
                      [0.05j, 0.21 + 0.41j, 0.04j],
                      [0.02j, 0.04j, 0.19 + 0.39j]])
        y = np.eye(3) * 2e-6j
        m = abcd_matrices(z, y)
        assert np.allclose(m.a, m.d)


class TestPowerFlow:
    def test_zero_load_flat_voltage(self, ieee33):
        net, _ = ieee33
        res = run_power_flow(net, {})
        assert res.p_loss_kw == 0.0
        assert np.allclose(np.abs(res.v), net.slack_v_pu)

    def test_ieee33_matches_gauss_seidel_oracle(
        self, ieee33, ieee33_branch_tuples, ieee33_load_tuples
    ):
        net, loads = ieee33
        t0 = time.perf_counter()
        res = run_power_flow(net, loads)
        assert time.perf_counter() - t0 < 1.0
        v_oracle, loss_oracle = gauss_seidel_flow(
            ieee33_branch_tuples, ieee33_load_tuples
        )
        assert abs(res.v_mag(18) - abs(v_oracle[18])) < 1e-3
        assert abs(res.p_loss_kw - loss_oracle) / loss_oracle < 0.01
        vmin, bus = res.min_voltage()
        assert bus == 18
        oracle_min_bus = min(v_oracle, key=lambda b: abs(v_oracle[b]))
        assert oracle_min_bus == 18

    def test_two_bus_fixed_point_hand_iteration(self):
        """Hand-iterate v <- v_s - z * conj(s / v) and compare."""
        z_ohm = 0.5 + 1.0j
        net = DistributionNetwork(
            [Branch(1, 2, z_abc=z_ohm)], slack=1, v_base_kv=12.66, s_base_mva=10.0
        )
        loads = {2: BusLoad(500.0, 250.0)}
        res = run_power_flow(net, loads, tol=1e-12)
        z_pu = z_ohm / net.z_base_ohm
        s_pu = (500.0 + 250.0j) / 10_000.0
        v = 1.0 + 0j
        for _ in range(200):
            v = 1.0 - z_pu * np.conj(s_pu / v)
        assert abs(res.v_phases(2)[0] - v) < 1e-10

    def test_not_radial_cycle(self):
        branches = [
            Branch(1, 2, 0.1 + 0.1j),
            Branch(2, 3, 0.1 + 0.1j),
            Branch(3, 1, 0.1 + 0.1j),
        ]
        with pytest.raises(NotRadial):
            DistributionNetwork(branches)

    def test_not_radial_disconnected(self):
        branches = [
            Branch(1, 2, 0.1 + 0.1j),
            Branch(3, 4, 0.1 + 0.1j),
            Branch(4, 5, 0.1 + 0.1j),
        ]
        with pytest.raises(NotRadial) as err:
            DistributionNetwork(branches, slack=1)
        assert "3" in str(err.value)

    def test_overload_raises_not_converged(self):
        net = DistributionNetwork([Branch(1, 2, 1.0 + 2.0j)])
        with pytest.raises(NotConverged):
            run_power_flow(net, {2: BusLoad(80_000.0, 40_000.0)})

    def test_loss_non_negative_on_random_loadings(self, ieee33):
        net, _ = ieee33
        rng = np.random.default_rng(7)
        for _ in range(10):
            loads = {
                int(b): BusLoad(float(rng.uniform(0, 300)), float(rng.uniform(0, 150)))
                for b in rng.choice(net.buses[1:], size=8, replace=False)
            }
            res = run_power_flow(net, loads)
            assert res.p_loss_kw >= 0.0

    def test_scaling_loads_to_zero_reproduces_flat_case(self, ieee33):
        net, loads = ieee33
        scaled = {b: BusLoad(0.0 * l.p_kw, 0.0 * l.q_kvar) for b, l in loads.items()}
        res = run_power_flow(net, scaled)
        assert res.p_loss_kw == 0.0
        assert np.allclose(np.abs(res.v), 1.0)

    def test_balanced_three_phase_symmetry(self):
        """Equal per-phase loads and circulant Z keep the phases balanced."""
        branches = [
            Branch(
                1,
                2,
                z_abc=np.full((3, 3), 0.05 + 0.1j) + np.eye(3) * (0.3 + 0.6j),
            ),
            Branch(
                2,
                3,
                z_abc=np.full((3, 3), 0.04 + 0.08j) + np.eye(3) * (0.25 + 0.5j),
            ),
        ]
        net = DistributionNetwork(branches)
        loads = {
            2: BusLoad(np.array([100.0] * 3), np.array([50.0] * 3)),
            3: BusLoad(np.array([150.0] * 3), np.array([70.0] * 3)),
        }
        res = run_power_flow(net, loads)
        for bus in (2, 3):
            mags = np.abs(res.v_phases(bus))
            assert np.ptp(mags) < 1e-9

    def test_three_phase_matches_balanced_equivalent(self, ieee33):
        """A balanced 3-phase model of IEEE-33 reproduces the 1-phase solution."""
        net1, loads1 = ieee33
        branches3 = [
            Branch(
                br.from_bus,
                br.to_bus,
                z_abc=np.eye(3) * complex(br.z_abc),
                ampacity=br.ampacity,
            )
            for br in net1.branches
        ]
        net3 = DistributionNetwork(branches3)
        loads3 = {
            b: BusLoad(np.full(3, l.p_kw / 3.0), np.full(3, l.q_kvar / 3.0))
            for b, l in loads1.items()
        }
        res1 = run_power_flow(net1, loads1)
        res3 = run_power_flow(net3, loads3)
        assert abs(res1.v_mag(18) - res3.v_mag(18)) < 1e-6
        assert abs(res1.p_loss_kw - res3.p_loss_kw) < 0.01


class TestMaxLoadability:
    def test_aligned_angles(self):
        """omega = phi makes the cosine unity: 1 / (4 * 0.1) = 2.5 p.u."""
        assert max_loadability(1.0, 0.1, 0.5, 0.5) == pytest.approx(2.5)

    def test_orthogonal_angles_unbounded(self):
        assert max_loadability(1.0, 0.1, math.pi / 2, -math.pi / 2) == math.inf

    def test_zero_impedance_sentinel(self):
        assert max_loadability(1.0, 0.0, 0.3, 0.1) == math.inf

    def test_scalar_plug_in(self):
        v, z = 1.0, 0.05
        omega, phi = math.atan(2.0), math.atan(0.5)
        expected = v**2 / (4.0 * z * math.cos((omega - phi) / 2.0) ** 2)
        assert max_loadability(v, z, omega, phi) == pytest.approx(expected, rel=1e-12)
