"""Consensus-coordination tests: updates, projections, residuals, full runs."""

import math

import numpy as np
import pytest

from evplan.admm import (
    demand_rates,
    PlanState,
    project_consensus,
    residuals,
    run,
    StoppingRule,
    update_capacity,
    update_dual,
    update_siting,
)
from evplan.errors import Infeasible, ValidationError
from evplan.siting import solve_siting


@pytest.fixture(scope="module")
def instance(bundle):
    """Bundled coupled case with the fixed station at transport node 5."""
    from evplan.assessment import hosting_capacity

    hc = hosting_capacity(
        bundle.grid, bundle.loads, 19, bundle.assessment_limits(), ev_pf=0.95
    ).hc_kw
    return bundle.admm_instance(frozenset({5}), {19: hc})


def fresh_state(inst):
    n = len(inst.siting.dm.nodes)
    return PlanState(
        nodes=inst.siting.dm.nodes,
        x=np.zeros(n, dtype=int),
        z=np.zeros(n),
        w=np.zeros(n),
        u=np.zeros(n),
        rho=inst.rho,
    )


class TestProjection:
    def test_upper_clamp(self):
        w = project_consensus(np.array([25.0]), np.array([0.0]), np.array([1]), 20.0)
        assert w[0] == 20.0

    def test_closed_node_zero(self):
        w = project_consensus(np.array([15.0]), np.array([3.0]), np.array([0]), 20.0)
        assert w[0] == 0.0

    def test_lower_clamp(self):
        w = project_consensus(np.array([-3.0]), np.array([0.0]), np.array([1]), 20.0)
        assert w[0] == 0.0


class TestDual:
    def test_consensus_leaves_dual(self):
        u = update_dual(np.array([1.5]), np.array([7.0]), np.array([7.0]), 1.0)
        assert u[0] == 1.5

    def test_arithmetic(self):
        u = update_dual(np.array([0.0]), np.array([5.0]), np.array([3.0]), 1.0)
        assert u[0] == 2.0

    def test_sign(self):
        u = update_dual(np.array([0.0]), np.array([3.0]), np.array([5.0]), 1.0)
        assert u[0] == -2.0


class TestResiduals:
    def test_fixed_point_zero(self, instance):
        state = fresh_state(instance)
        state.z = np.ones(25)
        state.w = np.ones(25)
        state.w_prev = np.ones(25)
        assert residuals(state) == (0.0, 0.0)

    def test_dual_zero_primal_positive(self, instance):
        state = fresh_state(instance)
        state.z = np.full(25, 2.0)
        state.w = np.ones(25)
        state.w_prev = np.ones(25)
        r_prim, r_dual = residuals(state)
        assert r_dual == 0.0
        assert r_prim == pytest.approx(np.sqrt(25.0))

    def test_rho_scales_dual(self, instance):
        state = fresh_state(instance)
        state.w = np.ones(25)
        state.w_prev = np.zeros(25)
        state.rho = 1.0
        _, rd1 = residuals(state)
        state.rho = 2.0
        _, rd2 = residuals(state)
        assert rd2 == pytest.approx(2.0 * rd1)


class TestSitingUpdate:
    def test_zero_consensus_gives_plain_optimum(self, instance):
        state = fresh_state(instance)
        plain = solve_siting(instance.siting)
        coordinated = update_siting(state, instance)
        assert coordinated.open_nodes(0) == plain.open_nodes(0)
        assert coordinated.objective == pytest.approx(plain.objective)

    def test_positive_consensus_forces_open(self, instance):
        state = fresh_state(instance)
        plain = solve_siting(instance.siting)
        closed = [n for n in instance.siting.dm.nodes if n not in plain.open_nodes(0)]
        forced = closed[0]
        state.w[list(instance.siting.dm.nodes).index(forced)] = 50.0
        coordinated = update_siting(state, instance)
        assert forced in coordinated.open_nodes(0)

    def test_too_many_forced_infeasible(self, instance):
        state = fresh_state(instance)
        state.w[:] = 10.0
        with pytest.raises(Infeasible):
            update_siting(state, instance)


class TestCapacityUpdate:
    def test_closed_nodes_zero(self, instance):
        state = fresh_state(instance)
        decision = solve_siting(instance.siting)
        z, _, _ = update_capacity(state, instance, decision)
        open_idx = {list(instance.siting.dm.nodes).index(n) for n in decision.open_nodes(0)}
        for j in range(len(z)):
            if j not in open_idx:
                assert z[j] == 0.0

    def test_proportional_scaling(self, instance):
        import dataclasses

        inst = dataclasses.replace(instance)
        decision = solve_siting(inst.siting)
        state = fresh_state(inst)
        z_free, _, _ = update_capacity(state, inst, decision)
        inst_capped = dataclasses.replace(instance, iota_tot_kw=z_free.sum() / 1.5)
        z_capped, _, _ = update_capacity(state, inst_capped, decision)
        assert np.allclose(z_capped, z_free * (2.0 / 3.0))

    def test_mcs_chargers_from_queueing(self, instance):
        state = fresh_state(instance)
        decision = solve_siting(instance.siting)
        _, mcs_sites, _ = update_capacity(state, instance, decision)
        lam = demand_rates(decision, instance.siting.xi)
        from evplan.queueing import min_servers

        for site in mcs_sites:
            j = list(instance.siting.dm.nodes).index(site.node)
            assert site.chargers == min_servers(lam[j], instance.mu, instance.tw_limit)


class TestRun:
    def test_bundled_case_converges_quickly(self, instance):
        state, converged = run(instance, StoppingRule(max_iter=50))
        assert converged
        assert state.k <= 10
        r_prim, r_dual = state.history[-1]
        assert r_prim <= 1e-4 and r_dual <= 1e-4

    def test_projection_invariant_every_iteration(self, instance):
        state, _ = run(instance, StoppingRule(max_iter=50))
        cap = instance.iota_max_kw
        for snap in state.trace:
            w, x = snap["w"], snap["x"]
            assert np.all(w >= 0.0)
            assert np.all(w <= cap * x + 1e-12)

    def test_total_capacity_cap_respected(self, bundle, instance):
        import dataclasses

        inst = dataclasses.replace(instance, iota_tot_kw=1500.0)
        state, _ = run(inst, StoppingRule(max_iter=50))
        for snap in state.trace:
            assert snap["z"].sum() <= 1500.0 + 1e-9

    def test_converged_state_consistent(self, instance):
        state, converged = run(instance)
        assert converged
        assert np.linalg.norm(state.z - state.w) <= 1e-4
        open_idx = state.x == 1
        assert np.all(state.z[~open_idx] <= 1e-4)

    def test_history_length_and_recomputability(self, instance):
        state, _ = run(instance)
        assert len(state.history) == state.k
        for snap, (rp, rd) in zip(state.trace, state.history):
            assert snap["r_prim"] == rp and snap["r_dual"] == rd

    def test_single_fixed_node_two_iterations(self, bundle):
        """One forced station, everything else closed: w tracks z directly."""
        from evplan.assessment import hosting_capacity
        import dataclasses

        hc = hosting_capacity(
            bundle.grid, bundle.loads, 19, bundle.assessment_limits(), ev_pf=0.95
        ).hc_kw
        siting = bundle.siting_instance(frozenset({5}))
        siting = dataclasses.replace(
            siting,
            psi=1,
            varsigma=1.0,
            d_ev=float(bundle.dm.d.max()) * 2.0,
            d_mcs_bounds=(0.0, math.inf),
        )
        inst = bundle.admm_instance(frozenset({5}), {19: hc})
        inst = dataclasses.replace(inst, siting=siting)
        state, converged = run(inst)
        assert converged and state.k <= 2

    def test_stopping_rule_validation(self):
        with pytest.raises(ValidationError):
            StoppingRule(eps_prim=0.0)
        with pytest.raises(ValidationError):
            StoppingRule(max_iter=0)

    def test_multi_period_rejected(self, bundle):
        import dataclasses

        siting = bundle.siting_instance(frozenset({5}))
        siting = dataclasses.replace(
            siting,
            xi=np.ones((25, 2)),
            v_avg=np.array([40.0, 40.0]),
        )
        with pytest.raises(ValidationError):
            dataclasses.replace(
                bundle.admm_instance(frozenset({5}), {19: 1000.0}), siting=siting
            )
