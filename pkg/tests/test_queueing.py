"""M/M/c metrics, charger-count search and fleet-cost tests.

The analytic formulas are cross-checked against the event-driven
simulation oracle; identities hold to machine precision by construction.
"""

import math

import pytest

from evplan.errors import (
    BudgetExceeded,
    CapacityBoundViolated,
    NoFeasibleCount,
    Unstable,
    ValidationError,
)
from evplan.queueing import (
    capacity_from_chargers,
    erlang_metrics,
    mcs_cost,
    McsSiteSizing,
    min_servers,
    QueueInput,
    size_mcs_site,
)
from oracles import mmc_simulate


class TestErlang:
    def test_two_charger_reference_point(self):
        """lambda=3, mu=4, c=2: p0 = 1/2.2, lq = 0.27/2.2, tw = lq/3."""
        m = erlang_metrics(QueueInput(3.0, 4.0, 2))
        assert m.rho == pytest.approx(0.375)
        assert m.p0 == pytest.approx(1.0 / 2.2, rel=1e-12)
        assert m.lq == pytest.approx(0.27 / 2.2, rel=1e-12)
        assert m.tw == pytest.approx(0.27 / 2.2 / 3.0, rel=1e-12)

    def test_reference_point_against_simulation(self):
        p0, lq, tw = mmc_simulate(3.0, 4.0, 2, n_arrivals=200_000, seed=31)
        m = erlang_metrics(QueueInput(3.0, 4.0, 2))
        assert abs(p0 - m.p0) / m.p0 < 0.02
        assert abs(lq - m.lq) / m.lq < 0.05
        assert abs(tw - m.tw) / m.tw < 0.05

    def test_empty_system(self):
        m = erlang_metrics(QueueInput(0.0, 4.0, 3))
        assert (m.p0, m.lq, m.tw) == (1.0, 0.0, 0.0)

    def test_single_server_reduces_to_mm1(self):
        """c=1: lq = rho^2/(1-rho); lambda=3, mu=4 gives 2.25."""
        m = erlang_metrics(QueueInput(3.0, 4.0, 1))
        assert m.lq == pytest.approx(2.25, rel=1e-12)
        assert m.p0 == pytest.approx(0.25, rel=1e-12)

    def test_littles_law_identities_exact(self):
        for lam, mu, c in ((3, 4, 2), (10, 4, 4), (1.7, 2.3, 5), (35, 4, 12)):
            m = erlang_metrics(QueueInput(lam, mu, c))
            assert m.ls - m.lq == pytest.approx(lam / mu, abs=1e-12)
            assert m.tw * lam == pytest.approx(m.lq, abs=1e-12)

    def test_monotone_in_arrival_rate(self):
        mu, c = 4.0, 3
        lams = [1.0, 3.0, 6.0, 9.0, 11.0]
        metrics = [erlang_metrics(QueueInput(lam, mu, c)) for lam in lams]
        for a, b in zip(metrics, metrics[1:]):
            assert b.p0 < a.p0
            assert b.lq > a.lq

    def test_large_charger_count_stays_finite(self):
        m = erlang_metrics(QueueInput(600.0, 4.0, 180))
        assert math.isfinite(m.p0) and math.isfinite(m.lq)

    def test_unstable_raises(self):
        with pytest.raises(Unstable):
            erlang_metrics(QueueInput(8.0, 4.0, 2))

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            QueueInput(-1.0, 4.0, 1)
        with pytest.raises(ValidationError):
            QueueInput(1.0, 0.0, 1)
        with pytest.raises(ValidationError):
            QueueInput(1.0, 4.0, 0)


class TestMinServers:
    def test_reference_wait_limit(self):
        """c=1 waits 0.75 h; c=2 waits 0.041 h <= 1/6 h."""
        assert min_servers(3.0, 4.0, 1.0 / 6.0) == 2

    def test_zero_demand_single_charger(self):
        assert min_servers(0.0, 4.0, 1.0 / 6.0) == 1

    def test_infinite_limit_stability_only(self):
        assert min_servers(9.0, 4.0, math.inf) == 3  # floor(9/4) + 1

    def test_tightness(self):
        """c-1 violates the limit or stability; c satisfies both."""
        for lam in (3.0, 7.5, 14.0, 26.0):
            c = min_servers(lam, 4.0, 1.0 / 6.0)
            assert erlang_metrics(QueueInput(lam, 4.0, c)).tw <= 1.0 / 6.0
            if c > 1:
                if lam / ((c - 1) * 4.0) < 1.0:
                    assert erlang_metrics(QueueInput(lam, 4.0, c - 1)).tw > 1.0 / 6.0

    def test_no_feasible_count(self):
        with pytest.raises(NoFeasibleCount):
            min_servers(100.0, 4.0, 1.0 / 6.0, c_max=20)


class TestFleetCost:
    def test_fourteen_unit_fleet_cost(self):
        """14 trucks at 0.9 $/h cost 12.6 $/h to operate."""
        site = McsSiteSizing(
            node=16,
            lam=40.0,
            chargers=53,
            n_mcs=14,
            capacity_kw=5300.0,
            metrics=erlang_metrics(QueueInput(40.0, 4.0, 53)),
        )
        result = mcs_cost([site], c_mo_unit=0.9, c_tc=8.15)
        assert result.operation_cost_per_h == pytest.approx(12.6, rel=1e-12)

    def test_zero_sites_zero_cost(self):
        result = mcs_cost([], c_mo_unit=0.9, c_tc=8.15)
        assert result.operation_cost_per_h == 0.0
        assert result.waiting_cost_per_h == 0.0

    def test_waiting_cost_arithmetic(self):
        """8.15 * 3 * tw(3,4,2) is close to one dollar per hour."""
        site = size_mcs_site(7, 3.0, 4.0, 1.0 / 6.0)
        result = mcs_cost([site], c_mo_unit=0.9, c_tc=8.15)
        assert result.waiting_cost_per_h == pytest.approx(
            8.15 * 3.0 * erlang_metrics(QueueInput(3.0, 4.0, 2)).tw, rel=1e-12
        )
        assert result.waiting_cost_per_h == pytest.approx(1.0, abs=2e-3)

    def test_budget_exceeded(self):
        site = size_mcs_site(7, 30.0, 4.0, 1.0 / 6.0)
        with pytest.raises(BudgetExceeded):
            mcs_cost([site], c_mo_unit=0.9, c_tc=8.15, budget_per_h=1.0)

    def test_total_is_sum(self):
        sites = [size_mcs_site(n, lam, 4.0, 1.0 / 6.0) for n, lam in ((1, 5.0), (2, 9.0))]
        result = mcs_cost(sites, c_mo_unit=0.9, c_tc=8.15)
        assert result.total_cost_per_h == pytest.approx(
            result.operation_cost_per_h + result.waiting_cost_per_h
        )


class TestCapacity:
    def test_four_chargers_at_rating(self):
        assert capacity_from_chargers(4, 100.0) == 400.0

    def test_zero_chargers(self):
        assert capacity_from_chargers(0, 100.0) == 0.0

    def test_unit_cap_exceeded(self):
        with pytest.raises(CapacityBoundViolated):
            capacity_from_chargers(21, 100.0, max_units=20)

    def test_site_sizing_converts_chargers_to_trucks(self):
        site = size_mcs_site(3, 14.0, 4.0, 1.0 / 6.0, chargers_per_mcs=4)
        assert site.chargers == min_servers(14.0, 4.0, 1.0 / 6.0)
        assert site.n_mcs == math.ceil(site.chargers / 4)
        assert site.capacity_kw == site.chargers * 100.0
