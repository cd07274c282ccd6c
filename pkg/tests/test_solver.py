import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcregion import gp
from spcregion.channel import ChannelConfig, PowerPartition, RateVector
from spcregion.oracle import GridSpec, grid_search
from spcregion.rates import all_bounds, r0_max
from spcregion.regions import RegionId, feasible
from spcregion.solver import (
    KKT_TOL,
    Status,
    barrier_maximize,
    constraint_report,
    relaxed_margin,
    solve_region2_relaxed,
    solve_relaxed,
    solve_restricted,
)

from .conftest import channels

ASYM = ChannelConfig(6.0, 14.0, (0.5, 1.5, 3.0), (0.8, 1.0, 2.5))

# Reference channel, w = (3, 2, 1), R0 = 0.5; value confirmed by the grid oracle.
FROZEN_REF_321 = 4.060936880340776


def test_reference_instance(ref):
    res = solve_relaxed(ref, 0.5, (3, 2, 1))
    assert res.status == Status.CONVERGED
    assert res.kkt_residual <= KKT_TOL
    assert res.objective == pytest.approx(FROZEN_REF_321, rel=1e-8)
    out = grid_search(ref, 0.5, (3, 2, 1))
    assert abs(out.objective - res.objective) <= 1e-3 * res.objective


def test_first_user_weight_only(ref):
    res = solve_relaxed(ref, 0.0, (1, 0, 0))
    assert res.status == Status.CONVERGED
    a, ap, app = res.partitions
    cap = min(all_bounds(ref, a)["f01"], all_bounds(ref, ap)["g012"], all_bounds(ref, app)["h0123"])
    assert res.rates.r1 == pytest.approx(cap, abs=1e-7)
    assert res.rates.r2 <= 1e-7 and res.rates.r3 <= 1e-7
    out = grid_search(ref, 0.0, (1, 0, 0))
    assert out.objective == pytest.approx(res.objective, rel=1e-3)


def test_saturated_common_rate(ref):
    res = solve_relaxed(ref, r0_max(ref), (3, 2, 1))
    assert res.status == Status.CONVERGED
    assert res.objective == 0.0
    assert res.rates.private.tolist() == [0.0, 0.0, 0.0]


def test_common_rate_above_cap_is_infeasible(ref):
    res = solve_relaxed(ref, r0_max(ref) + 1e-3, (3, 2, 1))
    assert res.status == Status.INFEASIBLE


def test_converged_points_are_feasible(ref):
    for w in [(3, 2, 1), (1, 3, 2), (1, 2, 3)]:
        res = solve_relaxed(ASYM, 0.4, w)
        assert res.status == Status.CONVERGED
        assert constraint_report(ASYM, res).feasible


@pytest.mark.parametrize("w, active", [
    ((3, 2, 1), {"f01", "f012", "f0123"}),
    ((2, 3, 1), {"g02", "g012", "g0123"}),
])
def test_restricted_active_sets_on_reference(ref, w, active):
    res = solve_restricted(ref, 0.5, w)
    rel = solve_relaxed(ref, 0.5, w)
    assert res.objective <= rel.objective + 1e-9
    assert abs(res.objective - rel.objective) <= 1e-3 * rel.objective
    assert constraint_report(ref, res).active_rate_ids() == active


def test_restricted_certificate(ref):
    res = solve_restricted(ref, 0.5, (3, 2, 1))
    assert res.status == Status.CONVERGED
    assert res.kkt_residual <= KKT_TOL
    assert feasible(RegionId.REGION1, ref, (res.theta, res.rates)).feasible


def test_region2_mirror_symmetry():
    w = np.array([0.2, 0.5, 0.3])
    a = solve_region2_relaxed(ASYM, 0.3, w[::-1])
    b = solve_relaxed(ASYM.mirror(), 0.3, w)
    assert a.objective == pytest.approx(b.objective, rel=1e-7)
    assert a.rates.private[::-1] == pytest.approx(b.rates.private, abs=1e-6)


def test_region2_simple_instances(ref):
    res = solve_region2_relaxed(ref, 0.0, (1, 0, 0))
    assert res.status == Status.CONVERGED and 0.0 < res.objective < np.inf
    res = solve_region2_relaxed(ref, 0.3, (1, 2, 3))
    out = grid_search(ref, 0.3, (1, 2, 3), RegionId.REGION2)
    assert abs(out.objective - res.objective) <= 1e-3 * max(1.0, res.objective)


def test_deterministic(ref):
    a = solve_relaxed(ASYM, 0.25, (1, 3, 2))
    b = solve_relaxed(ASYM, 0.25, (1, 3, 2))
    assert a.objective == b.objective
    assert np.array_equal(a.rates.as_array(), b.rates.as_array())


def test_monotone_in_common_rate():
    top = r0_max(ASYM)
    vals = [solve_relaxed(ASYM, f * top, (2, 3, 1)).objective for f in np.linspace(0, 1, 6)]
    assert np.all(np.diff(vals) <= 1e-9)


def test_relaxed_margin_sign(ref):
    a = solve_relaxed(ref, 0.5, (2, 3, 1))
    assert abs(relaxed_margin(ref, a.rates, RegionId.RELAXED1)) <= 1e-8
    inside = RateVector.from_private(0.5, 0.5 * a.rates.private)
    assert relaxed_margin(ref, inside, RegionId.RELAXED1) > 0.0
    outside = RateVector.from_private(0.5, 1.5 * a.rates.private)
    assert relaxed_margin(ref, outside, RegionId.RELAXED1) < 0.0


def test_barrier_moves_toward_optimum(ref):
    pr = gp.build_problem(ref, 0.2, (1, 1, 1))
    q = PowerPartition(1 / 3, 1 / 3, 1 / 3, 1 / 3)
    z0 = gp.from_partitions(ref, q, q, q, RateVector(0.2, 0.01, 0.01, 0.01)).vector()
    out = barrier_maximize(pr, pr.objective_vector, z0)
    assert np.all(pr.values(out.z) <= 1e-9)
    assert pr.objective_vector @ out.z > pr.objective_vector @ z0


@settings(max_examples=12, deadline=None)
@given(channels(), st.floats(0.0, 0.95), st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3, unique=True))
def test_dominance_and_certificate(c, frac, w):
    R0 = frac * r0_max(c)
    rel = solve_relaxed(c, R0, w)
    assert rel.status == Status.CONVERGED
    assert rel.kkt_residual <= KKT_TOL
    res = solve_restricted(c, R0, w, relaxed=rel, spec=GridSpec(n=5, refine_rounds=20))
    assert res.objective <= rel.objective + 1e-9 * max(1.0, rel.objective)
