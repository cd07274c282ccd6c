import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from spcregion.channel import PowerPartition
from spcregion.errors import InfeasibleR0
from spcregion.oracle import (
    GridSpec,
    grid_search,
    lp_batch,
    max_rates_given_partition,
    project_simplex,
    simplex_grid,
)
from spcregion.rates import CONSTRAINT_IDS, RATE_COEFFS, all_bounds, r0_max
from spcregion.regions import REGION_IDS, RegionId
from spcregion.solver import solve_relaxed

from .conftest import channels, partitions

ZERO = PowerPartition()


def _linprog_value(c, theta, R0, w, region):
    b = all_bounds(c, theta)
    ids = REGION_IDS[region]
    A = np.array([RATE_COEFFS[k] for k in ids], dtype=float)
    rhs = np.array([b[k] - R0 for k in ids])
    keep = A.any(axis=1)
    res = linprog(-np.asarray(w, float), A_ub=A[keep], b_ub=rhs[keep], bounds=[(0, None)] * 3, method="highs")
    return -res.fun


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(n=2)
    with pytest.raises(ValueError):
        GridSpec(refine_shrink=1.0)


def test_first_user_only_at_zero_partition(ref):
    b = all_bounds(ref, ZERO)
    R, val = max_rates_given_partition(ref, ZERO, 0.0, (1, 0, 0))
    assert R.r1 == pytest.approx(min(b["f01"], b["g012"], b["h0123"]), abs=1e-12)
    assert R.r2 == 0.0 and R.r3 == 0.0
    assert val == pytest.approx(R.r1)


def test_third_user_only_at_zero_partition(ref):
    # With no private power every sum bound collapses to its level-0 value,
    # so R3 is capped by the smallest bound that contains it.
    b = all_bounds(ref, ZERO)
    R, val = max_rates_given_partition(ref, ZERO, 0.0, (0, 0, 1))
    expect = min(b[k] for k in REGION_IDS[RegionId.REGION1] if RATE_COEFFS[k][2])
    assert R.r3 == pytest.approx(expect, abs=1e-12)
    assert val == pytest.approx(np.log(6.0), abs=1e-12)


def test_infeasible_common_rate(ref):
    full = PowerPartition(0.0, 1.0, 1.0, 0.0)
    with pytest.raises(InfeasibleR0):
        max_rates_given_partition(ref, full, 0.1, (1, 1, 1))


def test_simplex_grid_shape():
    g = simplex_grid(3)
    assert g.shape == (36, 4)
    assert np.all(g[:, 0] + g[:, 1] <= 1 + 1e-12)


def test_project_simplex():
    t = project_simplex(np.array([1.5, 0.5, -0.2, 0.3]))
    assert t[0] + t[1] == pytest.approx(1.0) and t[2] == 0.0


def test_near_saturation_gives_small_partition(ref):
    out = grid_search(ref, 0.95 * r0_max(ref), (1, 0, 0), spec=GridSpec(n=3))
    assert np.linalg.norm(out.theta.as_array()) < 0.05
    _, at_zero = max_rates_given_partition(ref, ZERO, 0.95 * r0_max(ref), (1, 0, 0))
    assert out.objective >= at_zero


def test_history_nondecreasing(ref):
    out = grid_search(ref, 0.3, (3, 2, 1), spec=GridSpec(n=5))
    h = np.array(out.history)
    assert np.all(np.diff(h) >= 0.0)
    assert h[-1] == pytest.approx(out.objective, abs=1e-12)


def test_reference_matches_relaxed(ref):
    out = grid_search(ref, 0.5, (3, 2, 1))
    rel = solve_relaxed(ref, 0.5, (3, 2, 1))
    assert abs(out.objective - rel.objective) <= 1e-3 * max(1.0, rel.objective)
    assert out.objective <= rel.objective + 1e-9


def test_deterministic(ref):
    a = grid_search(ref, 0.4, (1, 3, 2), spec=GridSpec(n=5))
    b = grid_search(ref, 0.4, (1, 3, 2), spec=GridSpec(n=5))
    assert np.array_equal(a.theta.as_array(), b.theta.as_array()) and a.objective == b.objective


@settings(max_examples=80)
@given(channels(), partitions(), st.floats(0.0, 0.9), st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3),
       st.sampled_from([RegionId.REGION1, RegionId.REGION2, RegionId.SPC]))
def test_vertex_enumeration_matches_linprog(c, theta, frac, w, region):
    if sum(w) == 0.0:
        w = [1.0, 1.0, 1.0]
    b = all_bounds(c, theta)
    R0 = frac * min(b["f0"], b["g0"], b["h0"])
    R, val = max_rates_given_partition(c, theta, R0, w, region)
    ref_val = _linprog_value(c, theta, R0, w, region)
    assert val == pytest.approx(ref_val, abs=1e-9 * max(1.0, abs(ref_val)))
    # Returned vertex is feasible.
    for k in REGION_IDS[region]:
        assert R0 + np.dot(RATE_COEFFS[k], R.private) <= b[k] + 1e-9
    assert np.all(R.private >= 0.0)


@settings(max_examples=10, deadline=None)
@given(channels(), st.floats(0.0, 0.9), st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_oracle_below_relaxed(c, frac, w):
    R0 = frac * r0_max(c)
    out = grid_search(c, R0, w, spec=GridSpec(n=5, refine_rounds=20))
    rel = solve_relaxed(c, R0, w)
    assert out.objective <= rel.objective + 1e-9 * max(1.0, rel.objective)


def test_lp_batch_marks_undecodable_rows(ref):
    rows = np.array([all_bounds(ref, ZERO)[k] for k in CONSTRAINT_IDS])[None, :]
    mask = np.ones(len(CONSTRAINT_IDS), dtype=bool)
    _, val = lp_batch(rows, 10.0, np.ones(3), mask)
    assert val[0] == -np.inf
