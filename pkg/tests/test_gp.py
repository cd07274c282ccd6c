import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcregion import gp
from spcregion.channel import PowerPartition, RateVector
from spcregion.errors import DomainViolation, R0OutOfRange, SingularAtBoundary
from spcregion.rates import r0_max
from spcregion.regions import RegionId, RelaxedPoint, family_groups, feasible

from .conftest import channels, interior_partitions, partitions

QUARTER = PowerPartition(0.25, 0.25, 0.25, 0.25)


def _point(c, parts, R):
    return gp.from_partitions(c, *parts, R)


def test_problem_size_and_shifts(ref):
    pr = gp.build_problem(ref, 0.3, (3, 2, 1))
    kinds = pr.kinds
    assert kinds.count("rate") == 12
    assert kinds.count("domain") == 18
    assert kinds.count("nonneg") == 3
    base, _, _ = gp._shifts(ref)
    assert np.all(base > 0.0)
    finite = np.isfinite(pr.log_kappa)
    assert np.all(np.exp(pr.log_kappa[finite]) > 0.0)


def test_region_two_swaps_one_bound(ref):
    p1 = gp.build_problem(ref, 0.3, (3, 2, 1), RegionId.RELAXED1)
    p2 = gp.build_problem(ref, 0.3, (3, 2, 1), RegionId.RELAXED2)
    assert "g012" in p1.ids and "g023" not in p1.ids
    assert "g023" in p2.ids and "g012" not in p2.ids


def test_r0_range_checked(ref):
    with pytest.raises(R0OutOfRange):
        gp.build_problem(ref, r0_max(ref) + 1e-6, (1, 1, 1))
    with pytest.raises(R0OutOfRange):
        gp.build_problem(ref, -1e-6, (1, 1, 1))
    with pytest.raises(ValueError):
        gp.build_problem(ref, 0.1, (1, 1, 1), RegionId.REGION1)


def test_level0_slack_at_zero_r0(ref):
    pr = gp.build_problem(ref, 0.0, (1, 1, 1))
    z = _point(ref, (QUARTER,) * 3, RateVector()).vector()
    vals = pr.values(z)
    for cid in ("f0", "g0", "h0"):
        assert vals[pr.index(cid)] < 0.0


def test_lower_bound_log_variables_give_zero_fractions(ref):
    X = gp.forward(ref, QUARTER, QUARTER, QUARTER)
    X[0] = X[1] = math.log(ref.N1[0] / 2)
    X[2] = math.log(ref.N2[0])
    X[3] = math.log(ref.N2[1])
    a, _, _ = gp.to_partitions(X, ref)
    assert a.as_array() == pytest.approx([0.0, 0.0, 0.0, 0.0], abs=1e-12)


def test_to_partitions_rejects_outside_domain(ref):
    X = gp.forward(ref, QUARTER, QUARTER, QUARTER)
    X[0] = math.log(ref.N1[0] / 4)
    with pytest.raises(DomainViolation):
        gp.to_partitions(X, ref)


def test_log_domain_point_shape():
    with pytest.raises(ValueError):
        gp.LogDomainPoint(RateVector(), np.zeros(5))
    z = np.arange(15.0)
    p = gp.LogDomainPoint.from_vector(z, 0.5)
    assert p.R.r0 == 0.5 and np.array_equal(p.vector(), z)


def test_objective_gradient_is_weights(ref):
    pr = gp.build_problem(ref, 0.2, (3, 2, 1))
    out = gp.evaluate(pr, _point(ref, (QUARTER,) * 3, RateVector(0.2, 1, 2, 3)))
    assert out.objective == pytest.approx(3 + 4 + 3)
    assert out.objective_gradient[:3].tolist() == [3.0, 2.0, 1.0]
    assert np.all(out.objective_gradient[3:] == 0.0)


def test_f01_gradient_closed_form(ref):
    pr = gp.build_problem(ref, 0.2, (1, 1, 1))
    z = _point(ref, (QUARTER,) * 3, RateVector(0.2, 0.1, 0.1, 0.1)).vector()
    _, grads, _ = pr.values_and_gradients(z)
    x = z[gp.GROUP_SLICES[0]][3]
    expect = math.exp(x) / (ref.N2[2] - ref.N2[1] + math.exp(x))
    assert grads[pr.index("f01"), 6] == pytest.approx(expect, rel=1e-14)
    assert 0.0 < expect < 1.0


def test_jacobian_reference_entry(ref):
    J = gp.jacobian(ref, QUARTER, QUARTER, QUARTER)
    assert J[3, 3] == pytest.approx(10.0 / (ref.N1[0] / 2 + 2.5), rel=1e-15)


def test_jacobian_rejects_boundary(ref):
    with pytest.raises(SingularAtBoundary):
        gp.jacobian(ref, PowerPartition(0.0, 0.5, 0.2, 0.2), QUARTER, QUARTER)
    with pytest.raises(SingularAtBoundary):
        gp.jacobian(ref, QUARTER, PowerPartition(0.5, 0.5, 0.2, 0.2), QUARTER)


@given(channels(), partitions(), partitions(), partitions())
def test_round_trip(c, a, b, d):
    X = gp.forward(c, a, b, d)
    back = gp.to_partitions(X, c)
    for p, q in zip((a, b, d), back):
        assert np.allclose(p.as_array(), q.as_array(), atol=1e-12)


@given(channels(), interior_partitions(), interior_partitions(), interior_partitions())
def test_jacobian_block_diagonal_nonsingular(c, a, b, d):
    J = gp.jacobian(c, a, b, d)
    mask = np.zeros_like(J, dtype=bool)
    mask[:3, :3] = True
    for s in gp.GROUP_SLICES:
        mask[s, s] = True
    assert np.all(J[~mask] == 0.0)
    assert np.all(np.diag(J) > 0.0)
    assert np.linalg.matrix_rank(J) == 15


@given(channels(), interior_partitions(), interior_partitions(), interior_partitions())
def test_jacobian_matches_finite_differences(c, a, b, d):
    J = gp.jacobian(c, a, b, d)
    base = np.concatenate([a.as_array(), b.as_array(), d.as_array()])
    h = 1e-7

    def X(v):
        return gp.forward(c, *(PowerPartition.from_array(v[4 * k : 4 * k + 4]) for k in range(3)))

    fd = np.empty((12, 12))
    for k in range(12):
        e = np.zeros(12)
        e[k] = h
        fd[:, k] = (X(base + e) - X(base - e)) / (2 * h)
    assert np.allclose(J[3:, 3:], fd, rtol=1e-5, atol=1e-6)


@settings(max_examples=60)
@given(channels(), partitions(), partitions(), partitions(), st.floats(0.0, 1.0), st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3))
def test_signs_agree_with_relaxed_constraints(c, a, b, d, frac, r):
    R0 = frac * r0_max(c)
    R = RateVector.from_private(R0, r)
    pr = gp.build_problem(c, R0, (1, 1, 1))
    vals = pr.values(_point(c, (a, b, d), R).vector())
    rep = feasible(RegionId.RELAXED1, c, RelaxedPoint(a, b, d, R))
    for cid in sum(family_groups(RegionId.RELAXED1), ()):
        slack = rep.slack(cid)
        if abs(slack) > 1e-9:
            assert (vals[pr.index(cid)] <= 0.0) == (slack >= 0.0), cid


@settings(max_examples=40)
@given(channels(), st.integers(0, 2**32 - 1))
def test_midpoint_convexity(c, seed):
    rng = np.random.default_rng(seed)
    pr = gp.build_problem(c, 0.5 * r0_max(c), (1, 2, 3))
    x, y = rng.normal(scale=3.0, size=(2, gp.NZ))
    mid = pr.values(0.5 * (x + y))
    assert np.all(mid <= 0.5 * (pr.values(x) + pr.values(y)) + 1e-10 * (1 + np.abs(mid)))


@settings(max_examples=40)
@given(channels(), st.integers(0, 2**32 - 1))
def test_gradients_match_central_differences(c, seed):
    rng = np.random.default_rng(seed)
    pr = gp.build_problem(c, 0.3 * r0_max(c), (1, 2, 3), RegionId.RELAXED2)
    z = rng.normal(scale=2.0, size=gp.NZ)
    _, grads, _ = pr.values_and_gradients(z)
    h = 1e-6
    fd = np.stack([(pr.values(z + h * e) - pr.values(z - h * e)) / (2 * h) for e in np.eye(gp.NZ)], axis=1)
    assert np.all(np.abs(grads - fd) <= 1e-5 * np.maximum(1.0, np.abs(grads)))


def test_hessian_matches_gradient_differences(ref):
    pr = gp.build_problem(ref, 0.2, (1, 1, 1))
    z = np.random.default_rng(3).normal(size=gp.NZ)
    j = pr.index("f0123")
    H = pr.hessian(z, j)
    h = 1e-6
    fd = np.stack([(pr.values_and_gradients(z + h * e)[1][j] - pr.values_and_gradients(z - h * e)[1][j]) / (2 * h) for e in np.eye(gp.NZ)])
    assert np.allclose(H, fd, atol=1e-7)
    assert np.min(np.linalg.eigvalsh(H)) >= -1e-12
