import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcregion.channel import ChannelConfig, PowerPartition, RateVector
from spcregion.errors import NegativeArgument
from spcregion.rates import (
    CONSTRAINT_IDS,
    RATE_COEFFS,
    all_bounds,
    bound_table,
    cap,
    eval_f,
    eval_g,
    eval_h,
    r0_max,
    redundancy_gap,
    spc_report,
)
from spcregion.oracle import max_rates_given_partition
from spcregion.regions import REGION_IDS, RegionId

from .conftest import channels, partitions

QUARTER = PowerPartition(0.25, 0.25, 0.25, 0.25)

# Values at the reference channel and the all-0.25 partition, computed with
# 40-digit arithmetic from the bound definitions and frozen here.
FROZEN = {
    "f0": 0.52398427792467739,
    "f01": 1.4198640125387049,
    "f012": 1.6407803886782245,
    "f0123": 2.2671618729259085,
    "g0": 0.53899650073268701,
    "g02": 0.98082925301172624,
    "g012": 1.6072107372594102,
    "g023": 1.6072107372594102,
    "g0123": 2.2335922215070942,
    "h0": 0.52398427792467739,
    "h03": 1.4198640125387049,
    "h023": 1.6407803886782245,
    "h0123": 2.2671618729259085,
}
FROZEN_GAP = 0.048581874226823887


def test_cap_examples():
    assert cap(0.0) == 0.0
    assert cap(1.0) == pytest.approx(0.5 * math.log(2.0), rel=1e-15)
    assert cap(3.0) == pytest.approx(math.log(2.0), rel=1e-15)
    with pytest.raises(NegativeArgument):
        cap(-1e-3)


def test_frozen_bounds(ref):
    b = all_bounds(ref, QUARTER)
    for k, v in FROZEN.items():
        assert b[k] == pytest.approx(v, rel=1e-13), k


def test_closed_forms_at_quarter(ref):
    assert eval_f(ref, QUARTER).f0 == pytest.approx(0.5 * math.log(11 / 6) + 0.5 * math.log(14 / 9), rel=1e-14)
    assert eval_g(ref, QUARTER).g02 == pytest.approx(math.log(12 / 4.5), rel=1e-14)
    assert eval_h(ref, QUARTER).h03 == pytest.approx(0.5 * math.log(14 / 9) + 0.5 * math.log(11), rel=1e-14)


def test_zero_partition_collapses_increments(ref):
    z = PowerPartition()
    f, g, h = eval_f(ref, z), eval_g(ref, z), eval_h(ref, z)
    top = cap(10 / 1) + cap(10 / 4)
    assert f.f0 == pytest.approx(top) and f.f01 == f.f012 == f.f0123 == pytest.approx(top)
    assert g.g02 == g.g012 == g.g023 == g.g0123 == pytest.approx(cap(5) + cap(5))
    assert h.h0 == h.h03 == h.h023 == h.h0123 == pytest.approx(top)


def test_full_private_power_zeroes_level0(ref):
    full = PowerPartition(0.0, 1.0, 1.0, 0.0)
    assert eval_f(ref, full).f0 == pytest.approx(0.0, abs=1e-15)
    assert eval_h(ref, full).h0 == pytest.approx(0.0, abs=1e-15)


def test_r0_max_reference(ref):
    assert r0_max(ref) == pytest.approx(math.log(6.0), rel=1e-15)


def test_r0_max_tiny_power():
    c = ChannelConfig(1e-12, 1e-12, (1, 2, 4), (1, 2, 4))
    assert r0_max(c) < 1e-11


def test_r0_max_symmetric_arguments():
    c = ChannelConfig(5.0, 5.0, (1, 2, 3), (3 - 2, 2, 3)[::-1][::-1])
    first = cap(c.P1 / c.N1[0]) + cap(c.P2 / c.N2[2])
    third = cap(c.P1 / c.N1[2]) + cap(c.P2 / c.N2[0])
    assert first == pytest.approx(third)


def test_zero_rates_feasible_with_slack_equal_bounds(ref):
    rep = spc_report(ref, QUARTER, RateVector())
    assert rep.feasible
    for k in CONSTRAINT_IDS:
        assert rep.slack(k) == pytest.approx(FROZEN[k], rel=1e-13)


def test_constructed_violation(ref):
    z = PowerPartition()
    f01 = eval_f(ref, z).f01
    rep = spc_report(ref, z, RateVector(0.0, f01 + 1e-3, 0.0, 0.0))
    assert not rep.feasible
    assert rep.slack("f01") == pytest.approx(-1e-3)
    assert "f01" in rep.violated()


def test_oracle_point_matches_sequential_assignment(ref):
    # Greedy fill in weight order: R1 first, then R2, then R3, each taking the
    # tightest remaining bound over all families.
    b = all_bounds(ref, QUARTER)
    R0 = 0.2
    r = np.zeros(3)
    for k in range(3):
        room = [b[cid] - R0 - np.dot(RATE_COEFFS[cid], r) for cid in REGION_IDS[RegionId.REGION1] if RATE_COEFFS[cid][k]]
        r[k] = min(room)
    r1, r2, r3 = r
    R, val = max_rates_given_partition(ref, QUARTER, R0, (3, 2, 1))
    assert R.private == pytest.approx([r1, r2, r3], abs=1e-12)
    assert val == pytest.approx(3 * r1 + 2 * r2 + r3, abs=1e-12)
    rep = spc_report(ref, QUARTER, R)
    assert rep.feasible
    # At this partition the g chain binds before f012 does.
    assert rep.active_rate_ids() == {"f01", "g012", "g0123"}


def test_report_json_lists_entries(ref):
    import json

    doc = json.loads(spc_report(ref, QUARTER, RateVector()).to_json())
    ids = {e["id"] for e in doc}
    assert set(CONSTRAINT_IDS) <= ids


def test_redundancy_gap_reference(ref):
    ga, gb = redundancy_gap(ref, QUARTER)
    assert ga == pytest.approx(FROZEN_GAP, rel=1e-13)
    assert gb == pytest.approx(FROZEN_GAP, rel=1e-13)


def test_redundancy_gap_zero_without_layer_two(ref):
    ga, _ = redundancy_gap(ref, PowerPartition(0.3, 0.3, 0.0, 0.0))
    assert ga == 0.0


def _gap_direct(c, a):
    f = eval_f(c, a)
    h = eval_h(c, a)
    ga = f.f01 + cap((a.a2_1 + a.a2_2) * c.P2 / c.N2[0]) - f.f0123
    gb = h.h03 + cap((a.a1_1 + a.a1_2) * c.P1 / c.N1[0]) - h.h0123
    return ga, gb


@given(channels(), partitions())
def test_chain_monotonicity(c, a):
    f, g, h = eval_f(c, a), eval_g(c, a), eval_h(c, a)
    eps = 1e-12
    assert f.f0 <= f.f01 + eps and f.f01 <= f.f012 + eps and f.f012 <= f.f0123 + eps
    assert g.g02 <= g.g012 + eps and g.g012 <= g.g0123 + eps
    assert g.g02 <= g.g023 + eps and g.g023 <= g.g0123 + eps
    assert h.h03 <= h.h023 + eps and h.h023 <= h.h0123 + eps


@given(channels(), partitions())
def test_g0123_decompositions_agree(c, a):
    g = eval_g(c, a)
    alt = g.g023 + cap(a.a1_1 * c.P1 / c.N1[0])
    assert abs(g.g0123 - alt) <= 1e-12 * max(1.0, abs(g.g0123))


@given(channels(), partitions())
def test_redundancy_gap_sign_and_formula(c, a):
    ga, gb = redundancy_gap(c, a)
    da, db = _gap_direct(c, a)
    assert ga == pytest.approx(da, abs=1e-10)
    assert gb == pytest.approx(db, abs=1e-10)
    if a.a2_2 * c.P2 > 1e-9 * c.N2[0]:
        assert ga > 0.0
    if a.a1_2 * c.P1 > 1e-9 * c.N1[0]:
        assert gb > 0.0


@given(channels(), partitions(), st.integers(0, 5), st.floats(0.01, 0.99))
def test_more_noise_never_increases_rates(c, a, slot, frac):
    i, j = divmod(slot, 3)
    ladder = list(c.N1 if i == 0 else c.N2)
    upper = ladder[j + 1] if j < 2 else ladder[j] * 2.0
    ladder[j] = ladder[j] + frac * (upper - ladder[j])
    worse = ChannelConfig(c.P1, c.P2, tuple(ladder), c.N2) if i == 0 else ChannelConfig(c.P1, c.P2, c.N1, tuple(ladder))
    b0, b1 = all_bounds(c, a), all_bounds(worse, a)
    # Bounds whose only dependence on the noise is through a C(.)-style ratio.
    noise_in_denominator = {
        (0, 0): ("f01",), (1, 2): ("f0", "f01"), (1, 1): ("g0",), (0, 1): ("g0",),
        (0, 2): ("h0", "h03"), (1, 0): ("h03",),
    }
    for k in noise_in_denominator.get((i, j), ()):
        assert b1[k] <= b0[k] + 1e-12


@settings(max_examples=50)
@given(channels(), partitions(), partitions())
def test_lipschitz_along_segments(c, a, b):
    t = np.linspace(0.0, 1.0, 21)
    pts = np.array([(1 - s) * a.as_array() + s * b.as_array() for s in t])
    vals = bound_table(c).values(pts)
    step = np.abs(np.diff(vals, axis=0))
    lip = max(c.P1 / c.N1[0], c.P2 / c.N2[0]) * 6.0
    assert np.all(step <= lip * np.abs(np.diff(pts, axis=0)).sum(axis=1, keepdims=True) + 1e-12)


@given(channels(), partitions())
def test_bound_table_matches_scalar_functions(c, a):
    b = all_bounds(c, a)
    v = bound_table(c).values(a.as_array())
    assert np.allclose(v, [b[k] for k in CONSTRAINT_IDS], rtol=1e-12, atol=1e-12)
