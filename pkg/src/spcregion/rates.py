"""Superposition-coding rate functions and the constraint system they define.

Each receiver has a family of rate bounds indexed by the set of layers it
decodes: the ``f`` family belongs to Y, ``g`` to Z and ``h`` to W.  The
functions come in two flavours:

* ``eval_f`` / ``eval_g`` / ``eval_h`` evaluate one partition directly with
  scalar arithmetic and are the readable reference.
* :class:`BoundTable` stores every bound as a signed sum of logs of affine
  functions of the partition.  It evaluates many partitions at once and
  supplies gradients and Hessians, which the oracle and the restricted
  solver rely on.

The two are cross-checked in the test-suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelConfig, PowerPartition, RateVector
from .errors import NegativeArgument

FEAS_TOL = 1e-9
ACTIVE_TOL = 1e-6

F_IDS = ("f0", "f01", "f012", "f0123")
G_IDS = ("g0", "g02", "g012", "g023", "g0123")
H_IDS = ("h0", "h03", "h023", "h0123")
CONSTRAINT_IDS = F_IDS + G_IDS + H_IDS

# Which private rates (R1, R2, R3) appear next to R0 in each bound.
RATE_COEFFS: dict[str, tuple[int, int, int]] = {
    "f0": (0, 0, 0),
    "f01": (1, 0, 0),
    "f012": (1, 1, 0),
    "f0123": (1, 1, 1),
    "g0": (0, 0, 0),
    "g02": (0, 1, 0),
    "g012": (1, 1, 0),
    "g023": (0, 1, 1),
    "g0123": (1, 1, 1),
    "h0": (0, 0, 0),
    "h03": (0, 0, 1),
    "h023": (0, 1, 1),
    "h0123": (1, 1, 1),
}
COEFF_MATRIX = np.array([RATE_COEFFS[k] for k in CONSTRAINT_IDS], dtype=float)
LEVEL0_IDS = ("f0", "g0", "h0")


def cap(x: float) -> float:
    """Gaussian capacity ``0.5 * ln(1 + x)`` in nats."""
    if x < 0:
        raise NegativeArgument(f"cap() needs x >= 0, got {x!r}")
    return 0.5 * math.log1p(x)


def _half_log_ratio(num: float, den: float) -> float:
    return 0.5 * (math.log(num) - math.log(den))


@dataclass(frozen=True)
class RateTripleF:
    f0: float
    f01: float
    f012: float
    f0123: float


@dataclass(frozen=True)
class RateTripleG:
    g0: float
    g02: float
    g012: float
    g023: float
    g0123: float


@dataclass(frozen=True)
class RateTripleH:
    h0: float
    h03: float
    h023: float
    h0123: float


def eval_f(c: ChannelConfig, a: PowerPartition) -> RateTripleF:
    n1, n2 = c.N1, c.N2
    s1 = (a.a1_1 + a.a1_2) * c.P1
    s2 = (a.a2_1 + a.a2_2) * c.P2
    q2 = a.a2_1 * c.P2
    tail2 = _half_log_ratio(n2[2] + c.P2, n2[2] + s2)
    f0 = _half_log_ratio(n1[0] + c.P1, n1[0] + s1) + tail2
    f01 = _half_log_ratio(n1[0] + c.P1, n1[0]) + tail2
    f012 = f01 + _half_log_ratio(n2[1] + s2, n2[1] + q2)
    f0123 = f012 + _half_log_ratio(n2[0] + q2, n2[0])
    return RateTripleF(f0, f01, f012, f0123)


def eval_g(c: ChannelConfig, a: PowerPartition) -> RateTripleG:
    n1, n2 = c.N1, c.N2
    s1 = (a.a1_1 + a.a1_2) * c.P1
    s2 = (a.a2_1 + a.a2_2) * c.P2
    q1 = a.a1_1 * c.P1
    q2 = a.a2_1 * c.P2
    g0 = _half_log_ratio(n1[1] + c.P1, n1[1] + s1) + _half_log_ratio(n2[1] + c.P2, n2[1] + s2)
    g02 = _half_log_ratio(n1[1] + c.P1, n1[1] + q1) + _half_log_ratio(n2[1] + c.P2, n2[1] + q2)
    inc1 = _half_log_ratio(n1[0] + q1, n1[0])
    inc2 = _half_log_ratio(n2[0] + q2, n2[0])
    g012 = g02 + inc1
    g023 = g02 + inc2
    g0123 = g012 + inc2
    alt = g023 + inc1
    assert abs(g0123 - alt) <= 1e-12 * max(1.0, abs(g0123)), (g0123, alt)
    return RateTripleG(g0, g02, g012, g023, g0123)


def eval_h(c: ChannelConfig, a: PowerPartition) -> RateTripleH:
    n1, n2 = c.N1, c.N2
    s1 = (a.a1_1 + a.a1_2) * c.P1
    s2 = (a.a2_1 + a.a2_2) * c.P2
    q1 = a.a1_1 * c.P1
    head1 = _half_log_ratio(n1[2] + c.P1, n1[2] + s1)
    h0 = head1 + _half_log_ratio(n2[0] + c.P2, n2[0] + s2)
    h03 = head1 + _half_log_ratio(n2[0] + c.P2, n2[0])
    h023 = h03 + _half_log_ratio(n1[1] + s1, n1[1] + q1)
    h0123 = h023 + _half_log_ratio(n1[0] + q1, n1[0])
    return RateTripleH(h0, h03, h023, h0123)


def all_bounds(c: ChannelConfig, a: PowerPartition) -> dict[str, float]:
    """Every constraint bound at one partition, keyed by constraint id."""
    out: dict[str, float] = {}
    for triple in (eval_f(c, a), eval_g(c, a), eval_h(c, a)):
        out.update(asdict(triple))
    return out


def r0_max(c: ChannelConfig) -> float:
    """Largest common rate every receiver can decode when all power carries it."""
    return min(
        cap(c.P1 / c.N1[0]) + cap(c.P2 / c.N2[2]),
        cap(c.P1 / c.N1[1]) + cap(c.P2 / c.N2[1]),
        cap(c.P1 / c.N1[2]) + cap(c.P2 / c.N2[0]),
    )


def redundancy_gap(c: ChannelConfig, a: PowerPartition) -> tuple[float, float]:
    """Margins by which the two dropped sum-rate bounds exceed the kept ones.

    ``gap_a`` compares the Y-side bound that lets Y skip layer 2 of
    subchannel 2 with ``f0123``; ``gap_b`` is its mirror image on the W side.
    Both reduce to a difference of two ``log1p`` terms whose sign follows from
    the noise ordering, and are computed in that form for accuracy.
    """
    n1, n2 = c.N1, c.N2
    d2 = a.a2_2 * c.P2
    q2 = a.a2_1 * c.P2
    d1 = a.a1_2 * c.P1
    q1 = a.a1_1 * c.P1
    gap_a = 0.5 * (math.log1p(d2 / (n2[0] + q2)) - math.log1p(d2 / (n2[1] + q2)))
    gap_b = 0.5 * (math.log1p(d1 / (n1[0] + q1)) - math.log1p(d1 / (n1[1] + q1)))
    return gap_a, gap_b


# ---------------------------------------------------------------------------
# Vectorized log-affine representation
# ---------------------------------------------------------------------------

# Atoms are (subchannel, noise level, layer mask, sign) where the mask picks
# which of (theta_i^1, theta_i^2) multiply P_i; mask "P" means the full power.
# A bound is half the signed sum of ln(N + mask . theta * P) over its atoms.
_S, _A, _FULL, _NONE = (1, 1), (1, 0), "P", (0, 0)

_ATOM_SPEC: dict[str, list[tuple[int, int, object, int]]] = {
    "f0": [(1, 0, _FULL, 1), (1, 0, _S, -1), (2, 2, _FULL, 1), (2, 2, _S, -1)],
    "f01": [(1, 0, _FULL, 1), (1, 0, _NONE, -1), (2, 2, _FULL, 1), (2, 2, _S, -1)],
    "g0": [(1, 1, _FULL, 1), (1, 1, _S, -1), (2, 1, _FULL, 1), (2, 1, _S, -1)],
    "g02": [(1, 1, _FULL, 1), (1, 1, _A, -1), (2, 1, _FULL, 1), (2, 1, _A, -1)],
    "h0": [(1, 2, _FULL, 1), (1, 2, _S, -1), (2, 0, _FULL, 1), (2, 0, _S, -1)],
    "h03": [(1, 2, _FULL, 1), (1, 2, _S, -1), (2, 0, _FULL, 1), (2, 0, _NONE, -1)],
}
_INC_F2 = [(2, 1, _S, 1), (2, 1, _A, -1)]
_INC_F3 = [(2, 0, _A, 1), (2, 0, _NONE, -1)]
_INC_G1 = [(1, 0, _A, 1), (1, 0, _NONE, -1)]
_INC_G3 = [(2, 0, _A, 1), (2, 0, _NONE, -1)]
_INC_H2 = [(1, 1, _S, 1), (1, 1, _A, -1)]
_INC_H1 = [(1, 0, _A, 1), (1, 0, _NONE, -1)]
_ATOM_SPEC["f012"] = _ATOM_SPEC["f01"] + _INC_F2
_ATOM_SPEC["f0123"] = _ATOM_SPEC["f012"] + _INC_F3
_ATOM_SPEC["g012"] = _ATOM_SPEC["g02"] + _INC_G1
_ATOM_SPEC["g023"] = _ATOM_SPEC["g02"] + _INC_G3
_ATOM_SPEC["g0123"] = _ATOM_SPEC["g02"] + _INC_G1 + _INC_G3
_ATOM_SPEC["h023"] = _ATOM_SPEC["h03"] + _INC_H2
_ATOM_SPEC["h0123"] = _ATOM_SPEC["h023"] + _INC_H1


class BoundTable:
    """All thirteen bounds of one channel as ``0.5 * M @ ln(const + theta @ A.T)``.

    ``theta`` arrays have a trailing axis of length 4 ordered like
    :class:`PowerPartition`.  Constant atoms (no partition dependence) are
    folded into ``offset``.
    """

    def __init__(self, c: ChannelConfig):
        self.channel = c
        keys: list[tuple] = []
        index: dict[tuple, int] = {}
        offset = np.zeros(len(CONSTRAINT_IDS))
        rows: list[dict[int, float]] = []
        for j, cid in enumerate(CONSTRAINT_IDS):
            row: dict[int, float] = {}
            for sub, lvl, mask, sign in _ATOM_SPEC[cid]:
                noise = c.noise(sub)[lvl]
                power = c.power(sub)
                if mask == _FULL:
                    offset[j] += 0.5 * sign * math.log(noise + power)
                    continue
                if mask == _NONE:
                    offset[j] += 0.5 * sign * math.log(noise)
                    continue
                key = (sub, lvl, mask)
                if key not in index:
                    index[key] = len(keys)
                    keys.append(key)
                k = index[key]
                row[k] = row.get(k, 0.0) + 0.5 * sign
            rows.append(row)
        K = len(keys)
        self.const = np.array([c.noise(s)[l] for s, l, _ in keys])
        self.A = np.zeros((K, 4))
        for k, (s, _, mask) in enumerate(keys):
            base = 0 if s == 1 else 2
            self.A[k, base : base + 2] = np.array(mask, dtype=float) * c.power(s)
        self.M = np.zeros((len(CONSTRAINT_IDS), K))
        for j, row in enumerate(rows):
            for k, v in row.items():
                self.M[j, k] = v
        self.offset = offset

    def atoms(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.const + theta @ self.A.T

    def values(self, theta) -> np.ndarray:
        """Bounds with shape ``theta.shape[:-1] + (13,)``."""
        return np.log(self.atoms(theta)) @ self.M.T + self.offset

    def gradient(self, theta) -> np.ndarray:
        """Jacobian of the 13 bounds with respect to a single ``theta`` (13 x 4)."""
        inv = 1.0 / self.atoms(theta)
        return (self.M * inv) @ self.A

    def hessians(self, theta) -> np.ndarray:
        """Per-bound Hessians with respect to a single ``theta`` (13 x 4 x 4)."""
        inv2 = 1.0 / self.atoms(theta) ** 2
        outer = np.einsum("ki,kj->kij", self.A, self.A)
        return -np.einsum("jk,k,kab->jab", self.M, inv2, outer)


@lru_cache(maxsize=256)
def bound_table(c: ChannelConfig) -> BoundTable:
    return BoundTable(c)


# ---------------------------------------------------------------------------
# Constraint reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintEntry:
    id: str
    bound: float
    sum: float
    slack: float
    active: bool
    kind: str = "rate"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bound": self.bound,
            "sum": self.sum,
            "slack": self.slack,
            "active": self.active,
        }


@dataclass(frozen=True)
class ConstraintReport:
    entries: tuple[ConstraintEntry, ...]
    feas_tol: float = FEAS_TOL

    @property
    def feasible(self) -> bool:
        return all(e.slack >= -self.feas_tol for e in self.entries)

    def by_id(self, cid: str) -> ConstraintEntry:
        for e in self.entries:
            if e.id == cid:
                return e
        raise KeyError(cid)

    def slack(self, cid: str) -> float:
        return self.by_id(cid).slack

    def active_rate_ids(self) -> frozenset[str]:
        return frozenset(e.id for e in self.entries if e.kind == "rate" and e.active)

    def violated(self) -> list[str]:
        return [e.id for e in self.entries if e.slack < -self.feas_tol]

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries])


def _entry(cid, bound, total, kind, active_tol) -> ConstraintEntry:
    bound, total = float(bound), float(total)
    slack = bound - total
    return ConstraintEntry(cid, bound, total, slack, bool(abs(slack) <= active_tol), kind)


def rate_entries(bounds: dict[str, float], R: RateVector, ids, active_tol=ACTIVE_TOL):
    r = R.private
    out = []
    for cid in ids:
        total = R.r0 + float(np.dot(RATE_COEFFS[cid], r))
        out.append(_entry(cid, bounds[cid], total, "rate", active_tol))
    return out


def side_entries(R: RateVector, partitions: dict[str, PowerPartition], active_tol=ACTIVE_TOL):
    """Nonnegativity of the rates and simplex feasibility of each partition."""
    out = []
    for name, val in zip(("R0", "R1", "R2", "R3"), R.as_array()):
        out.append(_entry(name, float(val), 0.0, "nonneg", active_tol))
    for tag, p in partitions.items():
        a = p.as_array()
        out.append(_entry(f"simplex1{tag}", 1.0, a[0] + a[1], "partition", active_tol))
        out.append(_entry(f"simplex2{tag}", 1.0, a[2] + a[3], "partition", active_tol))
    return out


def spc_report(
    c: ChannelConfig,
    theta: PowerPartition,
    R: RateVector,
    ids=CONSTRAINT_IDS,
    active_tol: float = ACTIVE_TOL,
) -> ConstraintReport:
    """Slack of every superposition-coding constraint at ``(theta, R)``."""
    bounds = all_bounds(c, theta)
    entries = rate_entries(bounds, R, ids, active_tol)
    entries += side_entries(R, {"": theta}, active_tol)
    return ConstraintReport(tuple(entries))
