"""Rate regions as named constraint families.

``SPC`` uses all thirteen bounds at one shared partition.  ``Region1`` drops
``g023`` and ``Region2`` drops ``g012``; their intersection is ``SPC``.
The relaxed variants give each receiver family its own partition
(alpha for Y, alpha' for Z, alpha'' for W).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel import ChannelConfig, PowerPartition, RateVector
from .errors import PointShapeMismatch
from .rates import (
    ACTIVE_TOL,
    CONSTRAINT_IDS,
    F_IDS,
    H_IDS,
    ConstraintReport,
    all_bounds,
    rate_entries,
    side_entries,
)


class RegionId(str, Enum):
    SPC = "SPC"
    REGION1 = "Region1"
    REGION2 = "Region2"
    RELAXED1 = "Relaxed1"
    RELAXED2 = "Relaxed2"

    @property
    def relaxed(self) -> bool:
        return self in (RegionId.RELAXED1, RegionId.RELAXED2)

    @property
    def base(self) -> "RegionId":
        """The shared-partition region a relaxation is built from."""
        return {
            RegionId.RELAXED1: RegionId.REGION1,
            RegionId.RELAXED2: RegionId.REGION2,
        }.get(self, self)

    @classmethod
    def parse(cls, name: str) -> "RegionId":
        for r in cls:
            if r.value.lower() == str(name).lower():
                return r
        raise ValueError(f"unknown region {name!r}")


G_IDS_1 = ("g0", "g02", "g012", "g0123")
G_IDS_2 = ("g0", "g02", "g023", "g0123")

REGION_IDS: dict[RegionId, tuple[str, ...]] = {
    RegionId.SPC: CONSTRAINT_IDS,
    RegionId.REGION1: tuple(k for k in CONSTRAINT_IDS if k != "g023"),
    RegionId.REGION2: tuple(k for k in CONSTRAINT_IDS if k != "g012"),
    RegionId.RELAXED1: F_IDS + G_IDS_1 + H_IDS,
    RegionId.RELAXED2: F_IDS + G_IDS_2 + H_IDS,
}


def family_groups(region: RegionId) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    """Constraint ids bound to (alpha, alpha', alpha'') for a region.

    Shared-partition regions use the same grouping; the three partitions are
    simply equal.
    """
    g = G_IDS_2 if region.base == RegionId.REGION2 else G_IDS_1
    if region.base == RegionId.SPC:
        g = ("g0", "g02", "g012", "g023", "g0123")
    return F_IDS, g, H_IDS


@dataclass(frozen=True)
class RelaxedPoint:
    alpha: PowerPartition
    alpha_p: PowerPartition
    alpha_pp: PowerPartition
    R: RateVector

    @classmethod
    def shared(cls, theta: PowerPartition, R: RateVector) -> "RelaxedPoint":
        return cls(theta, theta, theta, R)

    @property
    def partitions(self) -> tuple[PowerPartition, PowerPartition, PowerPartition]:
        return (self.alpha, self.alpha_p, self.alpha_pp)


def feasible(region: RegionId, c: ChannelConfig, point, active_tol: float = ACTIVE_TOL) -> ConstraintReport:
    """Constraint report of ``point`` against ``region``.

    Shared-partition regions take ``(theta, R)``; relaxed regions take a
    :class:`RelaxedPoint`.
    """
    region = RegionId(region)
    if region.relaxed:
        if not isinstance(point, RelaxedPoint):
            raise PointShapeMismatch(f"{region.value} expects a RelaxedPoint, got {type(point).__name__}")
        entries = []
        for part, ids in zip(point.partitions, family_groups(region)):
            entries += rate_entries(all_bounds(c, part), point.R, ids, active_tol)
        tags = {"": point.alpha, "'": point.alpha_p, "''": point.alpha_pp}
        entries += side_entries(point.R, tags, active_tol)
        return ConstraintReport(tuple(entries))
    if isinstance(point, RelaxedPoint) or not isinstance(point, tuple) or len(point) != 2:
        raise PointShapeMismatch(f"{region.value} expects a (PowerPartition, RateVector) pair")
    theta, R = point
    if not isinstance(theta, PowerPartition) or not isinstance(R, RateVector):
        raise PointShapeMismatch(f"{region.value} expects a (PowerPartition, RateVector) pair")
    ids = REGION_IDS[region]
    entries = rate_entries(all_bounds(c, theta), R, ids, active_tol)
    entries += side_entries(R, {"": theta}, active_tol)
    return ConstraintReport(tuple(entries))


def random_partition(rng: np.random.Generator, boundary_prob: float = 0.2) -> PowerPartition:
    """Uniform draw on each subchannel simplex, occasionally snapped to a face."""
    vals = []
    for _ in range(2):
        x = rng.dirichlet([1.0, 1.0, 1.0])
        if rng.random() < boundary_prob:
            x[rng.integers(3)] = 0.0
            x = x / x.sum()
        vals.extend(x[:2])
    return PowerPartition.projected(vals)


def random_rates_near(c: ChannelConfig, theta: PowerPartition, rng: np.random.Generator) -> RateVector:
    """Random rate vector scaled so that roughly half of the draws are feasible."""
    b = all_bounds(c, theta)
    r0 = rng.uniform(0.0, 1.1) * min(b["f0"], b["g0"], b["h0"])
    head = max(0.0, min(b["f0123"], b["g0123"], b["h0123"]) - r0)
    r = rng.dirichlet([1.0, 1.0, 1.0]) * head * rng.uniform(0.3, 1.3)
    return RateVector.from_private(r0, r)


@dataclass
class IntersectionReport:
    samples: int
    spc_members: int
    counterexamples: list

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "spc_members": self.spc_members,
            "counterexamples": self.counterexamples,
            "passed": self.passed,
        }


def intersection_is_spc(c: ChannelConfig, samples: int, seed: int = 0) -> IntersectionReport:
    """Check SPC membership against membership in both Region1 and Region2."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    bad = []
    members = 0
    for _ in range(samples):
        theta = random_partition(rng)
        R = random_rates_near(c, theta, rng)
        spc = feasible(RegionId.SPC, c, (theta, R)).feasible
        r1 = feasible(RegionId.REGION1, c, (theta, R)).feasible
        r2 = feasible(RegionId.REGION2, c, (theta, R)).feasible
        members += spc
        if spc != (r1 and r2):
            bad.append({"theta": theta.as_array().tolist(), "R": R.as_array().tolist()})
    return IntersectionReport(samples, members, bad)
