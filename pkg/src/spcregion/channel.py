"""Channel parameters and the small value types used throughout the package.

Receiver mapping (fixed by the channel topology):

    subchannel 1:  Y sees N1[0],  Z sees N1[1],  W sees N1[2]
    subchannel 2:  W sees N2[0],  Z sees N2[1],  Y sees N2[2]

All powers and noise variances are linear; all rates are in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegradednessViolation,
    InvalidPartition,
    NonpositiveParameter,
    TiedWeights,
)

NATS_PER_BIT = math.log(2.0)


@dataclass(frozen=True)
class ChannelConfig:
    P1: float
    P2: float
    N1: tuple[float, float, float]
    N2: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "P1", float(self.P1))
        object.__setattr__(self, "P2", float(self.P2))
        object.__setattr__(self, "N1", tuple(float(v) for v in self.N1))
        object.__setattr__(self, "N2", tuple(float(v) for v in self.N2))
        if len(self.N1) != 3 or len(self.N2) != 3:
            raise NonpositiveParameter("N1 and N2 must each hold three noise variances")

    @property
    def P(self) -> tuple[float, float]:
        return (self.P1, self.P2)

    def noise(self, i: int) -> tuple[float, float, float]:
        return self.N1 if i == 1 else self.N2

    def power(self, i: int) -> float:
        return self.P1 if i == 1 else self.P2

    def mirror(self) -> "ChannelConfig":
        """Swap the two subchannels, which exchanges the roles of Y and W."""
        return ChannelConfig(self.P2, self.P1, self.N2, self.N1)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        try:
            P = d["P"]
            return cls(P[0], P[1], tuple(d["N1"]), tuple(d["N2"]))
        except (KeyError, IndexError, TypeError) as exc:
            raise NonpositiveParameter(f"malformed channel config: {exc}") from exc

    def to_dict(self) -> dict:
        return {"P": [self.P1, self.P2], "N1": list(self.N1), "N2": list(self.N2)}

    @classmethod
    def from_json(cls, path: str | Path) -> "ChannelConfig":
        with open(path) as fh:
            return validate(cls.from_dict(json.load(fh)))


REFERENCE_CHANNEL = ChannelConfig(10.0, 10.0, (1.0, 2.0, 4.0), (1.0, 2.0, 4.0))


def validate(config: ChannelConfig) -> ChannelConfig:
    """Return ``config`` unchanged if every channel invariant holds.

    Strict degradedness is checked with exact comparisons.
    """
    values = [config.P1, config.P2, *config.N1, *config.N2]
    if not all(math.isfinite(v) for v in values):
        raise NonpositiveParameter("channel parameters must be finite")
    for name, p in (("P1", config.P1), ("P2", config.P2)):
        if p <= 0.0:
            raise NonpositiveParameter(f"{name}={p!r} must be > 0")
    for i, ladder in ((1, config.N1), (2, config.N2)):
        for j, n in enumerate(ladder, start=1):
            if n <= 0.0:
                raise NonpositiveParameter(f"N{i}^{j}={n!r} must be > 0")
        for j in (1, 2):
            if not ladder[j - 1] < ladder[j]:
                raise DegradednessViolation(i, j, ladder[j - 1], ladder[j])
    return config


@dataclass(frozen=True)
class PowerPartition:
    """Layer power fractions ``[a1_1, a1_2, a2_1, a2_2]``.

    ``ai_1`` feeds the least degraded layer of subchannel ``i``; the third
    fraction on each subchannel is implicit.
    """

    a1_1: float = 0.0
    a1_2: float = 0.0
    a2_1: float = 0.0
    a2_2: float = 0.0

    def __post_init__(self):
        for name in ("a1_1", "a1_2", "a2_1", "a2_2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        a = self.as_array()
        if not np.all(np.isfinite(a)) or np.any(a < 0.0):
            raise InvalidPartition(f"partition entries must be >= 0, got {a.tolist()}")
        if a[0] + a[1] > 1.0 or a[2] + a[3] > 1.0:
            raise InvalidPartition(f"partition sums must be <= 1, got {a.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1_1, self.a1_2, self.a2_1, self.a2_2])

    @classmethod
    def from_array(cls, a) -> "PowerPartition":
        return cls(*[float(v) for v in a])

    @classmethod
    def projected(cls, a, tol: float = 1e-9) -> "PowerPartition":
        """Build a partition from a numerically noisy vector.

        Entries within ``tol`` of the feasible set are pulled onto it;
        anything further out raises.
        """
        a = np.asarray(a, dtype=float).copy()
        if np.any(a < -tol) or a[0] + a[1] > 1 + tol or a[2] + a[3] > 1 + tol:
            raise InvalidPartition(f"partition {a.tolist()} outside tolerance {tol}")
        a = np.clip(a, 0.0, 1.0)
        for k in (0, 2):
            s = a[k] + a[k + 1]
            if s > 1.0:
                a[k : k + 2] /= s
        return cls.from_array(a)


def alpha3(p: PowerPartition, i: int) -> float:
    """Implicit fraction of subchannel ``i`` power left for the most degraded layer."""
    if i == 1:
        s = p.a1_1 + p.a1_2
    elif i == 2:
        s = p.a2_1 + p.a2_2
    else:
        raise ValueError(f"subchannel index must be 1 or 2, got {i}")
    return min(1.0, max(0.0, 1.0 - s))


@dataclass(frozen=True)
class RateVector:
    r0: float = 0.0
    r1: float = 0.0
    r2: float = 0.0
    r3: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.r0, self.r1, self.r2, self.r3])

    @property
    def private(self) -> np.ndarray:
        return np.array([self.r1, self.r2, self.r3])

    @classmethod
    def from_private(cls, r0: float, r) -> "RateVector":
        return cls(float(r0), float(r[0]), float(r[1]), float(r[2]))


@dataclass(frozen=True)
class WeightVector:
    w1: float
    w2: float
    w3: float

    def __post_init__(self):
        w = self.as_array()
        if not np.all(np.isfinite(w)) or np.any(w < 0.0) or not np.any(w > 0.0):
            raise ValueError(f"weights must be nonnegative with one positive entry, got {w.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3], dtype=float)

    @classmethod
    def coerce(cls, w) -> "WeightVector":
        if isinstance(w, WeightVector):
            return w
        return cls(*[float(v) for v in w])

    def normalized(self) -> "WeightVector":
        w = self.as_array()
        return WeightVector(*(w / w.sum()))

    def mirrored(self) -> "WeightVector":
        return WeightVector(self.w3, self.w2, self.w1)

    def ordering(self) -> tuple[int, int, int]:
        """Receiver indices sorted by decreasing weight, e.g. (1, 2, 3) for w1>w2>w3."""
        w = self.as_array()
        if len(set(w.tolist())) < 3:
            raise TiedWeights(f"weights {w.tolist()} contain ties")
        return tuple(int(k) + 1 for k in np.argsort(-w, kind="stable"))
