"""Brute-force reference optimizer for shared-partition regions.

For a fixed partition the constraints are linear in (R1, R2, R3), so the
best rates follow from enumerating the vertices of a three-variable
polytope.  The partition itself is found by scanning a grid on the product
of the two simplices and then refining with a pattern search.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig, PowerPartition, RateVector, WeightVector
from .errors import InfeasibleR0
from .rates import COEFF_MATRIX, CONSTRAINT_IDS, LEVEL0_IDS, bound_table
from .regions import REGION_IDS, RegionId

VERTEX_TOL = 1e-12

# Distinct coefficient rows: e1, e2, e3, e1+e2, e2+e3, e1+e2+e3.
_TYPES = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1], [1, 1, 1]], dtype=float)
_ROWS = np.vstack([_TYPES, -np.eye(3)])  # 9 half-spaces  row . R <= rhs


def _vertex_systems():
    triples, inverses = [], []
    for tri in itertools.combinations(range(len(_ROWS)), 3):
        sub = _ROWS[list(tri)]
        if abs(np.linalg.det(sub)) < 1e-9:
            continue
        triples.append(tri)
        inverses.append(np.linalg.inv(sub))
    return np.array(triples), np.array(inverses)


_TRIPLES, _INVERSES = _vertex_systems()


def _type_index() -> np.ndarray:
    out = np.empty(len(CONSTRAINT_IDS), dtype=int)
    for j, row in enumerate(COEFF_MATRIX):
        if not row.any():
            out[j] = -1
        else:
            out[j] = int(np.flatnonzero((_TYPES == row).all(axis=1))[0])
    return out


_TYPE_OF = _type_index()
_LEVEL0 = np.array([CONSTRAINT_IDS.index(k) for k in LEVEL0_IDS])


@dataclass(frozen=True)
class GridSpec:
    n: int = 9
    refine_rounds: int = 60
    refine_shrink: float = 0.5
    top: int = 5
    max_polls: int = 400

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("GridSpec.n must be >= 3")
        if not 0.0 < self.refine_shrink < 1.0:
            raise ValueError("refine_shrink must lie in (0, 1)")


def _region_mask(region: RegionId) -> np.ndarray:
    ids = REGION_IDS[RegionId(region).base]
    return np.array([k in ids for k in CONSTRAINT_IDS])


def lp_batch(bounds: np.ndarray, R0: float, w: np.ndarray, mask: np.ndarray):
    """Best rates for many partitions at once.

    ``bounds`` has shape ``(n, 13)``.  Returns ``(R, objective)`` with
    ``objective = -inf`` where the common rate is not decodable.
    """
    bounds = np.atleast_2d(bounds)
    n = bounds.shape[0]
    rhs_types = np.full((n, len(_TYPES)), np.inf)
    for j in np.flatnonzero(mask & (_TYPE_OF >= 0)):
        t = _TYPE_OF[j]
        rhs_types[:, t] = np.minimum(rhs_types[:, t], bounds[:, j] - R0)
    # Rounding can leave a tight bound a hair below R0; treat it as tight.
    tol = VERTEX_TOL * (1.0 + R0)
    rhs_types = np.where((rhs_types < 0.0) & (rhs_types >= -tol), 0.0, rhs_types)
    rhs = np.concatenate([rhs_types, np.zeros((n, 3))], axis=1)
    feasible0 = np.all(bounds[:, _LEVEL0[mask[_LEVEL0]]] >= R0 - tol, axis=1)
    # Types absent from the region get a large finite cap so that vertex
    # solves stay finite; such caps never bind because another type bounds
    # the same rates.
    rhs = np.where(np.isfinite(rhs), rhs, 1e6)
    sub = rhs[:, _TRIPLES]  # (n, V, 3)
    verts = np.einsum("vij,nvj->nvi", _INVERSES, sub)
    slack = rhs[:, None, :] - verts @ _ROWS.T
    ok = np.all(slack >= -VERTEX_TOL * (1.0 + np.abs(rhs[:, None, :])), axis=2)
    obj = np.where(ok, verts @ w, -np.inf)
    best = np.argmax(obj, axis=1)
    idx = np.arange(n)
    R = np.maximum(verts[idx, best], 0.0)
    val = np.where(feasible0, obj[idx, best], -np.inf)
    R[~feasible0] = np.nan
    return R, val


def max_rates_given_partition(c: ChannelConfig, theta: PowerPartition, R0: float, w, region=RegionId.REGION1):
    """Exact weighted-sum maximizer over rates at a fixed partition."""
    w = WeightVector.coerce(w).as_array()
    bounds = bound_table(c).values(theta.as_array())[None, :]
    R, val = lp_batch(bounds, R0, w, _region_mask(region))
    if not np.isfinite(val[0]):
        raise InfeasibleR0(f"R0={R0!r} exceeds a common-rate bound at theta={theta.as_array().tolist()}")
    return RateVector.from_private(R0, R[0]), float(val[0])


def simplex_grid(n: int) -> np.ndarray:
    """All partitions with coordinates on the ``n``-point grid of [0, 1]."""
    pts = np.linspace(0.0, 1.0, n)
    pairs = np.array([(a, b) for a in pts for b in pts if a + b <= 1.0 + 1e-12])
    P = len(pairs)
    return np.concatenate([np.repeat(pairs, P, axis=0), np.tile(pairs, (P, 1))], axis=1)


def _directions() -> np.ndarray:
    dirs = []
    eye = np.eye(4)
    for i in range(4):
        dirs += [eye[i], -eye[i]]
    for i, j in itertools.combinations(range(4), 2):
        dirs += [eye[i] - eye[j], eye[j] - eye[i]]
    return np.array(dirs)


_DIRS = _directions()


def project_simplex(theta: np.ndarray) -> np.ndarray:
    """Clip to the feasible partition set (nonnegative, subchannel sums <= 1)."""
    t = np.clip(theta, 0.0, 1.0)
    for k in (0, 2):
        s = t[..., k] + t[..., k + 1]
        scale = np.where(s > 1.0, 1.0 / np.maximum(s, 1e-300), 1.0)
        t[..., k] *= scale
        t[..., k + 1] *= scale
    return t


def _lex_best(thetas: np.ndarray, vals: np.ndarray) -> int:
    """Index of the maximum value; ties broken by the lexicographically smallest theta."""
    top = np.max(vals)
    cand = np.flatnonzero(vals == top)
    if len(cand) == 1:
        return int(cand[0])
    sub = thetas[cand]
    order = np.lexsort(sub.T[::-1])
    return int(cand[order[0]])


def pattern_search(evaluate, starts: np.ndarray, step: float, spec: GridSpec):
    """Batched compass search; returns final points, values and value histories."""
    x = np.array(starts, dtype=float)
    fx = evaluate(x)
    steps = np.full(len(x), step)
    shrinks = np.zeros(len(x), dtype=int)
    history = [fx.copy()]
    for _ in range(spec.max_polls):
        live = shrinks < spec.refine_rounds
        if not live.any():
            break
        ids = np.flatnonzero(live)
        cand = project_simplex(x[ids, None, :] + steps[ids, None, None] * _DIRS[None, :, :])
        fc = evaluate(cand.reshape(-1, 4)).reshape(len(ids), -1)
        j = np.argmax(fc, axis=1)
        gain = fc[np.arange(len(ids)), j]
        better = gain > fx[ids]
        mv = ids[better]
        x[mv] = cand[better, j[better]]
        fx[mv] = gain[better]
        st = ids[~better]
        steps[st] *= spec.refine_shrink
        shrinks[st] += 1
        history.append(fx.copy())
    return x, fx, np.array(history)


@dataclass(frozen=True)
class OracleResult:
    theta: PowerPartition
    rates: RateVector
    objective: float
    history: tuple[float, ...]
    starts: np.ndarray
    start_values: np.ndarray


def grid_search(c: ChannelConfig, R0: float, w, region=RegionId.REGION1, spec: GridSpec = GridSpec(), extra_starts=None) -> OracleResult:
    """Grid scan over partitions followed by pattern-search refinement."""
    w = WeightVector.coerce(w).as_array()
    table = bound_table(c)
    mask = _region_mask(region)

    def value(thetas):
        return lp_batch(table.values(thetas), R0, w, mask)[1]

    grid = simplex_grid(spec.n)
    vals = value(grid)
    if not np.isfinite(vals).any():
        raise InfeasibleR0(f"R0={R0!r} is not decodable at any grid partition")
    order = np.lexsort(np.vstack([grid.T[::-1], -vals]))
    starts = grid[order[: spec.top]]
    if extra_starts is not None and len(extra_starts):
        starts = np.vstack([starts, np.asarray(extra_starts, dtype=float)])
    x, fx, hist = pattern_search(value, starts, 1.0 / (spec.n - 1), spec)
    best = _lex_best(x, fx)
    theta = PowerPartition.projected(x[best])
    R, obj = max_rates_given_partition(c, theta, R0, w, region)
    best_hist = tuple(float(v) for v in np.maximum.accumulate(hist.max(axis=1)))
    return OracleResult(theta, R, obj, best_hist, x, fx)
