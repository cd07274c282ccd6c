"""Property suites shared by the command line and the acceptance tests.

Every suite returns a :class:`SuiteReport`.  Instances are drawn from seeded
generators so that reports are reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import gp
from .channel import ChannelConfig, PowerPartition, RateVector, validate
from .errors import SingularAtBoundary
from .kkt import (
    LEMMA_TOL,
    OrderingCase,
    check_lemma_signs,
    expected_active_set,
    region1_excludes_w231,
)
from .rates import ACTIVE_TOL, eval_g, r0_max, redundancy_gap, spc_report
from .regions import REGION_IDS, RegionId, intersection_is_spc, random_partition
from .solver import KKT_TOL, SolveResult, Status, relaxed_margin, solve_region2_relaxed, solve_relaxed, solve_restricted

TIGHT_ORDERINGS = (
    OrderingCase.W123,
    OrderingCase.W213,
    OrderingCase.W132,
    OrderingCase.W321,
    OrderingCase.W312,
)
R0_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8)
TIGHTNESS_RTOL = 1e-3
MEMBERSHIP_TOL = 1e-7


@dataclass
class SuiteReport:
    name: str
    trials: int
    failures: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.trials > 0 and not self.failures

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.trials - len(self.failures)}/{self.trials} ok"

    def to_dict(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "trials": self.trials,
            "failures": len(self.failures),
            "first_counterexample": self.failures[0] if self.failures else None,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------


def random_channel(rng: np.random.Generator) -> ChannelConfig:
    """Channel with powers in [1, 20] and noise ladders with gaps of at least 0.1."""
    P = rng.uniform(1.0, 20.0, size=2)
    ladders = []
    for _ in range(2):
        n = rng.uniform(0.2, 2.0) + np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 2.0, size=2))])
        ladders.append(tuple(float(v) for v in n))
    return validate(ChannelConfig(float(P[0]), float(P[1]), ladders[0], ladders[1]))


def random_channels(n: int, seed: int) -> list[ChannelConfig]:
    rng = np.random.default_rng(seed)
    return [random_channel(rng) for _ in range(n)]


def random_weights(rng: np.random.Generator, ordering: OrderingCase, min_gap: float = 0.05) -> np.ndarray:
    """Weights summing to one whose ranking follows ``ordering``."""
    while True:
        v = np.sort(rng.dirichlet([1.0, 1.0, 1.0]))[::-1]
        if v[0] - v[1] >= min_gap and v[1] - v[2] >= min_gap and v[2] >= min_gap:
            break
    w = np.empty(3)
    w[np.array(ordering.value) - 1] = v
    return w


# ---------------------------------------------------------------------------
# Solve cells shared by several suites
# ---------------------------------------------------------------------------


@dataclass
class Cell:
    channel_index: int
    channel: ChannelConfig
    ordering: OrderingCase
    r0_fraction: float
    R0: float
    w: np.ndarray
    relaxed: SolveResult
    restricted: SolveResult

    @property
    def gap(self) -> float:
        return abs(self.relaxed.objective - self.restricted.objective) / max(1.0, abs(self.relaxed.objective))

    def describe(self) -> dict:
        return {
            "channel": self.channel.to_dict(),
            "ordering": self.ordering.label,
            "R0": self.R0,
            "w": self.w.tolist(),
            "relaxed": self.relaxed.objective,
            "restricted": self.restricted.objective,
        }


def solve_cells(channels, seed: int, orderings=TIGHT_ORDERINGS, fractions=R0_FRACTIONS) -> list[Cell]:
    """Relaxed and restricted Region1 solves over channels x orderings x R0 fractions."""
    rng = np.random.default_rng(seed)
    cells = []
    for k, c in enumerate(channels):
        top = r0_max(c)
        for o in orderings:
            w = random_weights(rng, o)
            for f in fractions:
                R0 = f * top
                rel = solve_relaxed(c, R0, w)
                res = solve_restricted(c, R0, w, relaxed=rel)
                cells.append(Cell(k, c, o, f, R0, w, rel, res))
    return cells


def random_cells(c: ChannelConfig, seed: int, trials: int, orderings=TIGHT_ORDERINGS) -> list[Cell]:
    """``trials`` random (R0, w) instances on one channel."""
    rng = np.random.default_rng(seed)
    top = r0_max(c)
    cells = []
    for _ in range(trials):
        o = orderings[rng.integers(len(orderings))]
        w = random_weights(rng, o)
        f = float(rng.uniform(0.0, 0.95))
        rel = solve_relaxed(c, f * top, w)
        res = solve_restricted(c, f * top, w, relaxed=rel)
        cells.append(Cell(0, c, o, f, f * top, w, rel, res))
    return cells


def check_tightness(cells: list[Cell], rtol: float = TIGHTNESS_RTOL) -> SuiteReport:
    rep = SuiteReport("tightness", len(cells))
    gaps = [cell.gap for cell in cells]
    for cell in cells:
        if cell.gap > rtol or cell.relaxed.status != Status.CONVERGED:
            rep.failures.append({**cell.describe(), "gap": cell.gap, "status": cell.relaxed.status.value})
    rep.details = {"max_gap": max(gaps, default=0.0), "rtol": rtol}
    return rep


def check_kkt(cells: list[Cell], tol: float = KKT_TOL) -> SuiteReport:
    """Converged relaxed solves carry a KKT residual within ``tol``."""
    conv = [cell for cell in cells if cell.relaxed.status == Status.CONVERGED]
    rep = SuiteReport("kkt", len(conv))
    for cell in conv:
        if cell.relaxed.kkt_residual > tol:
            rep.failures.append({**cell.describe(), "residual": cell.relaxed.kkt_residual})
    rep.details = {
        "not_converged": len(cells) - len(conv),
        "max_residual": max((cell.relaxed.kkt_residual for cell in conv), default=0.0),
    }
    return rep


def check_lemmas(cells: list[Cell]) -> SuiteReport:
    conv = [cell for cell in cells if cell.relaxed.status == Status.CONVERGED and cell.ordering != OrderingCase.W231]
    rep = SuiteReport("lemmas", len(conv))
    for cell in conv:
        lem = check_lemma_signs(cell.relaxed.multipliers, LEMMA_TOL)
        if not lem.passed:
            rep.failures.append({**cell.describe(), "violations": lem.violations})
    return rep


def check_active_sets(cells: list[Cell], orderings=(OrderingCase.W123, OrderingCase.W213)) -> SuiteReport:
    """Active rate bounds at the restricted optimum against the predicted set."""
    chosen = [cell for cell in cells if cell.ordering in orderings]
    rep = SuiteReport("active_sets", len(chosen))
    ids = REGION_IDS[RegionId.REGION1]
    for cell in chosen:
        res = cell.restricted
        active = spc_report(cell.channel, res.theta, res.rates, ids).active_rate_ids()
        expected = expected_active_set(cell.ordering).ids
        if active != expected:
            rep.failures.append({**cell.describe(), "active": sorted(active), "expected": sorted(expected)})
    return rep


def check_zero_r2(cells: list[Cell], tol: float = ACTIVE_TOL) -> SuiteReport:
    """For w1 > w3 > w2 both optima have no rate for Z."""
    chosen = [cell for cell in cells if cell.ordering == OrderingCase.W132]
    rep = SuiteReport("zero_r2", len(chosen))
    for cell in chosen:
        r2 = (cell.relaxed.rates.r2, cell.restricted.rates.r2)
        if max(r2) > tol:
            rep.failures.append({**cell.describe(), "R2": list(r2)})
    return rep


# ---------------------------------------------------------------------------
# Suites that construct their own instances
# ---------------------------------------------------------------------------


def check_exclusion(channels, seed: int, fractions=R0_FRACTIONS, tol: float = ACTIVE_TOL) -> SuiteReport:
    """For w2 > w3 > w1 the Region1 optimum violates g023.

    Cells whose optimum gives no rate to Z or W are recorded as skipped.
    """
    rng = np.random.default_rng(seed)
    rep = SuiteReport("exclusion", 0)
    skipped = 0
    worst = -np.inf
    for c in channels:
        w = random_weights(rng, OrderingCase.W231)
        top = r0_max(c)
        for f in fractions:
            ex = region1_excludes_w231(c, f * top, w)
            if ex.rates.r2 <= tol or ex.rates.r3 <= tol:
                skipped += 1
                continue
            rep.trials += 1
            worst = max(worst, ex.g023_slack)
            if not (ex.g023_slack < -tol):
                rep.failures.append({"channel": c.to_dict(), "R0": f * top, "w": w.tolist(), **ex.to_dict()})
    rep.details = {"skipped_boundary": skipped, "max_g023_slack": worst}
    return rep


def check_redundancy(channels, seed: int, samples: int) -> SuiteReport:
    rng = np.random.default_rng(seed)
    rep = SuiteReport("redundancy", samples)
    for k in range(samples):
        c = channels[k % len(channels)]
        theta = random_partition(rng, boundary_prob=0.1)
        ga, gb = redundancy_gap(c, theta)
        bad = (theta.a2_2 >= 1e-6 and not ga > 0.0) or (theta.a1_2 >= 1e-6 and not gb > 0.0)
        if bad:
            rep.failures.append({"channel": c.to_dict(), "theta": theta.as_array().tolist(), "gap_a": ga, "gap_b": gb})
    return rep


def check_intersection(channels, seed: int, samples: int) -> SuiteReport:
    rep = SuiteReport("intersection", samples)
    per = [samples // len(channels) + (k < samples % len(channels)) for k in range(len(channels))]
    members = 0
    for k, (c, n) in enumerate(zip(channels, per)):
        if n == 0:
            continue
        out = intersection_is_spc(c, n, seed + k)
        members += out.spc_members
        rep.failures.extend(out.counterexamples)
    rep.details = {"spc_members": members}
    return rep


def _interior_partition(rng) -> PowerPartition:
    while True:
        p = random_partition(rng, boundary_prob=0.0)
        a = p.as_array()
        if np.all(a > 1e-6) and a[0] + a[1] < 1 - 1e-6 and a[2] + a[3] < 1 - 1e-6:
            return p


def check_structure(channels, seed: int, samples: int) -> SuiteReport:
    """Dual decomposition of g0123, change-of-variables round trip, Jacobian blocks."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("structure", samples)
    worst = {"decomposition": 0.0, "roundtrip": 0.0, "min_abs_det": np.inf}
    blocks = np.zeros((15, 15), dtype=bool)
    blocks[:3, :3] = True
    for g in range(3):
        blocks[3 + 4 * g : 7 + 4 * g, 3 + 4 * g : 7 + 4 * g] = True
    for k in range(samples):
        c = channels[k % len(channels)]
        parts = [_interior_partition(rng) for _ in range(3)]
        g = eval_g(c, parts[0])
        p1 = c.P1 * parts[0].a1_1
        p2 = c.P2 * parts[0].a2_1
        alt = g.g023 + 0.5 * math.log1p(p1 / c.N1[0])
        main = g.g012 + 0.5 * math.log1p(p2 / c.N2[0])
        dec = abs(main - alt) / max(abs(main), 1e-300)
        X = gp.forward(c, *parts)
        back = gp.partition_fractions(X, c)
        rt = float(np.max(np.abs(back - np.concatenate([p.as_array() for p in parts]))))
        try:
            J = gp.jacobian(c, *parts)
            off = float(np.max(np.abs(J[~blocks])))
            sign, logdet = np.linalg.slogdet(J)
            ok_j = off == 0.0 and sign != 0.0 and np.isfinite(logdet)
            worst["min_abs_det"] = min(worst["min_abs_det"], float(np.exp(logdet)) if sign else 0.0)
        except SingularAtBoundary as e:  # pragma: no cover - interior points only
            ok_j, off = False, str(e)
        worst["decomposition"] = max(worst["decomposition"], dec)
        worst["roundtrip"] = max(worst["roundtrip"], rt)
        if dec > 1e-12 or rt > 1e-12 or not ok_j:
            rep.failures.append({"channel": c.to_dict(), "decomposition": dec, "roundtrip": rt, "jacobian_ok": ok_j})
    rep.details = worst
    return rep


def check_jacobian(channels, seed: int, samples: int) -> SuiteReport:
    rep = check_structure(channels, seed, samples)
    rep.name = "jacobian"
    return rep


def _problems(channels, rng):
    out = []
    for c in channels:
        for region in (RegionId.RELAXED1, RegionId.RELAXED2):
            R0 = float(rng.uniform(0.0, r0_max(c)))
            out.append(gp.build_problem(c, R0, rng.dirichlet([1, 1, 1]) + 0.01, region))
    return out


def _random_z(problem: gp.ConvexProblem, rng) -> np.ndarray:
    parts = [_interior_partition(rng) for _ in range(3)]
    R = RateVector.from_private(problem.R0, rng.uniform(0.0, 2.0, size=3))
    return gp.from_partitions(problem.channel, *parts, R).vector()


def check_convexity(channels, seed: int, pairs: int) -> SuiteReport:
    """Midpoint convexity of every log-domain constraint on random pairs."""
    rng = np.random.default_rng(seed)
    problems = _problems(channels, rng)
    rep = SuiteReport("convexity", pairs)
    worst = -np.inf
    for k in range(pairs):
        pr = problems[k % len(problems)]
        z1, z2 = _random_z(pr, rng), _random_z(pr, rng)
        # Also move well outside the physical domain; convexity holds on all of R^n.
        z2 = z2 + rng.normal(scale=2.0, size=z2.shape)
        mid = pr.values(0.5 * (z1 + z2))
        avg = 0.5 * (pr.values(z1) + pr.values(z2))
        scale = 1.0 + np.abs(avg)
        excess = float(np.max((mid - avg) / scale))
        worst = max(worst, excess)
        if excess > 1e-12:
            rep.failures.append({"pair": k, "excess": excess})
    rep.details = {"max_excess": worst, "constraints_per_problem": problems[0].m}
    return rep


def check_gradients(channels, seed: int, points: int, h: float = 1e-6, rtol: float = 1e-5) -> SuiteReport:
    """Analytic constraint gradients against central differences."""
    rng = np.random.default_rng(seed)
    problems = _problems(channels, rng)
    rep = SuiteReport("gradcheck", points)
    worst = 0.0
    eye = np.eye(gp.NZ)
    for k in range(points):
        pr = problems[k % len(problems)]
        z = _random_z(pr, rng)
        _, grads, _ = pr.values_and_gradients(z)
        fd = np.stack([(pr.values(z + h * e) - pr.values(z - h * e)) / (2 * h) for e in eye], axis=1)
        err = float(np.max(np.abs(grads - fd) / np.maximum(1.0, np.abs(grads))))
        worst = max(worst, err)
        if err > rtol:
            rep.failures.append({"point": k, "error": err})
    rep.details = {"max_relative_error": worst}
    return rep


# ---------------------------------------------------------------------------
# Degraded limit
# ---------------------------------------------------------------------------


def _c(x):
    return 0.5 * np.log1p(x)


def degraded_layers(P: float, N, beta) -> np.ndarray:
    """Layer capacities of three-user superposition on a degraded Gaussian channel.

    ``beta`` gives the power shares of the layers decoded last by the
    strongest, middle and weakest receivers.
    """
    b1, b2, b3 = beta
    return np.array([
        _c(b1 * P / N[0]),
        _c(b2 * P / (N[1] + b1 * P)),
        _c(b3 * P / (N[2] + (b1 + b2) * P)),
    ])


def degraded_optimum(P: float, N, R0: float, w, grid: int = 101) -> np.ndarray:
    """Weighted-sum maximizer ``(R1, R2, R3)`` of the degraded region at common rate ``R0``.

    The common message rides on the weakest receiver's layer, which forces
    that layer's share above a floor independent of how the remaining power
    is split.  The box ``(s, t)`` parametrizes the share above the floor and
    the split, so a grid scan followed by a bounded quasi-Newton polish
    covers the whole feasible set.
    """
    w = np.asarray(w, dtype=float)
    floor = (1.0 - math.exp(-2.0 * R0)) * (N[2] + P) / P
    if floor > 1.0 + 1e-12:
        raise ValueError(f"R0={R0!r} exceeds the weakest receiver's capacity")
    floor = min(floor, 1.0)

    def rates(u):
        s, t = np.clip(u, 0.0, 1.0)
        b3 = floor + s * (1.0 - floor)
        L = degraded_layers(P, N, (t * (1.0 - b3), (1.0 - t) * (1.0 - b3), b3))
        return np.array([L[0], L[1], max(L[2] - R0, 0.0)])

    def value(u):
        return -float(w @ rates(u))

    g = np.linspace(0.0, 1.0, grid)
    vals = np.array([[value((s, t)) for t in g] for s in g])
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    u0 = np.array([g[i], g[j]])
    res = minimize(value, u0, method="L-BFGS-B", bounds=[(0.0, 1.0), (0.0, 1.0)], options={"ftol": 1e-15, "gtol": 1e-12})
    return rates(res.x if res.fun <= vals[i, j] else u0)


def intersection_rows(c: ChannelConfig, R0: float, w, tol: float = MEMBERSHIP_TOL):
    """Relaxed optima that also lie in the other relaxation.

    Returns a list of ``(source_region, SolveResult)`` pairs.
    """
    out = []
    for region, fn, other in (
        (RegionId.RELAXED1, solve_relaxed, RegionId.RELAXED2),
        (RegionId.RELAXED2, solve_region2_relaxed, RegionId.RELAXED1),
    ):
        res = fn(c, R0, w)
        if res.status == Status.INFEASIBLE:
            continue
        if relaxed_margin(c, res.rates, other) >= -tol:
            out.append((region, res))
    return out


DEGRADED_WEIGHTS = (
    (0.5, 0.3, 0.2),
    (0.3, 0.5, 0.2),
    (0.5, 0.2, 0.3),
    (0.2, 0.3, 0.5),
    (0.3, 0.2, 0.5),
    (0.2, 0.5, 0.3),
    (0.45, 0.35, 0.2),
    (0.6, 0.25, 0.15),
)


def check_degraded(c: ChannelConfig, r0_steps: int = 6, weights=DEGRADED_WEIGHTS, tol: float = 1e-4) -> SuiteReport:
    """Intersection boundary against the closed-form degraded region on subchannel 1."""
    rep = SuiteReport("degraded", 0)
    top = r0_max(c)
    worst = 0.0
    for k in range(r0_steps):
        R0 = top * k / r0_steps
        for w in weights:
            ref = degraded_optimum(c.P1, c.N1, R0, w)
            for region, res in intersection_rows(c, R0, w):
                rep.trials += 1
                err = float(np.max(np.abs(res.rates.private - ref)))
                worst = max(worst, err)
                if err > tol:
                    rep.failures.append({
                        "R0": R0, "w": list(w), "source": region.value,
                        "rates": res.rates.private.tolist(), "closed_form": ref.tolist(), "error": err,
                    })
    rep.details = {"max_error": worst}
    return rep


# ---------------------------------------------------------------------------
# Command-line suite registry
# ---------------------------------------------------------------------------


def _cells_for(c, seed, trials):
    return random_cells(c, seed, trials)


def _suite_tightness(c, seed, trials):
    return check_tightness(_cells_for(c, seed, trials))


def _suite_kkt(c, seed, trials):
    return check_kkt(_cells_for(c, seed, trials))


def _suite_lemmas(c, seed, trials):
    return check_lemmas(_cells_for(c, seed, trials))


def _suite_exclusion(c, seed, trials):
    return check_exclusion([c], seed, fractions=tuple(np.linspace(0.0, 0.8, max(trials, 1))))


SUITES = {
    "tightness": _suite_tightness,
    "kkt": _suite_kkt,
    "lemmas": _suite_lemmas,
    "redundancy": lambda c, seed, trials: check_redundancy([c], seed, trials),
    "intersection": lambda c, seed, trials: check_intersection([c], seed, trials),
    "exclusion": _suite_exclusion,
    "jacobian": lambda c, seed, trials: check_jacobian([c], seed, trials),
    "gradcheck": lambda c, seed, trials: check_gradients([c], seed, trials),
}


def run_suite(name: str, c: ChannelConfig, seed: int = 0, trials: int = 20) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](validate(c), seed, trials)
