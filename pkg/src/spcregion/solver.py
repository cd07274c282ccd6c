"""Weighted sum-rate maximization over relaxed and shared-partition regions.

The relaxed problems are convex in the log domain and are solved with a
logarithmic barrier method.  The shared-partition (restricted) problem is
possibly nonconvex; it is handled by the grid oracle followed by a local
barrier polish directly in partition space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import gp
from .channel import ChannelConfig, PowerPartition, RateVector, WeightVector, validate
from .errors import R0OutOfRange
from .oracle import GridSpec, grid_search, lp_batch, _region_mask
from .rates import ACTIVE_TOL, COEFF_MATRIX, CONSTRAINT_IDS, FEAS_TOL, bound_table, r0_max
from .regions import REGION_IDS, RegionId, RelaxedPoint, family_groups, feasible

SATURATION_TOL = 1e-10
KKT_TOL = 1e-6


class Status(str, Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class BarrierOptions:
    mu0: float = 1.0
    mu_shrink: float = 0.1
    gap_tol: float = 1e-9
    newton_tol: float = 1e-9
    max_newton: int = 100
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 80


@dataclass
class BarrierOutcome:
    z: np.ndarray
    lam: np.ndarray
    mu: float
    iterations: int
    converged: bool


def _scaled_newton(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``H dz = -g`` after symmetric diagonal scaling."""
    d = np.sqrt(np.abs(np.diag(H)))
    d = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    Hs = H * d[:, None] * d[None, :]
    gs = g * d
    try:
        L = np.linalg.cholesky(Hs)
        y = -np.linalg.solve(L.T, np.linalg.solve(L, gs))
    except np.linalg.LinAlgError:
        y = -np.linalg.lstsq(Hs + 1e-12 * np.eye(len(g)), gs, rcond=None)[0]
    return d * y


def barrier_maximize(system: gp.LseSystem, cvec: np.ndarray, z0: np.ndarray, opts: BarrierOptions = BarrierOptions()) -> BarrierOutcome:
    """Maximize ``cvec . z`` subject to ``system.values(z) <= 0`` from a strictly feasible start."""
    z = np.array(z0, dtype=float)
    if not np.all(system.values(z) < 0):
        raise ValueError("barrier start point is not strictly feasible")
    m = system.m
    mu = opts.mu0
    total = 0
    converged = True
    while True:
        centred = False
        for _ in range(opts.max_newton):
            vals, grads, probs = system.values_and_gradients(z)
            inv = -1.0 / vals
            g = -cvec + mu * (grads.T @ inv)
            H = mu * (system.weighted_hessian(probs, inv) + (grads.T * inv**2) @ grads)
            dz = _scaled_newton(H, g)
            slope = float(g @ dz)
            if -slope / mu <= 2 * opts.newton_tol:
                centred = True
                break
            f0 = -float(cvec @ z) - mu * float(np.sum(np.log(-vals)))
            step = 1.0
            moved = False
            for _ in range(opts.max_backtracks):
                zn = z + step * dz
                vn = system.values(zn)
                if np.all(vn < 0) and np.all(np.isfinite(vn)):
                    fn = -float(cvec @ zn) - mu * float(np.sum(np.log(-vn)))
                    if fn <= f0 + opts.armijo * step * slope:
                        moved = True
                        break
                step *= opts.backtrack
            total += 1
            if not moved:
                # Rounding limits further progress at this barrier weight.
                centred = -slope / mu <= 1e-6
                break
            z = zn
        converged = converged and centred
        if m * mu <= opts.gap_tol:
            break
        mu *= opts.mu_shrink
    lam = mu / -system.values(z)
    return BarrierOutcome(z, lam, mu, total, converged)


CROSSOVER_WINDOW = 1e-4


def _lse_oracle(system: gp.LseSystem):
    def fun(z):
        vals, grads, probs = system.values_and_gradients(z)
        return vals, grads, lambda wts: system.weighted_hessian(probs, wts)

    return fun


def crossover(fun, cvec: np.ndarray, z: np.ndarray, lam: np.ndarray, window: float = CROSSOVER_WINDOW, rounds: int = 4):
    """Snap a barrier point onto its active face.

    ``fun(z)`` returns constraint values (feasible when ``<= 0``), their
    gradients and a callable producing multiplier-weighted Hessians; an
    :class:`~spcregion.gp.LseSystem` may be passed directly.  Constraints
    whose value lies within ``window`` of zero are treated as equalities and
    the stationarity system of ``max cvec . z`` is solved by damped
    Gauss-Newton from the barrier estimates.  Constraints that come out with
    negative multipliers are released and the solve is repeated.  Returns
    ``(z, lam)`` on success and ``None`` when no consistent face is found.
    """
    if isinstance(fun, gp.LseSystem):
        fun = _lse_oracle(fun)
    vals = fun(z)[0]
    active = np.flatnonzero(vals > -window)
    for _ in range(rounds):
        if len(active) == 0:
            return None
        out = _face_newton(fun, cvec, z, lam[active], active)
        if out is None:
            return None
        zf, la = out
        neg = la < -1e-10
        if neg.any():
            active = active[~neg]
            continue
        full = np.zeros(len(vals))
        full[active] = np.maximum(la, 0.0)
        if np.all(fun(zf)[0] <= 1e-13):
            return zf, full
        return None
    return None


def _face_newton(fun, cvec, z, la, active, iters: int = 30, tol: float = 1e-13):
    z = z.copy()
    la = la.copy()
    n = len(z)
    k = len(active)

    def resid(z, la):
        vals, grads, hess = fun(z)
        GA = grads[active]
        return np.concatenate([GA.T @ la - cvec, vals[active]]), GA, hess, len(vals)

    F, GA, hess, m = resid(z, la)
    for _ in range(iters):
        if not np.all(np.isfinite(F)):
            return None
        if np.max(np.abs(F)) <= tol:
            return z, la
        wts = np.zeros(m)
        wts[active] = la
        J = np.zeros((n + k, n + k))
        J[:n, :n] = hess(wts)
        J[:n, n:] = GA.T
        J[n:, :n] = GA
        d = -np.linalg.lstsq(J, F, rcond=None)[0]
        step, norm0 = 1.0, np.linalg.norm(F)
        for _ in range(30):
            with np.errstate(invalid="ignore", divide="ignore"):
                Fn, GAn, hn, _ = resid(z + step * d[:n], la + step * d[n:])
            if (np.all(np.isfinite(Fn)) and np.linalg.norm(Fn) < norm0) or step < 1e-6:
                break
            step *= 0.5
        z, la = z + step * d[:n], la + step * d[n:]
        F, GA, hess = Fn, GAn, hn
    return (z, la) if np.all(np.isfinite(F)) and np.max(np.abs(F)) <= 1e-10 else None


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class SolveResult:
    rates: RateVector
    partitions: tuple[PowerPartition, PowerPartition, PowerPartition]
    objective: float
    status: Status
    kkt_residual: float
    iterations: int
    region: RegionId = RegionId.RELAXED1
    multipliers: object = None
    weights: np.ndarray = field(default=None, repr=False)

    @property
    def point(self) -> RelaxedPoint:
        return RelaxedPoint(*self.partitions, self.rates)

    @property
    def theta(self) -> PowerPartition:
        return self.partitions[0]


def constraint_report(c: ChannelConfig, res: SolveResult):
    """Constraint slacks of a solve result against its own region."""
    if res.region.relaxed:
        return feasible(res.region, c, res.point)
    return feasible(res.region, c, (res.theta, res.rates))


# ---------------------------------------------------------------------------
# Relaxed problems
# ---------------------------------------------------------------------------

_LEVEL0_BY_GROUP = ("f0", "g0", "h0")


def _initial_point(c: ChannelConfig, R0: float) -> np.ndarray:
    """Strictly feasible start: partitions at 1/3, shrunk if a common bound fails."""
    table = bound_table(c)
    groups = []
    slack0 = []
    for cid in _LEVEL0_BY_GROUP:
        j = CONSTRAINT_IDS.index(cid)
        theta = np.full(4, 1.0 / 3.0)
        for _ in range(200):
            if table.values(theta)[j] - R0 > 1e-3 * max(1.0, R0) * np.max(theta):
                break
            theta *= 0.5
        groups.append(PowerPartition.from_array(theta))
        slack0.append(table.values(theta)[j] - R0)
    m = min(slack0)
    R = RateVector.from_private(R0, np.full(3, 0.5 * m / 3.0))
    return gp.from_partitions(c, *groups, R).vector()


def _saturated_result(c, R0, w, region) -> SolveResult:
    from .kkt import multipliers_from_point, residual_19

    zero = PowerPartition()
    point = RelaxedPoint(zero, zero, zero, RateVector(R0, 0.0, 0.0, 0.0))
    mult = multipliers_from_point(c, point, w, region, None)
    rep = residual_19(c, point, mult, w, R0, region)
    status = Status.CONVERGED if rep.residual <= KKT_TOL else Status.ITERATION_LIMIT
    return SolveResult(point.R, point.partitions, 0.0, status, rep.residual, 0, region, mult, w)


def _infeasible_result(R0, w, region) -> SolveResult:
    zero = PowerPartition()
    return SolveResult(RateVector(R0, 0.0, 0.0, 0.0), (zero, zero, zero), float("-inf"), Status.INFEASIBLE, float("inf"), 0, region, None, w)


def _check_r0(c: ChannelConfig, R0: float) -> float:
    if not np.isfinite(R0) or R0 < -gp.R0_TOL:
        raise R0OutOfRange(f"R0={R0!r} must be >= 0")
    return r0_max(c)


def _solve_relaxed_region(c, R0, w, region, opts) -> SolveResult:
    from .kkt import multipliers_from_point, residual_19

    c = validate(c)
    w = WeightVector.coerce(w).as_array()
    top = _check_r0(c, R0)
    R0 = max(0.0, float(R0))
    if R0 > top + gp.R0_TOL:
        return _infeasible_result(R0, w, region)
    if R0 >= top - SATURATION_TOL:
        return _saturated_result(c, R0, w, region)
    problem = gp.build_problem(c, R0, w, region)
    out = barrier_maximize(problem, problem.objective_vector, _initial_point(c, R0), opts)

    def certify(z, lam):
        parts = gp.to_partitions(z[3:], c)
        rates = RateVector.from_private(R0, np.maximum(z[:3], 0.0))
        point = RelaxedPoint(*parts, rates)
        mult = multipliers_from_point(c, point, w, region, barrier=(problem, lam))
        return point, mult, residual_19(c, point, mult, w, R0, region)

    point, mult, rep = certify(out.z, out.lam)
    snapped = crossover(problem, problem.objective_vector, out.z, out.lam)
    if snapped is not None:
        cand = certify(*snapped)
        if cand[2].residual < rep.residual:
            point, mult, rep = cand
    rates, parts = point.R, point.partitions
    # The certificate decides; the barrier's own stall flag is only advisory.
    ok = rep.residual <= KKT_TOL and feasible(region, c, point).feasible
    status = Status.CONVERGED if ok else Status.ITERATION_LIMIT
    obj = float(w @ rates.private)
    return SolveResult(rates, parts, obj, status, rep.residual, out.iterations, region, mult, w)


def solve_relaxed(c: ChannelConfig, R0: float, w, opts: BarrierOptions = BarrierOptions()) -> SolveResult:
    """Maximize the weighted private sum-rate over the Region1 relaxation."""
    return _solve_relaxed_region(c, R0, w, RegionId.RELAXED1, opts)


def solve_region2_relaxed(c: ChannelConfig, R0: float, w, opts: BarrierOptions = BarrierOptions()) -> SolveResult:
    """As :func:`solve_relaxed` for the Region2 relaxation."""
    return _solve_relaxed_region(c, R0, w, RegionId.RELAXED2, opts)


# ---------------------------------------------------------------------------
# Relaxed-region membership (used to intersect the two relaxations)
# ---------------------------------------------------------------------------


def relaxed_margin(c: ChannelConfig, R: RateVector, region: RegionId) -> float:
    """Largest ``t`` such that every bound exceeds its rate sum by ``t``.

    Each receiver family is checked with its own partition, so the result is
    the minimum over the three families.  Nonnegative means ``R`` lies in
    the relaxed region.
    """
    region = RegionId(region)
    if R.r0 > r0_max(c) + gp.R0_TOL:
        return float("-inf")
    problem = gp.build_problem(c, min(R.r0, r0_max(c)), np.ones(3), region, check_r0=False)
    best = np.inf
    for k, ids in enumerate(family_groups(region)):
        best = min(best, _family_margin(problem, R, ids, gp.GROUP_SLICES[k]))
    return best


def _family_margin(problem: gp.ConvexProblem, R: RateVector, ids, xs: slice) -> float:
    rows = [problem.index(cid) for cid in ids]
    dom = [j for j, kd in enumerate(problem.kinds) if kd == "domain" and xs.start <= _domain_var(problem, j) < xs.stop]
    cols = list(range(xs.start, xs.stop))
    bld = gp._Builder()
    r = R.private
    for j in rows + dom:
        a = problem.A[j]
        const = problem.b[j] + float(a[:3] @ r)
        lin = {1 + cols.index(k): a[k] for k in cols if a[k] != 0.0}
        if problem.kinds[j] == "rate":
            lin[0] = -1.0
        terms = []
        for t in np.flatnonzero(problem.owner == j):
            mem = [1 + cols.index(k) for k in np.flatnonzero(problem.members[t])]
            terms.append((float(np.exp(problem.log_kappa[t])), mem))
        bld.add(problem.ids[j], problem.kinds[j], lin, const, terms)
    bld.add("floor", "aux", {0: -1.0}, -10.0)
    system = gp.LseSystem(**gp._assemble(bld, 1 + len(cols)))
    x0 = gp.forward(problem.channel, *(PowerPartition(*(np.full(4, 1 / 3)),) for _ in range(3)))[xs.start - 3 : xs.stop - 3]
    z0 = np.concatenate([[0.0], x0])
    z0[0] = float(np.max(system.values(z0)[:-1] + 0.0)) + 1.0
    z0[0] = max(z0[0], -9.0)
    out = barrier_maximize(system, -np.eye(1 + len(cols))[0], z0, BarrierOptions(mu0=1e-2))
    return -0.5 * float(out.z[0])


def _domain_var(problem: gp.ConvexProblem, j: int) -> int:
    a = problem.A[j]
    nz = np.flatnonzero(a[3:])
    if len(nz):
        return 3 + int(nz[0])
    t = np.flatnonzero(problem.owner == j)[0]
    return int(np.flatnonzero(problem.members[t])[0])


# ---------------------------------------------------------------------------
# Restricted (shared-partition) problem
# ---------------------------------------------------------------------------


@dataclass
class _PolishOutcome:
    theta: np.ndarray
    R: np.ndarray
    objective: float
    beta: np.ndarray  # per-constraint multipliers on the region's rate rows
    rho: np.ndarray
    iterations: int


class _RestrictedBarrier:
    """Barrier for ``max w.R`` over (R, theta) with one shared partition."""

    def __init__(self, c: ChannelConfig, R0: float, w: np.ndarray, region: RegionId):
        self.table = bound_table(c)
        self.R0 = R0
        self.w = w
        self.rows = np.flatnonzero(_region_mask(region))
        self.C = COEFF_MATRIX[self.rows]

    def slacks(self, y):
        R, th = y[:3], y[3:]
        b = self.table.values(th)[self.rows]
        return np.concatenate([
            b - self.R0 - self.C @ R,
            R,
            th,
            [1.0 - th[0] - th[1], 1.0 - th[2] - th[3]],
        ])

    def slack_derivatives(self, y):
        th = y[3:]
        nr = len(self.rows)
        J = np.zeros((nr + 3 + 4 + 2, 7))
        J[:nr, :3] = -self.C
        J[:nr, 3:] = self.table.gradient(th)[self.rows]
        J[nr : nr + 3, :3] = np.eye(3)
        J[nr + 3 : nr + 7, 3:] = np.eye(4)
        J[nr + 7, 3:5] = -1.0
        J[nr + 8, 5:7] = -1.0
        Hs = self.table.hessians(th)[self.rows]
        return J, Hs

    def constraint_oracle(self, y):
        """Values, gradients and weighted Hessians in ``<= 0`` form."""
        J, Hs = self.slack_derivatives(y)
        nr = len(self.rows)

        def hess(wts):
            H = np.zeros((7, 7))
            H[3:, 3:] = -np.einsum("j,jab->ab", wts[:nr], Hs)
            return H

        return -self.slacks(y), -J, hess

    def solve(self, y0, mu0=1e-5, mu_final=1e-11, max_newton=60) -> tuple[np.ndarray, float, int]:
        y = np.array(y0, dtype=float)
        cvec = np.concatenate([self.w, np.zeros(4)])
        nr = len(self.rows)
        mu = mu0
        its = 0
        while True:
            for _ in range(max_newton):
                s = self.slacks(y)
                J, Hs = self.slack_derivatives(y)
                inv = 1.0 / s
                g = -cvec - mu * (J.T @ inv)
                H = mu * (J.T * inv**2) @ J
                H[3:, 3:] -= mu * np.einsum("j,jab->ab", inv[:nr], Hs)
                evals, V = np.linalg.eigh(H)
                floor = 1e-14 * max(1.0, float(np.max(np.abs(evals))))
                evals = np.maximum(evals, floor)
                dy = -V @ ((V.T @ g) / evals)
                slope = float(g @ dy)
                if -slope / mu <= 1e-9:
                    break
                f0 = -float(cvec @ y) - mu * float(np.sum(np.log(s)))
                step, moved = 1.0, False
                for _ in range(80):
                    yn = y + step * dy
                    sn = self.slacks(yn)
                    if np.all(sn > 0):
                        fn = -float(cvec @ yn) - mu * float(np.sum(np.log(sn)))
                        if fn <= f0 + 1e-4 * step * slope:
                            moved = True
                            break
                    step *= 0.5
                its += 1
                if not moved:
                    break
                y = yn
            if mu <= mu_final:
                break
            mu *= 0.1
        return y, mu, its


def _interior_start(table, rows, C, R0, w, theta, mask):
    """Strictly feasible (R, theta) near ``theta``.

    Scaling the partition down raises every common-rate bound, so shrinking
    restores strict feasibility when a common bound is tight at the seed.
    """
    level0 = np.array([0, 4, 8])[mask[[0, 4, 8]]]
    for t in (1.0, 0.9999, 0.999, 0.99, 0.95, 0.9, 0.8, 0.6, 0.4, 0.2):
        th = project_inward(t * np.asarray(theta, dtype=float))
        b = table.values(th)
        if np.all(b[level0] > R0 + 1e-12):
            break
    else:
        return None
    R, _ = lp_batch(b[None, :], R0, w, mask)
    R = np.nan_to_num(R[0])
    delta = 1e-3
    room = np.min(b[rows] - R0)
    return np.concatenate([(1 - delta) * R + delta * room / 6.0, th])


def project_inward(theta, eps=1e-7) -> np.ndarray:
    th = np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)
    th = (1 - 3 * eps) * th + eps
    return th


def _relaxed_seeds(relaxed: SolveResult | None) -> np.ndarray:
    """Partitions combining each subchannel half from any of the relaxed groups."""
    if relaxed is None or relaxed.status == Status.INFEASIBLE:
        return np.zeros((0, 4))
    groups = [p.as_array() for p in relaxed.partitions]
    seeds = [np.concatenate([a[:2], b[2:]]) for a, b in itertools.product(groups, groups)]
    return np.unique(np.round(np.array(seeds), 15), axis=0)


def _polish(c, R0, w, region, theta) -> _PolishOutcome | None:
    bar = _RestrictedBarrier(c, R0, w, region)
    mask = _region_mask(region)
    y0 = _interior_start(bar.table, bar.rows, bar.C, R0, w, theta, mask)
    if y0 is None or not np.all(bar.slacks(y0) > 0):
        return None
    y, mu, its = bar.solve(y0)
    lam = mu / bar.slacks(y)
    cvec = np.concatenate([w, np.zeros(4)])
    snapped = crossover(bar.constraint_oracle, cvec, y, lam)
    if snapped is not None and float(w @ snapped[0][:3]) >= float(w @ y[:3]) - 1e-9:
        y, lam = snapped
    nr = len(bar.rows)
    beta = np.zeros(len(CONSTRAINT_IDS))
    beta[bar.rows] = lam[:nr]
    return _PolishOutcome(y[3:], y[:3], float(w @ y[:3]), beta, lam[nr : nr + 3], its)


def solve_restricted(
    c: ChannelConfig,
    R0: float,
    w,
    region: RegionId = RegionId.REGION1,
    spec: GridSpec = GridSpec(),
    relaxed: SolveResult | None = None,
    polish_top: int = 3,
) -> SolveResult:
    """Best shared-partition point found by grid search, refinement and polish.

    ``relaxed`` may carry a precomputed relaxed solution used for seeding;
    it is computed on demand otherwise.
    """
    from .kkt import beta_from_vector, residual_17

    c = validate(c)
    w = WeightVector.coerce(w).as_array()
    region = RegionId(region).base
    top = _check_r0(c, R0)
    R0 = max(0.0, float(R0))
    if R0 > top + gp.R0_TOL:
        return _infeasible_result(R0, w, region)
    if R0 >= top - SATURATION_TOL:
        zero = PowerPartition()
        R = RateVector(R0, 0.0, 0.0, 0.0)
        return SolveResult(R, (zero, zero, zero), 0.0, Status.CONVERGED, 0.0, 0, region, None, w)
    if relaxed is None:
        rel_region = RegionId.RELAXED2 if region == RegionId.REGION2 else RegionId.RELAXED1
        relaxed = _solve_relaxed_region(c, R0, w, rel_region, BarrierOptions())
    seeds = _relaxed_seeds(relaxed)
    orc = grid_search(c, R0, w, region, spec, extra_starts=seeds)
    # Relaxed values bound the restricted optimum from above, so reaching
    # one certifies that no further start can improve.
    target = relaxed.objective if relaxed.status == Status.CONVERGED else np.inf
    target -= 1e-10 * max(1.0, abs(target))
    best_theta = orc.theta.as_array()
    best_R = orc.rates.private
    best_obj = orc.objective
    best_beta = None
    iters = 0
    order = [k for k in np.argsort(-orc.start_values, kind="stable") if np.isfinite(orc.start_values[k])]
    grid_starts = []
    for k in order:
        th = orc.starts[k]
        if len(grid_starts) < polish_top and all(np.max(np.abs(th - s)) >= 1e-6 for s in grid_starts):
            grid_starts.append(th)
    for th in list(seeds) + grid_starts:
        if best_obj >= target:
            break
        out = _polish(c, R0, w, region, th)
        if out is None:
            continue
        iters += out.iterations
        if out.objective >= best_obj - 1e-9:
            best_theta, best_R, best_obj = out.theta, out.R, out.objective
            best_beta = out
    theta = PowerPartition.projected(best_theta)
    R = RateVector.from_private(R0, np.maximum(best_R, 0.0))
    beta = beta_from_vector(c, theta, R, region, best_beta.beta if best_beta else None, w=w)
    rep = residual_17(c, theta, R, beta, w, R0, region)
    status = Status.CONVERGED if rep.residual <= KKT_TOL else Status.ITERATION_LIMIT
    return SolveResult(R, (theta, theta, theta), float(w @ R.private), status, rep.residual, iters, region, beta, w)
