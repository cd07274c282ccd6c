"""Optimality certificates for the shared-partition and relaxed problems.

Partition-stationarity rows are written for twice the rate bounds, i.e. as
derivatives of the log-ratios themselves, so a unit multiplier on a bound
contributes terms like ``P / (N + theta P)``.  The same scaling applies to
the simplex multipliers, which are free to absorb it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from .channel import ChannelConfig, PowerPartition, RateVector, WeightVector
from .errors import TiedWeights, UnsupportedOrdering
from .rates import ACTIVE_TOL, CONSTRAINT_IDS, RATE_COEFFS, all_bounds, bound_table
from .regions import RegionId, RelaxedPoint, family_groups

LEMMA_TOL = 1e-8
BOUNDARY_TOL = 1e-6

BETA_IDS = {
    RegionId.REGION1: ("f0", "f01", "f012", "f0123", "g0", "g02", "g012", "g0123", "h0", "h03", "h023", "h0123"),
    RegionId.REGION2: ("f0", "f01", "f012", "f0123", "g0", "g02", "g023", "g0123", "h0", "h03", "h023", "h0123"),
}
EQ17_THETA_KEYS = ("17g", "17f", "17d", "17e")  # d/d theta1^1, theta1^2, theta2^1, theta2^2
EQ17_BETA_KEYS = tuple(f"17{ch}" for ch in "hijklmnopqrs")
EQ19_BETA_KEYS = tuple(f"19{ch}" for ch in "ghijklmnopqr")


def _region_key(region) -> RegionId:
    r = RegionId(region).base
    return RegionId.REGION2 if r == RegionId.REGION2 else RegionId.REGION1


# ---------------------------------------------------------------------------
# Multiplier containers
# ---------------------------------------------------------------------------


@dataclass
class Multipliers17:
    """Multipliers of the twelve rate bounds, ``beta[0..11]``.

    ``beta[6]`` belongs to ``g012`` for Region1 and to ``g023`` for Region2.
    """

    beta: np.ndarray
    region: RegionId = RegionId.REGION1

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(12)

    @property
    def ids(self) -> tuple[str, ...]:
        return BETA_IDS[_region_key(self.region)]

    def by_id(self) -> dict[str, float]:
        return dict(zip(self.ids, self.beta.tolist()))

    def support(self, tol: float = LEMMA_TOL) -> frozenset[str]:
        return frozenset(k for k, b in zip(self.ids, self.beta) if b > tol)


@dataclass
class Multipliers19:
    lam: np.ndarray = field(default_factory=lambda: np.zeros(4))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    xi: np.ndarray = field(default_factory=lambda: np.zeros(4))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mu_p: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mu_pp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    nu: np.ndarray = field(default_factory=lambda: np.zeros(4))
    nu_p: np.ndarray = field(default_factory=lambda: np.zeros(4))
    nu_pp: np.ndarray = field(default_factory=lambda: np.zeros(4))
    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("lam", "eta", "xi", "mu", "mu_p", "mu_pp", "nu", "nu_p", "nu_pp", "rho"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).copy())

    @property
    def rate_groups(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.lam, self.eta, self.xi)

    @property
    def simplex_groups(self):
        return ((self.mu, self.nu), (self.mu_p, self.nu_p), (self.mu_pp, self.nu_pp))

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}


@dataclass
class ResidualReport:
    parts: dict[str, float]

    @property
    def residual(self) -> float:
        return max(self.parts.values()) if self.parts else 0.0

    def to_json(self) -> str:
        return json.dumps({"residual": self.residual, "parts": self.parts})


# ---------------------------------------------------------------------------
# Helpers shared by both residuals
# ---------------------------------------------------------------------------


def _bound_gradients(c: ChannelConfig, theta: PowerPartition) -> dict[str, np.ndarray]:
    """Gradients of twice each bound with respect to the partition."""
    G = 2.0 * bound_table(c).gradient(theta.as_array())
    return dict(zip(CONSTRAINT_IDS, G))


def _rate_residuals(w, R: RateVector, ids, mults, rho) -> np.ndarray:
    """Residuals of the three rate-stationarity equations."""
    w = np.asarray(w, dtype=float)
    load = np.zeros(3)
    for cid, m in zip(ids, mults):
        load += m * np.array(RATE_COEFFS[cid], dtype=float)
    return w - load + np.asarray(rho)


def _boundary_columns(theta: PowerPartition, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Columns for the partition bounds that are (nearly) active.

    Each column is the gradient of ``Lagrangian`` with respect to the
    partition contributed by a unit multiplier: ``+e_k`` for ``theta_k >= 0``
    and ``-(e_2i-1 + e_2i)`` for the subchannel-``i`` sum bound.
    """
    a = theta.as_array()
    cols = []
    for k in range(4):
        if a[k] <= tol:
            e = np.zeros(4)
            e[k] = 1.0
            cols.append(("nu", k, e))
    for i in range(2):
        if a[2 * i] + a[2 * i + 1] >= 1.0 - tol:
            e = np.zeros(4)
            e[2 * i : 2 * i + 2] = -1.0
            cols.append(("mu", i, e))
    return cols


def _fit_boundary(r: np.ndarray, theta: PowerPartition):
    """Nonnegative simplex/nonnegativity multipliers minimizing ``|r + B x|``."""
    cols = _boundary_columns(theta)
    mu = np.zeros(2)
    nu = np.zeros(4)
    if not cols:
        return mu, nu
    B = np.array([col for _, _, col in cols]).T
    x, _ = nnls(B, -r)
    for (kind, k, _), v in zip(cols, x):
        if kind == "mu":
            mu[k] = v
        else:
            nu[k] = v
    return mu, nu


def _stationarity(grads, ids, mults, mu, nu) -> np.ndarray:
    r = np.zeros(4)
    for cid, m in zip(ids, mults):
        r += m * grads[cid]
    r -= np.repeat(mu, 2)
    r += nu
    return r


def _constraint_parts(bounds, R: RateVector, ids, mults, keys, parts):
    r = R.private
    for cid, m, key in zip(ids, mults, keys):
        slack = bounds[cid] - R.r0 - float(np.dot(RATE_COEFFS[cid], r))
        parts[key] = max(max(0.0, -m), max(0.0, -slack), abs(m * slack))


# ---------------------------------------------------------------------------
# Shared-partition system
# ---------------------------------------------------------------------------


def residual_17(c: ChannelConfig, theta: PowerPartition, R: RateVector, beta: Multipliers17, w, R0: float, region=RegionId.REGION1) -> ResidualReport:
    """Max-norm KKT residual of the shared-partition problem.

    Rates at zero and partitions on the boundary of the simplex receive the
    best nonnegative multiplier for their bound, which reduces to the plain
    stationarity equations at interior points.
    """
    region = _region_key(region)
    ids = BETA_IDS[region]
    w = WeightVector.coerce(w).as_array()
    R = RateVector.from_private(R0, R.private)
    b = beta.beta
    parts: dict[str, float] = {}
    rr = _rate_residuals(w, R, ids, b, np.zeros(3))
    for k, key in enumerate(("17a", "17b", "17c")):
        # A zero rate admits a nonnegative multiplier on R_k >= 0.
        parts[key] = abs(rr[k]) if R.private[k] > BOUNDARY_TOL else max(0.0, rr[k])
    grads = _bound_gradients(c, theta)
    r = _stationarity(grads, ids, b, np.zeros(2), np.zeros(4))
    mu, nu = _fit_boundary(r, theta)
    r = r - np.repeat(mu, 2) + nu
    for key, v in zip(EQ17_THETA_KEYS, r):
        parts[key] = abs(float(v))
    _constraint_parts(all_bounds(c, theta), R, ids, b, EQ17_BETA_KEYS, parts)
    parts["partition"] = max(0.0, -float(np.min(theta.as_array())), float(theta.a1_1 + theta.a1_2 - 1), float(theta.a2_1 + theta.a2_2 - 1))
    return ResidualReport(parts)


def beta_from_vector(c, theta: PowerPartition, R: RateVector, region, beta_full=None, w=None) -> Multipliers17:
    """Shared-partition multipliers at ``(theta, R)``.

    With weights ``w`` the multipliers are selected from the optimal face
    exactly as in :func:`multipliers_from_point`.  Otherwise, or when the
    selection fails, ``beta_full`` (one barrier estimate per constraint id)
    is used with inactive entries zeroed.
    """
    region = _region_key(region)
    ids = BETA_IDS[region]
    bounds = all_bounds(c, theta)
    if w is not None:
        w = WeightVector.coerce(w).as_array()
        cols, B, rhs = _stationarity_system(c, (theta,), (ids,), R, w)
        x = _face_interior(cols, B, rhs) if cols else np.zeros(0)
        if x is not None:
            beta = np.zeros(12)
            for (kind, _, k, _), v in zip(cols, x):
                if kind == "rate":
                    beta[k] = v
            return Multipliers17(beta, region)
    if beta_full is None:
        beta_full = np.zeros(len(CONSTRAINT_IDS))
    slack = {cid: bounds[cid] - R.r0 - float(np.dot(RATE_COEFFS[cid], R.private)) for cid in ids}
    beta = np.array([beta_full[CONSTRAINT_IDS.index(cid)] if slack[cid] <= ACTIVE_TOL else 0.0 for cid in ids])
    return Multipliers17(beta, region)


# ---------------------------------------------------------------------------
# Relaxed system
# ---------------------------------------------------------------------------


def residual_19(c: ChannelConfig, point: RelaxedPoint, m: Multipliers19, w, R0: float, region=RegionId.RELAXED1) -> ResidualReport:
    """Max-norm KKT residual of a relaxed problem."""
    region = RegionId(region)
    groups = family_groups(region)
    w = WeightVector.coerce(w).as_array()
    R = RateVector.from_private(R0, point.R.private)
    parts: dict[str, float] = {}
    all_ids = groups[0] + groups[1] + groups[2]
    all_m = np.concatenate(m.rate_groups)
    rr = _rate_residuals(w, R, all_ids, all_m, m.rho)
    for k, key in enumerate(("19a", "19b", "19c")):
        parts[key] = abs(float(rr[k]))
    parts["rho"] = max(
        max(0.0, -float(np.min(m.rho))),
        float(np.max(np.abs(m.rho * R.private))),
    )
    keys = iter(EQ19_BETA_KEYS)
    for part, ids, mults, (mu, nu), key in zip(point.partitions, groups, m.rate_groups, m.simplex_groups, ("19d", "19e", "19f")):
        grads = _bound_gradients(c, part)
        r = _stationarity(grads, ids, mults, mu, nu)
        parts[key] = float(np.max(np.abs(r)))
        a = part.as_array()
        sums = np.array([1.0 - a[0] - a[1], 1.0 - a[2] - a[3]])
        parts[key + "*"] = max(
            max(0.0, -float(np.min(mu))),
            max(0.0, -float(np.min(nu))),
            float(np.max(np.abs(mu * sums))),
            float(np.max(np.abs(nu * a))),
        )
        bounds = all_bounds(c, part)
        _constraint_parts(bounds, R, ids, mults, [next(keys) for _ in ids], parts)
    return ResidualReport(parts)


def multipliers_from_point(c: ChannelConfig, point: RelaxedPoint, w, region, barrier=None) -> Multipliers19:
    """Multipliers of the relaxed problem at ``point``.

    Only constraints with slack at most the activity tolerance may carry a
    multiplier.  When the stationarity equations admit many nonnegative
    solutions, one in the relative interior of the face minimizing the
    common-rate multipliers is returned: first the sum of the three
    common-rate multipliers is minimized by linear programming, then each
    remaining multiplier is maximized on that face and the maximizers are
    averaged.  Should the linear programs fail, the barrier estimates in
    ``barrier=(problem, lam)`` are used, or a nonnegative least-squares fit
    when none are given.
    """
    region = RegionId(region)
    groups = family_groups(region)
    w = WeightVector.coerce(w).as_array()
    cols, B, rhs = _stationarity_system(c, point.partitions, groups, point.R, w)
    out = Multipliers19()
    if not cols:
        return out
    x = _face_interior(cols, B, rhs)
    if x is None and barrier is not None:
        return _from_barrier(c, point, groups, barrier)
    if x is None:
        x, _ = nnls(B, rhs)
    return _unpack(cols, x)


def _stationarity_system(c, partitions, groups, R, w):
    """Columns for every multiplier allowed to be nonzero at ``point``.

    Rows are the three rate equations followed by the four partition
    equations of each group, so that ``B @ x = rhs`` is stationarity.
    """
    n = 3 + 4 * len(partitions)
    cols = []  # (kind, group, index, column)
    for g, (part, ids) in enumerate(zip(partitions, groups)):
        grads = _bound_gradients(c, part)
        b = all_bounds(c, part)
        for k, cid in enumerate(ids):
            if b[cid] - R.r0 - float(np.dot(RATE_COEFFS[cid], R.private)) > ACTIVE_TOL:
                continue
            col = np.zeros(n)
            col[:3] = np.array(RATE_COEFFS[cid], dtype=float)
            col[3 + 4 * g : 7 + 4 * g] = -grads[cid]
            cols.append(("rate", g, k, col))
        for kind, k, e in _boundary_columns(part):
            col = np.zeros(n)
            col[3 + 4 * g : 7 + 4 * g] = -e
            cols.append((kind, g, k, col))
    for k in range(3):
        if R.private[k] <= ACTIVE_TOL:
            col = np.zeros(n)
            col[k] = -1.0
            cols.append(("rho", 0, k, col))
    B = np.array([col for *_, col in cols]).T if cols else np.zeros((n, 0))
    return cols, B, np.concatenate([w, np.zeros(n - 3)])


def _face_interior(cols, B, rhs):
    from scipy.optimize import linprog

    n = B.shape[1]
    x0, r = nnls(B, rhs)
    tol = max(1e-10, 1.01 * r / np.sqrt(len(rhs)))
    A_ub = np.vstack([B, -B])
    b_ub = np.concatenate([rhs + tol, -(rhs - tol)])
    cap = 10.0 * (1.0 + float(np.max(np.abs(rhs))) + float(np.max(x0)))
    bounds = [(0.0, cap)] * n
    level0 = np.array([1.0 if kind == "rate" and k == 0 else 0.0 for kind, _, k, _ in cols])
    res = linprog(level0, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    t = float(res.fun)
    A_face = np.vstack([A_ub, level0])
    b_face = np.concatenate([b_ub, [t + 1e-10]])
    pts = [res.x]
    for j in range(n):
        if level0[j]:
            continue
        obj = np.zeros(n)
        obj[j] = -1.0
        rj = linprog(obj, A_ub=A_face, b_ub=b_face, bounds=bounds, method="highs")
        if rj.status == 0:
            pts.append(rj.x)
    x = np.mean(pts, axis=0)
    x[x < 1e-12] = 0.0
    return x


def _unpack(cols, x) -> Multipliers19:
    out = Multipliers19()
    rate = [out.lam, out.eta, out.xi]
    mus = [out.mu, out.mu_p, out.mu_pp]
    nus = [out.nu, out.nu_p, out.nu_pp]
    for (kind, g, k, _), v in zip(cols, x):
        if kind == "rate":
            rate[g][k] = v
        elif kind == "mu":
            mus[g][k] = v
        elif kind == "nu":
            nus[g][k] = v
        else:
            out.rho[k] = v
    return out


def _from_barrier(c, point, groups, barrier) -> Multipliers19:
    """Cleaned barrier dual estimates with fitted simplex multipliers.

    The log-domain rate rows are scaled by two, hence the doubling.
    """
    problem, lam = barrier
    R = point.R
    rate_mults = []
    for part, ids in zip(point.partitions, groups):
        b = all_bounds(c, part)
        vals = np.array([2.0 * lam[problem.index(cid)] for cid in ids])
        sl = np.array([b[cid] - R.r0 - float(np.dot(RATE_COEFFS[cid], R.private)) for cid in ids])
        vals[sl > ACTIVE_TOL] = 0.0
        rate_mults.append(vals)
    rho = np.array([lam[problem.index(f"R{k + 1}")] for k in range(3)])
    rho[R.private > ACTIVE_TOL] = 0.0
    simplex = []
    for part, ids, mults in zip(point.partitions, groups, rate_mults):
        r = _stationarity(_bound_gradients(c, part), ids, mults, np.zeros(2), np.zeros(4))
        simplex.append(_fit_boundary(r, part))
    return Multipliers19(
        *rate_mults,
        simplex[0][0], simplex[1][0], simplex[2][0],
        simplex[0][1], simplex[1][1], simplex[2][1],
        rho,
    )


# ---------------------------------------------------------------------------
# Orderings and closed forms
# ---------------------------------------------------------------------------


class OrderingCase(tuple, Enum):
    W123 = (1, 2, 3)
    W213 = (2, 1, 3)
    W132 = (1, 3, 2)
    W321 = (3, 2, 1)
    W312 = (3, 1, 2)
    W231 = (2, 3, 1)

    @classmethod
    def of(cls, w) -> "OrderingCase":
        return cls(WeightVector.coerce(w).ordering())

    @property
    def label(self) -> str:
        a, b, c = self.value
        return f"w{a}>w{b}>w{c}"


NOT_IN_REGION1 = "NotInRegion1"


@dataclass(frozen=True)
class ExpectedActiveSet:
    ids: frozenset[str]
    zero_rates: frozenset[int] = frozenset()
    marker: str | None = None


_EXPECTED = {
    OrderingCase.W123: ExpectedActiveSet(frozenset({"f01", "f012", "f0123"})),
    OrderingCase.W213: ExpectedActiveSet(frozenset({"g02", "g012", "g0123"})),
    OrderingCase.W132: ExpectedActiveSet(frozenset({"g012", "g0123"}), frozenset({2})),
    OrderingCase.W321: ExpectedActiveSet(frozenset({"h03", "h023", "h0123"})),
    OrderingCase.W312: ExpectedActiveSet(frozenset({"h03", "h0123"}), frozenset({2})),
    OrderingCase.W231: ExpectedActiveSet(frozenset(), marker=NOT_IN_REGION1),
}


def expected_active_set(ordering) -> ExpectedActiveSet:
    """Rate bounds predicted to carry positive multipliers for a weight ordering."""
    if not isinstance(ordering, OrderingCase):
        ordering = OrderingCase.of(ordering)
    return _EXPECTED[ordering]


def recover_multipliers(ordering, w) -> Multipliers17:
    """Closed-form shared-partition multipliers for a strict weight ordering."""
    w = WeightVector.coerce(w)
    actual = OrderingCase.of(w)
    if not isinstance(ordering, OrderingCase):
        ordering = OrderingCase(tuple(ordering))
    if ordering != actual:
        raise ValueError(f"weights {w.as_array().tolist()} do not follow {ordering.label}")
    w1, w2, w3 = w.as_array()
    beta = np.zeros(12)
    if ordering == OrderingCase.W123:
        beta[[1, 2, 3]] = (w1 - w2, w2 - w3, w3)
    elif ordering == OrderingCase.W213:
        beta[[5, 6, 7]] = (w2 - w1, w1 - w3, w3)
    elif ordering == OrderingCase.W132:
        beta[[6, 7]] = (w1 - w3, w3)
    elif ordering == OrderingCase.W321:
        beta[[9, 10, 11]] = (w3 - w2, w2 - w1, w1)
    elif ordering == OrderingCase.W312:
        beta[[9, 11]] = (w3 - w1, w1)
    else:
        raise UnsupportedOrdering(f"{ordering.label} has no shared-partition solution inside the SPC region")
    return Multipliers17(beta, RegionId.REGION1)


# ---------------------------------------------------------------------------
# Lemma checks
# ---------------------------------------------------------------------------


@dataclass
class LemmaReport:
    violations: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations


def check_lemma_signs(m: Multipliers19, tol: float = LEMMA_TOL) -> LemmaReport:
    """Sign pattern of relaxed multipliers at a solution."""
    bad = []
    for name, v in (("lambda0", m.lam[0]), ("eta0", m.eta[0]), ("xi0", m.xi[0])):
        if abs(v) > tol:
            bad.append(f"{name}={v:.3e} should vanish")
    lam = m.lam[1:]
    if not (np.all(lam <= tol) or np.all(lam > tol)):
        bad.append(f"lambda group {lam.tolist()} is neither all zero nor all positive")
    eta = m.eta[1:]
    if not (np.all(eta <= tol) or (eta[0] > tol and eta[2] > tol)):
        bad.append(f"eta group {eta.tolist()} is nonzero without eta02, eta0123 > 0")
    xi = m.xi[1:]
    if not (np.all(xi <= tol) or np.all(xi > tol)):
        bad.append(f"xi group {xi.tolist()} is neither all zero nor all positive")
    return LemmaReport(bad)


# ---------------------------------------------------------------------------
# Region1 optimum outside Region2
# ---------------------------------------------------------------------------


@dataclass
class ExclusionReport:
    theta: PowerPartition
    rates: RateVector
    g023_slack: float
    in_region2: bool
    in_spc: bool

    @property
    def excluded(self) -> bool:
        return self.g023_slack < -ACTIVE_TOL

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.as_array().tolist(),
            "rates": self.rates.as_array().tolist(),
            "g023_slack": self.g023_slack,
            "in_region2": self.in_region2,
            "in_spc": self.in_spc,
            "excluded": self.excluded,
        }


def region1_excludes_w231(c: ChannelConfig, R0: float, w=(1.0, 3.0, 2.0), restricted=None) -> ExclusionReport:
    """Slack of ``g023`` at the Region1 shared-partition optimum."""
    from .regions import feasible
    from .solver import solve_restricted

    if restricted is None:
        restricted = solve_restricted(c, R0, w, RegionId.REGION1)
    theta, R = restricted.theta, restricted.rates
    b = all_bounds(c, theta)
    slack = b["g023"] - R.r0 - R.r2 - R.r3
    in2 = feasible(RegionId.REGION2, c, (theta, R)).feasible
    spc = feasible(RegionId.SPC, c, (theta, R)).feasible
    return ExclusionReport(theta, R, float(slack), in2, spc)
