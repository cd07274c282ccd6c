"""Log-domain convex form of the relaxed weighted sum-rate problem.

Each partition group is replaced by shifted powers ``T`` whose logarithms
``X = ln T`` turn every rate bound into a log-sum-exp expression:

    alpha   (Y):  T1^1 = N1^1/2 + Q1^1     T1^2 = N1^1/2 + Q1^2
                  T2^1 = N2^1 + Q2^1       T2^2 = N2^2 + Q2^1 + Q2^2
    alpha'  (Z):  Ti^1 = Ni^1 + Qi^1       Ti^2 = (Ni^2 - Ni^1) + Qi^2
    alpha'' (W):  T1^1 = N1^1 + Q1^1       T1^2 = N1^2 + Q1^1 + Q1^2
                  T2^1 = N2^1/2 + Q2^1     T2^2 = N2^1/2 + Q2^2

with ``Q = alpha * P``.  The optimization vector is

    z = [R1, R2, R3, X1^1, X1^2, X2^1, X2^2, X'1^1, ..., X''2^2]   (15 entries)

and every constraint has the form

    c(z) = a . z + b + sum_t ln(kappa_t + sum_{m in S_t} exp(z_m))  <= 0,

which is convex because each term is a log-sum-exp of affine functions.
Rate constraints are scaled by two so the log terms carry unit weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, PowerPartition, RateVector, WeightVector
from .errors import DomainViolation, R0OutOfRange, SingularAtBoundary
from .rates import RATE_COEFFS
from .regions import RegionId, family_groups

NZ = 15
R_SLICE = slice(0, 3)
GROUP_SLICES = (slice(3, 7), slice(7, 11), slice(11, 15))
X_NAMES = (
    "X1_1", "X1_2", "X2_1", "X2_2",
    "Xp1_1", "Xp1_2", "Xp2_1", "Xp2_2",
    "Xpp1_1", "Xpp1_2", "Xpp2_1", "Xpp2_2",
)
R0_TOL = 1e-12


@dataclass(frozen=True)
class LogDomainPoint:
    R: RateVector
    X: np.ndarray = field(compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.shape != (12,):
            raise ValueError(f"X must hold 12 log-variables, got shape {X.shape}")
        object.__setattr__(self, "X", X)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.R.private, self.X])

    @classmethod
    def from_vector(cls, z, R0: float) -> "LogDomainPoint":
        z = np.asarray(z, dtype=float)
        return cls(RateVector.from_private(R0, z[R_SLICE]), z[3:].copy())


# ---------------------------------------------------------------------------
# Change of variables
# ---------------------------------------------------------------------------


def _shifts(c: ChannelConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant parts of T for the three groups, and the Q->T mixing."""
    n1, n2 = c.N1, c.N2
    base = np.array([
        n1[0] / 2, n1[0] / 2, n2[0], n2[1],
        n1[0], n1[1] - n1[0], n2[0], n2[1] - n2[0],
        n1[0], n1[1], n2[0] / 2, n2[0] / 2,
    ])
    mix = np.zeros((12, 12))
    eye4 = np.eye(4)
    mix[0:4, 0:4] = eye4
    mix[3, 2] = 1.0  # T2^2 also carries Q2^1
    mix[4:8, 4:8] = eye4
    mix[8:12, 8:12] = eye4
    mix[9, 8] = 1.0  # T''1^2 also carries Q''1^1
    power = np.array([c.P1, c.P1, c.P2, c.P2] * 3)
    return base, mix, power


def forward(c: ChannelConfig, alpha: PowerPartition, alpha_p: PowerPartition, alpha_pp: PowerPartition) -> np.ndarray:
    """Map the three partitions to the twelve log-variables."""
    base, mix, power = _shifts(c)
    a = np.concatenate([alpha.as_array(), alpha_p.as_array(), alpha_pp.as_array()])
    return np.log(base + mix @ (a * power))


def from_partitions(c, alpha, alpha_p, alpha_pp, R: RateVector) -> LogDomainPoint:
    return LogDomainPoint(R, forward(c, alpha, alpha_p, alpha_pp))


def partition_fractions(X, c: ChannelConfig) -> np.ndarray:
    """Raw (unprojected) 12-vector of fractions recovered from ``X``."""
    base, mix, power = _shifts(c)
    T = np.exp(np.asarray(X, dtype=float))
    Q = np.linalg.solve(mix, T - base)
    return Q / power


def to_partitions(p, c: ChannelConfig, tol: float = 1e-9):
    """Invert the change of variables; returns ``(alpha, alpha', alpha'')``."""
    X = p.X if isinstance(p, LogDomainPoint) else np.asarray(p, dtype=float)
    a = partition_fractions(X, c)
    out = []
    for k in range(3):
        g = a[4 * k : 4 * k + 4]
        sums = (g[0] + g[1], g[2] + g[3])
        if np.any(g < -tol) or np.any(g > 1 + tol) or max(sums) > 1 + tol:
            raise DomainViolation(f"group {k} fractions {g.tolist()} outside the simplex")
        out.append(PowerPartition.projected(g, tol=tol))
    return tuple(out)


def jacobian(c: ChannelConfig, alpha: PowerPartition, alpha_p: PowerPartition, alpha_pp: PowerPartition) -> np.ndarray:
    """Derivative of ``(R, X)`` with respect to ``(R, alpha, alpha', alpha'')`` (15 x 15).

    The matrix is block diagonal with an identity block for the rates and one
    4 x 4 block per partition group.
    """
    for name, p in (("alpha", alpha), ("alpha'", alpha_p), ("alpha''", alpha_pp)):
        a = p.as_array()
        if np.any(a <= 0.0) or a[0] + a[1] >= 1.0 or a[2] + a[3] >= 1.0:
            raise SingularAtBoundary(f"{name}={a.tolist()} is not strictly interior")
    base, mix, power = _shifts(c)
    a = np.concatenate([alpha.as_array(), alpha_p.as_array(), alpha_pp.as_array()])
    T = base + mix @ (a * power)
    J = np.zeros((NZ, NZ))
    J[:3, :3] = np.eye(3)
    J[3:, 3:] = (mix * power[None, :]) / T[:, None]
    if not np.all(np.isfinite(J)):
        raise SingularAtBoundary("non-finite Jacobian entry")
    diag = np.diag(J)
    if np.any(diag == 0.0):
        raise SingularAtBoundary("zero diagonal entry in a Jacobian block")
    return J


# ---------------------------------------------------------------------------
# Constraint assembly
# ---------------------------------------------------------------------------


@dataclass
class _Builder:
    ids: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    A: list = field(default_factory=list)
    b: list = field(default_factory=list)
    terms: list = field(default_factory=list)  # (owner, kappa, members)

    def add(self, cid, kind, lin=None, const=0.0, terms=()):
        j = len(self.ids)
        a = np.zeros(NZ)
        for idx, v in (lin or {}).items():
            a[idx] += v
        self.ids.append(cid)
        self.kinds.append(kind)
        self.A.append(a)
        self.b.append(float(const))
        for kappa, members in terms:
            self.terms.append((j, float(kappa), tuple(members)))


# Variable indices.
X1, X2, X3, X4 = 3, 4, 5, 6          # alpha:   X1^1, X1^2, X2^1, X2^2
Y1, Y2, Y3, Y4 = 7, 8, 9, 10         # alpha':  X'1^1, X'1^2, X'2^1, X'2^2
Z1, Z2, Z3, Z4 = 11, 12, 13, 14      # alpha'': X''1^1, X''1^2, X''2^1, X''2^2


def _rate_lin(cid: str, extra: dict | None = None) -> dict:
    lin = {k: 2.0 * v for k, v in enumerate(RATE_COEFFS[cid]) if v}
    for k, v in (extra or {}).items():
        lin[k] = lin.get(k, 0.0) + v
    return lin


def _rate_constraints(c: ChannelConfig, R0: float, region: RegionId, bld: _Builder):
    n1, n2 = c.N1, c.N2
    P1, P2 = c.P1, c.P2
    ln = math.log
    two_r0 = 2.0 * R0
    _, g_ids, _ = family_groups(region)

    # Y, partition alpha.
    f_base = two_r0 - ln(n1[0] + P1) - ln(n2[2] + P2)
    tail = (n2[2] - n2[1], (X4,))
    inc2 = (n2[1] - n2[0], (X3,))
    f = {
        "f0": ({}, f_base, [(0.0, (X1, X2)), tail]),
        "f01": ({}, f_base + ln(n1[0]), [tail]),
        "f012": ({X4: -1.0}, f_base + ln(n1[0]), [tail, inc2]),
        "f0123": ({X4: -1.0, X3: -1.0}, f_base + ln(n1[0]) + ln(n2[0]), [tail, inc2]),
    }
    # Z, partition alpha'.
    g_base = two_r0 - ln(n1[1] + P1) - ln(n2[1] + P2)
    mid = [(n1[1] - n1[0], (Y1,)), (n2[1] - n2[0], (Y3,))]
    g = {
        "g0": ({}, g_base, [(0.0, (Y1, Y2)), (0.0, (Y3, Y4))]),
        "g02": ({}, g_base, mid),
        "g012": ({Y1: -1.0}, g_base + ln(n1[0]), mid),
        "g023": ({Y3: -1.0}, g_base + ln(n2[0]), mid),
        "g0123": ({Y1: -1.0, Y3: -1.0}, g_base + ln(n1[0]) + ln(n2[0]), mid),
    }
    # W, partition alpha''.
    h_base = two_r0 - ln(n1[2] + P1) - ln(n2[0] + P2)
    head = (n1[2] - n1[1], (Z2,))
    inc_h = (n1[1] - n1[0], (Z1,))
    h = {
        "h0": ({}, h_base, [head, (0.0, (Z3, Z4))]),
        "h03": ({}, h_base + ln(n2[0]), [head]),
        "h023": ({Z2: -1.0}, h_base + ln(n2[0]), [head, inc_h]),
        "h0123": ({Z2: -1.0, Z1: -1.0}, h_base + ln(n2[0]) + ln(n1[0]), [head, inc_h]),
    }
    table = {**f, **g, **h}
    for cid in list(f) + list(g_ids) + list(h):
        lin, const, terms = table[cid]
        bld.add(cid, "rate", _rate_lin(cid, lin), const, terms)


def _domain_constraints(c: ChannelConfig, bld: _Builder):
    n1, n2 = c.N1, c.N2
    P1, P2 = c.P1, c.P2
    ln = math.log
    # alpha
    bld.add("sum1", "domain", {}, -ln(P1 + n1[0]), [(0.0, (X1, X2))])
    bld.add("sum2", "domain", {X4: 1.0}, -ln(P2 + n2[1]))
    bld.add("low1_1", "domain", {X1: -1.0}, ln(n1[0] / 2))
    bld.add("low1_2", "domain", {X2: -1.0}, ln(n1[0] / 2))
    bld.add("low2_1", "domain", {X3: -1.0}, ln(n2[0]))
    bld.add("low2_2", "domain", {X4: -1.0}, 0.0, [(n2[1] - n2[0], (X3,))])
    # alpha'
    bld.add("sum1'", "domain", {}, -ln(P1 + n1[1]), [(0.0, (Y1, Y2))])
    bld.add("sum2'", "domain", {}, -ln(P2 + n2[1]), [(0.0, (Y3, Y4))])
    bld.add("low1_1'", "domain", {Y1: -1.0}, ln(n1[0]))
    bld.add("low1_2'", "domain", {Y2: -1.0}, ln(n1[1] - n1[0]))
    bld.add("low2_1'", "domain", {Y3: -1.0}, ln(n2[0]))
    bld.add("low2_2'", "domain", {Y4: -1.0}, ln(n2[1] - n2[0]))
    # alpha''
    bld.add("sum1''", "domain", {Z2: 1.0}, -ln(P1 + n1[1]))
    bld.add("sum2''", "domain", {}, -ln(P2 + n2[0]), [(0.0, (Z3, Z4))])
    bld.add("low1_1''", "domain", {Z1: -1.0}, ln(n1[0]))
    bld.add("low1_2''", "domain", {Z2: -1.0}, 0.0, [(n1[1] - n1[0], (Z1,))])
    bld.add("low2_1''", "domain", {Z3: -1.0}, ln(n2[0] / 2))
    bld.add("low2_2''", "domain", {Z4: -1.0}, ln(n2[0] / 2))


def _nonneg_constraints(bld: _Builder):
    for k in range(3):
        bld.add(f"R{k + 1}", "nonneg", {k: -1.0}, 0.0)


@dataclass(frozen=True, eq=False)
class LseSystem:
    """Constraints ``c_j(z) = A_j . z + b_j + sum_t G_jt ln(kappa_t + sum_{m in S_t} e^{z_m})``."""

    ids: tuple[str, ...]
    kinds: tuple[str, ...]
    A: np.ndarray
    b: np.ndarray
    owner: np.ndarray
    log_kappa: np.ndarray
    members: np.ndarray  # boolean (terms x variables)
    G: np.ndarray  # (constraints x terms) incidence

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def nvar(self) -> int:
        return self.A.shape[1]

    def index(self, cid: str) -> int:
        return self.ids.index(cid)

    def select(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k in self.kinds])

    def _lse(self, z: np.ndarray):
        L = np.where(self.members, z[None, :], -np.inf)
        L = np.concatenate([L, self.log_kappa[:, None]], axis=1)
        mx = np.max(L, axis=1)
        E = np.exp(L - mx[:, None])
        s = E.sum(axis=1)
        return mx + np.log(s), E[:, :-1] / s[:, None]

    def values(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lse, _ = self._lse(z)
        return self.A @ z + self.b + self.G @ lse

    def values_and_gradients(self, z):
        z = np.asarray(z, dtype=float)
        lse, probs = self._lse(z)
        vals = self.A @ z + self.b + self.G @ lse
        grads = self.A + self.G @ probs
        return vals, grads, probs

    def weighted_hessian(self, probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``sum_j weights_j * Hess c_j`` using term probabilities from the same point."""
        om = self.G.T @ weights
        return np.diag(om @ probs) - (probs.T * om) @ probs

    def hessian(self, z, j: int) -> np.ndarray:
        _, _, probs = self.values_and_gradients(z)
        wts = np.zeros(self.m)
        wts[j] = 1.0
        return self.weighted_hessian(probs, wts)


def _assemble(bld: "_Builder", nvar: int) -> dict:
    m = len(bld.ids)
    nt = len(bld.terms)
    owner = np.array([t[0] for t in bld.terms], dtype=int)
    with np.errstate(divide="ignore"):
        log_kappa = np.log(np.array([t[1] for t in bld.terms]))
    members = np.zeros((nt, nvar), dtype=bool)
    for k, (_, _, mem) in enumerate(bld.terms):
        members[k, list(mem)] = True
    G = np.zeros((m, nt))
    G[owner, np.arange(nt)] = 1.0
    return dict(
        ids=tuple(bld.ids),
        kinds=tuple(bld.kinds),
        A=np.array(bld.A)[:, :nvar],
        b=np.array(bld.b),
        owner=owner,
        log_kappa=log_kappa,
        members=members,
        G=G,
    )


@dataclass(frozen=True, eq=False)
class ConvexProblem(LseSystem):
    """Immutable constraint data for one (channel, R0, weights, region) instance."""

    channel: ChannelConfig = None
    R0: float = 0.0
    w: np.ndarray = None
    region: RegionId = RegionId.RELAXED1

    @property
    def objective_vector(self) -> np.ndarray:
        out = np.zeros(NZ)
        out[R_SLICE] = self.w
        return out


def build_problem(
    c: ChannelConfig,
    R0: float,
    w,
    region: RegionId = RegionId.RELAXED1,
    check_r0: bool = True,
) -> ConvexProblem:
    """Assemble the log-domain problem for a relaxed region."""
    from .rates import r0_max

    region = RegionId(region)
    if region not in (RegionId.RELAXED1, RegionId.RELAXED2):
        raise ValueError(f"log-domain problems are built for relaxed regions, got {region.value}")
    if check_r0:
        top = r0_max(c)
        if not (-R0_TOL <= R0 <= top + R0_TOL):
            raise R0OutOfRange(f"R0={R0!r} outside [0, {top!r}]")
    w = WeightVector.coerce(w).as_array()
    bld = _Builder()
    _rate_constraints(c, R0, region, bld)
    _domain_constraints(c, bld)
    _nonneg_constraints(bld)
    return ConvexProblem(**_assemble(bld, NZ), channel=c, R0=float(R0), w=w, region=region)


@dataclass(frozen=True)
class EvalResult:
    objective: float
    values: np.ndarray
    gradients: np.ndarray
    objective_gradient: np.ndarray


def evaluate(problem: ConvexProblem, p) -> EvalResult:
    """Objective, constraint residuals (``<= 0`` when satisfied) and gradients."""
    z = p.vector() if isinstance(p, LogDomainPoint) else np.asarray(p, dtype=float)
    vals, grads, _ = problem.values_and_gradients(z)
    obj = float(problem.w @ z[R_SLICE])
    return EvalResult(obj, vals, grads, problem.objective_vector)


# The operation is called ``eval`` in the interface description.
eval = evaluate  # noqa: A001
