"""Gap functions, key terms, ergodic averages and rate-bound evaluators.

All bound evaluators are pure functions of the constants they are given.
:class:`Monitor` ties them together: it consumes :class:`SchemeState`
snapshots from :func:`pdsplit.engine.run`, records one
:class:`TraceRecord` per iteration and collects every failed check.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .metric import norm_u, sq_norm_u

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "fpr_sq", "gap_at_oracle", "gap_ergodic_at_oracle", "primal_obj", "dual_obj",
                 "ergodic_bound_rhs", "nonergodic_bound_rhs", "kappa_u", "sigma_k")

# absolute tolerances of the individual checks
TOL_FEJER = 1e-10
TOL_FPR = 1e-10
TOL_GAP_BOUND = 1e-8
TOL_FUNDAMENTAL = 1e-8
TOL_KEY_TERM = 1e-8
TOL_KEY_TERM_FBF = 1e-10
TOL_GAP_SIGN = 1e-10
TOL_PRS_DISTANCE = 1e-10

MIN_TAIL_POINTS = 10
LINEAR_SLOPE = -2.0


def pre_gap(f, g, skew, x_f, x_g, x_S, probe):
    """``f(x_f) + g(x_g) + <S x_S, -probe> - f(probe) - g(probe)``.

    Any non-finite term (an argument outside a domain) yields ``+inf`` so
    that bound checks fail instead of passing vacuously.
    """
    vals = (f(x_f), g(x_g), f(probe), g(probe))
    if not all(np.isfinite(v) for v in vals):
        return np.inf
    return float(vals[0] + vals[1] - skew.apply(x_S) @ probe - vals[2] - vals[3])


def point_gap(problem, x, probe):
    """``pre_gap(x, x, x; probe)``."""
    return pre_gap(problem.f, problem.g, problem.skew, x, x, x, probe)


def kappa_u(problem, state):
    """Upper key term rebuilt from the recorded points and subgradients."""
    U, zp = state.metric, state.z_next
    scale = 2.0 * state.gamma * state.lam
    inner = (state.grad_f @ (state.x_f - zp) + state.grad_g @ (state.x_g - zp)
             - problem.skew.apply(state.x_S) @ zp)
    return float(-sq_norm_u(U, zp - state.z) + scale * inner)


def fundamental_margin(problem, state, probe, kappa=None):
    """Slack of the fundamental inequality at ``probe``; nonnegative when it holds.

    ``||z - x||^2_U - ||z+ - x||^2_U + kappa_u - 2 gamma lam pre_gap(x_f, x_g, x_S; x)``.
    """
    U = state.metric
    kappa = kappa_u(problem, state) if kappa is None else kappa
    gap = pre_gap(problem.f, problem.g, problem.skew, state.x_f, state.x_g, state.x_S, probe)
    rhs = sq_norm_u(U, state.z - probe) - sq_norm_u(U, state.z_next - probe) + kappa
    return float(rhs - 2.0 * state.gamma * state.lam * gap)


@dataclass
class KeyTermCheck:
    algorithm: str
    kappa: float
    reference: float
    relation: str
    ok: bool

    @property
    def margin(self):
        if self.relation == "==":
            return -abs(self.kappa - self.reference)
        return self.reference - self.kappa


def key_term_check(problem, plan, state, kappa=None):
    """Compare ``kappa_u`` with the per-algorithm identity or upper bound."""
    kappa = kappa_u(problem, state) if kappa is None else kappa
    algo = plan.algorithm
    if algo in ("ppa", "prs"):
        ref = (1.0 - 2.0 / state.lam) * state.fpr_sq
        tol = TOL_KEY_TERM * max(1.0, abs(ref))
        return KeyTermCheck(algo, kappa, ref, "==", abs(kappa - ref) <= tol)
    if algo == "fbf":
        return KeyTermCheck(algo, kappa, 0.0, "<=", kappa <= TOL_KEY_TERM_FBF)
    step = state.z_next - state.z
    if plan.epsilon == 0 or np.isinf(plan.beta):
        coef = plan.rho
    else:
        coef = plan.rho - plan.epsilon / (plan.beta * state.lam)
    ref = coef * float(step @ step) + 2 * state.gamma * state.lam * (problem.g(state.x_g) - problem.g(state.x_f))
    return KeyTermCheck(algo, kappa, ref, "<=", kappa <= ref + TOL_KEY_TERM)


def s_lower_bound(F, x, y, mu=None, L=None):
    """Strong-convexity / smoothness lower-bound term ``S_F(x, y)``.

    ``max{mu/2 ||x - y||^2, 1/(2L) ||grad F(x) - grad F(y)||^2}`` when ``L`` is
    finite and ``mu/2 ||x - y||^2`` otherwise.
    """
    mu = F.strong_convexity if mu is None else float(mu)
    L = F.grad_lipschitz if L is None else float(L)
    if mu < 0 or L < 0:
        raise ValueError("mu and L must be nonnegative")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    strong = 0.5 * mu * float(d @ d)
    if not np.isfinite(L):
        return strong
    if L == 0:
        # constant gradient: the smooth branch vanishes
        return strong
    dg = F.grad(x) - F.grad(y)
    return max(strong, float(dg @ dg) / (2.0 * L))


def s_chain(split, point, solution):
    """Sum of ``S_F`` terms over ``f, g, h_i*, l_i*`` at a level-1 point."""
    mp = split.model
    if split.level != 1:
        raise ConfigError("the S_F chain is stated for level-1 points")
    x, ys, _ = split.blocks(point)
    xs, yss, _ = split.blocks(solution)
    total = s_lower_bound(mp.f, x, xs) + s_lower_bound(mp.g, x, xs)
    for i in range(mp.n):
        total += s_lower_bound(mp.h[i].conjugate(), ys[i], yss[i])
        total += s_lower_bound(mp.l[i].conjugate(), ys[i], yss[i])
    return float(total)


class ErgodicAccumulator:
    """Streaming weighted averages ``(1/Sigma_k) sum_i gamma_i lam_i x^i``."""

    def __init__(self):
        self.sigma = 0.0
        self._sums = None
        self.count = 0

    def add(self, state):
        wt = state.gamma * state.lam
        pts = (state.x_f, state.x_g, state.x_S)
        if self._sums is None:
            self._sums = [np.zeros_like(p, dtype=float) for p in pts]
        for s, p in zip(self._sums, pts):
            s += wt * p
        self.sigma += wt
        self.count += 1

    def _mean(self, i):
        if self.count == 0:
            raise ValueError("no iterations accumulated")
        return self._sums[i] / self.sigma

    @property
    def x_f(self):
        return self._mean(0)

    @property
    def x_g(self):
        return self._mean(1)

    @property
    def x_S(self):
        return self._mean(2)


def ergodic_average(trace, attr):
    """Offline recomputation of an ergodic average from a trace."""
    wts = np.array([s.gamma * s.lam for s in trace])
    pts = np.array([getattr(s, attr) for s in trace])
    return wts @ pts / wts.sum()


def _require(name, **values):
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{name} needs: {', '.join(missing)}")


def ergodic_bound_rhs(algorithm, z0, probe, z_star, U0, sigma, eta_p=1.0, eta_s=0.0, mu=0.0,
                      rho=None, epsilon=None, beta=None, lam_max=None, fpr_weight_min=None,
                      gamma=None, lipschitz=None, w_hat=None, skew_norm=None):
    """Right-hand side of the ergodic gap bound after ``Sigma_k = sigma``.

    PPA and FBF::

        (||z0 - x||^2_U0 + 2 eta_p eta_s ||z0 - z*||^2_U0 + 2 mu eta_s ||z* - x||^2) / (2 Sigma_k)

    FBS adds ``(1 + eta_p eta_s) max{rho - eps/(beta lam_max), 0} /
    (rho inf_j (1 - a_j l_j)/(a_j l_j))`` to the ``||z0 - z*||^2_U0``
    coefficient. PRS (fixed metric, one side ``L``-Lipschitz)::

        (||z0 - x||^2_U + 4 (gamma/sqrt(rho)) (L + |w_hat| ||S|| ||x||) ||z0 - z*||_U) / (2 Sigma_k)
    """
    algorithm = algorithm.lower()
    if sigma <= 0:
        raise ConfigError("Sigma_k must be positive")
    d0x = sq_norm_u(U0, z0 - probe)
    if algorithm == "prs":
        _require("PRS ergodic bound", gamma=gamma, rho=rho, lipschitz=lipschitz, w_hat=w_hat, skew_norm=skew_norm)
        extra = 4.0 * (gamma / math.sqrt(rho)) * (lipschitz + abs(w_hat) * skew_norm * float(np.linalg.norm(probe)))
        return (d0x + extra * norm_u(U0, z0 - z_star)) / (2.0 * sigma)
    d0s = sq_norm_u(U0, z0 - z_star)
    dsx = float((z_star - probe) @ (z_star - probe))
    coef = 2.0 * eta_p * eta_s
    if algorithm == "fbs":
        _require("FBS ergodic bound", rho=rho, epsilon=epsilon, beta=beta, lam_max=lam_max,
                 fpr_weight_min=fpr_weight_min)
        if fpr_weight_min <= 0:
            raise ConfigError("FBS ergodic bound needs inf (1 - alpha lam)/(alpha lam) > 0")
        drift = 0.0 if (epsilon == 0 or np.isinf(beta)) else epsilon / (beta * lam_max)
        coef += (1.0 + eta_p * eta_s) * max(rho - drift, 0.0) / (rho * fpr_weight_min)
    elif algorithm not in ("ppa", "fbf"):
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    return (d0x + coef * d0s + 2.0 * mu * eta_s * dsx) / (2.0 * sigma)


def _prs_extra(gamma, rho, lipschitz, w_hat, skew_norm, probe):
    _require("PRS nonergodic bound", rho=rho, lipschitz=lipschitz, w_hat=w_hat, skew_norm=skew_norm)
    return (gamma / math.sqrt(rho)) * (lipschitz + abs(w_hat) * skew_norm * float(np.linalg.norm(probe)))


def nonergodic_bound_rhs(algorithm, z0, z_star, probe, U, gamma, tau_min, k, rho=None,
                         lipschitz=None, w_hat=None, skew_norm=None):
    """Right-hand side of the last-iterate gap bound at iteration ``k``.

    ``(||z0 - z*||_U + ||z* - x||_U [+ PRS term]) ||z0 - z*||_U / (gamma sqrt(tau (k + 1)))``
    with PRS term ``(gamma/sqrt(rho)) (L + |w_hat| ||S|| ||x||)``.
    """
    if tau_min is None or tau_min <= 0:
        raise ConfigError("the nonergodic bound needs tau_min > 0")
    algorithm = algorithm.lower()
    if algorithm not in ("ppa", "fbs", "prs"):
        raise ConfigError(f"no nonergodic bound for {algorithm!r}")
    r0 = norm_u(U, z0 - z_star)
    lead = r0 + norm_u(U, z_star - probe)
    if algorithm == "prs":
        lead += _prs_extra(gamma, rho, lipschitz, w_hat, skew_norm, probe)
    return lead * r0 / (gamma * math.sqrt(tau_min * (k + 1)))


def nonergodic_majorant(algorithm, z0, z_star, probe, U, gamma, state, rho=None,
                        lipschitz=None, w_hat=None, skew_norm=None):
    """Nonnegative majorant ``(...) ||T z^k - z^k||_U / gamma`` of the last-iterate gap."""
    lead = norm_u(U, z0 - z_star) + norm_u(U, z_star - probe)
    if algorithm == "prs":
        lead += _prs_extra(gamma, rho, lipschitz, w_hat, skew_norm, probe)
    residual = math.sqrt(state.fpr_sq) / state.lam
    return lead * residual / gamma


def fpr_rate_bound(z0, z_star, U, tau_min, k):
    """``||z0 - z*||^2_U / (tau (k + 1))``."""
    if tau_min <= 0:
        raise ConfigError("the FPR rate needs tau_min > 0")
    return sq_norm_u(U, z0 - z_star) / (tau_min * (k + 1))


def prs_ergodic_gap_distance(acc, U):
    """``||xbar_f - xbar_g||_U`` from an accumulator."""
    return norm_u(U, acc.x_f - acc.x_g)


def prs_distance_bound(gamma, sigma, z0, z_star, U):
    """``2 gamma ||z0 - z*||_U / Sigma_k``."""
    return 2.0 * gamma * norm_u(U, z0 - z_star) / sigma


@dataclass
class RateReport:
    """Least-squares fit of ``log(value)`` against ``log(k + 1)`` on a tail."""

    slope: float
    intercept: float
    n_points: int
    tail_start: int
    trimmed_zeros: int
    converged_exactly: bool = False
    linear: bool = False
    note: str = ""

    def to_dict(self):
        return asdict(self)


def fit_rate_slope(series, tail_fraction=0.5, min_points=MIN_TAIL_POINTS):
    """Fit the decay exponent of ``series`` (pairs ``(k, value)``) on its tail.

    Zeros in the tail are trimmed and counted. A tail that is entirely zero
    gives ``converged_exactly`` with an undefined (nan) slope.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("series must be a list of (k, value) pairs")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    if np.any(data[:, 1] < 0):
        raise ValueError("values must be nonnegative")
    start = int(math.floor(len(data) * (1.0 - tail_fraction)))
    tail = data[start:]
    keep = tail[:, 1] > 0
    trimmed = int(np.count_nonzero(~keep))
    tail = tail[keep]
    tail_k = int(data[start, 0]) if len(data) else 0
    if len(tail) == 0:
        return RateReport(math.nan, math.nan, 0, tail_k, trimmed, converged_exactly=True,
                          note="converged exactly: tail is identically zero")
    if len(tail) < min_points:
        raise ValueError(f"need at least {min_points} positive tail points, got {len(tail)}")
    xs = np.log(tail[:, 0] + 1.0)
    ys = np.log(tail[:, 1])
    slope, intercept = np.polyfit(xs, ys, 1)
    slope, intercept = float(slope), float(intercept)
    linear = slope < LINEAR_SLOPE
    note = "linear convergence" if linear else "sublinear"
    if trimmed:
        note += f"; {trimmed} zero values trimmed"
    return RateReport(slope, intercept, len(tail), tail_k, trimmed, linear=linear, note=note)


@dataclass
class TraceRecord:
    k: int
    fpr_sq: float
    gap_at_oracle: float
    gap_ergodic_at_oracle: float
    primal_obj: float
    dual_obj: float
    ergodic_bound_rhs: float
    nonergodic_bound_rhs: float
    kappa_u: float
    sigma_k: float

    def row(self):
        return [self.k] + [_fmt(getattr(self, c)) for c in TRACE_COLUMNS[1:]]


def _fmt(v):
    # blank marks a quantity that is not available for this run
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


@dataclass
class CheckFailure:
    check: str
    k: int
    margin: float
    detail: str = ""


@dataclass
class BoundContext:
    """Everything the bound evaluators need besides the trace.

    ``anchor`` is the zero (PPA, FBS, FBF) or PRS fixed point ``z*``;
    ``solution`` is the zero of the inclusion used as the gap probe. For
    PRS, ``lipschitz_side`` names the Lipschitz function (``"f"`` or ``"g"``)
    and selects the evaluation point ``x_g`` or ``x_f``.
    """

    problem: object
    plan: object
    z0: np.ndarray
    anchor: np.ndarray
    solution: np.ndarray
    oracle_kind: str = "closed-form"
    lipschitz_side: str = None
    model: object = None
    checks: tuple = ("fejer", "fpr", "ergodic", "nonergodic", "key_term", "fundamental", "gap_sign",
                     "prs_distance")

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.solution = np.asarray(self.solution, dtype=float)
        if self.plan.algorithm == "prs" and self.lipschitz_side is None:
            if np.isfinite(self.problem.f.lipschitz):
                self.lipschitz_side = "f"
            elif np.isfinite(self.problem.g.lipschitz):
                self.lipschitz_side = "g"

    @property
    def prs_constants(self):
        """``(L, w_hat)`` for the PRS bounds, or ``None`` when neither side is Lipschitz."""
        if self.lipschitz_side == "f":
            return self.problem.f.lipschitz, self.plan.w
        if self.lipschitz_side == "g":
            return self.problem.g.lipschitz, 1.0 - self.plan.w
        return None

    def eval_point(self, x_f, x_g):
        if self.plan.algorithm == "prs" and self.lipschitz_side == "f":
            return x_g
        return x_f

    @property
    def has_nonergodic(self):
        p = self.plan
        if p.algorithm == "fbf" or not p.metrics.is_constant or np.ptp(p.gammas) != 0:
            return False
        if p.algorithm == "prs" and self.prs_constants is None:
            return False
        return p.tau_min > 0

    @property
    def has_ergodic(self):
        p = self.plan
        if p.algorithm == "prs":
            return self.prs_constants is not None
        if p.algorithm == "fbs":
            return p.fpr_weight_min > 0
        return True

    def ergodic_rhs(self, sigma, probe):
        p = self.plan
        kw = dict(eta_p=p.eta_p, eta_s=p.eta_s, mu=p.mu)
        if p.algorithm == "fbs":
            kw.update(rho=p.rho, epsilon=p.epsilon, beta=p.beta, lam_max=float(p.lams.max()),
                      fpr_weight_min=p.fpr_weight_min)
        elif p.algorithm == "prs":
            L, w_hat = self.prs_constants
            kw = dict(gamma=float(p.gammas[0]), rho=p.rho, lipschitz=L, w_hat=w_hat, skew_norm=p.skew_norm)
        return ergodic_bound_rhs(p.algorithm, self.z0, probe, self.anchor, p.metric(0), sigma, **kw)

    def _prs_kw(self):
        if self.plan.algorithm != "prs":
            return {}
        L, w_hat = self.prs_constants
        return dict(rho=self.plan.rho, lipschitz=L, w_hat=w_hat, skew_norm=self.plan.skew_norm)

    def nonergodic_rhs(self, k, probe):
        p = self.plan
        return nonergodic_bound_rhs(p.algorithm, self.z0, self.anchor, probe, p.metric(0), float(p.gammas[0]),
                                    p.tau_min, k, **self._prs_kw())

    def majorant(self, state, probe):
        p = self.plan
        return nonergodic_majorant(p.algorithm, self.z0, self.anchor, probe, p.metric(0), float(p.gammas[0]),
                                   state, **self._prs_kw())


class Monitor:
    """Diagnostics sink for :func:`pdsplit.engine.run`.

    Every state produces a :class:`TraceRecord`; failed checks are collected
    in ``failures`` in iteration order.
    """

    def __init__(self, ctx, probes=None):
        self.ctx = ctx
        self.records = []
        self.failures = []
        self.acc = ErgodicAccumulator()
        self.probes = [] if probes is None else [np.asarray(p, dtype=float) for p in probes]
        self.majorants = []
        self.fpr_bounds = []
        self._prev_dist = None
        p = ctx.plan
        self._fpr_enabled = "fpr" in ctx.checks and p.algorithm != "fbf" and p.metrics.is_constant \
            and np.ptp(p.gammas) == 0 and p.tau_min > 0
        self._rhs_cache = {}

    def _fail(self, check, k, margin, detail=""):
        self.failures.append(CheckFailure(check, k, float(margin), detail))

    def _objectives(self, point):
        ctx = self.ctx
        mp = ctx.model
        if mp is None:
            return math.nan, math.nan
        split = ctx.problem
        x, ys, _ = split.blocks(point)
        y = np.concatenate(ys)
        try:
            primal = mp.primal_objective(x)
        except Exception:  # capability gaps leave the column blank
            primal = math.nan
        try:
            dual = mp.dual_objective(y)
        except Exception:
            dual = math.nan
        return primal, dual

    def __call__(self, state):
        ctx, prob, plan = self.ctx, self.ctx.problem, self.ctx.plan
        k = state.k
        checks = ctx.checks
        self.acc.add(state)
        sigma = self.acc.sigma
        kappa = kappa_u(prob, state)
        x_star = ctx.solution
        point = ctx.eval_point(state.x_f, state.x_g)
        gap = point_gap(prob, point, x_star)

        # quasi-Fejer step of the anchor distance
        if "fejer" in checks:
            U_next = plan.metric(k + 1) if k + 1 < plan.horizon else plan.metric(k)
            before = sq_norm_u(state.metric, state.z - ctx.anchor)
            after = sq_norm_u(U_next, state.z_next - ctx.anchor)
            margin = (1.0 + plan.metrics.eta_at(k)) * before + TOL_FEJER - after
            if margin < 0:
                self._fail("quasi_fejer", k, margin)

        if "key_term" in checks:
            kt = key_term_check(prob, plan, state, kappa)
            if not kt.ok:
                self._fail("key_term", k, kt.margin, f"kappa={kt.kappa:.6e} {kt.relation} {kt.reference:.6e}")

        if "fundamental" in checks:
            for j, probe in enumerate([x_star] + self.probes):
                m = fundamental_margin(prob, state, probe, kappa)
                if m < -TOL_FUNDAMENTAL:
                    self._fail("fundamental_inequality", k, m, f"probe {j}")
                    break

        if "gap_sign" in checks and gap < -TOL_GAP_SIGN:
            self._fail("gap_nonnegative_at_solution", k, gap)

        if self._fpr_enabled:
            bound = fpr_rate_bound(ctx.z0, ctx.anchor, plan.metric(0), plan.tau_min, k)
            resid = state.fpr_sq / state.lam ** 2
            self.fpr_bounds.append(bound)
            if resid > bound + TOL_FPR:
                self._fail("fpr_rate", k, bound + TOL_FPR - resid)

        erg_gap = erg_rhs = math.nan
        if ctx.has_ergodic:
            erg_point = ctx.eval_point(self.acc.x_f, self.acc.x_g)
            erg_gap = point_gap(prob, erg_point, x_star)
            erg_rhs = ctx.ergodic_rhs(sigma, x_star)
            if "ergodic" in checks and erg_gap > erg_rhs + TOL_GAP_BOUND:
                self._fail("ergodic_bound", k, erg_rhs + TOL_GAP_BOUND - erg_gap)

        non_rhs = math.nan
        if ctx.has_nonergodic:
            non_rhs = ctx.nonergodic_rhs(k, x_star)
            self.majorants.append(ctx.majorant(state, x_star))
            if "nonergodic" in checks and gap > non_rhs + TOL_GAP_BOUND:
                self._fail("nonergodic_bound", k, non_rhs + TOL_GAP_BOUND - gap)

        if plan.algorithm == "prs" and "prs_distance" in checks:
            dist = prs_ergodic_gap_distance(self.acc, plan.metric(0))
            bound = prs_distance_bound(float(plan.gammas[0]), sigma, ctx.z0, ctx.anchor, plan.metric(0))
            if dist > bound + TOL_PRS_DISTANCE:
                self._fail("prs_ergodic_distance", k, bound + TOL_PRS_DISTANCE - dist)

        primal, dual = self._objectives(point)
        self.records.append(TraceRecord(k, state.fpr_sq, gap, erg_gap, primal, dual, erg_rhs, non_rhs,
                                        kappa, sigma))

    @property
    def passed(self):
        return not self.failures

    def rate_reports(self, tail_fraction=0.5):
        """Slope fits for the FPR^2 series and the last-iterate gap majorant."""
        out = {}
        fpr = [(r.k, r.fpr_sq / self._lam(r.k) ** 2) for r in self.records]
        for name, series in (("fpr_sq", fpr),
                             ("gap_majorant", list(enumerate(self.majorants)))):
            if not series:
                continue
            try:
                out[name] = fit_rate_slope(series, tail_fraction)
            except ValueError as exc:
                out[name] = RateReport(math.nan, math.nan, 0, 0, 0, note=f"not fitted: {exc}")
        return out

    def _lam(self, k):
        return self.ctx.plan.lams[k]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in self.records:
                writer.writerow(r.row())

    def report(self, tail_fraction=0.5):
        rates = self.rate_reports(tail_fraction)
        return {
            "columns": list(TRACE_COLUMNS),
            "algorithm": self.ctx.plan.algorithm,
            "oracle": self.ctx.oracle_kind,
            "iterations": len(self.records),
            "passed": self.passed,
            "failures": [asdict(f) for f in self.failures],
            "rates": {k: v.to_dict() for k, v in rates.items()},
            "records": [dict(zip(TRACE_COLUMNS, [r.k] + [None if _fmt(getattr(r, c)) == "" else float(getattr(r, c))
                                                       for c in TRACE_COLUMNS[1:]]))
                        for r in self.records],
        }

    def write_json(self, path, extra=None, tail_fraction=0.5):
        doc = self.report(tail_fraction)
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(_clean(doc), fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)


def _clean(obj):
    # JSON has no nan; unavailable numbers become null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_trace_csv(path):
    """Load a trace written by :meth:`Monitor.write_csv` as a list of dicts."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header!r}")
        rows = []
        for line in reader:
            if len(line) != len(TRACE_COLUMNS):
                raise ValueError(f"malformed trace row {line!r}")
            row = {"k": int(line[0])}
            for c, v in zip(TRACE_COLUMNS[1:], line[1:]):
                row[c] = math.nan if v == "" else float(v)
            rows.append(row)
    return rows
