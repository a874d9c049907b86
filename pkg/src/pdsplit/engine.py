"""Unified primal-dual splitting scheme and its four steppers.

Every stepper solves one instance of

    z+ = z - gamma lam U^{-1} (gf + gg + S x_S)

where ``gf`` is a subgradient of ``f`` at ``x_f`` and ``gg`` a subgradient
of ``g`` at ``x_g``. The steppers return these points and subgradients
explicitly so diagnostics can replay the analysis.

PPA  resolvent of ``df + S`` (``g = 0``), relaxed.
FBS  forward step on ``grad g``, resolvent of ``df + S``, relaxed.
PRS  two resolvents with the skew part split by weight ``w``; fixed metric.
FBF  forward-backward-forward with an explicit skew part; ``lam = 1``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LayoutError
from .metric import MetricOperator, MetricSequence, sq_norm_u, validate_sequence
from .operators import BlockFunction, Resolvent, SkewOperator

log = logging.getLogger(__name__)

ALGORITHMS = ("ppa", "fbs", "prs", "fbf")


@dataclass
class InclusionProblem:
    """``0 in df(z) + dg(z) + S z`` on a product space."""

    f: BlockFunction
    g: BlockFunction
    skew: SkewOperator
    name: str = ""

    def __post_init__(self):
        if not (self.f.layout == self.g.layout == self.skew.layout):
            raise LayoutError("f, g and S must share a layout")

    @property
    def layout(self):
        return self.f.layout


def _sequence(value, horizon, name):
    if callable(value):
        out = np.array([value(k) for k in range(horizon)], dtype=float)
    elif np.ndim(value) == 0:
        out = np.full(horizon, float(value))
    else:
        seq = np.asarray(value, dtype=float)
        if seq.size == 0:
            raise ConfigError(f"{name} sequence is empty")
        out = np.concatenate([seq[:horizon], np.full(max(0, horizon - seq.size), seq[-1])])
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} sequence has non-finite entries")
    return out


@dataclass
class AlgorithmConfig:
    """User-facing algorithm parameters.

    ``gamma`` and ``lam`` may be scalars, sequences (the last entry repeats)
    or callables ``k -> value``. ``metrics`` is a :class:`MetricSequence` or
    a single :class:`MetricOperator`. ``w`` is the skew weight of PRS.
    ``epsilon`` and ``delta`` are the FBS margins; they default to
    ``0.05 * 2 beta rho`` and ``0.01 * inf_j 1/alpha_j``.
    """

    algorithm: str
    metrics: object
    gamma: object = 1.0
    lam: object = 1.0
    w: float = 0.0
    epsilon: float = None
    delta: float = None

    def prepare(self, problem, horizon):
        return prepare(problem, self, horizon)


@dataclass
class Plan:
    """Validated configuration with all derived constants up to a horizon."""

    algorithm: str
    metrics: MetricSequence
    gammas: np.ndarray
    lams: np.ndarray
    alphas: np.ndarray
    w: float
    beta: float
    epsilon: float
    delta: float
    rho: float
    mu: float
    eta_p: float
    eta_s: float
    skew_norm: float
    horizon: int

    def metric(self, k):
        return self.metrics.at(k)

    @property
    def tau_min(self):
        """``inf_k (1 - alpha lam_k) lam_k / alpha`` over the horizon."""
        if self.algorithm == "fbf":
            return 0.0
        a, l = self.alphas, self.lams
        return float(np.min((1.0 - a * l) * l / a))

    @property
    def fpr_weight_min(self):
        """``inf_k (1 - alpha_k lam_k) / (alpha_k lam_k)``."""
        a, l = self.alphas, self.lams
        return float(np.min((1.0 - a * l) / (a * l)))


def prepare(problem, config, horizon):
    """Validate ``config`` against ``problem`` for iterations ``0..horizon-1``."""
    algo = config.algorithm.lower()
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {config.algorithm!r}; expected one of {ALGORITHMS}")
    horizon = int(horizon)
    if horizon < 1:
        raise ConfigError("budget must be at least 1")
    metrics = config.metrics
    if isinstance(metrics, MetricOperator):
        metrics = MetricSequence.constant(metrics)
    if metrics.at(0).dim != problem.layout.size:
        raise ConfigError(f"metric dimension {metrics.at(0).dim} does not match problem size {problem.layout.size}")
    report = validate_sequence(metrics, horizon)
    gammas = _sequence(config.gamma, horizon, "gamma")
    lams = _sequence(config.lam, horizon, "lambda")
    if np.any(gammas <= 0):
        raise ConfigError("stepsizes gamma_k must be positive")
    if np.any(lams <= 0):
        raise ConfigError("relaxation parameters lambda_k must be positive")
    rho = report.rho
    beta = problem.g.beta if problem.g.smooth else None
    epsilon = delta = 0.0
    skew_norm = problem.skew.norm

    if algo == "ppa":
        if not problem.g.is_zero:
            raise ConfigError("PPA requires g = 0 (move smooth terms into f)")
        if np.any(lams > 2):
            raise ConfigError("PPA requires lambda_k in (0, 2]")
        alphas = np.full(horizon, 0.5)
    elif algo == "prs":
        if not metrics.is_constant:
            raise ConfigError("PRS requires a fixed metric (fixed points move with U)")
        if np.ptp(gammas) != 0:
            raise ConfigError("PRS requires a constant stepsize gamma")
        if np.any(lams > 2):
            raise ConfigError("PRS requires lambda_k in (0, 2]")
        alphas = np.full(horizon, 0.5)
    elif algo == "fbs":
        if beta is None:
            raise ConfigError("FBS requires a differentiable g with Lipschitz gradient")
        if np.isinf(beta):
            alphas = np.full(horizon, 0.5)
        else:
            top = 2 * beta * rho
            epsilon = 0.05 * top if config.epsilon is None else float(config.epsilon)
            if not 0 < epsilon < top:
                raise ConfigError(f"FBS requires epsilon in (0, 2 beta rho) = (0, {top:.6g}), got {epsilon:.6g}")
            if np.any(gammas > top - epsilon):
                raise ConfigError(
                    f"FBS stepsize rule violated: gamma_k must lie in (0, 2 beta rho - epsilon] = "
                    f"(0, {top - epsilon:.6g}], got max gamma {gammas.max():.6g}")
            alphas = top / (2 * top - gammas)
        inv_alpha = float(np.min(1.0 / alphas))
        delta = 0.01 * inv_alpha if config.delta is None else float(config.delta)
        if not 0 <= delta < inv_alpha:
            raise ConfigError(f"FBS requires delta in (0, {inv_alpha:.6g})")
        if np.any(lams > 1.0 / alphas - delta + 1e-15):
            raise ConfigError(
                f"FBS relaxation rule violated: lambda_k must lie in (0, 1/alpha_k - delta]; "
                f"max allowed {float(np.min(1.0 / alphas - delta)):.6g}, got {lams.max():.6g}")
    else:
        if beta is None:
            raise ConfigError("FBF requires a differentiable g with Lipschitz gradient")
        if np.any(lams != 1):
            raise ConfigError("FBF requires lambda_k = 1")
        lip = 0.0 if np.isinf(beta) else 1.0 / beta
        bound = np.inf if lip + skew_norm == 0 else rho / (lip + skew_norm)
        if np.any(gammas >= bound):
            raise ConfigError(
                f"FBF stepsize rule violated: gamma_k must lie in (0, rho/(1/beta + |S|)) = (0, {bound:.6g})")
        alphas = np.full(horizon, np.nan)

    return Plan(algorithm=algo, metrics=metrics, gammas=gammas, lams=lams, alphas=alphas,
                w=float(config.w), beta=np.inf if beta is None else float(beta),
                epsilon=epsilon, delta=delta, rho=rho, mu=report.mu,
                eta_p=report.eta_p, eta_s=report.eta_s, skew_norm=skew_norm, horizon=horizon)


@dataclass(frozen=True)
class SchemeState:
    """Snapshot of one iteration ``z^k -> z^{k+1}``."""

    k: int
    z: np.ndarray
    z_next: np.ndarray
    x_f: np.ndarray
    x_g: np.ndarray
    x_S: np.ndarray
    grad_f: np.ndarray
    grad_g: np.ndarray
    gamma: float
    lam: float
    metric: MetricOperator = field(repr=False)
    fpr_sq: float = 0.0


def _finish(k, z, z_next, x_f, x_g, x_S, gf, gg, gamma, lam, U):
    return SchemeState(k=k, z=z, z_next=z_next, x_f=x_f, x_g=x_g, x_S=x_S, grad_f=gf, grad_g=gg,
                       gamma=float(gamma), lam=float(lam), metric=U, fpr_sq=sq_norm_u(U, z_next - z))


def ppa_step(problem, plan, k, z, lam=None):
    gamma, U = plan.gammas[k], plan.metric(k)
    lam = plan.lams[k] if lam is None else lam
    J = Resolvent(problem.f, gamma, U, problem.skew, 1.0)
    x_f = J(z)
    z_next = (1 - lam) * z + lam * x_f
    gf = J.subgradient(z, x_f)
    return _finish(k, z, z_next, x_f, z, x_f, gf, np.zeros_like(z), gamma, lam, U)


def fbs_step(problem, plan, k, z, lam=None):
    gamma, U = plan.gammas[k], plan.metric(k)
    lam = plan.lams[k] if lam is None else lam
    grad = problem.g.grad(z)
    forward = z - gamma * U.apply_inverse(grad)
    J = Resolvent(problem.f, gamma, U, problem.skew, 1.0)
    x_f = J(forward)
    z_next = (1 - lam) * z + lam * x_f
    gf = J.subgradient(forward, x_f)
    return _finish(k, z, z_next, x_f, z, x_f, gf, grad, gamma, lam, U)


def prs_step(problem, plan, k, z, lam=None):
    gamma, U, w = plan.gammas[k], plan.metric(k), plan.w
    lam = plan.lams[k] if lam is None else lam
    Jg = Resolvent(problem.g, gamma, U, problem.skew, 1.0 - w)
    Jf = Resolvent(problem.f, gamma, U, problem.skew, w)
    x_g = Jg(z)
    reflected = 2 * x_g - z
    x_f = Jf(reflected)
    z_next = z + lam * (x_f - x_g)
    gg = Jg.subgradient(z, x_g)
    gf = Jf.subgradient(reflected, x_f)
    x_S = w * x_f + (1 - w) * x_g
    return _finish(k, z, z_next, x_f, x_g, x_S, gf, gg, gamma, lam, U)


def fbf_step(problem, plan, k, z, lam=None):
    gamma, U = plan.gammas[k], plan.metric(k)
    S = problem.skew
    y = z - gamma * U.apply_inverse(problem.g.grad(z) + S.apply(z))
    J = Resolvent(problem.f, gamma, U)
    x_f = J(y)
    gx = problem.g.grad(x_f)
    w_pt = x_f - gamma * U.apply_inverse(gx + S.apply(x_f))
    z_next = z - y + w_pt
    gf = J.subgradient(y, x_f)
    return _finish(k, z, z_next, x_f, x_f, x_f, gf, gx, gamma, 1.0, U)


STEPPERS = {"ppa": ppa_step, "fbs": fbs_step, "prs": prs_step, "fbf": fbf_step}


def step(problem, plan, k, z, lam=None):
    return STEPPERS[plan.algorithm](problem, plan, k, np.asarray(z, dtype=float), lam)


def unified_update(problem, state):
    """Right-hand side of the unified update, rebuilt from the state."""
    U = state.metric
    total = state.grad_f + state.grad_g + problem.skew.apply(state.x_S)
    return state.z - state.gamma * state.lam * U.apply_inverse(total)


def run(problem, plan, z0, budget=None, stop=1e-10, sink=None):
    """Iterate until ``budget`` steps or ``||z^{k+1} - z^k||_{U_k} <= stop``.

    Returns the list of :class:`SchemeState` snapshots; each is also passed
    to ``sink`` when given.
    """
    budget = plan.horizon if budget is None else int(budget)
    if budget < 1 or budget > plan.horizon:
        raise ConfigError(f"budget must lie in [1, {plan.horizon}]")
    z = problem.layout.check(z0).copy()
    trace = []
    for k in range(budget):
        state = step(problem, plan, k, z)
        if not np.all(np.isfinite(state.z_next)):
            raise FloatingPointError(f"non-finite iterate at k={k}")
        trace.append(state)
        if sink is not None:
            sink(state)
        z = state.z_next
        if stop is not None and np.sqrt(state.fpr_sq) <= stop:
            log.debug("stopped at k=%d with fpr=%.3e", k, np.sqrt(state.fpr_sq))
            break
    return trace
