"""Run orchestration: default configurations, oracles, artifacts and reports."""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .engine import ALGORITHMS, AlgorithmConfig, prepare, run
from .errors import ConfigError
from .functions import L1, Box, Quadratic, Zero
from .instances import SplitMix64
from .metric import MetricSequence
from .model import MetricClassConfig, build_metric, build_split, metric_sequence, prs_fixed_point

log = logging.getLogger(__name__)

REFERENCE_FPR = 1e-13
CP_TOLERANCE = 1e-12


@dataclass
class RunSpec:
    """Everything needed to reproduce one solver run.

    ``metric_class`` and ``w`` default per algorithm: PPA and FBS use the
    first class with ``w = 1``, FBF the block-diagonal metric, and PRS a
    metric whose coupling equals ``prs_weight`` (block diagonal at the
    default ``prs_weight = 0``). ``metric_schedule`` selects a
    constant metric, a decreasing one (``"decreasing"``, factors
    ``1 + 2^-k``) or an increasing one with summable slack
    (``"increasing"``, factors ``2 - 2^-k``).
    """

    instance: object
    algorithm: str = "ppa"
    level: int = None
    metric_class: int = None
    w: float = None
    prs_weight: float = 0.0
    lam: float = 1.0
    budget: int = 1000
    stop_fpr: float = 1e-10
    seed: int = 0
    oracle: str = "closed-form"
    metric_schedule: str = "constant"
    check_bounds: bool = True
    n_probes: int = 0
    out_dir: str = None

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.level not in (None, 1, 2):
            raise ConfigError("level must be 1 or 2")
        if self.metric_class not in (None, 1, 2):
            raise ConfigError("metric class must be 1 or 2")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if self.oracle not in ("closed-form", "reference"):
            raise ConfigError("oracle must be 'closed-form' or 'reference'")
        if self.metric_schedule not in ("constant", "decreasing", "increasing"):
            raise ConfigError("metric schedule must be constant, decreasing or increasing")
        if self.algorithm == "prs" and self.metric_schedule != "constant":
            raise ConfigError("PRS requires a fixed metric")


@dataclass
class Setup:
    """A validated run ready to execute."""

    spec: RunSpec
    split: object
    model: object
    cfg: MetricClassConfig
    config: AlgorithmConfig
    plan: object
    z0: np.ndarray
    notes: list = field(default_factory=list)


def _metric_scales(mp, algorithm, metric_class, w):
    """Scalar block scales ``(c0, c1)`` with ``V0 = c0 I`` and ``V_i = c1 I``."""
    nb = max(mp.B.norm, 1e-12)
    g_lip = mp.g.grad_lipschitz if mp.g.smooth else 0.0
    lips = [g_lip] + [l.conjugate().grad_lipschitz for l in mp.l if l.conjugate().smooth]
    L = max(lips)
    if metric_class == 1 and w != 0:
        # contraction margin w^2 ||B||^2 / (c0 c1) = 1/4
        c = 2.0 * abs(w) * nb
        if algorithm == "fbs":
            # gamma = 1 must satisfy gamma <= 0.95 * 2 beta rho with rho >= 3c/8
            c = max(c, 1.5 * L)
        return c, c
    if metric_class == 2 and w != 0:
        c = 2.0 * abs(w) * nb
        return c, c
    c = max(nb, 1.0)
    if algorithm == "fbs":
        c = max(c, 0.6 * L)
    return c, c


def default_metric_config(mp, algorithm, level, metric_class=None, w=None, prs_weight=0.0):
    """Scaled-identity metric blocks for ``algorithm``.

    PPA and FBS default to the first class with ``w = 1``. PRS matches the
    metric coupling to its skew weight (so the ``f`` resolvent stays in
    closed form) and FBF uses the block-diagonal metric.
    """
    algorithm = algorithm.lower()
    if w is None:
        w = {"ppa": 1.0, "fbs": 1.0, "prs": float(prs_weight)}.get(algorithm, 0.0)
    if metric_class is None:
        metric_class = 1 if algorithm in ("ppa", "fbs") or w != 0 else 2
    if metric_class == 2 and level == 2:
        raise ConfigError("the second metric class is only defined at level 1")
    c0, c1 = _metric_scales(mp, algorithm, metric_class, w)
    V = [c1 * np.eye(d) for d in mp.B.dual_dims]
    W = [c1 * np.eye(d) for d in mp.B.dual_dims] if level == 2 else None
    if level == 2 and metric_class == 1 and w != 0:
        # keep w^2 (||V^-1/2 B V0^-1/2||^2 + ||W^-1/2 V^-1/2||^2) <= 1/2
        c1 = max(c1, 2.0 * abs(w))
        c0 = max(c0, 2.0 * abs(w) * mp.B.norm ** 2 / c1)
        V = [c1 * np.eye(d) for d in mp.B.dual_dims]
        W = [c1 * np.eye(d) for d in mp.B.dual_dims]
    return MetricClassConfig(metric_class, float(w), c0 * np.eye(mp.primal_dim), V, W, level or 1)


def _schedule_metrics(kind, cfg, B):
    """Constant, decreasing or increasing metrics built from ``cfg``.

    Only the diagonal blocks are scaled, so an increasing schedule needs
    ``eta_k >= delta_k lambda_max(blocks) / rho(U_k)`` with ``delta_k`` the
    factor increment.
    """
    if kind == "constant":
        return MetricSequence(build_metric(cfg, B))
    if kind == "decreasing":
        return metric_sequence(cfg, B, lambda k: 1.0 + 2.0 ** (-k))
    factors = lambda k: 2.0 - 2.0 ** (-k)
    seq = metric_sequence(cfg, B, factors)
    blocks = [cfg.V0] + list(cfg.V) + list(cfg.W or [])
    top = max(float(np.linalg.eigvalsh(np.atleast_2d(b))[-1]) for b in blocks)
    return MetricSequence(seq.at, lambda k: (factors(k + 1) - factors(k)) * top / seq.at(k).rho)


def _fbf_gamma(plan_rho, problem):
    lip = problem.g.grad_lipschitz
    return 0.9 * plan_rho / (lip + problem.skew.norm) if lip + problem.skew.norm > 0 else 1.0


def split_for(mp, algorithm, level=None):
    """Model and split inclusion used by ``algorithm``, plus notes on the choices made."""
    notes = []
    if algorithm == "ppa" and not mp.g.is_zero:
        mp = mp.with_smooth_in_f()
        notes.append("smooth term moved into f for PPA")
    split = build_split(mp, level)
    if algorithm == "ppa" and level is None and split.level == 1 and not split.g.is_zero:
        # smooth conjugates land in g at level 1; level 2 keeps them in the resolvent
        split = build_split(mp, 2)
        notes.append("level 2: PPA needs g = 0")
    notes.append(split.reason)
    return mp, split, notes


def setup(spec):
    """Validate ``spec`` and assemble the split problem, metric and plan."""
    spec.validate()
    inst = spec.instance
    mp, split, notes = split_for(inst.model, spec.algorithm, spec.level)
    cfg = default_metric_config(mp, spec.algorithm, split.level, spec.metric_class, spec.w, spec.prs_weight)
    horizon = spec.budget
    metrics = _schedule_metrics(spec.metric_schedule, cfg, mp.B)
    gamma = 1.0
    if spec.algorithm == "fbf":
        gamma = _fbf_gamma(metrics.rho(horizon), split)
    lam = spec.lam if spec.algorithm != "fbf" else 1.0
    config = AlgorithmConfig(spec.algorithm, metrics, gamma=gamma, lam=lam,
                             w=spec.prs_weight if spec.algorithm == "prs" else 0.0)
    plan = prepare(split, config, horizon)
    rng = SplitMix64(spec.seed)
    z0 = rng.normal(split.layout.size)
    return Setup(spec, split, mp, cfg, config, plan, z0, notes)


def oracle_points(st, budget_factor=10):
    """Return ``(anchor, solution, kind, info)`` for the bound checks.

    ``solution`` is a zero of the split inclusion; ``anchor`` equals it
    except for PRS, where it is the matching fixed point.
    """
    spec, split, plan = st.spec, st.split, st.plan
    inst = spec.instance
    info = {}
    if spec.oracle == "closed-form":
        orc = inst.oracle
        if orc.kind != "closed-form" or orc.x is None:
            raise ConfigError(f"instance {inst.name} has no closed-form oracle; use --oracle reference")
        solution = split.lift(orc.x, orc.y)
        if plan.algorithm == "prs":
            anchor = prs_fixed_point(split, solution, float(plan.gammas[0]), plan.metric(0), plan.w)
        else:
            anchor = solution
        return anchor, solution, "closed-form", info
    ref_budget = budget_factor * spec.budget
    ref_plan = prepare(split, st.config, ref_budget)
    trace = run(split, ref_plan, st.z0, stop=REFERENCE_FPR)
    last = trace[-1]
    fpr = math.sqrt(last.fpr_sq)
    info = {"reference_iterations": len(trace), "reference_fpr": fpr, "reference_converged": fpr <= REFERENCE_FPR}
    if fpr > REFERENCE_FPR:
        log.warning("reference run stopped at FPR %.3e > %.0e", fpr, REFERENCE_FPR)
    anchor = last.z_next
    if plan.algorithm == "prs":
        solution = last.x_g
    else:
        solution = anchor
    return anchor, solution, "reference", info


def _probe_points(st, solution, count):
    rng = SplitMix64(st.spec.seed + 7919)
    out = []
    for _ in range(count):
        u = solution + rng.normal(solution.size)
        out.append(st.split.f.project_domain(st.split.g.project_domain(u)))
    return out


@dataclass
class RunResult:
    setup: Setup
    trace: list
    monitor: dg.Monitor
    oracle_info: dict

    @property
    def passed(self):
        return self.monitor.passed

    def objective_gap(self):
        """Primal objective gap of the last iterate against the oracle objective."""
        orc = self.setup.spec.instance.oracle
        if orc.objective is None or not self.monitor.records:
            return math.nan
        return self.monitor.records[-1].primal_obj - orc.objective


def solve(spec):
    """Execute ``spec``; write artifacts when ``spec.out_dir`` is set."""
    st = setup(spec)
    anchor, solution, kind, info = oracle_points(st)
    checks = dg.BoundContext.__dataclass_fields__["checks"].default if spec.check_bounds else ()
    ctx = dg.BoundContext(st.split, st.plan, st.z0, anchor, solution, kind, model=st.model, checks=checks)
    mon = dg.Monitor(ctx, _probe_points(st, solution, spec.n_probes))
    trace = run(st.split, st.plan, st.z0, stop=spec.stop_fpr, sink=mon)
    result = RunResult(st, trace, mon, info)
    if spec.out_dir:
        write_artifacts(result, spec.out_dir)
    return result


def _summary(result):
    st = result.setup
    orc = st.spec.instance.oracle
    rates = result.monitor.rate_reports()
    return {
        "instance": st.spec.instance.name,
        "seed": st.spec.seed,
        "level": st.split.level,
        "level_reason": st.split.reason,
        "metric_class": st.cfg.metric_class,
        "w": st.cfg.w,
        "metric_certificates": st.cfg.certificates,
        "rho": st.plan.rho,
        "budget": st.spec.budget,
        "stop_fpr": st.spec.stop_fpr,
        "notes": st.notes,
        "oracle_objective": orc.objective,
        "objective_gap": result.objective_gap(),
        "oracle_info": result.oracle_info,
        "slopes": {k: v.to_dict() for k, v in rates.items()},
    }


def write_artifacts(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    result.monitor.write_csv(os.path.join(out_dir, "trace.csv"))
    result.monitor.write_json(os.path.join(out_dir, "report.json"), extra=_summary(result))


def compare_chambolle_pock(instance, tau=None, sigma=None, budget=500, seed=0):
    """Run PPA under the first metric class (``w = 1``) next to a plain primal-dual loop.

    The library run uses ``V0 = I/tau`` and ``V = I/sigma``. The reference
    loop is written directly with numpy::

        x+ = prox_{tau f}(x - tau B^T y)
        y+ = prox_{sigma h*}(y + sigma B (2 x+ - x))

    Returns the largest per-iterate Euclidean deviation.
    """
    mp = instance.model
    if mp.n != 1:
        raise ConfigError("the comparison needs a single dual block")
    if not mp.g.is_zero:
        mp = mp.with_smooth_in_f()
    if not all(isinstance(l, Box) and l.is_point and not np.any(l.lo) for l in mp.l):
        raise ConfigError("the comparison needs l = indicator of {0}")
    Bm = mp.B.dense
    nb = np.linalg.norm(Bm, 2)
    if tau is None:
        tau = 0.9 / nb
    if sigma is None:
        sigma = 0.9 / nb
    n0, m = mp.primal_dim, Bm.shape[0]
    cfg = MetricClassConfig(1, 1.0, np.eye(n0) / tau, [np.eye(m) / sigma])
    U = build_metric(cfg, mp.B)
    split = build_split(mp, 1)
    plan = prepare(split, AlgorithmConfig("ppa", U, gamma=1.0, lam=1.0), budget)
    z0 = SplitMix64(seed).normal(n0 + m)
    trace = run(split, plan, z0, stop=None)

    prox_f = _plain_prox(mp.f)
    prox_h = _plain_prox(mp.h[0])
    x, y = z0[:n0].copy(), z0[n0:].copy()
    worst = 0.0
    for st in trace:
        xp = prox_f(x - tau * (Bm.T @ y), tau)
        u = y + sigma * (Bm @ (2 * xp - x))
        # Moreau: prox_{s h*}(u) = u - s prox_{h/s}(u/s)
        yp = u - sigma * prox_h(u / sigma, 1.0 / sigma)
        x, y = xp, yp
        worst = max(worst, float(np.linalg.norm(st.z_next - np.concatenate([x, y]))))
    return worst


def _plain_prox(fn):
    """Euclidean prox ``(v, t) -> argmin fn + 1/(2t)||. - v||^2`` written out per kind."""
    if isinstance(fn, Zero):
        return lambda v, t: v
    if isinstance(fn, Quadratic):
        Q, q = fn.Q, fn.q
        I = np.eye(fn.dim)
        return lambda v, t: np.linalg.solve(I + t * Q, v - t * q)
    if isinstance(fn, Box):
        return lambda v, t: np.minimum(np.maximum(v, fn.lo), fn.hi)
    if isinstance(fn, L1):
        return lambda v, t: np.sign(v) * np.maximum(np.abs(v) - t * fn.weights, 0.0)
    raise ConfigError(f"no plain prox for {type(fn).__name__}")


def _first_failures(rows):
    """Recheck bound columns of a loaded trace; first failing k per check."""
    found = {}

    def mark(name, k, margin):
        if name not in found:
            found[name] = (k, margin)

    for r in rows:
        k = r["k"]
        for c in dg.TRACE_COLUMNS[1:]:
            v = r[c]
            if not math.isnan(v) and not math.isfinite(v):
                mark("finite_values", k, -math.inf)
        if r["fpr_sq"] < 0:
            mark("fpr_nonnegative", k, r["fpr_sq"])
        erg, erg_rhs = r["gap_ergodic_at_oracle"], r["ergodic_bound_rhs"]
        if not math.isnan(erg_rhs) and erg > erg_rhs + dg.TOL_GAP_BOUND:
            mark("ergodic_bound", k, erg_rhs + dg.TOL_GAP_BOUND - erg)
        gap, non_rhs = r["gap_at_oracle"], r["nonergodic_bound_rhs"]
        if not math.isnan(non_rhs) and gap > non_rhs + dg.TOL_GAP_BOUND:
            mark("nonergodic_bound", k, non_rhs + dg.TOL_GAP_BOUND - gap)
        if not math.isnan(gap) and gap < -dg.TOL_GAP_SIGN:
            mark("gap_nonnegative_at_solution", k, gap)
    sig = [r["sigma_k"] for r in rows]
    for j in range(1, len(sig)):
        if not sig[j] > sig[j - 1]:
            mark("sigma_increasing", rows[j]["k"], sig[j] - sig[j - 1])
            break
    return found


def report(out_dir):
    """Human-readable summary of the artifacts in ``out_dir``.

    Bound columns of the trace are rechecked, so an edited trace is caught
    even when the stored report says the run passed. Returns
    ``(text, passed)``.
    """
    trace_path = os.path.join(out_dir, "trace.csv")
    report_path = os.path.join(out_dir, "report.json")
    rows = dg.read_trace_csv(trace_path)
    with open(report_path) as fh:
        doc = json.load(fh)
    lines = [f"run: {doc.get('instance', '?')} / {doc.get('algorithm', '?')} "
             f"(oracle: {doc.get('oracle', '?')}, level {doc.get('level', '?')}, "
             f"metric class {doc.get('metric_class', '?')}, w={doc.get('w', '?')})"]
    if not rows:
        lines.append("no iterations recorded")
        return "\n".join(lines), False
    failures = {}
    for f in doc.get("failures", []):
        failures.setdefault(f["check"], (f["k"], f["margin"]))
    for name, val in _first_failures(rows).items():
        failures.setdefault(name, val)
    passed = not failures
    if passed:
        lines.append("ALL BOUNDS SATISFIED")
    else:
        lines.append("BOUND CHECKS FAILED")
        for name, (k, margin) in sorted(failures.items(), key=lambda kv: kv[1][0]):
            lines.append(f"  failing check: {name} first at k={k} (margin {margin:.3e})")
    lines.append("")
    lines.append("bound satisfaction by k-decile")
    lines.append(f"  {'k range':>15} {'ergodic':>10} {'nonergodic':>11}")
    n = len(rows)
    edges = np.linspace(0, n, 11).astype(int)
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        chunk = rows[a:b]
        lines.append(f"  {chunk[0]['k']:>7}-{chunk[-1]['k']:<7} {_ratio(chunk, 'gap_ergodic_at_oracle', 'ergodic_bound_rhs'):>10} "
                     f"{_ratio(chunk, 'gap_at_oracle', 'nonergodic_bound_rhs'):>11}")
    lines.append("")
    lines.append("fitted tail slopes (log value vs log(k+1))")
    for name, rep in sorted((doc.get("slopes") or doc.get("rates") or {}).items()):
        slope = rep.get("slope")
        s = "n/a" if slope is None else f"{slope:.4f}"
        lines.append(f"  {name:<14} {s:>10}  {rep.get('note', '')}")
    lines.append("")
    gap = doc.get("objective_gap")
    lines.append(f"oracle objective: {_num(doc.get('oracle_objective'))}")
    lines.append(f"final objective gap: {_num(gap)}")
    lines.append(f"iterations: {n}, final fpr_sq: {rows[-1]['fpr_sq']:.3e}")
    return "\n".join(lines), passed


def _ratio(chunk, col, rhs):
    ok = total = 0
    for r in chunk:
        if math.isnan(r[rhs]):
            continue
        total += 1
        ok += r[col] <= r[rhs] + dg.TOL_GAP_BOUND
    return "n/a" if total == 0 else f"{ok}/{total}"


def _num(v):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6e}"
