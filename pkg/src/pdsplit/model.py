"""Composite model problem and its product-space splittings.

The model problem is

    minimize_x  f(x) + g(x) + sum_i (h_i inf-conv l_i)(B_i x)

with dual

    minimize_y  (f* inf-conv g*)(-B^T y) + sum_i (h_i* + l_i*)(y_i).

Level 1 works on ``(x, y)`` with ``F = f + sum h_i*``, ``G = g + sum l_i*``
and ``S(x, y) = (B^T y, -B x)``. Level 2 adds ``v`` blocks, moves ``l_i``
into ``F`` and uses ``S(x, y, v) = (B^T y, -B x + v, -y)``.

Two families of metrics are provided. The first couples the blocks through
``w B``; the second is block diagonal with a Schur-type dual block. Both
carry a structured resolvent so the steppers can evaluate
``J_{gamma U^{-1}(dF + c S)}`` in closed form when ``gamma c = w``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .engine import InclusionProblem
from .errors import BuildError, CapabilityError
from .functions import Box, Quadratic, Zero
from .metric import MetricOperator, MetricSequence
from .operators import BlockFunction, BlockLinearMap, SkewOperator

log = logging.getLogger(__name__)

CONTRACTION_MARGIN = 1e-8


def _is_point_zero(fn):
    return isinstance(fn, Box) and fn.is_point and not np.any(fn.lo)


@dataclass
class ModelProblem:
    """Data of the composite model.

    ``l[i]`` defaults to the indicator of ``{0}``, in which case
    ``h_i inf-conv l_i = h_i``.
    """

    f: object
    g: object
    h: list
    B: BlockLinearMap
    l: list = None
    name: str = ""

    def __post_init__(self):
        if self.l is None:
            self.l = [Box(np.zeros(d), np.zeros(d)) for d in self.B.dual_dims]
        if not (len(self.h) == len(self.l) == self.B.n):
            raise BuildError("h, l and B must have one entry per dual block")
        if self.f.dim != self.B.primal_dim or self.g.dim != self.B.primal_dim:
            raise BuildError("f and g must live on the primal space")
        for i, (h, l, d) in enumerate(zip(self.h, self.l, self.B.dual_dims)):
            if h.dim != d or l.dim != d:
                raise BuildError(f"h_{i} and l_{i} must have dimension {d}")
            # conjugates must exist in the catalog
            h.conjugate()
            l.conjugate()

    @property
    def n(self):
        return self.B.n

    @property
    def primal_dim(self):
        return self.B.primal_dim

    def infconv(self, i, u):
        """``(h_i inf-conv l_i)(u)`` for the supported closed forms."""
        h, l = self.h[i], self.l[i]
        if _is_point_zero(l):
            return h(u)
        if _is_point_zero(h):
            return l(u)
        for a, b in ((h, l), (l, h)):
            if isinstance(b, Quadratic) and b.is_quadratic and np.allclose(b.Q, b.Q[0, 0] * np.eye(b.dim)) \
                    and not np.any(b.q) and b.c == 0 and b.Q[0, 0] > 0:
                # Moreau envelope of a with parameter 1/c
                c = b.Q[0, 0]
                p = a.prox(u, 1.0 / c)
                return a(p) + 0.5 * c * float((u - p) @ (u - p))
        raise CapabilityError("infimal convolution has no closed form for this pair")

    def primal_objective(self, x):
        x = np.asarray(x, dtype=float)
        Bx = self.B.apply(x)
        offs = np.concatenate([[0], np.cumsum(self.B.dual_dims)])
        total = self.f(x) + self.g(x)
        for i in range(self.n):
            total += self.infconv(i, Bx[offs[i]:offs[i + 1]])
        return float(total)

    def dual_objective(self, y):
        """``(f* inf-conv g*)(-B^T y) + sum_i (h_i* + l_i*)(y_i)``.

        Supported when one of ``f``, ``g`` is zero (the inf-convolution then
        reduces to the conjugate of the other) or is the indicator of a point.
        """
        y = np.asarray(y, dtype=float)
        u = -self.B.adjoint(y)
        if self.f.is_zero:
            head = self.g.conjugate()(u)
        elif self.g.is_zero:
            head = self.f.conjugate()(u)
        else:
            raise CapabilityError("dual objective needs f = 0 or g = 0")
        offs = np.concatenate([[0], np.cumsum(self.B.dual_dims)])
        total = head
        for i in range(self.n):
            yi = y[offs[i]:offs[i + 1]]
            total += self.h[i].conjugate()(yi) + self.l[i].conjugate()(yi)
        return float(total)

    def with_smooth_in_f(self):
        """Equivalent model with ``g`` folded into ``f`` (needed by PPA)."""
        if self.g.is_zero:
            return self
        if self.f.is_zero:
            f = self.g
        elif self.f.is_quadratic and self.g.is_quadratic:
            Qf, qf, cf = self.f.quadratic_form()
            Qg, qg, cg = self.g.quadratic_form()
            f = Quadratic(Qf + Qg, qf + qg, cf + cg)
        else:
            raise CapabilityError("cannot merge g into f for these kinds")
        return ModelProblem(f, Zero(self.primal_dim), self.h, self.B, self.l, self.name)


@dataclass
class SplitProblem(InclusionProblem):
    """Product-space inclusion built from a :class:`ModelProblem`."""

    level: int = 1
    model: ModelProblem = None
    reason: str = ""

    def blocks(self, z):
        """Split a point into ``(x, [y_i], [v_i])``."""
        parts = self.layout.split(np.asarray(z, dtype=float))
        n = self.model.n
        return parts[0], parts[1:1 + n], parts[1 + n:]

    def lift(self, x, y, v=None):
        """Assemble a product point from primal and dual parts."""
        y = np.asarray(y, dtype=float).ravel()
        parts = [np.asarray(x, dtype=float).ravel(), y]
        if self.level == 2:
            if v is None:
                v = self.recover_v(y)
            parts.append(np.asarray(v, dtype=float).ravel())
        return np.concatenate(parts)

    def recover_v(self, y):
        """A point ``v_i`` in ``dl_i*(y_i)`` for each block."""
        offs = np.concatenate([[0], np.cumsum(self.model.B.dual_dims)])
        return np.concatenate([self.model.l[i].conjugate().subgradient(y[offs[i]:offs[i + 1]])
                               for i in range(self.model.n)])


def build_split(mp, level=None):
    """Assemble the level-1 or level-2 inclusion of ``mp``.

    With ``level=None`` level 2 is chosen when some ``l_i*`` is not
    differentiable, and level 1 otherwise.
    """
    hs = [h.conjugate() for h in mp.h]
    ls = [l.conjugate() for l in mp.l]
    if level is None:
        rough = [i for i, c in enumerate(ls) if not c.smooth]
        if rough:
            level, reason = 2, f"level 2: l_i* not differentiable for i in {rough}"
        else:
            level, reason = 1, "level 1: every l_i* is differentiable"
    else:
        reason = f"level {level} requested"
    log.info("build_split: %s", reason)
    if level == 1:
        S = SkewOperator.level1(mp.B)
        F = BlockFunction([mp.f] + hs, S.layout)
        G = BlockFunction([mp.g] + ls, S.layout)
    elif level == 2:
        S = SkewOperator.level2(mp.B)
        F = BlockFunction([mp.f] + hs + list(mp.l), S.layout)
        G = BlockFunction([mp.g] + [Zero(d) for d in mp.B.dual_dims] * 2, S.layout)
    else:
        raise BuildError(f"level must be 1 or 2, got {level}")
    return SplitProblem(f=F, g=G, skew=S, name=mp.name, level=level, model=mp, reason=reason)


def _spd(M, n, what):
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = float(M) * np.eye(n)
    elif M.ndim == 1:
        M = np.diag(M)
    if M.shape != (n, n):
        raise BuildError(f"{what} must be {n}x{n}, got {M.shape}")
    return 0.5 * (M + M.T)


def _inv_sqrt(M):
    ev, Q = linalg.eigh(M)
    return (Q / np.sqrt(ev)) @ Q.T


def _min_eig(M):
    return float(linalg.eigh(M, eigvals_only=True)[0])


@dataclass
class MetricClassConfig:
    """Parameters of a structured metric.

    ``V0`` acts on the primal block, ``V[i]`` and ``W[i]`` on dual block
    ``i``. Scalars and vectors are accepted as scaled identities and
    diagonals.
    """

    metric_class: int
    w: float
    V0: object
    V: list
    W: list = None
    level: int = 1
    certificates: dict = field(default_factory=dict)


def contraction_norms(cfg, B):
    """``||V^{-1/2} B V0^{-1/2}||^2`` and, at level 2, ``||W^{-1/2} V^{-1/2}||^2``."""
    V0 = _spd(cfg.V0, B.primal_dim, "V0")
    V = linalg.block_diag(*[_spd(v, d, f"V_{i}") for i, (v, d) in enumerate(zip(cfg.V, B.dual_dims))])
    K = _inv_sqrt(V) @ B.dense @ _inv_sqrt(V0)
    nu_b = float(linalg.eigh(K @ K.T, eigvals_only=True)[-1])
    nu_w = 0.0
    if cfg.level == 2:
        W = linalg.block_diag(*[_spd(v, d, f"W_{i}") for i, (v, d) in enumerate(zip(cfg.W, B.dual_dims))])
        Kw = _inv_sqrt(W) @ _inv_sqrt(V)
        nu_w = float(linalg.eigh(Kw @ Kw.T, eigvals_only=True)[-1])
    return nu_b, nu_w, V0, V


def build_metric(cfg, B):
    """Assemble the structured metric for ``cfg`` over the dual blocks of ``B``.

    The returned operator has ``rho`` set to the closed-form lower bound on
    its smallest eigenvalue and carries a structured resolvent.
    """
    if cfg.metric_class not in (1, 2):
        raise BuildError(f"metric class must be 1 or 2, got {cfg.metric_class}")
    if cfg.level not in (1, 2):
        raise BuildError(f"level must be 1 or 2, got {cfg.level}")
    if cfg.metric_class == 2 and cfg.level != 1:
        raise BuildError("the second metric class is only defined at level 1")
    if cfg.level == 2 and (cfg.W is None or len(cfg.W) != B.n):
        raise BuildError("level-2 metrics need one W_i per dual block")
    if len(cfg.V) != B.n:
        raise BuildError("one V_i per dual block is required")
    w = float(cfg.w)
    nu_b, nu_w, V0, V = contraction_norms(cfg, B)
    total = w * w * (nu_b + nu_w)
    if total >= 1 - CONTRACTION_MARGIN:
        raise BuildError(
            "contraction condition violated: w^2 ||V^-1/2 B V0^-1/2||^2"
            + (" + w^2 ||W^-1/2 V^-1/2||^2" if cfg.level == 2 else "")
            + f" = {total:.10g} must be < 1")
    mu_v0, mu_v = _min_eig(V0), _min_eig(V)
    Bd = B.dense
    n0, m = B.primal_dim, Bd.shape[0]
    if cfg.metric_class == 1 and cfg.level == 1:
        U = np.block([[V0, -w * Bd.T], [-w * Bd, V]])
        rho = 0.5 * (1 - total) * min(mu_v0, mu_v)
    elif cfg.metric_class == 1:
        W = linalg.block_diag(*[_spd(v, d, f"W_{i}") for i, (v, d) in enumerate(zip(cfg.W, B.dual_dims))])
        Z = np.zeros((n0, m))
        U = np.block([[V0, -w * Bd.T, Z],
                      [-w * Bd, V, w * np.eye(m)],
                      [Z.T, w * np.eye(m), W]])
        rho = (1 - total) * min(mu_v0, mu_v, _min_eig(W)) / 3.0
    else:
        V0i = linalg.inv(V0)
        U = linalg.block_diag(V0, V - w * w * Bd @ V0i @ Bd.T)
        rho = min(mu_v0, (1 - total) * mu_v)
    cfg.certificates = {"norm_B_sq": nu_b, "norm_W_sq": nu_w, "rho_bound": rho,
                        "mu_V0": mu_v0, "mu_V": mu_v}
    info = {"metric_class": cfg.metric_class, "level": cfg.level, "w": w}
    dual_blocks = [_spd(v, d, "V") for v, d in zip(cfg.V, B.dual_dims)]
    W_blocks = None
    if cfg.level == 2:
        W_blocks = [_spd(v, d, "W") for v, d in zip(cfg.W, B.dual_dims)]
    resolver = _StructuredResolver(cfg.metric_class, cfg.level, w, V0, dual_blocks, W_blocks, B)
    # the matrix is SPD by construction once the contraction condition holds
    M = MetricOperator(U, rho=min(rho, linalg.eigh(0.5 * (U + U.T), eigvals_only=True)[0]),
                       resolver=resolver, info=info)
    if M.rho < rho * (1 - 1e-12) - 1e-14:
        # numerically the formula bound exceeded the dense minimum eigenvalue
        log.warning("metric lower bound %.6e above dense minimum %.6e", rho, M.min_eig)
    return M


class _StructuredResolver:
    """Closed-form ``J_{gamma U^{-1}(dF + c S)}`` for the structured metrics.

    Works on the point form of the implicit relation
    ``U (z - p) in gamma dF(p) + w S p`` with ``w = gamma c``.
    Returns ``None`` (declines) when the call does not match its structure.
    """

    def __init__(self, metric_class, level, w, V0, V_blocks, W_blocks, B):
        self.metric_class = metric_class
        self.level = level
        self.w = w
        self.V0 = V0
        self.V0_cho = linalg.cho_factor(V0)
        self.V_blocks = V_blocks
        self.V_cho = [linalg.cho_factor(v) for v in V_blocks]
        self.W_blocks = W_blocks
        self.W_cho = None if W_blocks is None else [linalg.cho_factor(v) for v in W_blocks]
        self.B = B

    def _matches(self, func, skew, coeff, gamma):
        if skew.level != self.level or skew.linear_map is not self.B and not np.array_equal(
                skew.linear_map.dense, self.B.dense):
            return False
        return abs(gamma * coeff - self.w) <= 1e-14 * max(1.0, abs(self.w))

    def __call__(self, func, skew, coeff, gamma, z):
        if not self._matches(func, skew, coeff, gamma):
            return None
        layout = func.layout
        parts = layout.split(z)
        n = self.B.n
        f0, hs = func.parts[0], func.parts[1:1 + n]
        x, ys = parts[0], parts[1:1 + n]
        w = self.w
        Bs = self.B.blocks
        if self.metric_class == 1:
            y_all = np.concatenate(ys)
            xp = f0.prox(x - w * linalg.cho_solve(self.V0_cho, self.B.adjoint(y_all)), gamma, self.V0)
            out_y, out_v = [], []
            for i in range(n):
                shift = w * (Bs[i] @ (2 * xp - x))
                if self.level == 2:
                    vi = parts[1 + n + i]
                    vp = func.parts[1 + n + i].prox(vi + w * linalg.cho_solve(self.W_cho[i], ys[i]),
                                                    gamma, self.W_blocks[i])
                    out_v.append(vp)
                    shift = shift - w * (2 * vp - vi)
                out_y.append(hs[i].prox(ys[i] + linalg.cho_solve(self.V_cho[i], shift), gamma, self.V_blocks[i]))
            return np.concatenate([xp] + out_y + out_v)
        if not f0.is_zero:
            return None
        y_all = np.concatenate(ys)
        x_shift = x - w * linalg.cho_solve(self.V0_cho, self.B.adjoint(y_all))
        out_y = [hs[i].prox(ys[i] + linalg.cho_solve(self.V_cho[i], w * (Bs[i] @ x_shift)), gamma, self.V_blocks[i])
                 for i in range(n)]
        yp = np.concatenate(out_y)
        xp = x - w * linalg.cho_solve(self.V0_cho, self.B.adjoint(yp))
        return np.concatenate([xp, yp])


def fb_class1(cfg, split, z):
    """Forward-backward step under a first-class metric (stepsize folded in).

    Level 1::

        x+   = prox_f^{V0}(x - V0^{-1}(w B^T y + grad g(x)))
        y_i+ = prox_{h_i*}^{V_i}(y_i + V_i^{-1}(w B_i(2 x+ - x) - grad l_i*(y_i)))

    Level 2 (``z = (x, y, v)``)::

        v_i+ = prox_{l_i}^{W_i}(v_i + w W_i^{-1} y_i)
        y_i+ = prox_{h_i*}^{V_i}(y_i + V_i^{-1}(w B_i(2 x+ - x) - w(2 v_i+ - v_i)))
    """
    mp = split.model
    if cfg.metric_class != 1 or cfg.level != split.level:
        raise BuildError("configuration does not match a first-class metric at this level")
    x, ys, vs = split.blocks(z)
    w = float(cfg.w)
    V0 = _spd(cfg.V0, mp.primal_dim, "V0")
    Vs = [_spd(v, d, "V") for v, d in zip(cfg.V, mp.B.dual_dims)]
    y_all = np.concatenate(ys)
    xp = mp.f.prox(x - linalg.solve(V0, w * mp.B.adjoint(y_all) + mp.g.grad(x)), 1.0, V0)
    out_y, out_v = [], []
    for i in range(mp.n):
        Bi = mp.B.blocks[i]
        if split.level == 1:
            rhs = w * (Bi @ (2 * xp - x)) - mp.l[i].conjugate().grad(ys[i])
        else:
            Wi = _spd(cfg.W[i], mp.B.dual_dims[i], "W")
            vp = mp.l[i].prox(vs[i] + w * linalg.solve(Wi, ys[i]), 1.0, Wi)
            out_v.append(vp)
            rhs = w * (Bi @ (2 * xp - x)) - w * (2 * vp - vs[i])
        out_y.append(mp.h[i].conjugate().prox(ys[i] + linalg.solve(Vs[i], rhs), 1.0, Vs[i]))
    return np.concatenate([xp] + out_y + out_v)


def fb_class2(cfg, split, z):
    """Forward-backward step under a second-class metric (requires ``f = 0``)::

        y_i+ = prox_{h_i*}^{V_i}(y_i + V_i^{-1}(w B_i(x - V0^{-1}(grad g(x) + w B^T y)) - grad l_i*(y_i)))
        x+   = x - V0^{-1}(grad g(x) + w B^T y+)
    """
    mp = split.model
    if not mp.f.is_zero:
        raise CapabilityError("the second-class forward-backward step requires f = 0")
    if cfg.metric_class != 2 or split.level != 1:
        raise BuildError("configuration does not match a second-class metric at level 1")
    x, ys, _ = split.blocks(z)
    w = float(cfg.w)
    V0 = _spd(cfg.V0, mp.primal_dim, "V0")
    Vs = [_spd(v, d, "V") for v, d in zip(cfg.V, mp.B.dual_dims)]
    gx = mp.g.grad(x)
    y_all = np.concatenate(ys)
    x_half = x - linalg.solve(V0, gx + w * mp.B.adjoint(y_all))
    out_y = []
    for i in range(mp.n):
        rhs = w * (mp.B.blocks[i] @ x_half) - mp.l[i].conjugate().grad(ys[i])
        out_y.append(mp.h[i].conjugate().prox(ys[i] + linalg.solve(Vs[i], rhs), 1.0, Vs[i]))
    yp = np.concatenate(out_y)
    xp = x - linalg.solve(V0, gx + w * mp.B.adjoint(yp))
    return np.concatenate([xp, yp])


def scaled_config(cfg, s):
    """Copy of ``cfg`` with every block scaled by ``s``."""
    sc = lambda M: s * np.asarray(M, dtype=float)
    return MetricClassConfig(cfg.metric_class, cfg.w, sc(cfg.V0), [sc(v) for v in cfg.V],
                             None if cfg.W is None else [sc(v) for v in cfg.W], cfg.level)


def metric_sequence(cfg, B, factors, eta=None):
    """Metrics ``U_k`` built from ``cfg`` with blocks scaled by ``factors(k)``.

    Non-increasing factors give a decreasing sequence in the Loewner order
    (valid with ``eta = 0``).
    """
    return MetricSequence(lambda k: build_metric(scaled_config(cfg, factors(k)), B), eta)


def block_metric(V0, V, B, level=1, W=None):
    """Block-diagonal metric ``diag(V0, V_1, ..., V_n[, W_1, ..., W_n])``."""
    blocks = [_spd(V0, B.primal_dim, "V0")] + [_spd(v, d, "V") for v, d in zip(V, B.dual_dims)]
    if level == 2:
        blocks += [_spd(v, d, "W") for v, d in zip(W, B.dual_dims)]
    return MetricOperator.block_diagonal(blocks)


def prs_fixed_point(problem, z_star, gamma, U, w):
    """Fixed point of the PRS map attached to a zero ``z_star``.

    Requires ``g`` differentiable so that the matching subgradient is
    ``grad g(z_star)``: ``z = z_star + gamma U^{-1}(grad g(z_star) + (1 - w) S z_star)``.
    """
    if not problem.g.smooth:
        raise CapabilityError("PRS fixed point from a zero needs a differentiable g")
    rhs = problem.g.grad(z_star) + (1 - w) * problem.skew.apply(z_star)
    return z_star + gamma * U.apply_inverse(rhs)
