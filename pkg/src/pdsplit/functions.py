"""Catalog of closed proper convex functions with closed-form proxes.

Every entry evaluates its value (``inf`` outside the domain), returns one
subgradient, and computes

    prox(x, gamma, metric) = argmin_y f(y) + 1/(2 gamma) ||y - x||_M^2

for the metrics it supports. Separable entries accept diagonal metrics,
group entries accept metrics that are constant on each group, and
quadratics and affine indicators accept any SPD metric. Other pairings
raise :class:`CapabilityError`.

Conjugates are exact catalog entries where a closed form exists
(quadratic <-> quadratic, l1 <-> box, group-l2 <-> product of balls,
point <-> linear) and a Moreau-decomposition wrapper otherwise.
``f.conjugate().conjugate()`` returns ``f`` itself.
"""

import numpy as np
from scipy import linalg

from .errors import CapabilityError

FEAS_TOL = 1e-9


def _as_metric(metric, n):
    """Normalize a metric argument to ``(diag, dense)``.

    ``diag`` is the diagonal vector when the metric is diagonal (or absent),
    otherwise ``None``.  ``dense`` is the full matrix or ``None`` for the
    identity.
    """
    if metric is None:
        return np.ones(n), None
    M = getattr(metric, "matrix", metric)
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M * np.eye(n)
    elif M.ndim == 1:
        return M.copy(), np.diag(M)
    if M.shape != (n, n):
        raise ValueError(f"metric of shape {M.shape} does not match dimension {n}")
    d = np.diag(M).copy()
    if np.count_nonzero(M - np.diag(d)) == 0:
        return d, M
    return None, M


def _invert_metric(metric, n):
    d, M = _as_metric(metric, n)
    if d is not None:
        return 1.0 / d
    return linalg.inv(M)


def _feasible(violation, scale):
    return violation <= FEAS_TOL * (1.0 + scale)


class ProximableFunction:
    """Base class for catalog entries on ``R^dim``."""

    kind = "base"

    def __init__(self, dim):
        self.dim = int(dim)
        self._dual = None

    def __call__(self, x):
        raise NotImplementedError

    def prox(self, x, gamma=1.0, metric=None):
        raise NotImplementedError

    def subgradient(self, x):
        raise NotImplementedError

    def _make_conjugate(self):
        return Conjugate(self)

    def conjugate(self):
        if self._dual is None:
            dual = self._make_conjugate()
            dual._dual = self
            self._dual = dual
        return self._dual

    # modulus of strong convexity
    strong_convexity = 0.0
    # Lipschitz constant of the gradient, inf when nonsmooth
    grad_lipschitz = np.inf
    # Lipschitz constant of the function itself
    lipschitz = np.inf

    @property
    def smooth(self):
        return np.isfinite(self.grad_lipschitz)

    @property
    def beta(self):
        """Cocoercivity constant of the gradient, ``1 / grad_lipschitz``."""
        L = self.grad_lipschitz
        return np.inf if L == 0 else 1.0 / L

    def grad(self, x):
        raise CapabilityError(f"{self.kind} is not differentiable")

    def project_domain(self, x):
        return np.asarray(x, dtype=float)

    def support(self, y):
        raise CapabilityError(f"no closed-form support function for {self.kind}")

    def support_subgradient(self, y):
        raise CapabilityError(f"no closed-form support subgradient for {self.kind}")

    @property
    def is_zero(self):
        return False

    @property
    def is_quadratic(self):
        return False

    def describe(self):
        raise CapabilityError(f"{self.kind} cannot be serialized")

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class Zero(ProximableFunction):
    kind = "zero"
    grad_lipschitz = 0.0
    lipschitz = 0.0

    def __call__(self, x):
        return 0.0

    def prox(self, x, gamma=1.0, metric=None):
        return np.array(x, dtype=float)

    def subgradient(self, x):
        return np.zeros(self.dim)

    def grad(self, x):
        return np.zeros(self.dim)

    def _make_conjugate(self):
        return Box(np.zeros(self.dim), np.zeros(self.dim))

    @property
    def is_zero(self):
        return True

    @property
    def is_quadratic(self):
        return True

    def quadratic_form(self):
        n = self.dim
        return np.zeros((n, n)), np.zeros(n), 0.0

    def describe(self):
        return {"kind": "zero", "dim": self.dim}


class Quadratic(ProximableFunction):
    """``f(x) = 1/2 x^T Q x + q^T x + c`` with ``Q`` symmetric PSD."""

    kind = "quadratic"

    def __init__(self, Q, q=None, c=0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        super().__init__(Q.shape[0])
        if Q.shape != (self.dim, self.dim):
            raise ValueError("Q must be square")
        self.Q = 0.5 * (Q + Q.T)
        self.q = np.zeros(self.dim) if q is None else np.asarray(q, dtype=float).reshape(self.dim)
        self.c = float(c)
        evals = linalg.eigh(self.Q, eigvals_only=True)
        if evals[0] < -1e-10 * max(1.0, abs(evals[-1])):
            raise ValueError("Q must be positive semidefinite")
        self.strong_convexity = max(0.0, float(evals[0]))
        self.grad_lipschitz = max(0.0, float(evals[-1]))
        self.lipschitz = float(np.linalg.norm(self.q)) if self.grad_lipschitz == 0 else np.inf

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.c)

    def grad(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.q

    subgradient = grad

    def prox(self, x, gamma=1.0, metric=None):
        x = np.asarray(x, dtype=float)
        d, M = _as_metric(metric, self.dim)
        if M is None:
            M = np.eye(self.dim)
        return linalg.solve(gamma * self.Q + M, M @ x - gamma * self.q, assume_a="pos")

    def _make_conjugate(self):
        if self.grad_lipschitz == 0:
            if self.c != 0:
                raise CapabilityError("conjugate of an affine function with nonzero offset")
            return Box(self.q, self.q)
        if self.strong_convexity <= 0:
            raise CapabilityError("conjugate of a singular quadratic has no catalog form")
        Qi = linalg.inv(self.Q)
        Qi = 0.5 * (Qi + Qi.T)
        return Quadratic(Qi, -Qi @ self.q, 0.5 * self.q @ Qi @ self.q - self.c)

    @property
    def is_zero(self):
        return self.grad_lipschitz == 0 and not np.any(self.q) and self.c == 0

    @property
    def is_quadratic(self):
        return True

    def quadratic_form(self):
        return self.Q, self.q, self.c

    def describe(self):
        return {"kind": "quadratic", "Q": self.Q.tolist(), "q": self.q.tolist(), "c": self.c}


def linear(a):
    """``f(x) = <a, x>``."""
    a = np.asarray(a, dtype=float)
    return Quadratic(np.zeros((a.size, a.size)), a)


def squared_distance(a, scale=1.0):
    """``f(x) = scale/2 ||x - a||^2``."""
    a = np.asarray(a, dtype=float)
    return Quadratic(scale * np.eye(a.size), -scale * a, 0.5 * scale * a @ a)


def least_squares(A, b):
    """``f(x) = 1/2 ||A x - b||^2``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    return Quadratic(A.T @ A, -A.T @ b, 0.5 * b @ b)


class Box(ProximableFunction):
    """Indicator of ``{x : lo <= x <= hi}``; bounds may be infinite."""

    kind = "box"

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        super().__init__(lo.size)
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must satisfy lo <= hi")
        self.lo = lo.copy()
        self.hi = hi.copy()
        self.is_point = bool(np.all(lo == hi))
        self.bounded = bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        viol = max(np.max(self.lo - x, initial=0.0), np.max(x - self.hi, initial=0.0))
        scale = np.max(np.abs(np.where(np.isfinite(self.lo), self.lo, 0)), initial=0.0)
        scale = max(scale, np.max(np.abs(np.where(np.isfinite(self.hi), self.hi, 0)), initial=0.0))
        return 0.0 if _feasible(viol, scale) else np.inf

    def prox(self, x, gamma=1.0, metric=None):
        if self.is_point:
            return self.lo.copy()
        d, M = _as_metric(metric, self.dim)
        if d is None:
            raise CapabilityError("box projection under a non-diagonal metric")
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def subgradient(self, x):
        return np.zeros(self.dim)

    def project_domain(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    @property
    def radius(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def support(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            terms = np.where(y > 0, self.hi * y, np.where(y < 0, self.lo * y, 0.0))
        if np.any(np.isinf(terms)):
            # tiny wrong-sign entries from rounding are treated as zero
            bad = np.isinf(terms) & (np.abs(y) > FEAS_TOL)
            if np.any(bad):
                return np.inf
            terms = np.where(np.isinf(terms), 0.0, terms)
        return float(np.sum(terms))

    def support_subgradient(self, y):
        y = np.asarray(y, dtype=float)
        base = np.clip(np.zeros(self.dim), self.lo, self.hi)
        return np.where(y > 0, self.hi, np.where(y < 0, self.lo, base))

    def _make_conjugate(self):
        if self.is_point:
            return linear(self.lo)
        if self.bounded and np.all(self.lo == -self.hi):
            return L1(self.hi)
        return Conjugate(self)

    def describe(self):
        return {"kind": "box", "lo": _encode(self.lo), "hi": _encode(self.hi)}


def orthant(dim):
    """Indicator of the nonnegative orthant."""
    return Box(np.zeros(dim), np.full(dim, np.inf))


def point(a):
    """Indicator of ``{a}``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return Box(a, a)


class L1(ProximableFunction):
    """Weighted l1 norm ``sum_j w_j |x_j|``."""

    kind = "l1"

    def __init__(self, weights, dim=None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        if dim is not None and w.size == 1:
            w = np.full(dim, w[0])
        super().__init__(w.size)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        self.weights = w
        self.lipschitz = float(np.linalg.norm(w))

    def __call__(self, x):
        return float(self.weights @ np.abs(np.asarray(x, dtype=float)))

    def prox(self, x, gamma=1.0, metric=None):
        d, M = _as_metric(metric, self.dim)
        if d is None:
            raise CapabilityError("l1 prox under a non-diagonal metric")
        x = np.asarray(x, dtype=float)
        t = gamma * self.weights / d
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def subgradient(self, x):
        return self.weights * np.sign(np.asarray(x, dtype=float))

    def _make_conjugate(self):
        return Box(-self.weights, self.weights)

    def describe(self):
        return {"kind": "l1", "weights": self.weights.tolist()}


def _check_groups(groups, dim):
    groups = [np.asarray(g, dtype=int) for g in groups]
    flat = np.sort(np.concatenate(groups)) if groups else np.array([], dtype=int)
    if flat.size != dim or np.any(flat != np.arange(dim)):
        raise ValueError("groups must partition the coordinates")
    return groups


def _group_scales(metric, groups, dim, what):
    d, M = _as_metric(metric, dim)
    if d is None:
        raise CapabilityError(f"{what} under a non-diagonal metric")
    scales = []
    for g in groups:
        if np.ptp(d[g]) != 0:
            raise CapabilityError(f"{what} needs a metric that is constant on each group")
        scales.append(d[g][0])
    return scales


class GroupL2(ProximableFunction):
    """Sum of weighted l2 norms over a partition of the coordinates."""

    kind = "group_l2"

    def __init__(self, groups, weights, dim):
        super().__init__(dim)
        self.groups = _check_groups(groups, self.dim)
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if self.weights.size != len(self.groups) or np.any(self.weights < 0):
            raise ValueError("one nonnegative weight per group is required")
        self.lipschitz = float(np.linalg.norm(self.weights))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(t * np.linalg.norm(x[g]) for g, t in zip(self.groups, self.weights)))

    def prox(self, x, gamma=1.0, metric=None):
        x = np.asarray(x, dtype=float)
        scales = _group_scales(metric, self.groups, self.dim, "group-l2 prox")
        out = np.zeros(self.dim)
        for g, t, s in zip(self.groups, self.weights, scales):
            nrm = np.linalg.norm(x[g])
            thr = gamma * t / s
            if nrm > thr:
                out[g] = (1.0 - thr / nrm) * x[g]
        return out

    def subgradient(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.dim)
        for g, t in zip(self.groups, self.weights):
            nrm = np.linalg.norm(x[g])
            if nrm > 0:
                out[g] = t * x[g] / nrm
        return out

    def _make_conjugate(self):
        return GroupBall(self.groups, self.weights, self.dim)

    def describe(self):
        return {"kind": "group_l2", "groups": [g.tolist() for g in self.groups],
                "weights": self.weights.tolist(), "dim": self.dim}


def l2_norm(dim, scale=1.0):
    """``scale * ||x||_2``."""
    return GroupL2([np.arange(dim)], [scale], dim)


class GroupBall(ProximableFunction):
    """Indicator of ``{y : ||y_g|| <= r_g for every group g}``."""

    kind = "group_ball"

    def __init__(self, groups, radii, dim):
        super().__init__(dim)
        self.groups = _check_groups(groups, self.dim)
        self.radii = np.atleast_1d(np.asarray(radii, dtype=float))
        if self.radii.size != len(self.groups) or np.any(self.radii < 0):
            raise ValueError("one nonnegative radius per group is required")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        for g, r in zip(self.groups, self.radii):
            if not _feasible(np.linalg.norm(y[g]) - r, r):
                return np.inf
        return 0.0

    def project_domain(self, y):
        y = np.array(y, dtype=float)
        for g, r in zip(self.groups, self.radii):
            nrm = np.linalg.norm(y[g])
            if nrm > r:
                y[g] *= r / nrm
        return y

    def prox(self, y, gamma=1.0, metric=None):
        _group_scales(metric, self.groups, self.dim, "ball projection")
        return self.project_domain(y)

    def subgradient(self, y):
        return np.zeros(self.dim)

    @property
    def radius(self):
        return float(np.linalg.norm(self.radii))

    def support(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(r * np.linalg.norm(x[g]) for g, r in zip(self.groups, self.radii)))

    def _make_conjugate(self):
        return GroupL2(self.groups, self.radii, self.dim)

    def describe(self):
        return {"kind": "group_ball", "groups": [g.tolist() for g in self.groups],
                "radii": self.radii.tolist(), "dim": self.dim}


class Affine(ProximableFunction):
    """Indicator of ``{x : C x = d}`` for a consistent system."""

    kind = "affine"

    def __init__(self, C, d):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        super().__init__(C.shape[1])
        self.C = C
        self.d = np.asarray(d, dtype=float).reshape(C.shape[0])
        self.x0 = np.linalg.lstsq(C, self.d, rcond=None)[0]
        if np.linalg.norm(C @ self.x0 - self.d) > 1e-9 * (1 + np.linalg.norm(self.d)):
            raise ValueError("affine system is inconsistent")
        # orthogonal projector onto range(C^T)
        self._row = linalg.orth(C.T)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        viol = np.linalg.norm(self.C @ x - self.d)
        return 0.0 if _feasible(viol, np.linalg.norm(self.d) + np.linalg.norm(self.C) * np.linalg.norm(x)) else np.inf

    def prox(self, x, gamma=1.0, metric=None):
        x = np.asarray(x, dtype=float)
        Mi = _invert_metric(metric, self.dim)
        MiCt = (Mi[:, None] * self.C.T) if Mi.ndim == 1 else Mi @ self.C.T
        K = self.C @ MiCt
        lam = np.linalg.lstsq(K, self.C @ x - self.d, rcond=None)[0]
        return x - MiCt @ lam

    project_domain = prox

    def subgradient(self, x):
        return np.zeros(self.dim)

    def support(self, y):
        y = np.asarray(y, dtype=float)
        resid = y - self._row @ (self._row.T @ y)
        if np.linalg.norm(resid) > FEAS_TOL * (1 + np.linalg.norm(y)):
            return np.inf
        return float(y @ self.x0)

    def support_subgradient(self, y):
        return self.x0.copy()

    def describe(self):
        return {"kind": "affine", "C": self.C.tolist(), "d": self.d.tolist()}


class Conjugate(ProximableFunction):
    """Fenchel conjugate of a catalog entry with a closed-form support function.

    The prox uses the Moreau decomposition in the metric ``M``:
    ``prox^M_{gamma f*}(x) = x - gamma M^{-1} prox^{M^{-1}}_{f/gamma}(M x / gamma)``.
    """

    kind = "conjugate"

    def __init__(self, base):
        super().__init__(base.dim)
        self.base = base
        self._dual = base
        if hasattr(base, "radius"):
            self.lipschitz = base.radius

    def __call__(self, y):
        return self.base.support(y)

    def prox(self, x, gamma=1.0, metric=None):
        x = np.asarray(x, dtype=float)
        d, M = _as_metric(metric, self.dim)
        if d is not None:
            u = d * x / gamma
            q = self.base.prox(u, 1.0 / gamma, 1.0 / d)
            return x - gamma * q / d
        Mi = linalg.inv(M)
        q = self.base.prox(M @ x / gamma, 1.0 / gamma, 0.5 * (Mi + Mi.T))
        return x - gamma * Mi @ q

    def subgradient(self, y):
        return self.base.support_subgradient(y)

    def project_domain(self, y):
        y = np.asarray(y, dtype=float)
        if isinstance(self.base, Box):
            lo = np.where(np.isfinite(self.base.lo), -np.inf, 0.0)
            hi = np.where(np.isfinite(self.base.hi), np.inf, 0.0)
            return np.clip(y, lo, hi)
        if isinstance(self.base, Affine):
            return self.base._row @ (self.base._row.T @ y)
        return y

    def describe(self):
        return {"kind": "conjugate", "of": self.base.describe()}


def _encode(a):
    return [None if not np.isfinite(v) else float(v) for v in a] if np.any(~np.isfinite(a)) else a.tolist()


def _decode(a):
    return np.array([np.nan if v is None else v for v in a], dtype=float)


def from_description(desc):
    """Rebuild a catalog entry from :meth:`ProximableFunction.describe` output."""
    kind = desc["kind"]
    if kind == "zero":
        return Zero(desc["dim"])
    if kind == "quadratic":
        return Quadratic(desc["Q"], desc["q"], desc.get("c", 0.0))
    if kind == "box":
        lo = _decode(desc["lo"])
        hi = _decode(desc["hi"])
        return Box(np.where(np.isnan(lo), -np.inf, lo), np.where(np.isnan(hi), np.inf, hi))
    if kind == "l1":
        return L1(desc["weights"])
    if kind == "group_l2":
        return GroupL2(desc["groups"], desc["weights"], desc["dim"])
    if kind == "group_ball":
        return GroupBall(desc["groups"], desc["radii"], desc["dim"])
    if kind == "affine":
        return Affine(desc["C"], desc["d"])
    if kind == "conjugate":
        return from_description(desc["of"]).conjugate()
    raise ValueError(f"unknown function kind {kind!r}")
