"""Linear maps, skew operators, block-separable functions and resolvents."""

import numpy as np
from scipy import linalg

from .errors import CapabilityError, LayoutError
from .functions import ProximableFunction, Zero
from .metric import Layout


def operator_norm(M, iters=200, tol=1e-10):
    """Largest singular value of a dense matrix.

    Runs power iteration on ``M^T M`` and falls back to a dense SVD when the
    iteration has not settled to relative tolerance ``tol`` after ``iters``
    steps.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.any(M):
        return 0.0
    n = M.shape[1]
    v = np.ones(n) / np.sqrt(n) + 1e-3 * np.arange(n) / max(n, 1)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max(1, int(iters))):
        w = M.T @ (M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        v = w / nrm
        if abs(nrm - est) <= tol * nrm:
            return float(np.sqrt(nrm))
        est = nrm
    return float(np.linalg.norm(M, 2))


class BlockLinearMap:
    """Stack of dense maps ``B_i : H_0 -> H_i``."""

    def __init__(self, blocks):
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if not blocks:
            raise LayoutError("at least one block is required")
        n0 = blocks[0].shape[1]
        if any(b.shape[1] != n0 for b in blocks):
            raise LayoutError("all blocks must share the primal dimension")
        self.blocks = blocks
        self.primal_dim = n0
        self.dual_dims = tuple(b.shape[0] for b in blocks)
        self.dense = np.vstack(blocks)
        self._norm = None

    @property
    def n(self):
        return len(self.blocks)

    def apply(self, x):
        return self.dense @ x

    def adjoint(self, y):
        return self.dense.T @ y

    @property
    def norm(self):
        if self._norm is None:
            self._norm = operator_norm(self.dense)
        return self._norm


class SkewOperator:
    """Skew-symmetric linear map on a product space.

    Parameters
    ----------
    matrix : array_like
        Dense skew-symmetric matrix.
    layout : Layout
    level : int or None
        1 for ``(x, y) -> (B^T y, -B x)``, 2 for
        ``(x, y, v) -> (B^T y, -B x + v, -y)``, ``None`` for a generic skew map.
    linear_map : BlockLinearMap, optional
    """

    def __init__(self, matrix, layout, level=None, linear_map=None):
        S = np.atleast_2d(np.asarray(matrix, dtype=float))
        if S.shape != (layout.size, layout.size):
            raise LayoutError(f"skew matrix shape {S.shape} does not match {layout}")
        if np.abs(S + S.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(S).max(initial=0.0)):
            raise ValueError("matrix is not skew-symmetric")
        self.matrix = 0.5 * (S - S.T)
        self.layout = layout
        self.level = level
        self.linear_map = linear_map
        self._norm = None

    @classmethod
    def level1(cls, B):
        n0, m = B.primal_dim, sum(B.dual_dims)
        S = np.zeros((n0 + m, n0 + m))
        S[:n0, n0:] = B.dense.T
        S[n0:, :n0] = -B.dense
        return cls(S, Layout((n0,) + B.dual_dims), level=1, linear_map=B)

    @classmethod
    def level2(cls, B):
        n0, m = B.primal_dim, sum(B.dual_dims)
        S = np.zeros((n0 + 2 * m, n0 + 2 * m))
        y, v = slice(n0, n0 + m), slice(n0 + m, n0 + 2 * m)
        S[:n0, y] = B.dense.T
        S[y, :n0] = -B.dense
        S[y, v] = np.eye(m)
        S[v, y] = -np.eye(m)
        return cls(S, Layout((n0,) + B.dual_dims * 2), level=2, linear_map=B)

    @classmethod
    def zero(cls, layout):
        return cls(np.zeros((layout.size, layout.size)), layout)

    def apply(self, z):
        return self.matrix @ z

    @property
    def norm(self):
        """Certified operator norm, cached after the first call."""
        if self._norm is None:
            self._norm = operator_norm(self.matrix)
        return self._norm

    @property
    def is_zero(self):
        return not np.any(self.matrix)


class BlockFunction:
    """Separable sum ``F(z) = sum_b F_b(z_b)`` over the blocks of a layout."""

    def __init__(self, parts, layout):
        if len(parts) != layout.nblocks:
            raise LayoutError(f"expected {layout.nblocks} parts, got {len(parts)}")
        for p, d in zip(parts, layout.dims):
            if not isinstance(p, ProximableFunction) or p.dim != d:
                raise LayoutError(f"part {p!r} does not match block dimension {d}")
        self.parts = list(parts)
        self.layout = layout

    @classmethod
    def zero(cls, layout):
        return cls([Zero(d) for d in layout.dims], layout)

    def __call__(self, z):
        total = 0.0
        for p, zb in zip(self.parts, self.layout.split(np.asarray(z, dtype=float))):
            total += p(zb)
            if total == np.inf:
                return np.inf
        return float(total)

    @property
    def is_zero(self):
        return all(p.is_zero for p in self.parts)

    @property
    def is_quadratic(self):
        return all(p.is_quadratic for p in self.parts)

    @property
    def smooth(self):
        return all(p.smooth for p in self.parts)

    @property
    def grad_lipschitz(self):
        return max(p.grad_lipschitz for p in self.parts)

    @property
    def beta(self):
        L = self.grad_lipschitz
        return np.inf if L == 0 else 1.0 / L

    @property
    def lipschitz(self):
        return float(np.sqrt(sum(p.lipschitz ** 2 for p in self.parts)))

    def grad(self, z):
        return np.concatenate([p.grad(zb) for p, zb in zip(self.parts, self.layout.split(z))])

    def subgradient(self, z):
        return np.concatenate([p.subgradient(zb) for p, zb in zip(self.parts, self.layout.split(z))])

    def project_domain(self, z):
        return np.concatenate([p.project_domain(zb) for p, zb in zip(self.parts, self.layout.split(z))])

    def quadratic_form(self):
        """Dense ``(Q, q, c)`` when every part is quadratic."""
        if not self.is_quadratic:
            raise CapabilityError("function is not quadratic")
        forms = [p.quadratic_form() for p in self.parts]
        return (linalg.block_diag(*[f[0] for f in forms]),
                np.concatenate([f[1] for f in forms]),
                sum(f[2] for f in forms))

    def prox(self, z, gamma, metric):
        """``argmin_p F(p) + 1/(2 gamma) ||p - z||_U^2``."""
        z = np.asarray(z, dtype=float)
        blocks = metric.blocks(self.layout) if metric is not None else None
        if metric is None or blocks is not None:
            mats = blocks if blocks is not None else [None] * self.layout.nblocks
            return np.concatenate([p.prox(zb, gamma, M) for p, zb, M in
                                   zip(self.parts, self.layout.split(z), mats)])
        if self.is_quadratic:
            return _quadratic_resolvent(self, None, 0.0, gamma, metric, z)
        raise CapabilityError("prox of a non-quadratic block function under a coupled metric")


def _quadratic_resolvent(func, skew, coeff, gamma, metric, z):
    Q, q, _ = func.quadratic_form()
    U = metric.matrix if metric is not None else np.eye(z.size)
    K = U + gamma * Q
    if skew is not None and coeff != 0:
        K = K + gamma * coeff * skew.matrix
    return linalg.solve(K, U @ z - gamma * q)


def skew_resolvent(skew, gamma, V0, V, z):
    """Resolvent of ``gamma * S`` for a level-1 skew map.

    The metric is ``diag(V0^{-1}, V^{-1})``, so the result solves
    ``diag(V0^{-1}, V^{-1}) (z - z+) = gamma S z+``:

        x+ = (I + gamma^2 V0 B^T V B)^{-1} (x - gamma V0 B^T y)
        y+ = (I + gamma^2 V B V0 B^T)^{-1} (y + gamma V B x)
    """
    if skew.level != 1:
        raise CapabilityError("closed-form skew resolvent needs the level-1 form")
    B = skew.linear_map.dense
    V0 = np.atleast_2d(getattr(V0, "matrix", V0))
    V = np.atleast_2d(getattr(V, "matrix", V))
    n0 = B.shape[1]
    x, y = z[:n0], z[n0:]
    I0, I1 = np.eye(n0), np.eye(B.shape[0])
    xp = linalg.solve(I0 + gamma ** 2 * V0 @ B.T @ V @ B, x - gamma * V0 @ (B.T @ y))
    yp = linalg.solve(I1 + gamma ** 2 * V @ B @ V0 @ B.T, y + gamma * V @ (B @ x))
    return np.concatenate([xp, yp])


def resolvent(func, skew, coeff, gamma, metric, z):
    """Evaluate ``J_{gamma U^{-1}(dF + coeff S)}(z)``.

    The result ``p`` solves ``U (z - p) in gamma dF(p) + gamma coeff S p``.
    Structured metrics may carry their own evaluator; otherwise separable
    proxes, the closed-form skew resolvent and a dense linear solve for
    quadratics are tried in that order.
    """
    z = np.asarray(z, dtype=float)
    has_skew = skew is not None and coeff != 0 and not skew.is_zero
    if has_skew and metric is not None and metric.resolver is not None:
        out = metric.resolver(func, skew, coeff, gamma, z)
        if out is not None:
            return out
    if not has_skew:
        return func.prox(z, gamma, metric)
    if func.is_zero and skew.level == 1 and metric is not None:
        n0 = skew.layout.dims[0]
        two = Layout((n0, skew.layout.size - n0))
        blocks = metric.blocks(two)
        if blocks is not None:
            V0 = linalg.inv(blocks[0])
            V = linalg.inv(blocks[1])
            return skew_resolvent(skew, gamma * coeff, V0, V, z)
    if func.is_quadratic:
        return _quadratic_resolvent(func, skew, coeff, gamma, metric, z)
    raise CapabilityError(
        "no resolvent for this (function, skew, metric) combination; use a quadratic function, "
        "a block-diagonal metric without skew coupling, or a metric-class metric")


class Resolvent:
    """Callable handle for ``J_{gamma U^{-1}(dF + coeff S)}``."""

    def __init__(self, func, gamma, metric, skew=None, coeff=0.0):
        self.func = func
        self.gamma = gamma
        self.metric = metric
        self.skew = skew
        self.coeff = coeff

    def __call__(self, z):
        return resolvent(self.func, self.skew, self.coeff, self.gamma, self.metric, z)

    def subgradient(self, z, zp):
        """The element ``U (z - zp) / gamma - coeff S zp`` of ``dF(zp)``."""
        U = self.metric
        g = (U.apply(z - zp) if U is not None else z - zp) / self.gamma
        if self.skew is not None and self.coeff != 0:
            g = g - self.coeff * self.skew.apply(zp)
        return g


def reflect(J, z):
    """Reflection ``2 J(z) - z``."""
    return 2.0 * J(z) - np.asarray(z, dtype=float)
