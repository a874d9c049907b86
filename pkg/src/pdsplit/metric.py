"""Product-space layouts and self-adjoint strongly monotone metrics.

Points of a product space ``H_0 x H_1 x ... x H_m`` are stored as flat
float arrays; a :class:`Layout` records the block sizes and provides views
into the individual blocks.  A :class:`MetricOperator` wraps a dense
symmetric positive-definite matrix ``U`` and certifies its extreme
eigenvalues once at construction, so that ``rho * I <= U <= opnorm * I``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import LayoutError, MetricIntegrityError, MetricSequenceError

LOEWNER_SLACK = 1e-10
SYMMETRY_TOL = 1e-10


class Layout:
    """Block sizes of a product space.

    Parameters
    ----------
    dims : sequence of int
        Dimension of each block. Block 0 is the primal block.
    """

    def __init__(self, dims):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d <= 0 for d in dims):
            raise LayoutError(f"block dimensions must be positive, got {dims}")
        self.dims = dims
        self.offsets = tuple(np.concatenate([[0], np.cumsum(dims)]).astype(int))
        self.size = self.offsets[-1]

    def __eq__(self, other):
        return isinstance(other, Layout) and self.dims == other.dims

    def __hash__(self):
        return hash(self.dims)

    def __repr__(self):
        return f"Layout{self.dims}"

    @property
    def nblocks(self):
        return len(self.dims)

    def slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def check(self, z):
        """Return ``z`` as a float array after validating its size and entries."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise LayoutError(f"expected a point of size {self.size} for {self}, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise LayoutError("point has non-finite entries")
        return z

    def split(self, z):
        """List of views, one per block."""
        return [z[self.slice(i)] for i in range(self.nblocks)]

    def join(self, blocks):
        if len(blocks) != self.nblocks:
            raise LayoutError(f"expected {self.nblocks} blocks, got {len(blocks)}")
        out = []
        for d, b in zip(self.dims, blocks):
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if b.shape != (d,):
                raise LayoutError(f"block of shape {b.shape} does not match dimension {d}")
            out.append(b)
        return np.concatenate(out)

    def zeros(self):
        return np.zeros(self.size)


class MetricOperator:
    """Dense self-adjoint strongly monotone linear map.

    The symmetric eigendecomposition computed at construction certifies the
    strong monotonicity constant and the operator norm.  A Cholesky factor
    is cached for inverse applications.

    Parameters
    ----------
    matrix : array_like
        Symmetric positive-definite matrix.
    rho : float, optional
        Declared strong monotonicity constant. Must not exceed the smallest
        eigenvalue; defaults to it.
    resolver : callable, optional
        Structured resolvent evaluator attached by metric builders.
    info : dict, optional
        Free-form description of how the metric was built.
    """

    def __init__(self, matrix, rho=None, resolver=None, info=None):
        M = np.array(matrix, dtype=float)
        if M.ndim == 0:
            M = M.reshape(1, 1)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise MetricIntegrityError(f"metric must be a square matrix, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise MetricIntegrityError("metric has non-finite entries")
        scale = max(1.0, np.abs(M).max())
        if np.abs(M - M.T).max() > SYMMETRY_TOL * scale:
            raise MetricIntegrityError("metric is not self-adjoint")
        M = 0.5 * (M + M.T)
        evals = linalg.eigh(M, eigvals_only=True)
        self.min_eig = float(evals[0])
        self.max_eig = float(evals[-1])
        if self.min_eig <= 0:
            raise MetricIntegrityError(f"metric is not positive definite (min eigenvalue {self.min_eig:.3e})")
        if rho is None:
            rho = self.min_eig
        elif rho <= 0 or rho > self.min_eig * (1 + 1e-12) + 1e-14:
            raise MetricIntegrityError(
                f"declared rho={rho:.6e} is not a valid lower bound (min eigenvalue {self.min_eig:.6e})")
        self.rho = float(rho)
        self.opnorm = self.max_eig
        self.matrix = M
        self.dim = M.shape[0]
        self.resolver = resolver
        self.info = dict(info or {})
        self._chol = linalg.cho_factor(M)
        self._inverse = None
        self._blocks = {}

    # constructors
    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def scaled_identity(cls, c, n):
        return cls(c * np.eye(n))

    @classmethod
    def diagonal(cls, d):
        return cls(np.diag(np.asarray(d, dtype=float)))

    @classmethod
    def block_diagonal(cls, blocks):
        return cls(linalg.block_diag(*[np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]))

    def __repr__(self):
        return f"MetricOperator(dim={self.dim}, rho={self.rho:.4g}, opnorm={self.opnorm:.4g})"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise LayoutError(f"point of size {x.shape[0]} does not match metric dimension {self.dim}")
        return x

    def apply(self, x):
        return self.matrix @ self._check(x)

    def apply_inverse(self, x):
        return linalg.cho_solve(self._chol, self._check(x))

    @property
    def inverse(self):
        """Dense inverse, computed on first use."""
        if self._inverse is None:
            inv = linalg.cho_solve(self._chol, np.eye(self.dim))
            self._inverse = 0.5 * (inv + inv.T)
        return self._inverse

    def scaled(self, s):
        return MetricOperator(s * self.matrix)

    def blocks(self, layout):
        """Diagonal blocks if the metric is block diagonal for ``layout``, else ``None``."""
        key = layout.dims
        if key not in self._blocks:
            if layout.size != self.dim:
                raise LayoutError(f"{layout} does not match metric dimension {self.dim}")
            out = []
            mask = np.ones((self.dim, self.dim), dtype=bool)
            for i in range(layout.nblocks):
                s = layout.slice(i)
                out.append(self.matrix[s, s])
                mask[s, s] = False
            self._blocks[key] = None if np.any(self.matrix[mask] != 0) else out
        return self._blocks[key]


def inner_u(U, a, b):
    """Metric inner product ``<U a, b>``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LayoutError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(U.apply(a) @ b)


def norm_u(U, a):
    """Metric norm ``sqrt(<U a, a>)``."""
    sq = inner_u(U, a, a)
    if sq < 0:
        # tiny negatives are rounding; anything larger means the certificate is broken
        if sq < -1e-12 * max(1.0, U.opnorm * float(np.dot(a, a))):
            raise MetricIntegrityError(f"negative squared metric norm {sq:.3e}")
        sq = 0.0
    return float(np.sqrt(sq))


def sq_norm_u(U, a):
    return norm_u(U, a) ** 2


def min_eigenvalue(M):
    M = np.asarray(M, dtype=float)
    return float(linalg.eigh(0.5 * (M + M.T), eigvals_only=True)[0])


def loewner_dominates(A, B, slack=0.0):
    """True iff ``A - B`` is positive semidefinite up to ``slack`` on its smallest eigenvalue."""
    A = np.atleast_2d(getattr(A, "matrix", A))
    B = np.atleast_2d(getattr(B, "matrix", B))
    if A.shape != B.shape:
        raise LayoutError(f"dimension mismatch {A.shape} vs {B.shape}")
    return min_eigenvalue(A - B) >= -slack


class MetricSequence:
    """Sequence of metrics ``U_k`` with a summable slack sequence ``eta_k``.

    The declared condition is ``(1 + eta_k) U_k >= U_{k+1}`` in the Loewner
    order.  It is only checked up to a finite horizon by
    :func:`validate_sequence`.

    Parameters
    ----------
    generator : MetricOperator, list of MetricOperator, or callable
        A constant metric, an explicit list (the last entry repeats), or a
        function ``k -> MetricOperator``.
    eta : None, float sequence, or callable
        Slack sequence; defaults to zeros.
    """

    def __init__(self, generator, eta=None):
        if isinstance(generator, MetricOperator):
            self._kind = "constant"
            self._const = generator
        elif callable(generator):
            self._kind = "parametric"
            self._fn = generator
        else:
            self._kind = "list"
            self._list = list(generator)
            if not self._list:
                raise MetricSequenceError("empty metric list")
        self._eta = eta
        self._cache = {}

    @classmethod
    def constant(cls, U):
        return cls(U)

    @property
    def is_constant(self):
        return self._kind == "constant"

    def at(self, k):
        if self._kind == "constant":
            return self._const
        if k not in self._cache:
            if self._kind == "list":
                self._cache[k] = self._list[min(k, len(self._list) - 1)]
            else:
                self._cache[k] = self._fn(k)
        return self._cache[k]

    def eta_at(self, k):
        if self._eta is None:
            return 0.0
        if callable(self._eta):
            return float(self._eta(k))
        seq = self._eta
        return float(seq[k]) if k < len(seq) else 0.0

    def etas(self, horizon):
        return np.array([self.eta_at(k) for k in range(horizon)])

    def eta_p(self, horizon):
        return float(np.prod(1.0 + self.etas(horizon)))

    def eta_s(self, horizon):
        return float(np.sum(self.etas(horizon)))

    def mu(self, horizon):
        """Largest operator norm over ``k = 0..horizon``."""
        if self.is_constant:
            return self._const.opnorm
        return max(self.at(k).opnorm for k in range(horizon + 1))

    def rho(self, horizon):
        """Smallest certified strong monotonicity constant over ``k = 0..horizon``."""
        if self.is_constant:
            return self._const.rho
        return min(self.at(k).rho for k in range(horizon + 1))


@dataclass
class ValidationReport:
    valid: bool
    horizon: int
    eta_p: float
    eta_s: float
    mu: float
    rho: float
    min_eigs: np.ndarray
    tightest_eta: np.ndarray
    violations: list = field(default_factory=list)

    def summary(self):
        if self.valid:
            return (f"valid over {self.horizon} steps: eta_p={self.eta_p:.6g}, eta_s={self.eta_s:.6g}, "
                    f"mu={self.mu:.6g}, rho={self.rho:.6g}")
        k, ev = self.violations[0]
        return f"ordering violated at step k={k}: min eigenvalue {ev:.3e}"


def tightest_eta(U_now, U_next):
    """Smallest ``eta >= 0`` with ``(1 + eta) U_now >= U_next``."""
    top = linalg.eigh(U_next.matrix, U_now.matrix, eigvals_only=True)[-1]
    return max(0.0, float(top) - 1.0)


def validate_sequence(seq, horizon, strict=True):
    """Check ``(1 + eta_k) U_k >= U_{k+1}`` for ``k < horizon``.

    Returns a :class:`ValidationReport`. When ``strict`` is true a violation
    raises :class:`MetricSequenceError` naming the first offending step.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise MetricSequenceError("horizon must be at least 1")
    etas = seq.etas(horizon)
    if np.any(etas < 0) or not np.all(np.isfinite(etas)):
        raise MetricSequenceError("eta entries must be finite and nonnegative")
    min_eigs = np.zeros(horizon)
    tight = np.zeros(horizon)
    violations = []
    for k in range(horizon):
        U_now, U_next = seq.at(k), seq.at(k + 1)
        if U_now is U_next:
            min_eigs[k] = etas[k] * U_now.min_eig
            continue
        min_eigs[k] = min_eigenvalue((1.0 + etas[k]) * U_now.matrix - U_next.matrix)
        tight[k] = tightest_eta(U_now, U_next)
        if min_eigs[k] < -LOEWNER_SLACK:
            violations.append((k, float(min_eigs[k])))
    report = ValidationReport(
        valid=not violations,
        horizon=horizon,
        eta_p=float(np.prod(1.0 + etas)),
        eta_s=float(np.sum(etas)),
        mu=seq.mu(horizon),
        rho=seq.rho(horizon),
        min_eigs=min_eigs,
        tightest_eta=tight,
        violations=violations,
    )
    if violations and strict:
        raise MetricSequenceError(report.summary(), report)
    return report
