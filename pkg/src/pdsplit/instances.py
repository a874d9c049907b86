"""Seeded problem generators with oracle solutions, and their JSON form.

Randomness comes from :class:`SplitMix64`, a fixed 64-bit counter-based
generator, so the same generator id, parameters and seed give the same
instance in any implementation that follows the documented algorithm:

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)                       (all arithmetic mod 2^64)

Uniforms are ``(out >> 11) * 2^-53``; normals use Box-Muller on pairs of
uniforms ``(1 - u1, u2)``, consuming two draws per normal.

Generators that admit it build the instance backwards from a chosen
primal-dual pair so the oracle is exact.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .functions import (L1, Box, GroupL2, Quadratic, Zero, from_description, least_squares, linear,
                        squared_distance)
from .model import ModelProblem
from .operators import BlockLinearMap

SCHEMA_VERSION = 1
MASK64 = (1 << 64) - 1


class SplitMix64:
    """Portable 64-bit generator (see module docstring for the exact recurrence)."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self, size=None):
        if size is None:
            return (self.next_u64() >> 11) * 2.0 ** -53
        n = int(np.prod(size))
        return np.array([(self.next_u64() >> 11) * 2.0 ** -53 for _ in range(n)]).reshape(size)

    def normal(self, size=None):
        def one():
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        if size is None:
            return one()
        n = int(np.prod(size))
        return np.array([one() for _ in range(n)]).reshape(size)

    def orthogonal(self, n):
        """Orthogonal matrix from the QR factors of a Gaussian matrix (signs fixed)."""
        Q, R = np.linalg.qr(self.normal((n, n)))
        return Q * np.sign(np.diag(R))


@dataclass
class Oracle:
    """Known solution of an instance.

    ``kind`` is ``"closed-form"`` for constructed solutions and
    ``"reference"`` when the solution must be computed by a long run.
    """

    kind: str
    x: np.ndarray = None
    y: np.ndarray = None
    objective: float = None
    note: str = ""

    def to_dict(self):
        return {"kind": self.kind, "note": self.note,
                "x": None if self.x is None else self.x.tolist(),
                "y": None if self.y is None else self.y.tolist(),
                "objective": self.objective}

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)
        return cls(d["kind"], arr(d.get("x")), arr(d.get("y")), d.get("objective"), d.get("note", ""))


@dataclass
class Instance:
    generator: str
    seed: int
    params: dict
    model: ModelProblem
    oracle: Oracle
    extra: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.model.name


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _selection(idx, dim):
    S = np.zeros((len(idx), dim))
    S[np.arange(len(idx)), idx] = 1.0
    return S


def _away_from_zero(rng, n, low=0.5):
    # magnitudes in [low, low + 1) with random signs
    mag = low + rng.uniform(n)
    sign = np.where(rng.uniform(n) < 0.5, -1.0, 1.0)
    return sign * mag


def scalar_smoke(seed=0):
    """``f(x) = x^2/2`` on the real line, every other term zero; ``x* = 0``."""
    mp = ModelProblem(squared_distance(np.zeros(1)), Zero(1), [Zero(1)], BlockLinearMap([[[1.0]]]),
                      name="scalar-smoke")
    return Instance("scalar-smoke", seed, {}, mp, Oracle("closed-form", np.zeros(1), np.zeros(1), 0.0))


def lasso(seed=0, dim=8, tau=0.5):
    """Orthogonal-design lasso ``1/2 ||A x - b||^2 + tau ||x||_1``.

    With ``A^T A = I`` the solution is ``soft(A^T b, tau)`` and the dual
    block is ``A^T b - x*``.
    """
    rng = SplitMix64(seed)
    A = rng.orthogonal(dim)
    b = rng.normal(dim)
    c = A.T @ b
    x = _soft(c, tau)
    y = c - x
    mp = ModelProblem(Zero(dim), least_squares(A, b), [L1(np.full(dim, tau))], BlockLinearMap([np.eye(dim)]),
                      name="lasso")
    obj = mp.primal_objective(x)
    return Instance("lasso", seed, {"dim": dim, "tau": tau}, mp,
                    Oracle("closed-form", x, y, obj, "soft-threshold of A^T b"), {"A": A, "b": b})


GROUP_LASSO_GROUPS = ([0, 1, 2], [2, 3, 4], [4, 5, 0])


def group_lasso(seed=0, rows=10, weight=0.4):
    """Overlapping group lasso ``1/2 ||A x - b||^2 + sum_i w ||x_{G_i}||``.

    Three groups of three coordinates overlap cyclically on six variables.
    The solution has the third group switched off; ``b`` is chosen so that
    the chosen pair satisfies the optimality conditions.
    """
    dim = 6
    rng = SplitMix64(seed)
    A = rng.normal((rows, dim)) / math.sqrt(rows)
    x = np.zeros(dim)
    x[[1, 2, 3]] = _away_from_zero(rng, 3)
    blocks = [_selection(g, dim) for g in GROUP_LASSO_GROUPS]
    ys = []
    for Bi in blocks:
        u = Bi @ x
        nrm = np.linalg.norm(u)
        if nrm > 0:
            ys.append(weight * u / nrm)
        else:
            d = rng.normal(len(u))
            ys.append(0.5 * weight * d / np.linalg.norm(d))
    y = np.concatenate(ys)
    B = BlockLinearMap(blocks)
    # A^T (A x - b) = -B^T y
    b = A @ x + A @ np.linalg.solve(A.T @ A, B.adjoint(y))
    h = [GroupL2([np.arange(3)], [weight], 3) for _ in blocks]
    mp = ModelProblem(Zero(dim), least_squares(A, b), h, B, name="group-lasso")
    return Instance("group-lasso", seed, {"rows": rows, "weight": weight}, mp,
                    Oracle("closed-form", x, y, mp.primal_objective(x), "constructed from optimality conditions"),
                    {"A": A, "b": b})


# depth-3 binary tree: node -> children
HSCP_TREE = {0: (1, 2), 1: (3, 4), 2: (5, 6), 3: (), 4: (), 5: (), 6: ()}


def _subtree(node):
    out = [node]
    for c in HSCP_TREE[node]:
        out.extend(_subtree(c))
    return sorted(out)


def hscp_toy(seed=0, rows=12, weight=0.2, bound=1.0):
    """Tree-structured group model ``iota_C(x) + 1/2 ||A x - b||^2 + sum_j w ||x_{T_j}||``.

    ``C = [-bound, bound]^7`` and ``T_j`` is the subtree rooted at node
    ``j`` of a depth-3 tree with 7 nodes. The constructed solution zeroes
    the subtree at node 2 and puts node 3 on the upper face of ``C``.
    """
    dim = 7
    rng = SplitMix64(seed)
    A = rng.normal((rows, dim)) / math.sqrt(rows)
    x = np.zeros(dim)
    x[[0, 1, 4]] = 0.5 * bound * (rng.uniform(3) + 0.2) * np.where(rng.uniform(3) < 0.5, -1.0, 1.0)
    x[3] = bound
    groups = [_subtree(j) for j in range(dim)]
    blocks = [_selection(g, dim) for g in groups]
    ys = []
    for Bi in blocks:
        u = Bi @ x
        nrm = np.linalg.norm(u)
        if nrm > 0:
            ys.append(weight * u / nrm)
        else:
            d = rng.normal(len(u))
            ys.append(0.5 * weight * d / np.linalg.norm(d))
    y = np.concatenate(ys)
    B = BlockLinearMap(blocks)
    # normal cone of the box at x: positive on the active upper face
    normal = np.zeros(dim)
    normal[3] = 0.5 + rng.uniform()
    # -B^T y - A^T (A x - b) = normal
    b = A @ x + A @ np.linalg.solve(A.T @ A, B.adjoint(y) + normal)
    h = [GroupL2([np.arange(len(g))], [weight], len(g)) for g in groups]
    f = Box(np.full(dim, -bound), np.full(dim, bound))
    mp = ModelProblem(f, least_squares(A, b), h, B, name="hscp-toy")
    return Instance("hscp-toy", seed, {"rows": rows, "weight": weight, "bound": bound}, mp,
                    Oracle("closed-form", x, y, mp.primal_objective(x), "constructed with one active box face"),
                    {"A": A, "b": b, "groups": groups})


def projection_feasibility(seed=0, dim=5, rows=4):
    """Project ``a`` onto ``{x : lo <= B x <= hi}``: ``1/2 ||x - a||^2 + iota_[lo,hi](B x)``.

    Two constraints are made active at the constructed solution.
    """
    rng = SplitMix64(seed)
    Bm = rng.normal((rows, dim)) / math.sqrt(dim)
    x = rng.normal(dim)
    Bx = Bm @ x
    width = 0.5 + rng.uniform(rows)
    lo = Bx - width
    hi = Bx + width
    y = np.zeros(rows)
    # active upper face on row 0, active lower face on row 1
    hi[0] = Bx[0]
    y[0] = 0.5 + rng.uniform()
    lo[1] = Bx[1]
    y[1] = -(0.5 + rng.uniform())
    # x - a + B^T y = 0
    a = x + Bm.T @ y
    mp = ModelProblem(squared_distance(a), Zero(dim), [Box(lo, hi)], BlockLinearMap([Bm]),
                      name="projection-feasibility")
    return Instance("projection-feasibility", seed, {"dim": dim, "rows": rows}, mp,
                    Oracle("closed-form", x, y, mp.primal_objective(x), "constructed with two active faces"),
                    {"a": a})


RANDOM_SKEW_VARIANTS = ("lipschitz", "linear", "quadratic")


def random_skew(seed=0, dim=4, rows=3, variant="lipschitz", scale=0.6, smoothing=0.5):
    """Model with a random coupling ``B`` and a constructed primal-dual pair.

    ``g`` is a strongly convex quadratic, ``h = iota_{c}`` (so ``h*`` is
    linear) and ``l = 1/(2 s) ||.||^2`` (so ``l* = s/2 ||.||^2``). The
    variant fixes ``f``:

    lipschitz   ``f = scale ||x||_2``; the level-1 ``f`` block is Lipschitz.
    linear      ``f = <a, x>``; also Lipschitz, exercised with ``w = 1/2``.
    quadratic   ``f = scale/2 ||x - p||^2``; smooth and strongly convex.
    """
    if variant not in RANDOM_SKEW_VARIANTS:
        raise ConfigError(f"unknown random-skew variant {variant!r}; expected one of {RANDOM_SKEW_VARIANTS}")
    rng = SplitMix64(seed)
    Bm = rng.normal((rows, dim)) / math.sqrt(dim)
    G = rng.normal((dim, dim)) / math.sqrt(dim)
    Q = G.T @ G + 0.5 * np.eye(dim)
    x = rng.normal(dim)
    y = rng.normal(rows)
    if variant == "lipschitz":
        f = GroupL2([np.arange(dim)], [scale], dim)
        fsub = scale * x / np.linalg.norm(x)
    elif variant == "linear":
        a = scale * rng.normal(dim)
        f = linear(a)
        fsub = a
    else:
        p = rng.normal(dim)
        f = squared_distance(p, scale)
        fsub = scale * (x - p)
    # 0 = fsub + Q x + q + B^T y
    q = -(fsub + Q @ x + Bm.T @ y)
    g = Quadratic(Q, q)
    # B x = c + s y
    c = Bm @ x - smoothing * y
    h = Box(c, c)
    l = squared_distance(np.zeros(rows), 1.0 / smoothing)
    mp = ModelProblem(f, g, [h], BlockLinearMap([Bm]), [l], name=f"random-skew-{variant}")
    return Instance("random-skew", seed, {"dim": dim, "rows": rows, "variant": variant, "scale": scale,
                                          "smoothing": smoothing}, mp,
                    Oracle("closed-form", x, y, mp.primal_objective(x), "constructed from optimality conditions"))


GENERATORS = {
    "scalar-smoke": scalar_smoke,
    "lasso": lasso,
    "group-lasso": group_lasso,
    "hscp-toy": hscp_toy,
    "projection-feasibility": projection_feasibility,
    "random-skew": random_skew,
}


def generate(generator, seed=0, **params):
    """Build the instance ``generator`` with ``params`` and ``seed``."""
    try:
        fn = GENERATORS[generator]
    except KeyError:
        raise ConfigError(f"unknown generator {generator!r}; expected one of {sorted(GENERATORS)}") from None
    try:
        return fn(seed=seed, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {generator}: {exc}") from None


def to_json(inst):
    """Serialize an instance (problem data and oracle) to a JSON-ready dict."""
    mp = inst.model
    return {
        "schema_version": SCHEMA_VERSION,
        "generator": inst.generator,
        "seed": inst.seed,
        "params": inst.params,
        "name": mp.name,
        "dims": {"primal": mp.primal_dim, "dual": list(mp.B.dual_dims)},
        "functions": {"f": mp.f.describe(), "g": mp.g.describe(),
                      "h": [h.describe() for h in mp.h], "l": [l.describe() for l in mp.l]},
        "B": [Bi.tolist() for Bi in mp.B.blocks],
        "oracle": inst.oracle.to_dict(),
    }


def from_json(doc):
    """Inverse of :func:`to_json`."""
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported instance schema version {version!r}")
    fn = doc["functions"]
    mp = ModelProblem(from_description(fn["f"]), from_description(fn["g"]),
                      [from_description(d) for d in fn["h"]], BlockLinearMap(doc["B"]),
                      [from_description(d) for d in fn["l"]], name=doc.get("name", ""))
    if mp.primal_dim != doc["dims"]["primal"] or list(mp.B.dual_dims) != list(doc["dims"]["dual"]):
        raise ConfigError("instance dimensions do not match the stored data")
    return Instance(doc["generator"], doc["seed"], doc.get("params", {}), mp, Oracle.from_dict(doc["oracle"]))


def save(inst, path):
    with open(path, "w") as fh:
        json.dump(to_json(inst), fh, indent=1, sort_keys=True)


def load(path):
    with open(path) as fh:
        return from_json(json.load(fh))
