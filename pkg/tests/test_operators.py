import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pdsplit.errors import CapabilityError, LayoutError
from pdsplit.functions import L1, Quadratic, Zero
from pdsplit.metric import Layout, MetricOperator
from pdsplit.operators import (BlockFunction, BlockLinearMap, Resolvent, SkewOperator, operator_norm, reflect,
                               resolvent, skew_resolvent)

from conftest import random_spd

mats = arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-10, 10))


@given(mats)
def test_operator_norm_matches_svd(M):
    assert operator_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6, abs=1e-9)


def test_block_linear_map_shapes(rng):
    B = BlockLinearMap([rng.normal(size=(2, 3)), rng.normal(size=(1, 3))])
    assert B.n == 2 and B.primal_dim == 3 and B.dual_dims == (2, 1)
    y = rng.normal(size=3)
    x = rng.normal(size=3)
    assert B.apply(x) @ y == pytest.approx(x @ B.adjoint(y))
    with pytest.raises(LayoutError):
        BlockLinearMap([np.ones((2, 3)), np.ones((2, 2))])


@pytest.mark.parametrize("level", [1, 2])
def test_skew_maps_are_skew(level, rng):
    B = BlockLinearMap([rng.normal(size=(2, 3)), rng.normal(size=(2, 3))])
    S = SkewOperator.level1(B) if level == 1 else SkewOperator.level2(B)
    np.testing.assert_allclose(S.matrix, -S.matrix.T)
    z = rng.normal(size=S.layout.size)
    assert S.apply(z) @ z == pytest.approx(0.0, abs=1e-12)
    assert S.norm == pytest.approx(np.linalg.norm(S.matrix, 2), rel=1e-8)


def test_skew_rejects_symmetric():
    with pytest.raises(ValueError):
        SkewOperator(np.eye(2), Layout((1, 1)))


def test_skew_resolvent_solves_its_equation(rng):
    B = BlockLinearMap([rng.normal(size=(2, 3))])
    S = SkewOperator.level1(B)
    V0, V = random_spd(rng, 3), random_spd(rng, 2)
    z = rng.normal(size=5)
    gamma = 0.7
    zp = skew_resolvent(S, gamma, V0, V, z)
    D = np.block([[np.linalg.inv(V0), np.zeros((3, 2))], [np.zeros((2, 3)), np.linalg.inv(V)]])
    np.testing.assert_allclose(D @ (z - zp), gamma * S.apply(zp), atol=1e-10)


def test_quadratic_resolvent_with_skew_and_coupled_metric(rng):
    lay = Layout((2, 2))
    S = SkewOperator.level1(BlockLinearMap([rng.normal(size=(2, 2))]))
    F = BlockFunction([Quadratic(random_spd(rng, 2), rng.normal(size=2)), Quadratic(np.eye(2))], lay)
    U = MetricOperator(random_spd(rng, 4))
    z = rng.normal(size=4)
    p = resolvent(F, S, 0.4, 1.3, U, z)
    Q, q, _ = F.quadratic_form()
    # U (z - p) = gamma (Q p + q) + gamma coeff S p
    np.testing.assert_allclose(U.matrix @ (z - p), 1.3 * (Q @ p + q) + 1.3 * 0.4 * S.apply(p), atol=1e-10)


def test_resolvent_subgradient_is_consistent(rng):
    lay = Layout((3, 2))
    F = BlockFunction([L1(0.5, 3), Zero(2)], lay)
    d = rng.uniform(0.5, 2, size=5)
    U = MetricOperator.diagonal(d)
    J = Resolvent(F, 0.8, U)
    z = 3 * rng.normal(size=5)
    p = J(z)
    g = J.subgradient(z, p)
    # g must be a subgradient of F at p
    for _ in range(10):
        q = p + rng.normal(size=5)
        assert F(q) >= F(p) + g @ (q - p) - 1e-10


def test_unsupported_resolvent_is_reported(rng):
    lay = Layout((2, 2))
    S = SkewOperator.level1(BlockLinearMap([np.eye(2)]))
    F = BlockFunction([L1(1.0, 2), L1(1.0, 2)], lay)
    with pytest.raises(CapabilityError):
        resolvent(F, S, 1.0, 1.0, MetricOperator(random_spd(rng, 4)), np.ones(4))


@given(arrays(float, 4, elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(-5, 5)))
def test_reflection_is_nonexpansive(a, b):
    lay = Layout((2, 2))
    F = BlockFunction([L1(0.3, 2), Quadratic(np.diag([1.0, 3.0]))], lay)
    J = Resolvent(F, 1.0, MetricOperator.identity(4))
    ra, rb = reflect(J, a), reflect(J, b)
    assert np.linalg.norm(ra - rb) <= np.linalg.norm(a - b) + 1e-9
