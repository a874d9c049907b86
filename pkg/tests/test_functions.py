import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize

from pdsplit.errors import CapabilityError
from pdsplit.functions import (L1, Affine, Box, GroupBall, GroupL2, Quadratic, Zero, from_description,
                               least_squares, linear, l2_norm, orthant, point, squared_distance)

from conftest import random_spd

vec3 = arrays(float, 3, elements=st.floats(-5, 5, allow_nan=False))
gammas = st.floats(0.05, 5.0)


def catalog():
    return [
        Zero(3),
        Quadratic(np.diag([1.0, 2.0, 0.5]), np.array([0.3, -1.0, 0.0]), 0.2),
        Box([-1.0, 0.0, -np.inf], [1.0, 2.0, 0.5]),
        L1([0.5, 1.0, 0.0]),
        GroupL2([[0, 1], [2]], [0.7, 0.4], 3),
        l2_norm(3, 0.8),
        GroupBall([[0, 1], [2]], [1.0, 0.5], 3),
        Affine(np.array([[1.0, 1.0, 0.0]]), np.array([1.0])),
    ]


def numeric_prox(f, x, gamma, M):
    """Prox by direct minimisation; constraints handled through a quadratic penalty on the domain."""
    def obj(p):
        d = p - x
        val = f(p)
        return val + 0.5 / gamma * d @ M @ d
    if isinstance(f, (Box, GroupBall, Affine)):
        # constrained: minimise the metric distance to the domain by SLSQP
        cons = {"type": "eq", "fun": lambda p: p - f.project_domain(p)} if isinstance(f, Affine) else \
            {"type": "ineq", "fun": lambda p: -np.linalg.norm(p - f.project_domain(p))}
        res = optimize.minimize(lambda p: 0.5 / gamma * (p - x) @ M @ (p - x), f.project_domain(x),
                                constraints=[cons], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        return res.x
    res = optimize.minimize(obj, x, method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxiter": 20000})
    return res.x


@pytest.mark.parametrize("idx", range(6))
def test_prox_matches_numerical_minimiser(idx, rng):
    f = catalog()[idx]
    for _ in range(3):
        x = rng.normal(size=3) * 2
        gamma = rng.uniform(0.2, 2.0)
        d = rng.uniform(0.5, 2.0, size=3)
        if isinstance(f, GroupL2):
            d = np.full(3, d[0])
        p = f.prox(x, gamma, d)
        ref = numeric_prox(f, x, gamma, np.diag(d))
        val = lambda q: f(q) + 0.5 / gamma * (q - x) @ np.diag(d) @ (q - x)
        # the closed form is at least as good as the numerical minimiser and close to it
        assert val(p) <= val(ref) + 1e-8
        np.testing.assert_allclose(p, ref, atol=1e-4)


@pytest.mark.parametrize("idx", range(8))
@given(x=vec3, gamma=gammas)
def test_prox_optimality_condition(idx, x, gamma):
    # (x - p) / gamma lies in the subdifferential at p, checked through the subgradient inequality
    f = catalog()[idx]
    p = f.prox(x, gamma)
    g = (x - p) / gamma
    rng = np.random.default_rng(abs(hash((idx, float(x.sum())))) % 2**32)
    for _ in range(5):
        q = f.project_domain(p + rng.normal(size=3))
        assert f(q) >= f(p) + g @ (q - p) - 1e-8 * (1 + abs(f(q)) + np.abs(g).sum())


@pytest.mark.parametrize("idx", range(8))
@given(x=vec3, gamma=gammas)
def test_moreau_decomposition(idx, x, gamma):
    f = catalog()[idx]
    fc = f.conjugate()
    p = f.prox(x, gamma)
    q = fc.prox(x / gamma, 1.0 / gamma)
    np.testing.assert_allclose(p + gamma * q, x, atol=1e-9 * (1 + np.abs(x).max()))


@pytest.mark.parametrize("idx", range(8))
@given(x=vec3, gamma=gammas)
def test_prox_is_firmly_nonexpansive(idx, x, gamma):
    f = catalog()[idx]
    y = x[::-1] + 0.3
    px, py = f.prox(x, gamma), f.prox(y, gamma)
    assert (px - py) @ (px - py) <= (px - py) @ (x - y) + 1e-9


def test_conjugate_prox_under_metric(rng):
    M = random_spd(rng, 3)
    x = rng.normal(size=3)
    cases = [(catalog()[1], M)] + [(f, np.diag(rng.uniform(0.5, 2, 3))) for f in catalog()[2:4]]
    cases.append((catalog()[4], 1.7 * np.eye(3)))
    for f, metric in cases:
        fc = f.conjugate()
        p = fc.prox(x, 0.7, metric)
        # optimality: u = M (x - p) / gamma lies in d f*(p), i.e. p lies in d f(u)
        u = metric @ (x - p) / 0.7
        np.testing.assert_allclose(f.prox(u + p, 1.0), u, atol=1e-8)


def test_structured_prox_limits_are_reported(rng):
    M = random_spd(rng, 3)
    with pytest.raises(CapabilityError):
        Box([0, 0, 0], [1, 1, 1]).prox(np.ones(3), 1.0, M)
    with pytest.raises(CapabilityError):
        GroupL2([[0, 1], [2]], [1.0, 1.0], 3).prox(np.ones(3), 1.0, np.array([1.0, 2.0, 1.0]))


@pytest.mark.parametrize("idx", [1, 2, 3, 4, 5, 6])
def test_fenchel_young(idx, rng):
    f = catalog()[idx]
    fc = f.conjugate()
    for _ in range(20):
        x = f.project_domain(rng.normal(size=3))
        y = fc.project_domain(rng.normal(size=3))
        assert f(x) + fc(y) >= x @ y - 1e-10
        # equality along the subgradient
        g = f.subgradient(x)
        assert f(x) + fc(g) == pytest.approx(x @ g, abs=1e-9)


def test_indicator_values():
    b = Box([0, 0], [1, 1])
    assert b(np.array([0.5, 1.0])) == 0 and b(np.array([1.5, 0.0])) == np.inf
    assert point([1.0, 2.0])(np.array([1.0, 2.0])) == 0
    assert orthant(2)(np.array([-1.0, 0.0])) == np.inf


def test_quadratic_helpers(rng):
    A, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    f = least_squares(A, b)
    x = rng.normal(size=3)
    assert f(x) == pytest.approx(0.5 * np.sum((A @ x - b) ** 2))
    np.testing.assert_allclose(f.grad(x), A.T @ (A @ x - b))
    assert f.grad_lipschitz == pytest.approx(np.linalg.norm(A, 2) ** 2)
    sd = squared_distance(np.ones(3), 2.0)
    assert sd(np.zeros(3)) == pytest.approx(3.0)
    assert sd.strong_convexity == pytest.approx(2.0)
    lin = linear(np.array([1.0, -2.0, 0.5]))
    assert lin(np.ones(3)) == pytest.approx(-0.5)
    assert lin.lipschitz == pytest.approx(np.sqrt(5.25))


def test_nonsmooth_grad_raises():
    with pytest.raises(CapabilityError):
        L1(1.0, 3).grad(np.ones(3))


def test_lipschitz_constants(rng):
    for f in (L1([0.5, 1.0, 2.0]), GroupL2([[0, 1], [2]], [0.7, 0.4], 3)):
        for _ in range(20):
            x, y = rng.normal(size=3), rng.normal(size=3)
            assert abs(f(x) - f(y)) <= f.lipschitz * np.linalg.norm(x - y) + 1e-12


@pytest.mark.parametrize("idx", range(8))
def test_description_roundtrip(idx, rng):
    f = catalog()[idx]
    g = from_description(f.describe())
    for _ in range(5):
        x = f.project_domain(rng.normal(size=3))
        assert g(x) == pytest.approx(f(x))
        np.testing.assert_allclose(g.prox(x, 0.8), f.prox(x, 0.8))
