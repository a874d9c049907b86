import json

import numpy as np
import pytest
from scipy import optimize

from pdsplit import instances
from pdsplit.errors import ConfigError
from pdsplit.instances import SplitMix64


def test_splitmix64_reference_vector():
    # published outputs of the reference implementation for seed 1234567
    r = SplitMix64(1234567)
    assert [r.next_u64() for _ in range(5)] == [6457827717110365317, 3203168211198807973, 9817491932198370423,
                                                4593380528125082431, 16408922859458223821]
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


def test_splitmix64_streams():
    r = SplitMix64(7)
    u = r.uniform(10000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01
    z = SplitMix64(7).normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03
    Q = SplitMix64(3).orthogonal(6)
    np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-12)
    np.testing.assert_array_equal(SplitMix64(5).normal(4), SplitMix64(5).normal(4))


@pytest.mark.parametrize("generator", sorted(instances.GENERATORS))
def test_generation_is_deterministic(generator):
    a, b = instances.generate(generator, 11), instances.generate(generator, 11)
    assert instances.to_json(a) == instances.to_json(b)
    c = instances.generate(generator, 12)
    if generator != "scalar-smoke":
        assert instances.to_json(a) != instances.to_json(c)


@pytest.mark.parametrize("generator", sorted(instances.GENERATORS))
def test_json_roundtrip(generator, tmp_path, rng):
    inst = instances.generate(generator, 3)
    path = tmp_path / "inst.json"
    instances.save(inst, path)
    back = instances.load(path)
    assert back.name == inst.name and back.seed == 3 and back.params == inst.params
    np.testing.assert_array_equal(back.oracle.x, inst.oracle.x)
    for _ in range(5):
        x = rng.normal(size=inst.model.primal_dim)
        assert back.model.primal_objective(x) == pytest.approx(inst.model.primal_objective(x))


def test_schema_and_generator_errors(tmp_path):
    doc = instances.to_json(instances.generate("lasso", 0))
    doc["schema_version"] = 99
    with pytest.raises(ConfigError, match="schema"):
        instances.from_json(doc)
    with pytest.raises(ConfigError, match="unknown generator"):
        instances.generate("ridge", 0)
    with pytest.raises(ConfigError, match="bad parameters"):
        instances.generate("lasso", 0, width=3)
    with pytest.raises(ConfigError, match="variant"):
        instances.generate("random-skew", 0, variant="cubic")


@pytest.mark.parametrize("seed", range(3))
def test_lasso_oracle_against_a_smooth_reformulation(seed):
    inst = instances.generate("lasso", seed)
    A, b, tau = inst.extra["A"], inst.extra["b"], inst.params["tau"]
    n = A.shape[1]

    # x = u - v with u, v >= 0 turns the lasso into a bound-constrained smooth problem
    def obj(uv):
        u, v = uv[:n], uv[n:]
        r = A @ (u - v) - b
        val = 0.5 * r @ r + tau * uv.sum()
        g = A.T @ r
        return val, np.concatenate([g + tau, -g + tau])

    res = optimize.minimize(obj, np.zeros(2 * n), jac=True, method="L-BFGS-B", bounds=[(0, None)] * (2 * n),
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    x_ref = res.x[:n] - res.x[n:]
    np.testing.assert_allclose(inst.oracle.x, x_ref, atol=1e-6)
    assert inst.oracle.objective <= res.fun + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_projection_oracle_against_a_qp_solver(seed):
    inst = instances.generate("projection-feasibility", seed)
    a = inst.extra["a"]
    Bm = inst.model.B.dense
    box = inst.model.h[0]
    cons = [{"type": "ineq", "fun": lambda x: box.hi - Bm @ x, "jac": lambda x: -Bm},
            {"type": "ineq", "fun": lambda x: Bm @ x - box.lo, "jac": lambda x: Bm}]
    res = optimize.minimize(lambda x: 0.5 * np.sum((x - a) ** 2), a, jac=lambda x: x - a, constraints=cons,
                            method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    np.testing.assert_allclose(inst.oracle.x, res.x, atol=1e-6)
    # exactly two faces are active
    Bx = Bm @ inst.oracle.x
    active = np.isclose(Bx, box.hi) | np.isclose(Bx, box.lo)
    assert active.sum() == 2


def _group_kkt(inst, normal=None):
    A, b = inst.extra["A"], inst.extra["b"]
    mp, orc = inst.model, inst.oracle
    x, y = orc.x, orc.y
    resid = A.T @ (A @ x - b) + mp.B.adjoint(y)
    if normal is not None:
        resid = resid + normal
    np.testing.assert_allclose(resid, 0, atol=1e-10)
    offs = np.concatenate([[0], np.cumsum(mp.B.dual_dims)])
    for i, Bi in enumerate(mp.B.blocks):
        yi, u = y[offs[i]:offs[i + 1]], Bi @ x
        w = mp.h[i].weights[0]
        assert np.linalg.norm(yi) <= w + 1e-12
        if np.linalg.norm(u) > 0:
            np.testing.assert_allclose(yi, w * u / np.linalg.norm(u), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_group_lasso_oracle_satisfies_optimality(seed):
    inst = instances.generate("group-lasso", seed)
    _group_kkt(inst)
    # overlapping groups: every coordinate appears in exactly two groups except none
    counts = inst.model.B.dense.sum(axis=0)
    np.testing.assert_array_equal(counts, [2, 1, 2, 1, 2, 1])
    # convexity: no random perturbation improves the objective
    rng = np.random.default_rng(seed)
    base = inst.model.primal_objective(inst.oracle.x)
    for _ in range(200):
        d = rng.normal(size=6) * 10.0 ** rng.uniform(-4, 0)
        assert inst.model.primal_objective(inst.oracle.x + d) >= base - 1e-12


def test_hscp_tree_structure_and_optimality():
    inst = instances.generate("hscp-toy", 0)
    groups = inst.extra["groups"]
    assert [len(g) for g in groups] == [7, 3, 3, 1, 1, 1, 1]
    x = inst.oracle.x
    assert np.all(x[[2, 5, 6]] == 0) and x[3] == inst.params["bound"]
    A, b = inst.extra["A"], inst.extra["b"]
    normal = -(A.T @ (A @ x - b) + inst.model.B.adjoint(inst.oracle.y))
    # the residual is a normal vector of the box: nonzero only on the active face, pointing outward
    assert normal[3] > 0
    np.testing.assert_allclose(np.delete(normal, 3), 0, atol=1e-10)
    _group_kkt(inst, normal)


@pytest.mark.parametrize("variant", ["lipschitz", "linear", "quadratic"])
def test_random_skew_oracle_satisfies_optimality(variant):
    inst = instances.generate("random-skew", 2, variant=variant)
    mp, x, y = inst.model, inst.oracle.x, inst.oracle.y
    s = inst.params["smoothing"]
    c = mp.h[0].lo
    fsub = mp.f.subgradient(x)
    np.testing.assert_allclose(fsub + mp.g.grad(x) + mp.B.adjoint(y), 0, atol=1e-10)
    np.testing.assert_allclose(mp.B.apply(x), c + s * y, atol=1e-12)
    # the smoothed coupling term equals its closed form 1/(2s) ||B x - c||^2
    assert mp.infconv(0, mp.B.apply(x)) == pytest.approx(np.sum((mp.B.apply(x) - c) ** 2) / (2 * s))


def test_instance_file_is_plain_json(tmp_path):
    path = tmp_path / "i.json"
    instances.save(instances.generate("hscp-toy", 1), path)
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == instances.SCHEMA_VERSION and doc["generator"] == "hscp-toy"
