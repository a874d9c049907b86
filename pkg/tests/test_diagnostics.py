import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdsplit import diagnostics as dg
from pdsplit import instances
from pdsplit.engine import run
from pdsplit.errors import ConfigError
from pdsplit.functions import L1, Box, Quadratic, Zero
from pdsplit.harness import RunSpec, setup
from pdsplit.metric import MetricOperator
from pdsplit.operators import BlockFunction, SkewOperator
from pdsplit.metric import Layout


def _setup(algorithm="ppa", generator="lasso", seed=0, **kw):
    return setup(RunSpec(instances.generate(generator, seed, **kw.pop("params", {})), algorithm=algorithm,
                         budget=400, **kw))


def test_pre_gap_is_infinite_outside_the_domain():
    lay = Layout((2,))
    f = BlockFunction([Box([0, 0], [1, 1])], lay)
    g = BlockFunction([Zero(2)], lay)
    S = SkewOperator.zero(lay)
    assert dg.pre_gap(f, g, S, np.array([2.0, 0]), np.zeros(2), np.zeros(2), np.zeros(2)) == np.inf
    assert dg.pre_gap(f, g, S, np.zeros(2), np.zeros(2), np.zeros(2), np.array([5.0, 0])) == np.inf
    assert dg.pre_gap(f, g, S, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2)) == 0.0


def test_pre_gap_formula(rng):
    lay = Layout((1, 1))
    S = SkewOperator(np.array([[0.0, 2.0], [-2.0, 0.0]]), lay)
    f = BlockFunction([L1(1.0, 1), Zero(1)], lay)
    g = BlockFunction([Quadratic(np.eye(1)), Zero(1)], lay)
    xf, xg, xs, p = (rng.normal(size=2) for _ in range(4))
    ref = abs(xf[0]) + 0.5 * xg[0] ** 2 - (S.matrix @ xs) @ p - abs(p[0]) - 0.5 * p[0] ** 2
    assert dg.pre_gap(f, g, S, xf, xg, xs, p) == pytest.approx(ref)


@pytest.mark.parametrize("generator", ["lasso", "group-lasso", "projection-feasibility"])
@given(seed=st.integers(0, 2**31))
def test_gap_at_a_solution_is_nonnegative(generator, seed):
    st_ = _setup("fbs", generator)
    orc = st_.spec.instance.oracle
    sol = st_.split.lift(orc.x, orc.y)
    rng = np.random.default_rng(seed)
    x = st_.split.f.project_domain(sol + rng.normal(size=sol.size))
    assert dg.point_gap(st_.split, x, sol) >= -1e-10


@pytest.mark.parametrize("lam", [0.5, 1.0, 1.5])
def test_kappa_for_proximal_point_matches_fpr(lam):
    st_ = _setup("ppa", lam=lam)
    for s in run(st_.split, st_.plan, st_.z0, budget=20):
        assert dg.kappa_u(st_.split, s) == pytest.approx((1 - 2 / lam) * s.fpr_sq, rel=1e-8, abs=1e-10)
        assert dg.key_term_check(st_.split, st_.plan, s).ok


def test_kappa_from_definition(rng):
    st_ = _setup("fbs", "group-lasso")
    s = run(st_.split, st_.plan, st_.z0, budget=3)[-1]
    U = s.metric.matrix
    d = s.z_next - s.z
    inner = (s.grad_f @ (s.x_f - s.z_next) + s.grad_g @ (s.x_g - s.z_next)
             + (st_.split.skew.matrix @ s.x_S) @ (-s.z_next))
    ref = -d @ U @ d + 2 * s.gamma * s.lam * inner
    assert dg.kappa_u(st_.split, s) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("algorithm", ["ppa", "fbs", "prs", "fbf"])
@given(seed=st.integers(0, 2**31))
def test_fundamental_inequality_on_random_probes(algorithm, seed):
    variant = "quadratic" if algorithm == "ppa" else "lipschitz"
    st_ = _setup(algorithm, "random-skew", params={"variant": variant})
    rng = np.random.default_rng(seed)
    trace = run(st_.split, st_.plan, st_.z0, budget=8)
    for s in trace:
        probe = st_.split.f.project_domain(5 * rng.normal(size=s.z.size))
        assert dg.fundamental_margin(st_.split, s, probe) >= -1e-8


def test_fit_rate_slope_recovers_power_law():
    ks = np.arange(200)
    rep = dg.fit_rate_slope(list(zip(ks, 3.0 / (ks + 1.0))))
    assert rep.slope == pytest.approx(-1.0, abs=1e-12) and not rep.linear
    rep = dg.fit_rate_slope(list(zip(ks, (ks + 1.0) ** -0.5)))
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    rep = dg.fit_rate_slope(list(zip(ks, 0.5 ** ks)))
    assert rep.linear and "linear" in rep.note


def test_fit_rate_slope_edge_cases():
    with pytest.raises(ValueError, match="at least"):
        dg.fit_rate_slope([(k, 1.0 / (k + 1)) for k in range(8)])
    rep = dg.fit_rate_slope([(k, 1.0 if k < 20 else 0.0) for k in range(40)])
    assert rep.converged_exactly and math.isnan(rep.slope)
    with pytest.raises(ValueError):
        dg.fit_rate_slope([(0, -1.0)] * 20)
    rep = dg.fit_rate_slope([(k, 0.0 if k % 7 == 0 else 1.0 / (k + 1)) for k in range(100)])
    assert rep.trimmed_zeros > 0 and rep.slope == pytest.approx(-1.0, abs=1e-9)


def test_s_lower_bound():
    F = Quadratic(np.diag([2.0, 4.0]))
    x, y = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    # max{mu/2 |x-y|^2, |grad diff|^2 / (2L)} = max{2, (4 + 16)/8}
    assert dg.s_lower_bound(F, x, y) == pytest.approx(2.5)
    assert dg.s_lower_bound(L1(1.0, 2), x, y) == 0.0
    assert dg.s_lower_bound(F, x, y, mu=10.0, L=np.inf) == pytest.approx(10.0)


def test_ergodic_accumulator_matches_offline_average():
    st_ = _setup("prs", "random-skew", params={"variant": "linear"}, lam=0.7)
    trace = run(st_.split, st_.plan, st_.z0, budget=30)
    acc = dg.ErgodicAccumulator()
    for s in trace:
        acc.add(s)
    for attr in ("x_f", "x_g", "x_S"):
        np.testing.assert_allclose(getattr(acc, attr), dg.ergodic_average(trace, attr), atol=1e-13)
    assert acc.sigma == pytest.approx(sum(s.gamma * s.lam for s in trace))
    with pytest.raises(ValueError):
        dg.ErgodicAccumulator().x_f


def test_bound_formulas_by_hand():
    U = MetricOperator(np.diag([2.0, 1.0]))
    z0, zs, x = np.array([1.0, 1.0]), np.array([0.0, 0.0]), np.array([1.0, -1.0])
    # ||z0 - x||^2_U = 4, ||z0 - z*||^2_U = 3, ||z* - x||^2 = 2
    assert dg.ergodic_bound_rhs("ppa", z0, x, zs, U, 2.0) == pytest.approx(1.0)
    assert dg.ergodic_bound_rhs("fbf", z0, x, zs, U, 2.0, eta_p=1.5, eta_s=0.5, mu=3.0) \
        == pytest.approx((4 + 2 * 1.5 * 0.5 * 3 + 2 * 3 * 0.5 * 2) / 4)
    fbs = dg.ergodic_bound_rhs("fbs", z0, x, zs, U, 2.0, rho=1.0, epsilon=0.1, beta=1.0, lam_max=1.0,
                               fpr_weight_min=0.5)
    assert fbs == pytest.approx((4 + 0.9 / 0.5 * 3) / 4)
    prs = dg.ergodic_bound_rhs("prs", z0, x, zs, U, 2.0, gamma=1.0, rho=1.0, lipschitz=0.5, w_hat=0.5,
                               skew_norm=2.0)
    assert prs == pytest.approx((4 + 4 * (0.5 + 0.5 * 2 * math.sqrt(2)) * math.sqrt(3)) / 4)
    non = dg.nonergodic_bound_rhs("ppa", z0, zs, x, U, 1.0, 1.0, 3)
    assert non == pytest.approx((math.sqrt(3) + math.sqrt(3)) * math.sqrt(3) / 2)
    assert dg.fpr_rate_bound(z0, zs, U, 0.5, 2) == pytest.approx(3 / 1.5)
    assert dg.prs_distance_bound(1.0, 4.0, z0, zs, U) == pytest.approx(math.sqrt(3) / 2)
    with pytest.raises(ConfigError):
        dg.ergodic_bound_rhs("prs", z0, x, zs, U, 1.0)
    with pytest.raises(ConfigError):
        dg.nonergodic_bound_rhs("fbf", z0, zs, x, U, 1.0, 1.0, 0)


def test_monitor_flags_a_broken_anchor():
    # a wrong solution must be caught by the Fejer check
    st_ = _setup("ppa")
    orc = st_.spec.instance.oracle
    sol = st_.split.lift(orc.x, orc.y)
    wrong = sol + 0.5
    ctx = dg.BoundContext(st_.split, st_.plan, st_.z0, wrong, wrong, "closed-form", model=st_.model)
    mon = dg.Monitor(ctx)
    run(st_.split, st_.plan, st_.z0, sink=mon)
    assert not mon.passed
    assert {f.check for f in mon.failures} & {"quasi_fejer", "gap_nonnegative_at_solution"}


def test_trace_csv_and_json_roundtrip(tmp_path):
    st_ = _setup("fbf", "group-lasso")
    orc = st_.spec.instance.oracle
    sol = st_.split.lift(orc.x, orc.y)
    ctx = dg.BoundContext(st_.split, st_.plan, st_.z0, sol, sol, "closed-form", model=st_.model)
    mon = dg.Monitor(ctx)
    run(st_.split, st_.plan, st_.z0, budget=40, sink=mon)
    mon.write_csv(tmp_path / "t.csv")
    rows = dg.read_trace_csv(tmp_path / "t.csv")
    assert len(rows) == 40 and list(rows[0]) == list(dg.TRACE_COLUMNS)
    # FBF has no last-iterate bound, so that column is blank
    assert all(math.isnan(r["nonergodic_bound_rhs"]) for r in rows)
    for r, rec in zip(rows, mon.records):
        assert r["fpr_sq"] == rec.fpr_sq
    mon.write_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["records"][0]["nonergodic_bound_rhs"] is None
    assert doc["passed"] is True


def test_read_trace_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        dg.read_trace_csv(p)
