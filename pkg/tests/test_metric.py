import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pdsplit.errors import LayoutError, MetricIntegrityError, MetricSequenceError
from pdsplit.metric import (Layout, MetricOperator, MetricSequence, inner_u, loewner_dominates, norm_u,
                            sq_norm_u, tightest_eta, validate_sequence)

from conftest import random_spd

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_layout_split_join_roundtrip():
    lay = Layout((2, 3, 1))
    z = np.arange(6.0)
    parts = lay.split(z)
    assert [p.size for p in parts] == [2, 3, 1]
    np.testing.assert_array_equal(lay.join(parts), z)


def test_layout_rejects_wrong_size():
    with pytest.raises(LayoutError):
        Layout((2, 2)).check(np.zeros(3))


def test_metric_rejects_asymmetric_and_indefinite():
    with pytest.raises(MetricIntegrityError):
        MetricOperator(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(MetricIntegrityError):
        MetricOperator(np.diag([1.0, -1.0]))
    with pytest.raises(MetricIntegrityError):
        MetricOperator(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_declared_rho_must_be_a_lower_bound():
    with pytest.raises(MetricIntegrityError):
        MetricOperator(np.diag([1.0, 2.0]), rho=1.5)
    U = MetricOperator(np.diag([1.0, 2.0]), rho=0.5)
    assert U.rho == 0.5 and U.opnorm == pytest.approx(2.0)


def test_apply_inverse_matches_solve(rng):
    M = random_spd(rng, 5)
    U = MetricOperator(M)
    x = rng.normal(size=5)
    np.testing.assert_allclose(U.apply_inverse(x), np.linalg.solve(M, x), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(U.inverse @ M, np.eye(5), atol=1e-10)


def test_block_diagonal_blocks_are_recovered(rng):
    A, B = random_spd(rng, 2), random_spd(rng, 3)
    U = MetricOperator.block_diagonal([A, B])
    blocks = U.blocks(Layout((2, 3)))
    np.testing.assert_allclose(blocks[0], A)
    np.testing.assert_allclose(blocks[1], B)
    coupled = MetricOperator(random_spd(rng, 5))
    assert coupled.blocks(Layout((2, 3))) is None


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_metric_norm_properties(a, b):
    M = np.array([[3.0, 1, 0, 0], [1, 2, 0.5, 0], [0, 0.5, 2, 0], [0, 0, 0, 1]])
    U = MetricOperator(M)
    assert inner_u(U, a, b) == pytest.approx(inner_u(U, b, a), rel=1e-12, abs=1e-9)
    assert norm_u(U, a) >= 0
    assert norm_u(U, a + b) <= norm_u(U, a) + norm_u(U, b) + 1e-9 * (1 + norm_u(U, a) + norm_u(U, b))
    assert sq_norm_u(U, a) == pytest.approx(a @ M @ a, rel=1e-10, abs=1e-9)
    # rho ||a||^2 <= ||a||_U^2 <= opnorm ||a||^2
    s = a @ a
    assert U.rho * s * (1 - 1e-10) - 1e-9 <= sq_norm_u(U, a) <= U.opnorm * s * (1 + 1e-10) + 1e-9


def test_loewner_order_examples():
    assert loewner_dominates(2 * np.eye(2), np.eye(2))
    assert not loewner_dominates(np.eye(2), np.diag([1.0, 1.1]))
    assert loewner_dominates(np.eye(2), np.diag([1.0, 1.1]), slack=0.11)


def test_decreasing_scalar_sequence_validates_with_zero_slack():
    seq = MetricSequence(lambda k: MetricOperator.scaled_identity(1 + 2.0 ** (-k), 3))
    rep = validate_sequence(seq, 40)
    assert rep.valid and rep.eta_s == 0 and rep.eta_p == 1
    assert rep.mu == pytest.approx(2.0) and rep.rho == pytest.approx(1 + 2.0 ** -40)


def test_increasing_sequence_needs_slack():
    grow = lambda k: MetricOperator.scaled_identity(2 - 2.0 ** (-k), 2)
    with pytest.raises(MetricSequenceError, match="k=0"):
        validate_sequence(MetricSequence(grow), 10)
    # exact slack makes every step tight
    eta = lambda k: (2 - 2.0 ** (-k - 1)) / (2 - 2.0 ** (-k)) - 1
    rep = validate_sequence(MetricSequence(grow, eta), 30)
    assert rep.valid
    np.testing.assert_allclose(rep.tightest_eta, [eta(k) for k in range(30)], rtol=1e-9, atol=1e-14)
    # summable slack: the product stays bounded
    assert rep.eta_p < 2.0


def test_tightest_eta_is_minimal(rng):
    A, B = random_spd(rng, 3), random_spd(rng, 3)
    Ua, Ub = MetricOperator(A), MetricOperator(B)
    t = tightest_eta(Ua, Ub)
    assert loewner_dominates((1 + t) * A, B, slack=1e-9)
    if t > 1e-6:
        assert not loewner_dominates((1 + 0.99 * t) * A, B)


def test_sequence_rejects_negative_slack():
    with pytest.raises(MetricSequenceError):
        validate_sequence(MetricSequence(MetricOperator.identity(2), [-0.1]), 3)
