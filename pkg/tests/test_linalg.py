import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpipe_sim import _kernels_py, kernels
from fedpipe_sim.errors import ContractViolation, ShapeError, UnknownLeafError
from fedpipe_sim.linalg import Tape, gradient_of_loss, singular_values_of_product

from oracles import brute_singular_values, central_difference


def test_sum_of_squares_gradient():
    tape = Tape()
    w = tape.leaf([[3.0]])
    loss = tape.square_loss(w)
    (g,) = gradient_of_loss(tape, loss, [w])
    assert g.tolist() == [[6.0]]


def test_uniform_softmax_symmetric_loss_has_zero_gradient():
    tape = Tape()
    z = tape.leaf(np.full((3, 4), 0.7))
    p = tape.row_softmax(z)
    loss = tape.square_loss(p, np.full((3, 4), 0.1))
    (g,) = gradient_of_loss(tape, loss, [z])
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_every_primitive_against_finite_differences():
    rng = np.random.default_rng(3)
    a0 = rng.standard_normal((4, 3))
    b0 = rng.standard_normal((3, 5))
    c0 = rng.standard_normal((4, 5))
    target = rng.standard_normal((4, 4))

    def build(a, b, c):
        tape = Tape()
        an, bn, cn = tape.leaf(a), tape.leaf(b), tape.leaf(c)
        h = tape.add(tape.matmul(an, bn), tape.mul(cn, cn))
        s = tape.row_softmax(tape.scale(h, 0.5))
        o = tape.matmul(s, cn, transpose_b=True)
        return tape, tape.square_loss(o, target), (an, bn, cn)

    tape, loss, leaves = build(a0, b0, c0)
    grads = gradient_of_loss(tape, loss, list(leaves))
    for i, x0 in enumerate((a0, b0, c0)):
        def f(x, i=i):
            args = [a0, b0, c0]
            args[i] = x
            _, l, _ = build(*args)
            return float(l.value[0, 0])

        np.testing.assert_allclose(grads[i], central_difference(f, x0), rtol=1e-6, atol=1e-9)


def test_non_scalar_loss_rejected():
    tape = Tape()
    w = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        gradient_of_loss(tape, tape.scale(w, 2.0), [w])


def test_unknown_leaf_rejected():
    tape, other = Tape(), Tape()
    w = tape.leaf([[1.0]])
    loss = tape.square_loss(w)
    stranger = other.leaf([[1.0]])
    with pytest.raises(UnknownLeafError):
        gradient_of_loss(tape, loss, [stranger])
    c = tape.const([[2.0]])
    with pytest.raises(UnknownLeafError):
        gradient_of_loss(tape, loss, [c])


def test_matmul_shape_error():
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 3))))


def test_replay_is_bit_identical():
    rng = np.random.default_rng(5)
    tape = Tape()
    a = tape.leaf(rng.standard_normal((5, 5)))
    b = tape.leaf(rng.standard_normal((5, 5)))
    loss = tape.square_loss(tape.row_softmax(tape.matmul(a, b)), np.eye(5))
    g1 = gradient_of_loss(tape, loss, [a, b])
    tape.replay()
    g2 = gradient_of_loss(tape, loss, [a, b])
    for x, y in zip(g1, g2):
        assert np.array_equal(x, y)


def test_replay_with_new_leaf_values():
    tape = Tape()
    w = tape.leaf([[3.0]])
    loss = tape.square_loss(w)
    tape.replay({w: [[5.0]]})
    assert loss.value[0, 0] == 25.0
    assert gradient_of_loss(tape, loss, [w])[0][0, 0] == 10.0


def test_rank_one_singular_values():
    np.testing.assert_array_equal(singular_values_of_product([[2.0], [0.0]], [[3.0, 0.0]]), [6.0, 0.0])


def test_identity_singular_values():
    np.testing.assert_allclose(singular_values_of_product(np.eye(2), np.eye(2)), [1.0, 1.0], atol=1e-15)


def test_singular_values_against_brute_force():
    rng = np.random.default_rng(11)
    b = rng.standard_normal((6, 2))
    a = rng.standard_normal((2, 5))
    got = singular_values_of_product(b, a)
    assert got.shape == (5,)
    np.testing.assert_allclose(got, brute_singular_values(b, a), atol=1e-9)


def test_singular_values_dimension_mismatch():
    with pytest.raises(ShapeError):
        singular_values_of_product(np.ones((3, 2)), np.ones((3, 4)))


@settings(max_examples=60, deadline=None)
@given(
    di=st.integers(1, 12),
    do=st.integers(1, 12),
    r=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
)
def test_singular_value_properties(di, do, r, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((di, r))
    a = rng.standard_normal((r, do))
    sv = singular_values_of_product(b, a)
    assert sv.shape == (min(di, do),)
    assert np.all(sv >= 0)
    assert np.all(np.diff(sv) <= 0)
    assert np.count_nonzero(sv) <= r
    fro = np.sum((b @ a) ** 2)
    assert abs(np.sum(sv**2) - fro) <= 1e-9 * fro


def test_jacobi_backends_agree():
    rng = np.random.default_rng(2)
    for shape in [(1, 1), (3, 3), (5, 2), (2, 7), (8, 8)]:
        core = rng.standard_normal(shape)
        assert np.array_equal(
            kernels.jacobi_singular_values(core), _kernels_py.jacobi_singular_values(core)
        )


def test_jacobi_zero_core():
    np.testing.assert_array_equal(kernels.jacobi_singular_values(np.zeros((3, 3))), np.zeros(3))
