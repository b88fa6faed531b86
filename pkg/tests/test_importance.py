import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpipe_sim.errors import ParameterError, ShapeError
from fedpipe_sim.importance import (
    ImportanceScore,
    SensitivityState,
    gradient_weight_product,
    score,
    update_sensitivity,
)
from fedpipe_sim.model import LoraAdapter

from oracles import brute_singular_values, loop_gradient_weight_product, replay_recurrence


def test_gradient_weight_product_hand_value():
    assert gradient_weight_product([1.0, -2.0], [0.5, 0.25]) == 0.5


def test_gradient_weight_product_zero_grads():
    assert gradient_weight_product(np.ones(7), np.zeros(7)) == 0.0


def test_gradient_weight_product_matches_loop():
    rng = np.random.default_rng(3)
    w, g = rng.standard_normal(1000), rng.standard_normal(1000)
    assert abs(gradient_weight_product(w, g) - loop_gradient_weight_product(w, g)) <= 1e-12


def test_gradient_weight_product_length_mismatch():
    with pytest.raises(ShapeError):
        gradient_weight_product([1.0, 2.0], [1.0])


def test_first_update_hand_values():
    st1 = update_sensitivity(SensitivityState(), 1.0, 0.85, 0.85)
    assert st1.sensitivity == pytest.approx(0.15, abs=1e-15)
    assert st1.uncertainty == pytest.approx(0.1275, abs=1e-15)
    assert st1.t == 1


def test_fixed_point():
    prev = SensitivityState(0.4, 0.2, 3)
    nxt = update_sensitivity(prev, 0.4, 0.85, 0.7)
    assert nxt.sensitivity == pytest.approx(0.4, abs=1e-15)
    assert nxt.uncertainty == pytest.approx(0.7 * 0.2, abs=1e-15)


def test_five_step_replay():
    samples = np.random.default_rng(11).uniform(0, 2, 5)
    state = SensitivityState()
    got = []
    for x in samples:
        state = update_sensitivity(state, float(x), 0.85, 0.85)
        got.append((state.sensitivity, state.uncertainty))
    for (s, u), (rs, ru) in zip(got, replay_recurrence(samples, 0.85, 0.85)):
        assert abs(s - rs) <= 1e-12 and abs(u - ru) <= 1e-12


@pytest.mark.parametrize("lam", [0.0, 1.0, -0.1, 1.5])
def test_smoothing_factor_bounds(lam):
    with pytest.raises(ParameterError):
        update_sensitivity(SensitivityState(), 1.0, lam, 0.5)
    with pytest.raises(ParameterError):
        update_sensitivity(SensitivityState(), 1.0, 0.5, lam)


@settings(max_examples=200, deadline=None)
@given(
    lam=st.floats(0.5, 0.999),
    prev=st.floats(0, 10),
    prev_u=st.floats(0, 10),
    x=st.floats(0, 10),
)
def test_bounded_update(lam, prev, prev_u, x):
    nxt = update_sensitivity(SensitivityState(prev, prev_u), x, lam, lam)
    assert abs(nxt.sensitivity - prev) <= (1 - lam) * abs(x - prev) + 1e-12
    target = abs(x - nxt.sensitivity)
    assert abs(nxt.uncertainty - prev_u) <= (1 - lam) * abs(target - prev_u) + 1e-12
    assert nxt.sensitivity >= 0 and nxt.uncertainty >= 0


def test_fresh_adapter_zero_grads_scores_zero():
    ad = LoraAdapter.fresh((0, "q"), 2, 8, 8, np.random.default_rng(0))
    sc = score(ad, SensitivityState(), (np.zeros_like(ad.B), np.zeros_like(ad.A)))
    assert sc.value == 0.0 and sc.singular_mean == 0.0 and sc.phi == 0.0


def test_score_is_a_sum():
    assert ImportanceScore(0.2, 0.05).value == pytest.approx(0.25, abs=1e-15)


def test_score_advances_state_in_place():
    rng = np.random.default_rng(2)
    ad = LoraAdapter((0, "v"), rng.standard_normal((6, 2)), rng.standard_normal((2, 6)))
    state = SensitivityState()
    score(ad, state, (rng.standard_normal((6, 2)), rng.standard_normal((2, 6))))
    assert state.t == 1 and state.sensitivity > 0


def test_score_matches_composed_oracles_over_three_steps():
    rng = np.random.default_rng(21)
    d_in, d_out, r = 10, 7, 3
    state = SensitivityState()
    samples = []
    for _ in range(3):
        ad = LoraAdapter((1, "k"), rng.standard_normal((d_in, r)), rng.standard_normal((r, d_out)))
        gb, ga = rng.standard_normal((d_in, r)), rng.standard_normal((r, d_out))
        sc = score(ad, state, (gb, ga), 0.85, 0.85)
        w = np.concatenate([ad.B.ravel(), ad.A.ravel()])
        g = np.concatenate([gb.ravel(), ga.ravel()])
        samples.append(loop_gradient_weight_product(w, g))
        s, u = replay_recurrence(samples, 0.85, 0.85)[-1]
        expected = brute_singular_values(ad.B, ad.A).sum() / min(d_in, d_out) + s * u
        assert abs(sc.value - expected) <= 1e-9


def test_score_rejects_mismatched_grads():
    ad = LoraAdapter.fresh((0, "q"), 2, 8, 8, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        score(ad, SensitivityState(), (np.zeros((8, 3)), np.zeros((2, 8))))


def _orthogonal(r, rng):
    q, _ = np.linalg.qr(rng.standard_normal((r, r)))
    return q


def test_factorization_invariance():
    rng = np.random.default_rng(5)
    b, a = rng.standard_normal((9, 4)), rng.standard_normal((4, 9))
    g = _orthogonal(4, rng)
    zero = (np.zeros((9, 4)), np.zeros((4, 9)))
    s1 = score(LoraAdapter((0, "q"), b, a), SensitivityState(), zero)
    s2 = score(LoraAdapter((0, "q"), b @ g, g.T @ a), SensitivityState(), zero)
    assert s1.value == pytest.approx(s2.value, abs=1e-12)

    # with gradients present only the spectral part is factorization-free:
    # the gradient-weight product sees individual entries of B and A
    gb, ga = rng.standard_normal((9, 4)), rng.standard_normal((4, 9))
    t1 = score(LoraAdapter((0, "q"), b, a), SensitivityState(), (gb, ga))
    t2 = score(LoraAdapter((0, "q"), b @ g, g.T @ a), SensitivityState(), (gb @ g, g.T @ ga))
    assert t1.singular_mean == pytest.approx(t2.singular_mean, abs=1e-12)


def test_ranking_by_singular_mass():
    # same phi (both zero), more spectral mass scores strictly higher
    u = np.zeros((8, 1))
    u[0] = 1.0
    v = np.zeros((1, 8))
    v[0, 3] = 1.0
    zero = (np.zeros((8, 1)), np.zeros((1, 8)))
    lo = score(LoraAdapter((0, "q"), u, v), SensitivityState(), zero)
    hi = score(LoraAdapter((0, "q"), 2 * u, v), SensitivityState(), zero)
    assert hi.value > lo.value
    assert lo.value == pytest.approx(1 / 8, abs=1e-15)
