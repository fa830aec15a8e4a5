import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import cmdps, random_cmdp
from oracles import brute_robust_backup, brute_robust_value, lse_mp, smoothed_value_loop
from robust_crl import (
    ContaminationSet,
    ValidationError,
    evaluate,
    lse,
    policy_probs,
    robust_bellman_apply,
    robust_value,
    smoothed_bellman_apply,
    smoothed_robust_value,
    worst_case_kernel,
)
from robust_crl.robust import check_kernel_in_set, lse_weights, robust_optimal_value, smoothing_gap_bound

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _probs(mdp, seed=0):
    return policy_probs(np.random.default_rng(seed).normal(size=(mdp.n_states, mdp.n_actions)))


@settings(max_examples=60, deadline=None)
@given(cmdps(), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_backup_matches_vertex_enumeration(mdp, delta, seed):
    cset = ContaminationSet.around(mdp, delta)
    probs = _probs(mdp, seed)
    v = np.random.default_rng(seed).uniform(-5, 5, mdp.n_states)
    want = brute_robust_backup(np.array(mdp.kernel), np.array(mdp.reward), mdp.gamma, delta, probs, v)
    np.testing.assert_allclose(robust_bellman_apply(cset, mdp, probs, v), want, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_robust_value_matches_slow_fixed_point(seed):
    mdp = random_cmdp(seed, 4, 3, gamma=0.9)
    probs = _probs(mdp, seed)
    got = robust_value(ContaminationSet.around(mdp, 0.3), mdp, probs)
    want = brute_robust_value(np.array(mdp.kernel), np.array(mdp.reward), 0.9, 0.3, probs)
    np.testing.assert_allclose(got.v, want, atol=1e-9)
    assert got.residual < 1e-10


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 12), elements=finite), st.floats(-500, -0.01))
def test_lse_sandwich_and_high_precision(v, sigma):
    val = lse(sigma, v)
    n = v.size
    assert v.min() - np.log(n) / abs(sigma) - 1e-9 <= val <= v.min() + 1e-9
    assert val == pytest.approx(lse_mp(sigma, v), abs=1e-9)


def test_lse_survives_extreme_scales():
    v = np.array([1e6, 1e6 + 1.0, 2e6])
    assert np.isfinite(lse(-1e3, v))
    assert lse(-1e3, v) == pytest.approx(1e6, abs=1e-9)
    w = lse_weights(-1e3, v)
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)


def test_lse_rejects_bad_sigma():
    with pytest.raises(ValidationError):
        lse(0.0, [1.0])
    with pytest.raises(ValidationError):
        lse(-1.0, [])


@settings(max_examples=50, deadline=None)
@given(cmdps(), st.floats(0.0, 1.0), st.floats(-50, -0.5), st.integers(0, 100))
def test_operators_are_gamma_contractions_and_monotone(mdp, delta, sigma, seed):
    cset = ContaminationSet.around(mdp, delta)
    rng = np.random.default_rng(seed)
    probs = _probs(mdp, seed)
    x = rng.uniform(0, 10, mdp.n_states)
    y = rng.uniform(0, 10, mdp.n_states)
    assume(np.abs(x - y).max() > 1e-6)
    hi = np.maximum(x, y)
    for op in (lambda u: robust_bellman_apply(cset, mdp, probs, u),
               lambda u: smoothed_bellman_apply(cset, mdp, probs, sigma, u)):
        assert np.abs(op(x) - op(y)).max() <= mdp.gamma * np.abs(x - y).max() + 1e-10
        assert np.all(op(hi) >= op(x) - 1e-10)


@settings(max_examples=40, deadline=None)
@given(cmdps(), st.floats(0.0, 1.0), st.integers(0, 100))
def test_worst_case_kernel_attains_robust_value(mdp, delta, seed):
    cset = ContaminationSet.around(mdp, delta)
    probs = _probs(mdp, seed)
    rob = robust_value(cset, mdp, probs)
    wc = worst_case_kernel(cset, mdp, probs, rob.v)
    assert check_kernel_in_set(cset, wc)
    np.testing.assert_allclose(evaluate(mdp, wc, probs), rob.v, atol=1e-6)
    assert np.all(rob.v <= evaluate(mdp, mdp.kernel, probs) + 1e-8)


def test_worst_case_kernel_breaks_ties_low():
    mdp = random_cmdp(0, 3, 2)
    cset = ContaminationSet.around(mdp, 0.5)
    wc = worst_case_kernel(cset, mdp, _probs(mdp), np.array([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(wc[:, :, 1] - 0.5 * np.array(mdp.kernel)[:, :, 1], 0.5)


def test_delta_zero_is_nominal_and_delta_one_is_pessimistic(small_mdp):
    probs = _probs(small_mdp)
    nominal = evaluate(small_mdp, small_mdp.kernel, probs)
    np.testing.assert_allclose(robust_value(ContaminationSet.around(small_mdp, 0.0), small_mdp, probs).v,
                               nominal, atol=1e-9)
    np.testing.assert_allclose(
        smoothed_robust_value(ContaminationSet.around(small_mdp, 0.0), small_mdp, probs, -3.0).v,
        nominal, atol=1e-8)
    # delta = 1: every transition goes to the worst state, so V = r_pi + gamma min V
    v = robust_value(ContaminationSet.around(small_mdp, 1.0), small_mdp, probs).v
    r_pi = (probs * small_mdp.reward).sum(axis=1)
    np.testing.assert_allclose(v, r_pi + small_mdp.gamma * v.min(), atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_smoothed_value_matches_loop_oracle(seed):
    mdp = random_cmdp(seed, 4, 2, gamma=0.85)
    probs = _probs(mdp, seed)
    got = smoothed_robust_value(ContaminationSet.around(mdp, 0.25), mdp, probs, -4.0)
    want = smoothed_value_loop(np.array(mdp.kernel), np.array(mdp.reward), 0.85, 0.25, -4.0, probs)
    np.testing.assert_allclose(got.v, want, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(cmdps(), st.floats(0.01, 1.0), st.sampled_from([-1.0, -5.0, -20.0, -100.0]))
def test_smoothing_gap_within_bound_and_below(mdp, delta, sigma):
    cset = ContaminationSet.around(mdp, delta)
    probs = _probs(mdp)
    exact = robust_value(cset, mdp, probs).v
    smooth = smoothed_robust_value(cset, mdp, probs, sigma).v
    assert np.all(smooth <= exact + 1e-8)
    assert np.abs(smooth - exact).max() <= smoothing_gap_bound(mdp.gamma, delta, sigma, mdp.n_states) + 1e-8


def test_optimal_value_dominates_random_policies(small_mdp):
    cset = ContaminationSet.around(small_mdp, 0.2)
    v_star, greedy = robust_optimal_value(cset, small_mdp)
    np.testing.assert_allclose(robust_value(cset, small_mdp, greedy).v, v_star, atol=1e-8)
    for seed in range(10):
        assert np.all(robust_value(cset, small_mdp, _probs(small_mdp, seed)).v <= v_star + 1e-8)


def test_set_shape_mismatch_is_rejected(small_mdp):
    other = ContaminationSet.around(random_cmdp(0, 3, 3), 0.1)
    with pytest.raises(ValidationError, match="centroid"):
        robust_value(other, small_mdp, _probs(small_mdp))
