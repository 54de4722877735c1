import math
from dataclasses import replace
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from conftest import random_separable_mdp
from fairmdp.mdp import ContractError, FairnessSpec, TabularEnv, evaluate, load_fixture
from fairmdp.model_free import (
    VAR_FLOOR,
    CceConfig,
    SearchDistribution,
    StateIndependentFamily,
    estimate_samples,
    estimate_samples_optimistic,
    moment_to_params,
    params_to_moment,
    plan_samples,
    select_elite,
    tabular_family,
    tabular_policy,
    trace_csv,
    train,
    train_conservative,
    update_moments,
)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.floats(1e-3, 4))
def test_moment_round_trip(mean, var):
    m, v = moment_to_params(params_to_moment(mean, np.full(len(mean), var)))
    np.testing.assert_allclose(m, mean)
    np.testing.assert_allclose(v, var, rtol=1e-6, atol=1e-9)


def test_variance_floor():
    _, var = moment_to_params(np.array([[2.0], [4.0]]))
    assert var[0] == VAR_FLOOR


def test_full_smoothing_fits_weighted_moments(rng):
    thetas = rng.normal(size=(50, 3))
    w = rng.random(50)
    eta = update_moments(np.zeros((2, 3)), thetas, w, 1.0)
    mean, var = moment_to_params(eta)
    np.testing.assert_allclose(mean, np.average(thetas, axis=0, weights=w))
    np.testing.assert_allclose(var, np.average((thetas - mean) ** 2, axis=0, weights=w))


def test_partial_smoothing_interpolates(rng):
    thetas = rng.normal(size=(10, 2))
    eta0 = params_to_moment(np.ones(2), np.ones(2))
    half = update_moments(eta0, thetas, np.ones(10), 0.3)
    full = update_moments(eta0, thetas, np.ones(10), 1.0)
    np.testing.assert_allclose(half, 0.3 * full + 0.7 * eta0)


def test_plan_samples_closed_form():
    r, g, eps, sig, delta = 1.0, 0.9, 0.1, 0.1, 0.05
    m, T = plan_samples(r, g, eps, sig, delta)
    assert m == math.ceil(32 * r * (1 - g) * math.log(6 / delta) / (sig ** 2 * eps ** 2))
    bound = sig ** 2 * eps / 4
    assert g ** T * r / (1 - g) <= bound * (1 + 1e-12)
    assert g ** (T - 1) * r / (1 - g) > bound
    with pytest.raises(ContractError):
        plan_samples(r, 1.0, eps, sig, delta)
    with pytest.raises(ContractError):
        plan_samples(r, g, eps, 0.6, delta)


def test_plan_samples_worked_example():
    # high-precision value of 32 * 0.5 * ln(120) / (0.25 * 0.01) is 30639.9...
    exact = Decimal(16) * Decimal(120).ln() / Decimal("0.0025")
    assert math.ceil(exact) == 30640
    assert plan_samples(1.0, 0.5, 0.1, 0.5, 0.05)[0] == 30640
    assert plan_samples(1.0, 0.5, 0.1, 0.25, 0.05)[0] >= plan_samples(1.0, 0.5, 0.1, 0.5, 0.05)[0]


@pytest.mark.parametrize("n_actions", [2, 3, 4])
def test_softmax_family_matches_reference(rng, n_actions):
    fam = tabular_family(3, n_actions, gain=2.0)
    theta = rng.normal(size=fam.dim)
    table = tabular_policy(fam, theta, 3)
    W = np.hstack([np.zeros((3, 1)), 2.0 * theta.reshape(3, n_actions - 1)])
    np.testing.assert_allclose(table, softmax(W, axis=1), atol=1e-12)


def test_state_independent_family(rng):
    fam = StateIndependentFamily(3, gain=1.5)
    theta = rng.normal(size=(4, 2))
    p = fam.probs(theta, np.zeros(4, int))
    np.testing.assert_allclose(p, softmax(np.hstack([np.zeros((4, 1)), 1.5 * theta]), axis=1))


def test_elite_constraint_phase_orders_by_gap_then_reward():
    cfg = CceConfig(n_samples=6, n_elite=3, epsilon=0.1, sigma=0.1)
    rewards = np.array([5.0, 1.0, 2.0, 3.0, 9.0, 2.0])
    gaps = np.array([0.5, 0.2, 0.2, 0.3, 0.9, 0.2])
    sel = select_elite(rewards, gaps, cfg)
    assert sel.phase == "constraint" and sel.i_prime == 0
    assert list(sel.elite) == [2, 5, 1]


def test_elite_objective_phase_uses_fair_samples_only():
    cfg = CceConfig(n_samples=6, n_elite=2, epsilon=0.1, sigma=0.1)
    rewards = np.array([5.0, 1.0, 2.0, 3.0, 9.0, 2.0])
    gaps = np.array([0.05, 0.0, 0.2, 0.09, 0.0, 0.08])
    sel = select_elite(rewards, gaps, cfg)
    # threshold (1 - sigma) eps = 0.09 admits indices 0, 1, 3, 4, 5
    assert sel.i_prime == 5 and sel.phase == "objective"
    assert list(sel.elite) == [4, 0]
    assert np.all(sel.weights > 0)


def test_unconstrained_selection_ranks_by_reward():
    cfg = CceConfig(n_samples=4, n_elite=2, epsilon=math.inf)
    sel = select_elite(np.array([1.0, 3.0, 2.0, 0.0]), np.full(4, np.nan), cfg)
    assert list(sel.elite) == [1, 2] and sel.i_prime == 4


def test_strict_weighting_rejects_negative_rewards():
    cfg = CceConfig(n_samples=4, n_elite=2, epsilon=math.inf, weighting="strict")
    with pytest.raises(ContractError):
        select_elite(np.array([-1.0, -3.0, -2.0, -5.0]), np.zeros(4), cfg)
    sel = select_elite(np.array([1.0, 3.0, 2.0, 0.0]), np.zeros(4), cfg)
    np.testing.assert_allclose(sel.weights, [3.0, 2.0])


def test_config_validation():
    with pytest.raises(ContractError):
        CceConfig(n_samples=5, n_elite=6)
    with pytest.raises(ContractError):
        CceConfig(smoothing=0.0)
    with pytest.raises(ContractError):
        CceConfig(weighting="other")


def test_batched_estimates_match_exact_values(rng):
    mdp = load_fixture("parity_example")
    spec = FairnessSpec.demographic_parity(mdp)
    env = TabularEnv(mdp)
    fam = tabular_family(5, 2)
    thetas = rng.normal(size=(3, fam.dim))
    cfg = CceConfig(n_samples=3, n_elite=1, n_rollouts=4000, horizon=40, discount=mdp.discount)
    ests = estimate_samples(env, fam, thetas, cfg, rng)
    for theta, est in zip(thetas, ests):
        ev = evaluate(mdp, tabular_policy(fam, theta, 5), spec)
        assert abs(est.reward - ev.reward) < 5 * est.reward_se + 1e-9
        assert abs(est.rho_maj - ev.group_values["maj"]) < 0.03
        assert abs(est.rho_min - ev.group_values["min"]) < 0.03


def test_optimistic_estimates_use_initial_states_only(rng):
    mdp = load_fixture("parity_example")
    env = TabularEnv(mdp)
    fam = tabular_family(5, 2)
    thetas = rng.normal(size=(2, fam.dim))
    cfg = CceConfig(n_samples=2, n_elite=1, n_rollouts=2000, horizon=20, discount=mdp.discount)
    ests = estimate_samples_optimistic(env, fam, thetas, cfg, rng)
    D_maj, D_min = FairnessSpec.demographic_parity(mdp).group_distributions(mdp)
    for theta, est in zip(thetas, ests):
        pi = tabular_policy(fam, theta, 5)
        one_step = np.sum(pi * mdp.agent_reward, axis=1)
        assert est.rho_maj == pytest.approx(D_maj @ one_step)
        assert est.rho_min == pytest.approx(D_min @ one_step)


def test_unconstrained_search_finds_best_arm(rng):
    mdp = random_separable_mdp(rng, 1, 1, 3, discount=0.5)
    mdp = mdp.with_transitions(np.tile(np.eye(2)[:, None, :], (1, 3, 1)))
    mdp = replace(mdp, reward=np.tile([0.0, 1.0, 0.5], (2, 1)), agent_reward=np.full((2, 3), 0.3))
    env = TabularEnv(mdp)
    cfg = CceConfig(iterations=15, n_samples=30, n_elite=6, n_rollouts=20, horizon=10,
                    discount=0.5, epsilon=math.inf)
    res = train(env, StateIndependentFamily(3, gain=3.0), cfg, rng)
    assert res.distribution.mean[0] > 1.0 and res.distribution.mean[0] > res.distribution.mean[1]
    assert len(res.trace) == 15
    lines = trace_csv(res.trace).splitlines()
    assert lines[0].startswith("iteration,best_reward") and len(lines) == 16


def test_conservative_requires_state_independent_agent_reward(rng):
    mdp = load_fixture("parity_example")
    with pytest.raises(ContractError):
        train_conservative(TabularEnv(mdp), CceConfig(iterations=1, n_samples=2, n_elite=1), rng)


def test_search_distribution_sampling_statistics(rng):
    dist = SearchDistribution(params_to_moment([1.0, -2.0], [0.25, 4.0]))
    x = dist.sample(20000, rng)
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -2.0], atol=0.05)
    np.testing.assert_allclose(x.var(axis=0), [0.25, 4.0], rtol=0.05)
