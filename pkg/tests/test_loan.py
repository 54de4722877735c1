import json
import math

import numpy as np
import pytest

from fairmdp.experiments import (
    LoanExperimentConfig,
    rows_to_csv,
    run_method,
    summarize,
)
from fairmdp.loan import DENY, OFFER, LoanEnv, LoanParams, LoanState, features, offer_reward, reset, step
from fairmdp.mdp import MAJ, MIN, ContractError
from fairmdp.model_free import evaluate_policy

TINY = LoanExperimentConfig(iterations=2, n_samples=6, n_elite=2, n_rollouts=20, eval_episodes=200)


def test_default_params_match_fixture():
    prm = LoanParams.default()
    assert prm == LoanParams()
    assert prm.T == 50 and prm.T_maj == 10 and prm.T_min == 7
    assert prm.I == pytest.approx(0.17318629)


def test_params_reject_unknown_and_invalid(tmp_path):
    with pytest.raises(ContractError, match="bogus"):
        LoanParams.from_dict({"bogus": 1})
    with pytest.raises(ContractError):
        LoanParams(alpha_min=0.0)
    with pytest.raises(ContractError):
        LoanParams(T=5, T_maj=5)
    path = tmp_path / "p.json"
    path.write_text(json.dumps({**LoanParams().to_dict(), "tau": 0.3}))
    assert LoanParams.load(path).tau == 0.3


def test_offer_reward_closed_form():
    I, lam = 0.2, 0.05
    for p in (0.0, 0.3, 0.9, 1.0):
        expected = p * (1 + I) - 1 - lam * (1 + I) * math.sqrt(p * (1 - p))
        assert offer_reward(p, I, lam) == pytest.approx(expected)


def test_reset_group_mix_and_forced_observations(rng):
    prm = LoanParams()
    s = reset(prm, rng, 20000)
    assert abs(np.mean(s.z == MIN) - prm.p_Z) < 0.015
    for z in (MAJ, MIN):
        a0, b0 = prm.prior(z)
        total = s.alpha[s.z == z] + s.beta[s.z == z]
        np.testing.assert_allclose(total, a0 + b0 + prm.forced_steps(z))
    assert np.all(s.t == 0)


def test_group_reset_and_forced_mean(rng):
    prm = LoanParams()
    s = reset(prm, rng, 20000, group="min")
    assert np.all(s.z == MIN)
    # successes over the forced offers average T_min * E[p]
    mean_p = prm.alpha_min / (prm.alpha_min + prm.beta_min)
    assert abs(np.mean(s.alpha - prm.alpha_min) - prm.T_min * mean_p) < 0.1


def test_qualified_reset_matches_rejection_sampling(rng):
    prm = LoanParams()
    env = LoanEnv(prm, qualified_only=True)
    s = env.reset(20000, rng, group=MAJ)
    assert np.all(s.p >= prm.p0)
    draws = rng.beta(prm.alpha_maj, prm.beta_maj, size=400000)
    kept = draws[draws >= prm.p0]
    assert abs(s.p.mean() - kept.mean()) < 0.005
    assert abs(np.median(s.p) - np.median(kept)) < 0.01
    # unconditioned resets ignore the flag
    assert np.any(env.reset(2000, rng).p < prm.p0)


def test_step_updates_belief_and_pays_pre_update_reward(rng):
    prm = LoanParams()
    s = LoanState(np.array([MAJ, MIN]), np.array([2.0, 3.0]), np.array([1.0, 1.0]),
                  np.array([1.0, 0.0]), np.zeros(2, int))
    nxt, r, ar = step(s, np.array([OFFER, OFFER]), prm, rng)
    np.testing.assert_allclose(r, offer_reward(np.array([2 / 3, 3 / 4]), prm.I, prm.lam))
    np.testing.assert_allclose(nxt.alpha, [3.0, 3.0])
    np.testing.assert_allclose(nxt.beta, [1.0, 2.0])
    np.testing.assert_allclose(ar, [1.0, 1.0])
    den, r, ar = step(s, DENY, prm, rng)
    np.testing.assert_allclose(den.beta, 1.0 + prm.tau)
    np.testing.assert_allclose(den.alpha, s.alpha)
    assert np.all(r == 0) and np.all(ar == 0)
    assert np.all(den.t == 1)


def test_horizon_enforced(rng):
    prm = LoanParams(T=3, T_maj=1, T_min=1)
    env = LoanEnv(prm)
    s = env.reset(4, rng)
    for _ in range(3):
        s, _, _ = env.step(s, np.ones(4, int), rng)
    with pytest.raises(ContractError):
        env.step(s, np.ones(4, int), rng)


def test_belief_concentrates_on_hidden_probability(rng):
    prm = LoanParams(T=400, T_maj=0, T_min=0)
    env = LoanEnv(prm)
    s = env.reset(200, rng)
    for _ in range(399):
        s, _, _ = env.step(s, np.ones(200, int), rng)
    assert np.mean(np.abs(s.p_hat - s.p)) < 0.03


def test_features_layout(rng):
    s = reset(LoanParams(), rng, 5)
    f = features(s)
    assert f.shape == (5, 4)
    np.testing.assert_allclose(f[:, 1], s.p_hat)
    np.testing.assert_allclose(f[:, 2], np.log(s.alpha + s.beta))
    np.testing.assert_allclose(f[:, 3], s.z == MIN)
    assert features(s, race_blind=True).shape == (5, 3)


def test_constant_policy_values(rng):
    prm = LoanParams()
    env = LoanEnv(prm)
    est = evaluate_policy(env, lambda s, t: np.tile([0.6, 0.4], (len(s), 1)), prm.T, 300, rng,
                          expected_agent_reward=True)
    assert est.rho_maj == pytest.approx(0.4) and est.rho_min == pytest.approx(0.4)
    deny = evaluate_policy(env, lambda s, t: np.tile([1.0, 0.0], (len(s), 1)), prm.T, 300, rng)
    assert deny.reward == 0.0 and deny.gap == 0.0


def test_run_method_is_reproducible_and_cons_is_exactly_fair():
    prm = LoanParams(T=8, T_maj=2, T_min=2)
    a = run_method("cons", prm, TINY, 3, ("dp", "eo"))
    b = run_method("cons", prm, TINY, 3, ("dp", "eo"))
    assert rows_to_csv(a) == rows_to_csv(b)
    assert all(r.constraint == 0.0 for r in a)
    rows = run_method("dp", prm, TINY, 1) + run_method("rb", prm, TINY, 1)
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "method,label,criterion,seed,reward,reward_se,constraint"
    summary = summarize(rows)
    assert set(summary) == {("dp", "dp"), ("rb", "dp")}
    with pytest.raises(ContractError):
        run_method("nope", prm, TINY, 0)
