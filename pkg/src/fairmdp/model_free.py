"""Constrained cross-entropy search over parameterized policies.

Parameters are drawn from an independent Gaussian kept in moment coordinates
``eta = (E[theta], E[theta^2])``.  Each iteration samples ``n`` parameter
vectors, estimates reward and parity gap by simulation, keeps an elite set
that favours constraint satisfaction first and reward second, and moves
``eta`` toward the elite's weighted moments.

All parameter samples of an iteration are simulated as one vectorized batch:
episode ``i * m + j`` is rollout ``j`` of sample ``i``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .mdp import (
    MAJ,
    MIN,
    ContractError,
    RolloutBatch,
    RolloutEstimate,
    estimate_from_rollouts,
    sample_actions,
    sample_rollouts,
)

VAR_FLOOR = 1e-6


def plan_samples(r_max: float, discount: float, eps: float, sigma: float, delta: float) -> tuple[int, int]:
    """Rollouts ``m`` and truncation horizon ``T`` that make the estimates ``sigma*eps/2``-accurate w.p. ``1-delta``.

    ``T`` is the smallest step count with ``gamma^T R_max / (1-gamma) <= sigma^2 eps / 4``.
    """
    if not 0.0 < discount < 1.0:
        raise ContractError("discount must lie in (0, 1)")
    if not 0.0 < sigma <= 0.5:
        raise ContractError("sigma must lie in (0, 1/2]")
    if eps <= 0:
        raise ContractError("eps must be positive")
    if not 0.0 < delta < 1.0:
        raise ContractError("delta must lie in (0, 1)")
    if r_max <= 0:
        raise ContractError("r_max must be positive")
    m = math.ceil(32.0 * r_max * (1.0 - discount) * math.log(6.0 / delta) / (sigma ** 2 * eps ** 2))
    ratio = math.log(4.0 * r_max / (sigma ** 2 * eps * (1.0 - discount)))
    T = max(1, math.ceil(ratio / math.log(1.0 / discount)))
    return m, T


# -- search distribution ---------------------------------------------------------------


def moment_to_params(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Means and floored variances from moment coordinates of shape ``(2, d)``."""
    eta = np.asarray(eta, dtype=float)
    mean = eta[0].copy()
    var = np.maximum(eta[1] - mean ** 2, VAR_FLOOR)
    return mean, var


def params_to_moment(mean, var) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    return np.stack([mean, np.asarray(var, dtype=float) + mean ** 2])


@dataclass
class SearchDistribution:
    eta: np.ndarray

    @classmethod
    def standard(cls, dim: int, mean: float = 0.0, var: float = 1.0) -> "SearchDistribution":
        return cls(params_to_moment(np.full(dim, mean), np.full(dim, var)))

    @property
    def dim(self) -> int:
        return self.eta.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return moment_to_params(self.eta)[0]

    @property
    def var(self) -> np.ndarray:
        return moment_to_params(self.eta)[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mean, var = moment_to_params(self.eta)
        return mean + np.sqrt(var) * rng.standard_normal((n, self.dim))


def sufficient_stats(thetas: np.ndarray) -> np.ndarray:
    """``Gamma(theta) = (theta, theta^2)`` per sample, shape ``(n, 2, d)``."""
    return np.stack([thetas, thetas ** 2], axis=1)


# -- policy families -------------------------------------------------------------------


def _softmax(scores: np.ndarray) -> np.ndarray:
    if scores.shape[-1] == 2:
        # logistic fast path; column 0 is the reference score 0
        p1 = 1.0 / (1.0 + np.exp(-(scores[..., 1] - scores[..., 0])))
        return np.stack([1.0 - p1, p1], axis=-1)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


class LinearSoftmaxFamily:
    """``pi(a | s) ∝ exp(gain * phi(s) @ W[:, a])`` with the scores of action 0 fixed at 0.

    With two actions this is logistic regression on ``phi``.  ``theta`` is
    ``W[:, 1:]`` flattened, so ``dim = n_features * (n_actions - 1)``.

    ``center`` is subtracted from the features before scoring.  When the
    features include a constant column this reparameterizes the same policy
    class, but it decorrelates intercept and slopes, which suits a search
    distribution with independent coordinates.
    """

    def __init__(self, features: Callable, n_features: int, n_actions: int, gain: float = 1.0,
                 center: Optional[np.ndarray] = None):
        if n_actions < 2:
            raise ContractError("a softmax family needs at least two actions")
        self.features = features
        self.n_features = n_features
        self.n_actions = n_actions
        self.gain = float(gain)
        self.center = np.zeros(n_features) if center is None else np.asarray(center, dtype=float)

    @property
    def dim(self) -> int:
        return self.n_features * (self.n_actions - 1)

    def probs(self, thetas: np.ndarray, states) -> np.ndarray:
        """Action probabilities for a batch where episode ``k`` uses ``thetas[k]``."""
        phi = np.asarray(self.features(states), dtype=float) - self.center
        W = thetas.reshape(len(thetas), self.n_features, self.n_actions - 1)
        scores = np.zeros((len(thetas), self.n_actions))
        scores[:, 1:] = self.gain * np.einsum("kf,kfa->ka", phi, W)
        return _softmax(scores)


def tabular_family(n_states: int, n_actions: int, gain: float = 1.0) -> LinearSoftmaxFamily:
    """One logit per non-reference action in every state."""
    eye = np.eye(n_states)
    return LinearSoftmaxFamily(lambda states: eye[np.asarray(states)], n_states, n_actions, gain)


class StateIndependentFamily:
    """``pi(a | s) = softmax(theta)[a]`` for every state; reference action 0."""

    def __init__(self, n_actions: int, gain: float = 1.0):
        self.n_actions = n_actions
        self.gain = float(gain)

    @property
    def dim(self) -> int:
        return self.n_actions - 1

    def probs(self, thetas: np.ndarray, states) -> np.ndarray:
        scores = np.zeros((len(thetas), self.n_actions))
        scores[:, 1:] = self.gain * thetas
        return _softmax(scores)


def policy_fn(family, theta: np.ndarray) -> Callable:
    """A single-parameter policy usable with :func:`sample_rollouts`."""
    theta = np.asarray(theta, dtype=float)

    def fn(states, t):
        n = len(states)
        return family.probs(np.broadcast_to(theta, (n, theta.size)), states)

    return fn


def tabular_policy(family, theta: np.ndarray, n_states: int) -> np.ndarray:
    """The ``(S, A)`` table of a family evaluated on integer states."""
    return policy_fn(family, theta)(np.arange(n_states), 0)


# -- configuration and estimation ----------------------------------------------------------


@dataclass(frozen=True)
class CceConfig:
    iterations: int = 100
    n_samples: int = 100
    n_elite: int = 10
    n_rollouts: int = 1000
    horizon: int = 50
    smoothing: float = 0.7
    sigma: float = 0.1
    epsilon: float = 0.1
    discount: float = 1.0
    weighting: str = "shifted"
    expected_agent_reward: bool = True

    def __post_init__(self):
        if not 1 <= self.n_elite <= self.n_samples:
            raise ContractError("need 1 <= n_elite <= n_samples")
        if self.horizon < 1 or self.n_rollouts < 1 or self.iterations < 0:
            raise ContractError("horizon and n_rollouts must be >= 1, iterations >= 0")
        if not 0.0 < self.smoothing <= 1.0:
            raise ContractError("smoothing must lie in (0, 1]")
        if not 0.0 < self.sigma <= 0.5:
            raise ContractError("sigma must lie in (0, 1/2]")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.weighting not in ("shifted", "strict"):
            raise ContractError(f"unknown weighting {self.weighting!r}")

    @property
    def quantile(self) -> float:
        return self.n_elite / self.n_samples


def _split(batch: RolloutBatch, k: int, m: int) -> RolloutBatch:
    sl = slice(k * m, (k + 1) * m)
    return RolloutBatch(batch.actions[sl], batch.rewards[sl], batch.agent_rewards[sl],
                        batch.expected_agent_rewards[sl], batch.initial_group[sl])


def _batched_rollouts(env, family, thetas, cfg: CceConfig, rng, group=None) -> RolloutBatch:
    m = cfg.n_rollouts
    per_episode = np.repeat(thetas, m, axis=0)
    return sample_rollouts(env, lambda states, t: family.probs(per_episode, states),
                           cfg.horizon, len(thetas) * m, rng, group=group)


def estimate_samples(env, family, thetas: np.ndarray, cfg: CceConfig,
                     rng: np.random.Generator) -> list[RolloutEstimate]:
    """Reward and group values for every parameter vector, from three independent batches.

    Unconstrained searches (``epsilon = inf``) skip the group batches and
    report NaN group values.
    """
    reward = _batched_rollouts(env, family, thetas, cfg, rng)
    if math.isinf(cfg.epsilon):
        return _reward_only(reward, len(thetas), cfg)
    maj = _batched_rollouts(env, family, thetas, cfg, rng, group=MAJ)
    mino = _batched_rollouts(env, family, thetas, cfg, rng, group=MIN)
    m = cfg.n_rollouts
    return [estimate_from_rollouts(_split(reward, k, m), _split(maj, k, m), _split(mino, k, m),
                                   cfg.discount, cfg.expected_agent_reward)
            for k in range(len(thetas))]


def _reward_only(reward: RolloutBatch, k: int, cfg: CceConfig) -> list[RolloutEstimate]:
    m = cfg.n_rollouts
    returns = (reward.rewards @ (cfg.discount ** np.arange(cfg.horizon))).reshape(k, m)
    se = returns.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.full(k, np.nan)
    return [RolloutEstimate(float(returns[i].mean()), math.nan, math.nan, float(se[i])) for i in range(k)]


def estimate_samples_optimistic(env, family, thetas: np.ndarray, cfg: CceConfig,
                                rng: np.random.Generator) -> list[RolloutEstimate]:
    """Like :func:`estimate_samples`, but group values come from one step on initial states.

    This assumes the state distribution never drifts from the initial one, so
    only ``E_{s ~ D_z} sum_a pi(a|s) rho(s, a)`` is estimated.
    """
    reward = _batched_rollouts(env, family, thetas, cfg, rng)
    if math.isinf(cfg.epsilon):
        return _reward_only(reward, len(thetas), cfg)
    m = cfg.n_rollouts
    per_episode = np.repeat(thetas, m, axis=0)
    returns = reward.rewards @ (cfg.discount ** np.arange(cfg.horizon))
    returns = returns.reshape(len(thetas), m)
    group_vals = []
    for z in (MAJ, MIN):
        states = env.reset(len(per_episode), rng, group=z)
        probs = family.probs(per_episode, states)
        if cfg.expected_agent_reward:
            vals = np.sum(probs * env.agent_rewards(states), axis=1)
        else:
            acts = sample_actions(probs, rng)
            vals = env.agent_rewards(states)[np.arange(len(acts)), acts]
        group_vals.append(vals.reshape(len(thetas), m).mean(axis=1))
    se = returns.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.full(len(thetas), np.nan)
    return [RolloutEstimate(float(returns[k].mean()), float(group_vals[0][k]), float(group_vals[1][k]),
                            float(se[k])) for k in range(len(thetas))]


# -- the iteration ------------------------------------------------------------------------


@dataclass
class EliteSelection:
    elite: np.ndarray
    i_prime: int
    phase: str  # "objective" or "constraint"
    weights: np.ndarray


def select_elite(rewards: np.ndarray, gaps: np.ndarray, cfg: CceConfig) -> EliteSelection:
    """Rank by gap (then reward, then index); switch to reward ranking once enough samples are fair."""
    n = len(rewards)
    idx = np.arange(n)
    order = np.lexsort((idx, -rewards, gaps))
    if math.isinf(cfg.epsilon):
        i_prime = n
    else:
        i_prime = int(np.sum(gaps <= (1.0 - cfg.sigma) * cfg.epsilon))
    n_elite = cfg.n_elite
    if n_elite <= i_prime:
        head = order[:i_prime]
        head = head[np.lexsort((head, -rewards[head]))]
        elite = head[:n_elite]
        phase = "objective"
    else:
        elite = order[:n_elite]
        phase = "constraint"
    return EliteSelection(elite, i_prime, phase, _weights(rewards[elite], gaps[elite], phase, cfg))


def _weights(r: np.ndarray, g: np.ndarray, phase: str, cfg: CceConfig) -> np.ndarray:
    if cfg.weighting == "strict":
        if np.any(r < 0) or r.sum() <= 0:
            raise ContractError("strict weighting needs nonnegative estimated rewards with positive sum")
        return r.astype(float)
    x = r if phase == "objective" else -g
    span = x.max() - x.min()
    if span <= 0:
        return np.ones_like(x, dtype=float)
    return x - x.min() + 1e-3 * span


def update_moments(eta: np.ndarray, thetas: np.ndarray, weights: np.ndarray, smoothing: float) -> np.ndarray:
    """``eta <- a * weighted mean of Gamma(theta) + (1 - a) * eta``."""
    target = np.einsum("k,kij->ij", weights, sufficient_stats(thetas)) / weights.sum()
    return smoothing * target + (1.0 - smoothing) * eta


@dataclass
class IterationRecord:
    iteration: int
    best_reward: float
    elite_min_gap: float
    i_prime: int
    eta_norm: float
    phase: str


def cce_iteration(dist: SearchDistribution, env, family, cfg: CceConfig, rng: np.random.Generator,
                  estimator: Callable = estimate_samples) -> tuple[SearchDistribution, IterationRecord]:
    thetas = dist.sample(cfg.n_samples, rng)
    ests = estimator(env, family, thetas, cfg, rng)
    rewards = np.array([e.reward for e in ests])
    gaps = np.array([e.gap for e in ests])
    sel = select_elite(rewards, gaps, cfg)
    eta = update_moments(dist.eta, thetas[sel.elite], sel.weights, cfg.smoothing)
    record = IterationRecord(-1, float(rewards[sel.elite].max()), float(gaps[sel.elite].min()),
                             sel.i_prime, float(np.linalg.norm(eta)), sel.phase)
    return SearchDistribution(eta), record


# -- trainers -----------------------------------------------------------------------------


@dataclass
class TrainResult:
    theta: np.ndarray
    mean: np.ndarray
    distribution: SearchDistribution
    family: object
    trace: list = field(default_factory=list)

    def policy(self, use_mean: bool = False) -> Callable:
        """Policy of the sampled parameter, or of the distribution mean (deterministic alternative)."""
        return policy_fn(self.family, self.mean if use_mean else self.theta)


def trace_csv(trace: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "best_reward", "elite_min_gap", "i_prime", "eta_norm", "phase"])
    for rec in trace:
        w.writerow([rec.iteration, f"{rec.best_reward:.9g}", f"{rec.elite_min_gap:.9g}", rec.i_prime,
                    f"{rec.eta_norm:.9g}", rec.phase])
    return buf.getvalue()


def train(env, family, cfg: CceConfig, rng: np.random.Generator,
          init: Optional[SearchDistribution] = None, estimator: Callable = estimate_samples,
          callback: Optional[Callable] = None) -> TrainResult:
    dist = init if init is not None else SearchDistribution.standard(family.dim)
    trace = []
    for it in range(cfg.iterations):
        dist, rec = cce_iteration(dist, env, family, cfg, rng, estimator)
        rec.iteration = it
        trace.append(rec)
        if callback is not None:
            callback(rec)
    theta = dist.sample(1, rng)[0]
    return TrainResult(theta, dist.mean, dist, family, trace)


def train_optimistic(env, family, cfg: CceConfig, rng: np.random.Generator, **kw) -> TrainResult:
    """Constraint estimated on initial states only, as if the state distribution never changed."""
    return train(env, family, cfg, rng, estimator=estimate_samples_optimistic, **kw)


def train_conservative(env, cfg: CceConfig, rng: np.random.Generator, gain: float = 1.0, **kw) -> TrainResult:
    """Search over state-independent policies, which are fair whenever agent rewards ignore the state."""
    if not getattr(env, "state_independent_agent_reward", False):
        raise ContractError("conservative training requires state-independent agent rewards")
    family = StateIndependentFamily(env.n_actions, gain)
    return train(env, family, replace(cfg, epsilon=math.inf), rng, **kw)


def train_race_blind(env, family, cfg: CceConfig, rng: np.random.Generator, **kw) -> TrainResult:
    """Unconstrained search; fairness comes only from ``family`` not seeing the group."""
    return train(env, family, replace(cfg, epsilon=math.inf), rng, **kw)


def evaluate_policy(env, policy, horizon: int, n: int, rng: np.random.Generator, discount: float = 1.0,
                    expected_agent_reward: bool = False) -> RolloutEstimate:
    """Fresh Monte Carlo estimate of a fixed policy's reward and group values."""
    reward = sample_rollouts(env, policy, horizon, n, rng)
    maj = sample_rollouts(env, policy, horizon, n, rng, group=MAJ)
    mino = sample_rollouts(env, policy, horizon, n, rng, group=MIN)
    return estimate_from_rollouts(reward, maj, mino, discount, expected_agent_reward)
