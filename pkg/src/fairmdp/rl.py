"""Learning fair policies when transitions or the initial distribution are unknown.

* Explore-then-commit: run a fixed exploration policy, estimate ``P`` by
  counting, solve the fair problem on the estimated model, commit.
* Stationary distributions and mixing times of policy-induced chains.
* The unknown-initial-distribution workflow: run a fair exploration policy
  until the state distribution has mixed, then plan against the mixed
  distribution.

Episodic quantities use ``gamma = 1`` and a finite horizon ``T``; rewards are
expected sums over the episode and group values per-step averages (see
:func:`fairmdp.mdp.evaluate`).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mdp import (
    ContractError,
    FairnessSpec,
    TabularEnv,
    TabularMdp,
    evaluate,
    finite_occupancy,
    induced_transition,
    sample_actions,
)
from .model_based import FairSolveResult, solve_fair

MAX_STEPS = 10**6


# -- transition estimation ----------------------------------------------------------------


@dataclass
class TransitionEstimate:
    counts: np.ndarray
    P_hat: np.ndarray
    visits: np.ndarray
    unvisited: np.ndarray  # (S, A) mask of rows filled by the fallback

    @property
    def any_unvisited(self) -> bool:
        return bool(self.unvisited.any())


def estimate_transitions(counts, group_of: Optional[np.ndarray] = None) -> TransitionEstimate:
    """Empirical transition frequencies.

    Unvisited ``(s, a)`` rows fall back to the uniform distribution, restricted
    to states of the same group when ``group_of`` is given so the estimate
    stays separable.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 3 or counts.shape[0] != counts.shape[2]:
        raise ContractError(f"counts must have shape (S, A, S), got {counts.shape}")
    if np.any(counts < 0):
        raise ContractError("counts must be nonnegative")
    S = counts.shape[0]
    visits = counts.sum(axis=2)
    unvisited = visits == 0
    if group_of is None:
        fallback = np.full((S, S), 1.0 / S)
    else:
        same = (np.asarray(group_of)[:, None] == np.asarray(group_of)[None, :]).astype(float)
        fallback = same / same.sum(axis=1, keepdims=True)
    P_hat = np.where(unvisited[..., None], fallback[:, None, :],
                     counts / np.where(unvisited, 1.0, visits)[..., None])
    return TransitionEstimate(counts, P_hat, visits, unvisited)


def collect_counts(env: TabularEnv, policy, horizon: int, n_episodes: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n_episodes`` episodes; return transition counts and each episode's reward sum."""
    mdp = env.mdp
    pi = np.asarray(policy, dtype=float)
    counts = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_states))
    returns = np.zeros(n_episodes)
    if n_episodes == 0:
        return counts, returns
    states = env.reset(n_episodes, rng)
    for t in range(horizon):
        probs = pi[t][states] if pi.ndim == 3 else pi[states]
        actions = sample_actions(probs, rng)
        nxt, r, _ = env.step(states, actions, rng)
        np.add.at(counts, (states, actions, nxt), 1.0)
        returns += r
        states = nxt
    return counts, returns


# -- explore-then-commit ---------------------------------------------------------------------


def sufficient_n_explore(horizon: int, n_states: int, n_actions: int, r_max: float, lam0: float,
                       eps: float, delta: float) -> int:
    """Exploration episodes sufficient for the committed policy to be ``eps``-fair and ``eps``-optimal."""
    if lam0 <= 0 or eps <= 0 or not 0 < delta < 1:
        raise ContractError("need lam0 > 0, eps > 0 and delta in (0, 1)")
    value = (128.0 * horizon ** 2 * n_states ** 2 * r_max ** 2
             * math.log(2.0 * n_states ** 2 * n_actions / delta) / (lam0 ** 2 * eps ** 2))
    return math.ceil(value)


def exploration_floor(mdp: TabularMdp, policy, horizon: int) -> float:
    """``min_{s,a} Lambda^(pi)(s, a)`` for the finite-horizon occupancy."""
    return float(finite_occupancy(mdp, policy, horizon).lam.min())


@dataclass(frozen=True)
class EtcConfig:
    n_episodes: int
    n_explore: int
    explore_policy: np.ndarray
    horizon: int
    epsilon: float
    delta: float = 0.05
    lam0: float = 0.0

    def __post_init__(self):
        if not 0 <= self.n_explore <= self.n_episodes:
            raise ContractError("need 0 <= n_explore <= n_episodes")
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")


@dataclass
class EtcResult:
    policy: np.ndarray
    estimate: Optional[TransitionEstimate]
    episode_values: np.ndarray  # exact expected reward of the policy run in each episode
    regret: np.ndarray  # cumulative pseudo-regret after each episode
    comparator_value: float
    committed: Optional[FairSolveResult]
    flags: dict = field(default_factory=dict)

    @property
    def total_regret(self) -> float:
        return float(self.regret[-1]) if self.regret.size else 0.0


def fair_comparator(mdp: TabularMdp, spec: FairnessSpec, horizon: int, epsilon: float) -> FairSolveResult:
    """The best ``epsilon/4``-fair policy on the true model."""
    return solve_fair(mdp, spec.with_tolerance(epsilon / 4.0), horizon=horizon)


def explore_then_commit(mdp: TabularMdp, cfg: EtcConfig, spec: FairnessSpec, rng: np.random.Generator,
                        comparator: Optional[float] = None,
                        p_hat: Optional[np.ndarray] = None) -> EtcResult:
    """Explore with ``cfg.explore_policy`` for ``n_explore`` episodes, then commit.

    ``mdp`` plays the hidden environment: it is only simulated during
    exploration and used for exact evaluation of the policies that were run.
    ``p_hat`` injects a transition estimate instead of the counted one.
    Regret is measured against ``comparator`` (the value of a reference
    policy); by default the best ``epsilon/4``-fair policy.
    """
    T = cfg.horizon
    pi0 = np.asarray(cfg.explore_policy, dtype=float)
    flags = {}
    if cfg.lam0 > 0:
        floor = exploration_floor(mdp, pi0, T)
        flags["exploration_floor"] = floor
        flags["floor_ok"] = floor >= cfg.lam0
    if comparator is None:
        comp = fair_comparator(mdp, spec, T, cfg.epsilon)
        if not comp.fair:
            raise ContractError("no epsilon/4-fair comparator exists on the true model")
        comparator = comp.reward
    env = TabularEnv(mdp, spec)
    counts, _ = collect_counts(env, pi0, T, cfg.n_explore, rng)
    estimate = None
    if p_hat is None:
        estimate = estimate_transitions(counts, mdp.group_of)
        p_hat = estimate.P_hat
        flags["unvisited_pairs"] = int(estimate.unvisited.sum())
    model = mdp.with_transitions(p_hat)
    committed = solve_fair(model, spec.with_tolerance(cfg.epsilon / 2.0), horizon=T)
    if committed.fair:
        policy = committed.policy
    else:
        policy = pi0
        flags["fallback_to_explore_policy"] = True
    v0 = evaluate(mdp, pi0, spec, mode="finite", horizon=T).reward
    v1 = evaluate(mdp, policy, spec, mode="finite", horizon=T).reward
    values = np.concatenate([np.full(cfg.n_explore, v0), np.full(cfg.n_episodes - cfg.n_explore, v1)])
    regret = np.cumsum(comparator - values)
    return EtcResult(policy, estimate, values, regret, float(comparator), committed, flags)


def regret_csv(result: EtcResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "reward", "cumulative_regret"])
    for n, (v, r) in enumerate(zip(result.episode_values, result.regret), start=1):
        w.writerow([n, f"{v:.9g}", f"{r:.9g}"])
    return buf.getvalue()


@dataclass
class RegretCurve:
    n: np.ndarray
    regret: np.ndarray
    slope: float


def scaled_n_explore(n: int, kappa: float) -> int:
    """Exploration length ``ceil(kappa * N^(2/3))`` capped at ``N``."""
    return min(n, math.ceil(kappa * n ** (2.0 / 3.0)))


def regret_curve(mdp: TabularMdp, spec: FairnessSpec, explore_policy, horizon: int, ns: Sequence[int],
                 rng: np.random.Generator, kappa: float = 1.0, trials: int = 1) -> RegretCurve:
    """Mean total regret for each ``N`` with ``eps = N^(-2/3)``, and the fitted log-log slope."""
    ns = np.asarray(ns, dtype=int)
    out = np.empty(ns.size)
    for i, n in enumerate(ns):
        eps = float(n) ** (-2.0 / 3.0)
        cfg = EtcConfig(int(n), scaled_n_explore(int(n), kappa), explore_policy, horizon, eps)
        comp = fair_comparator(mdp, spec, horizon, eps).reward
        out[i] = np.mean([explore_then_commit(mdp, cfg, spec, rng, comparator=comp).total_regret
                          for _ in range(trials)])
    if np.all(out > 0) and ns.size > 1:
        slope = float(np.polyfit(np.log(ns), np.log(out), 1)[0])
    else:
        slope = float("nan")
    return RegretCurve(ns, out, slope)


# -- stationary distributions and mixing ------------------------------------------------------


class NotErgodicError(ContractError):
    """The chain's long-run distribution depends on where it starts."""


def _as_chain(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ContractError(f"expected a square transition matrix, got shape {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise ContractError("rows of the transition matrix must be probability vectors")
    return P


def stationary_distribution(P, tol: float = 1e-12, max_steps: int = MAX_STEPS,
                            return_residual: bool = False):
    """Unique ``d`` with ``d P = d``, found by powering the chain.

    ``P^(2^k)`` is formed by repeated squaring until all its rows agree to
    ``tol``; the common row is then polished by power iteration.  If the rows
    still disagree after ``max_steps`` steps the chain is not ergodic.
    """
    P = _as_chain(P)
    Q = P.copy()
    steps = 1
    while np.max(Q.max(axis=0) - Q.min(axis=0)) > tol:
        if steps >= max_steps:
            raise NotErgodicError(f"chain did not converge within {max_steps} steps")
        Q = Q @ Q
        steps *= 2
    d = Q.mean(axis=0)
    for _ in range(1000):
        nxt = d @ P
        nxt /= nxt.sum()
        done = np.max(np.abs(nxt - d)) <= tol
        d = nxt
        if done:
            break
    residual = float(np.max(np.abs(d @ P - d)))
    if residual > max(tol, 1e-12) * 10:
        raise NotErgodicError(f"power iteration residual {residual:.3g} above tolerance")
    return (d, residual) if return_residual else d


def mixing_time(P, eps0: float, max_steps: int = MAX_STEPS) -> int:
    """Smallest ``T >= 1`` with ``max_s ||e_s P^T - d||_inf <= eps0``.

    The distance is convex in the starting distribution, so checking the
    point masses covers the whole simplex.
    """
    if eps0 <= 0:
        raise ContractError("eps0 must be positive")
    P = _as_chain(P)
    d = stationary_distribution(P)
    Q = P.copy()
    for T in range(1, max_steps + 1):
        if np.max(np.abs(Q - d)) <= eps0:
            return T
        Q = Q @ P
    raise NotErgodicError(f"no mixing within {max_steps} steps")


# -- unknown initial distribution ------------------------------------------------------------


@dataclass
class WorkflowResult:
    policy: np.ndarray
    mix_steps: int
    eps0: float
    mixed_initial: np.ndarray
    solve: FairSolveResult
    flags: dict = field(default_factory=dict)


def _closed_blocks(mdp: TabularMdp) -> list[np.ndarray]:
    return [mdp.group_of == z for z in (0, 1) if np.any(mdp.group_of == z)]


def mixed_distribution(mdp: TabularMdp, policy, eps0: float) -> tuple[np.ndarray, int]:
    """Long-run state distribution of ``policy`` from ``D`` and the steps needed to get ``eps0``-close.

    In a separable model each group's block is closed, so the chain cannot be
    ergodic on all states.  Each block is mixed on its own and weighted by its
    (time-invariant) initial mass.
    """
    P = induced_transition(mdp, policy)
    d = np.zeros(mdp.n_states)
    steps = 1
    for block in _closed_blocks(mdp):
        mass = mdp.initial[block].sum()
        if mass <= 0:
            continue
        sub = P[np.ix_(block, block)]
        if np.any(np.abs(sub.sum(axis=1) - 1.0) > 1e-9):
            raise ContractError("group block is not closed under the policy")
        d[block] = mass * stationary_distribution(sub)
        steps = max(steps, mixing_time(sub, eps0))
    return d, steps


def unknown_init_workflow(mdp: TabularMdp, explore_policy, spec: FairnessSpec) -> WorkflowResult:
    """Plan for the distribution reached after running ``explore_policy`` long enough to mix.

    ``eps0 = (1 - gamma) eps / (8 |S| R_max)`` bounds the distance from the
    mixed distribution after the prescribed number of steps; the fair problem
    is then solved on the model whose initial distribution is the mixed one,
    with tolerance ``eps / 2``.
    """
    eps = spec.tolerance
    if eps <= 0:
        raise ContractError("the workflow needs a positive tolerance")
    gamma = mdp.discount
    if gamma >= 1.0:
        raise ContractError("the workflow is defined for discounted models")
    r_max = float(np.abs(mdp.reward).max()) or 1.0
    eps0 = (1.0 - gamma) * eps / (8.0 * mdp.n_states * r_max)
    d, steps = mixed_distribution(mdp, explore_policy, eps0)
    model = mdp.with_initial(d)
    result = solve_fair(model, spec.with_tolerance(eps / 2.0))
    flags = {}
    if result.fair:
        policy = result.policy
    else:
        policy = np.asarray(explore_policy, dtype=float)
        flags["fallback_to_explore_policy"] = True
    return WorkflowResult(policy, steps, eps0, d, result, flags)
