"""Loan-experiment grid: train each method, then evaluate it on fresh rollouts.

Methods:

* ``rb``: unconstrained search over policies that do not see the group.
* ``dp`` / ``eo``: constrained cross-entropy with the demographic-parity or
  equal-opportunity gap estimated from full rollouts.
* ``opt-dp`` / ``opt-eo``: the same, but the gap is estimated from one step on
  initial states only.
* ``cons``: search over state-independent policies (gap 0 by construction).

Constraint values are measured as the difference in per-step offer
probability between groups, using the policy's offer probability rather than
sampled offers, so a state-independent policy measures exactly 0.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .loan import LoanEnv, LoanParams
from .mdp import ContractError
from .model_free import (
    CceConfig,
    LinearSoftmaxFamily,
    TrainResult,
    evaluate_policy,
    train,
    train_conservative,
    train_optimistic,
    train_race_blind,
)

METHODS = ("rb", "dp", "eo", "opt-dp", "opt-eo", "cons")
METHOD_LABELS = {"rb": "RB", "dp": "DP-CCE", "eo": "EO-CCE", "opt-dp": "Opt", "opt-eo": "Opt",
                 "cons": "Cons"}

# offsets applied to [1, p_hat, log(alpha + beta), 1(z = min)] before scoring
FEATURE_CENTER = np.array([0.0, 0.5, 3.0, 0.0])


@dataclass(frozen=True)
class LoanExperimentConfig:
    iterations: int = 40
    n_samples: int = 100
    n_elite: int = 10
    n_rollouts: int = 1000
    smoothing: float = 0.7
    sigma: float = 0.3
    gain: float = 20.0
    eval_episodes: int = 10_000

    def cce(self, params: LoanParams, epsilon: float) -> CceConfig:
        return CceConfig(iterations=self.iterations, n_samples=self.n_samples, n_elite=self.n_elite,
                         n_rollouts=self.n_rollouts, horizon=params.T, smoothing=self.smoothing,
                         sigma=self.sigma, epsilon=epsilon, discount=params.gamma)


def loan_family(env: LoanEnv, race_blind: bool, gain: float) -> LinearSoftmaxFamily:
    k = 3 if race_blind else 4
    return LinearSoftmaxFamily(lambda s: env.features(s, race_blind=race_blind), k, 2, gain,
                               center=FEATURE_CENTER[:k])


def criterion_of(method: str) -> str:
    return "eo" if method.endswith("eo") else "dp"


def train_method(method: str, params: LoanParams, cfg: LoanExperimentConfig,
                 rng: np.random.Generator) -> TrainResult:
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    env = LoanEnv(params, qualified_only=criterion_of(method) == "eo")
    cce = cfg.cce(params, params.eps)
    if method == "rb":
        return train_race_blind(env, loan_family(env, True, cfg.gain), cce, rng)
    if method == "cons":
        return train_conservative(env, cce, rng, gain=cfg.gain)
    family = loan_family(env, False, cfg.gain)
    if method.startswith("opt"):
        return train_optimistic(env, family, cce, rng)
    return train(env, family, cce, rng)


@dataclass
class MethodRow:
    method: str
    criterion: str
    seed: int
    reward: float
    reward_se: float
    constraint: float
    wall_time: float


def evaluate_trained(result: TrainResult, params: LoanParams, criterion: str, n: int,
                     rng: np.random.Generator):
    env = LoanEnv(params, qualified_only=criterion == "eo")
    return evaluate_policy(env, result.policy(), params.T, n, rng, params.gamma, expected_agent_reward=True)


def run_method(method: str, params: LoanParams, cfg: LoanExperimentConfig, seed: int,
               criteria: Optional[tuple[str, ...]] = None) -> list[MethodRow]:
    """Train once, then evaluate under each requested criterion with evaluation-only seeds."""
    train_ss, eval_ss = np.random.SeedSequence(seed).spawn(2)
    start = time.perf_counter()
    result = train_method(method, params, cfg, np.random.default_rng(train_ss))
    elapsed = time.perf_counter() - start
    rows = []
    crits = criteria if criteria is not None else (criterion_of(method),)
    for crit, ss in zip(crits, eval_ss.spawn(len(crits))):
        est = evaluate_trained(result, params, crit, cfg.eval_episodes, np.random.default_rng(ss))
        rows.append(MethodRow(method, crit, seed, est.reward, est.reward_se, est.gap, elapsed))
    return rows


CSV_FIELDS = ("method", "label", "criterion", "seed", "reward", "reward_se", "constraint")


def rows_to_csv(rows: list[MethodRow], timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS + (("wall_time",) if timing else ()))
    for r in rows:
        line = [r.method, METHOD_LABELS[r.method], r.criterion, r.seed, f"{r.reward:.9g}",
                f"{r.reward_se:.9g}", f"{r.constraint:.9g}"]
        if timing:
            line.append(f"{r.wall_time:.3f}")
        w.writerow(line)
    return buf.getvalue()


def summarize(rows: list[MethodRow]) -> dict:
    """Mean reward, standard error across seeds and mean constraint per (method, criterion)."""
    out = {}
    for key in sorted({(r.method, r.criterion) for r in rows}):
        sel = [r for r in rows if (r.method, r.criterion) == key]
        rewards = np.array([r.reward for r in sel])
        se = float(rewards.std(ddof=1) / np.sqrt(len(sel))) if len(sel) > 1 else float("nan")
        out[key] = {"reward": float(rewards.mean()), "reward_se": se,
                    "constraint": float(np.mean([r.constraint for r in sel])), "seeds": len(sel)}
    return out


def run_grid(params: LoanParams, cfg: LoanExperimentConfig, seeds, progress=None) -> list[MethodRow]:
    """The full comparison: RB and Cons are trained once and measured under both criteria."""
    plan = [("rb", ("dp", "eo")), ("cons", ("dp", "eo")), ("dp", None), ("opt-dp", None),
            ("eo", None), ("opt-eo", None)]
    rows = []
    for seed in seeds:
        for method, crits in plan:
            new = run_method(method, params, cfg, seed, crits)
            rows.extend(new)
            if progress is not None:
                for r in new:
                    progress(r)
    return rows


def default_config() -> LoanExperimentConfig:
    return LoanExperimentConfig()


def with_overrides(cfg: LoanExperimentConfig, **kw) -> LoanExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
