"""Loan-applicant belief MDP.

An applicant from group ``z`` has a hidden repayment probability ``p`` drawn
from a Beta prior.  The bank keeps a Beta(alpha, beta) belief about ``p``.
Offering a loan reveals one Bernoulli(p) repayment; denying it adds ``tau``
to ``beta``.  The bank's reward for an offer is the mean-minus-deviation value
of the loan under the current belief mean; the applicant's reward is 1 for an
offer.

States are batched as :class:`LoanState` arrays so the environment plugs into
:func:`fairmdp.mdp.sample_rollouts`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import special

from .mdp import MAJ, MIN, ContractError, _group_index

DENY, OFFER = 0, 1


@dataclass(frozen=True)
class LoanParams:
    I: float = 0.17318629
    p_Z: float = 0.29294318
    alpha_maj: float = 0.65338681
    beta_maj: float = 0.20783559
    alpha_min: float = 0.48824268
    beta_min: float = 0.48346869
    lam: float = 0.01
    tau: float = 0.1
    eps: float = 0.1
    T: int = 50
    T_maj: int = 10
    T_min: int = 7
    gamma: float = 1.0
    p0: float = 0.7

    def __post_init__(self):
        for name in ("alpha_maj", "beta_maj", "alpha_min", "beta_min"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.tau < 0:
            raise ContractError("tau must be >= 0")
        if not 0.0 <= self.p_Z <= 1.0:
            raise ContractError("p_Z must lie in [0, 1]")
        if self.T < 1 or not (0 <= self.T_maj < self.T and 0 <= self.T_min < self.T):
            raise ContractError("need 0 <= T_z < T")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError("gamma must lie in (0, 1]")
        if not 0.0 <= self.p0 <= 1.0:
            raise ContractError("p0 must lie in [0, 1]")

    def prior(self, z: int) -> tuple[float, float]:
        return (self.alpha_maj, self.beta_maj) if z == MAJ else (self.alpha_min, self.beta_min)

    def forced_steps(self, z: int) -> int:
        return self.T_maj if z == MAJ else self.T_min

    @property
    def r_max(self) -> float:
        return max(1.0, self.I) + self.lam * (self.I + 1.0) / 2.0

    @classmethod
    def from_dict(cls, doc: dict) -> "LoanParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ContractError(f"unknown loan parameter(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "LoanParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "LoanParams":
        return cls.load(Path(__file__).parent / "data" / "loan_default.json")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LoanState:
    """A batch of applicants; every field is an array of the batch length."""

    z: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.z)

    @property
    def p_hat(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)

    def __getitem__(self, idx) -> "LoanState":
        return LoanState(self.z[idx], self.alpha[idx], self.beta[idx], self.p[idx], self.t[idx])


def offer_reward(p_hat, I: float, lam: float) -> np.ndarray:
    """Expected profit minus ``lam`` times the standard deviation of a loan with repayment probability ``p_hat``."""
    p_hat = np.asarray(p_hat, dtype=float)
    return p_hat * (I + 1.0) - 1.0 - lam * (I + 1.0) * np.sqrt(np.clip(p_hat * (1.0 - p_hat), 0.0, None))


def _truncated_beta(a: float, b: float, lower: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Beta(a, b) draws conditioned on ``p >= lower`` by inverting the CDF."""
    if lower <= 0.0:
        return rng.beta(a, b, size=n)
    base = special.betainc(a, b, lower)
    if base >= 1.0:
        raise ContractError(f"no prior mass above p0={lower}")
    u = base + (1.0 - base) * rng.random(n)
    return np.clip(special.betaincinv(a, b, u), lower, 1.0)


class LoanEnv:
    """Vectorized loan simulator.

    ``qualified_only`` makes group-conditioned resets draw only applicants with
    ``p >= p0``; this is how the equality-of-opportunity group distributions
    are formed.  Unconditioned resets always use the full population.
    """

    n_actions = 2
    state_independent_agent_reward = True

    def __init__(self, params: Optional[LoanParams] = None, qualified_only: bool = False):
        self.params = params if params is not None else LoanParams.default()
        self.qualified_only = qualified_only

    def with_qualified_only(self, flag: bool = True) -> "LoanEnv":
        return LoanEnv(self.params, flag)

    def reset(self, n: int, rng: np.random.Generator, group=None) -> LoanState:
        prm = self.params
        if group is None:
            z = (rng.random(n) < prm.p_Z).astype(np.int64)
        else:
            z = np.full(n, _group_index(group), dtype=np.int64)
        alpha = np.empty(n)
        beta = np.empty(n)
        p = np.empty(n)
        for g in (MAJ, MIN):
            idx = np.flatnonzero(z == g)
            if idx.size == 0:
                continue
            a0, b0 = prm.prior(g)
            if self.qualified_only and group is not None:
                p[idx] = _truncated_beta(a0, b0, prm.p0, idx.size, rng)
            else:
                p[idx] = rng.beta(a0, b0, size=idx.size)
            k = prm.forced_steps(g)
            # forced offers: the belief absorbs k repayment outcomes, no reward accrues
            repaid = rng.binomial(k, p[idx]) if k > 0 else np.zeros(idx.size)
            alpha[idx] = a0 + repaid
            beta[idx] = b0 + (k - repaid)
        return LoanState(z, alpha, beta, p, np.zeros(n, dtype=np.int64))

    def step(self, states: LoanState, actions, rng: np.random.Generator):
        prm = self.params
        if np.any(states.t >= prm.T):
            raise ContractError(f"horizon T={prm.T} exceeded")
        actions = np.asarray(actions)
        offer = actions == OFFER
        reward = np.where(offer, offer_reward(states.p_hat, prm.I, prm.lam), 0.0)
        repaid = rng.random(len(states)) < states.p
        alpha = states.alpha + (offer & repaid)
        beta = states.beta + np.where(offer, ~repaid, prm.tau)
        nxt = LoanState(states.z, alpha, beta, states.p, states.t + 1)
        return nxt, reward, offer.astype(float)

    def agent_rewards(self, states: LoanState) -> np.ndarray:
        out = np.zeros((len(states), 2))
        out[:, OFFER] = 1.0
        return out

    def initial_groups(self, states: LoanState) -> np.ndarray:
        return states.z.copy()

    def features(self, states: LoanState, race_blind: bool = False) -> np.ndarray:
        cols = [np.ones(len(states)), states.p_hat, np.log(states.alpha + states.beta)]
        if not race_blind:
            cols.append((states.z == MIN).astype(float))
        return np.stack(cols, axis=1)

    def qualified(self, states: LoanState) -> np.ndarray:
        return states.p >= self.params.p0


def qualified(state: LoanState, params: LoanParams) -> np.ndarray:
    return state.p >= params.p0


def features(state: LoanState, race_blind: bool = False) -> np.ndarray:
    return LoanEnv.features(None, state, race_blind)


def reset(params: LoanParams, rng: np.random.Generator, n: int = 1, group=None) -> LoanState:
    return LoanEnv(params).reset(n, rng, group)


def step(state: LoanState, action, params: LoanParams, rng: np.random.Generator):
    return LoanEnv(params).step(state, np.broadcast_to(action, (len(state),)), rng)
