"""Finite MDPs, occupancy measures, fairness evaluation and Monte Carlo rollouts.

Conventions used throughout the package:

* ``transitions[s, a, s']`` is the probability of moving from ``s`` to ``s'``
  under action ``a``.
* A tabular policy is an ``(n_states, n_actions)`` array; a non-stationary
  policy for a finite horizon is a ``(T, n_states, n_actions)`` array.
* State distributions are row vectors, so one step of the induced chain is
  ``d @ induced_transition(mdp, policy)``.
* Group ``0`` is the majority and group ``1`` the minority.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol

import numpy as np

MAJ, MIN = 0, 1
GROUP_NAMES = ("maj", "min")
PROB_TOL = 1e-12


class ContractError(ValueError):
    """Inputs violate a documented precondition."""


class EmptyGroupError(ContractError):
    """A subpopulation has zero probability (or zero rollouts)."""


class MdpValidationError(ContractError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


def _group_index(group) -> int:
    if isinstance(group, str):
        try:
            return GROUP_NAMES.index(group)
        except ValueError:
            raise ContractError(f"unknown group {group!r}") from None
    if group in (MAJ, MIN):
        return int(group)
    raise ContractError(f"unknown group {group!r}")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    initial: np.ndarray
    transitions: np.ndarray
    reward: np.ndarray
    agent_reward: np.ndarray
    discount: float
    group_of: np.ndarray
    state_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "agent_reward", np.asarray(self.agent_reward, dtype=float))
        object.__setattr__(self, "group_of", np.asarray(self.group_of, dtype=int))
        object.__setattr__(self, "discount", float(self.discount))
        if self.state_names is not None:
            object.__setattr__(self, "state_names", tuple(self.state_names))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def validate(self) -> None:
        P = self.transitions
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise MdpValidationError("transitions", f"expected shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        for name in ("reward", "agent_reward"):
            arr = getattr(self, name)
            if arr.shape != (S, A):
                raise MdpValidationError(name, f"expected shape {(S, A)}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
                raise MdpValidationError(f"{name}[{idx[0]}][{idx[1]}]", "not finite")
        if self.initial.shape != (S,):
            raise MdpValidationError("initial", f"expected length {S}, got shape {self.initial.shape}")
        if self.group_of.shape != (S,):
            raise MdpValidationError("group_of", f"expected length {S}, got shape {self.group_of.shape}")
        bad = np.flatnonzero((self.group_of != MAJ) & (self.group_of != MIN))
        if bad.size:
            raise MdpValidationError(f"group_of[{bad[0]}]", "must be 0 (maj) or 1 (min)")
        for s in range(S):
            if not 0.0 <= self.initial[s] <= 1.0:
                raise MdpValidationError(f"initial[{s}]", f"probability {self.initial[s]} outside [0, 1]")
        if abs(self.initial.sum() - 1.0) > PROB_TOL:
            raise MdpValidationError("initial", f"sums to {self.initial.sum():.17g}, expected 1")
        for s in range(S):
            for a in range(A):
                row = P[s, a]
                if np.any((row < 0) | (row > 1)) or not np.all(np.isfinite(row)):
                    raise MdpValidationError(f"transitions[{s}][{a}]", "entries must lie in [0, 1]")
                if abs(row.sum() - 1.0) > PROB_TOL:
                    raise MdpValidationError(
                        f"transitions[{s}][{a}]", f"sums to {row.sum():.17g}, expected 1")
        if not 0.0 <= self.discount <= 1.0:
            raise MdpValidationError("discount", f"{self.discount} outside [0, 1]")
        if self.state_names is not None and len(self.state_names) != S:
            raise MdpValidationError("state_names", f"expected {S} names")

    def with_initial(self, initial) -> "TabularMdp":
        return replace(self, initial=np.asarray(initial, dtype=float))

    def with_transitions(self, transitions) -> "TabularMdp":
        return replace(self, transitions=np.asarray(transitions, dtype=float))

    def state_name(self, s: int) -> str:
        return self.state_names[s] if self.state_names else f"s{s}"

    def separability_violation(self) -> Optional[tuple[int, int, int]]:
        """First ``(s, a, s')`` with positive probability of changing group, or None."""
        cross = self.group_of[:, None, None] != self.group_of[None, None, :]
        hits = np.argwhere((self.transitions > 0) & cross)
        if hits.size == 0:
            return None
        return tuple(int(i) for i in hits[0])

    def is_separable(self) -> bool:
        return self.separability_violation() is None

    def has_state_independent_agent_reward(self) -> bool:
        return bool(np.all(np.abs(self.agent_reward - self.agent_reward[0]) <= PROB_TOL))

    def r_max(self) -> float:
        return float(max(np.abs(self.reward).max(), np.abs(self.agent_reward).max()))

    # -- serialization ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TabularMdp":
        required = ("n_states", "n_actions", "discount", "initial", "transitions",
                    "reward", "agent_reward", "group_of")
        for key in required:
            if key not in doc:
                raise MdpValidationError(key, "missing field")
        try:
            S, A = int(doc["n_states"]), int(doc["n_actions"])
        except (TypeError, ValueError):
            raise MdpValidationError("n_states", "must be integers (n_states, n_actions)") from None
        if S < 1:
            raise MdpValidationError("n_states", "must be positive")
        if A < 1:
            raise MdpValidationError("n_actions", "must be positive")

        def table(key, shape):
            try:
                arr = np.asarray(doc[key], dtype=float)
            except (TypeError, ValueError):
                raise MdpValidationError(key, "not a numeric array") from None
            if arr.shape != shape:
                raise MdpValidationError(key, f"expected shape {shape}, got {arr.shape}")
            return arr

        group_of = doc["group_of"]
        if len(group_of) != S:
            raise MdpValidationError("group_of", f"expected length {S}, got {len(group_of)}")
        groups = []
        for i, g in enumerate(group_of):
            try:
                groups.append(_group_index(g))
            except ContractError:
                raise MdpValidationError(f"group_of[{i}]", f"unknown group {g!r}") from None
        try:
            discount = float(doc["discount"])
        except (TypeError, ValueError):
            raise MdpValidationError("discount", "must be a number") from None
        return cls(
            initial=table("initial", (S,)),
            transitions=table("transitions", (S, A, S)),
            reward=table("reward", (S, A)),
            agent_reward=table("agent_reward", (S, A)),
            discount=discount,
            group_of=np.array(groups, dtype=int),
            state_names=doc.get("state_names"),
        )

    def to_dict(self) -> dict:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
            "reward": self.reward.tolist(),
            "agent_reward": self.agent_reward.tolist(),
            "group_of": [GROUP_NAMES[g] for g in self.group_of],
        }
        if self.state_names:
            doc["state_names"] = list(self.state_names)
        return doc

    @classmethod
    def load(cls, path) -> "TabularMdp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def load_fixture(name: str) -> TabularMdp:
    """Load one of the shipped tabular fixtures (``parity_example``, ``parity_infeasible``, ...)."""
    path = Path(__file__).parent / "data" / f"{name}.json"
    return TabularMdp.load(path)


@dataclass(frozen=True, eq=False)
class FairnessSpec:
    """Two initial-state subpopulations plus a tolerance on the agent-reward gap.

    ``maj_states``/``min_states`` are boolean masks over states.  The group
    distribution ``D_z`` is ``D`` restricted to the mask and renormalized.
    ``group_initial`` overrides that with explicit distributions (used by the
    path-specific causal construction).
    """

    maj_states: np.ndarray
    min_states: np.ndarray
    tolerance: float = 0.0
    criterion: str = "demographic_parity"
    agent_reward: Optional[np.ndarray] = None
    group_initial: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "maj_states", np.asarray(self.maj_states, dtype=bool))
        object.__setattr__(self, "min_states", np.asarray(self.min_states, dtype=bool))
        if self.tolerance < 0:
            raise ContractError("tolerance must be >= 0")
        if self.group_initial is None and np.any(self.maj_states & self.min_states):
            raise ContractError("group subsets must be disjoint")

    @classmethod
    def demographic_parity(cls, mdp: TabularMdp, tolerance: float = 0.0) -> "FairnessSpec":
        return cls(mdp.group_of == MAJ, mdp.group_of == MIN, tolerance)

    @classmethod
    def equal_opportunity(cls, mdp: TabularMdp, qualified, tolerance: float = 0.0) -> "FairnessSpec":
        qualified = np.asarray(qualified, dtype=bool)
        return cls((mdp.group_of == MAJ) & qualified, (mdp.group_of == MIN) & qualified,
                   tolerance, criterion="equal_opportunity")

    @classmethod
    def from_group_distributions(cls, d_maj, d_min, tolerance: float = 0.0,
                                 criterion: str = "path_specific") -> "FairnessSpec":
        d_maj = np.asarray(d_maj, dtype=float)
        d_min = np.asarray(d_min, dtype=float)
        return cls(d_maj > 0, d_min > 0, tolerance, criterion, group_initial=(d_maj, d_min))

    def with_tolerance(self, tolerance: float) -> "FairnessSpec":
        return replace(self, tolerance=float(tolerance))

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        return self.maj_states, self.min_states

    def rho(self, mdp: TabularMdp) -> np.ndarray:
        return mdp.agent_reward if self.agent_reward is None else np.asarray(self.agent_reward, float)

    def group_masses(self, mdp: TabularMdp) -> tuple[float, float]:
        if self.group_initial is not None:
            return 1.0, 1.0
        return float(mdp.initial[self.maj_states].sum()), float(mdp.initial[self.min_states].sum())

    def group_distributions(self, mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
        """Normalized initial distributions ``(D_maj, D_min)``."""
        if self.group_initial is not None:
            out = []
            for z, d in enumerate(self.group_initial):
                total = d.sum()
                if total <= 0:
                    raise EmptyGroupError(f"group {GROUP_NAMES[z]} has empty initial distribution")
                out.append(d / total)
            return out[0], out[1]
        out = []
        for z, mask in enumerate(self.masks()):
            d = np.where(mask, mdp.initial, 0.0)
            if d.sum() <= 0:
                raise EmptyGroupError(f"group {GROUP_NAMES[z]} has zero initial probability")
            out.append(d / d.sum())
        return out[0], out[1]


# -- exact evaluation -----------------------------------------------------------------


def check_policy(mdp: TabularMdp, policy, allow_time: bool = False) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    shape = (mdp.n_states, mdp.n_actions)
    if pi.shape != shape and not (allow_time and pi.ndim == 3 and pi.shape[1:] == shape):
        raise ContractError(f"policy shape {pi.shape} incompatible with MDP {shape}")
    if np.any(pi < -PROB_TOL) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > 1e-9):
        raise ContractError("policy rows must be probability vectors")
    return pi


def induced_transition(mdp: TabularMdp, policy) -> np.ndarray:
    """``P_pi[s, s'] = sum_a pi[s, a] P[s, a, s']``."""
    pi = check_policy(mdp, policy)
    return np.einsum("sa,sat->st", pi, mdp.transitions)


@dataclass
class OccupancyMeasure:
    lam: np.ndarray
    state_dist: np.ndarray
    group_lam: dict = field(default_factory=dict)
    group_state_dist: dict = field(default_factory=dict)
    group_mass: dict = field(default_factory=dict)


def _discounted_state_dist(mdp: TabularMdp, pi: np.ndarray, start: np.ndarray) -> np.ndarray:
    gamma = mdp.discount
    if gamma >= 1.0:
        raise ContractError("discounted occupancy requires discount < 1")
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    # row-vector form of (I - gamma P_pi^T) d = (1 - gamma) D
    A = np.eye(mdp.n_states) - gamma * P_pi.T
    return np.linalg.solve(A, (1.0 - gamma) * start)


def _finite_state_dists(mdp: TabularMdp, pi: np.ndarray, start: np.ndarray, horizon: int) -> np.ndarray:
    """State distributions ``D^(pi,t)`` for t < horizon, shape (T, S)."""
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    out = np.empty((horizon, mdp.n_states))
    d = start.astype(float)
    for t in range(horizon):
        out[t] = d
        pt = pi[t] if pi.ndim == 3 else pi
        d = d @ np.einsum("sa,sat->st", pt, mdp.transitions)
    return out


def _finite_lambda(pi: np.ndarray, dists: np.ndarray) -> np.ndarray:
    T = dists.shape[0]
    if pi.ndim == 3:
        if pi.shape[0] < T:
            raise ContractError(f"non-stationary policy covers {pi.shape[0]} steps, horizon is {T}")
        return np.einsum("ts,tsa->sa", dists, pi[:T]) / T
    return dists.mean(axis=0)[:, None] * pi


def discounted_occupancy(mdp: TabularMdp, policy, spec: Optional[FairnessSpec] = None) -> OccupancyMeasure:
    """Time-discounted state-action distribution, plus group-conditioned variants if ``spec`` is given."""
    pi = check_policy(mdp, policy)
    d = _discounted_state_dist(mdp, pi, mdp.initial)
    occ = OccupancyMeasure(lam=d[:, None] * pi, state_dist=d)
    if spec is not None:
        p = spec.group_masses(mdp)
        for z, Dz in enumerate(spec.group_distributions(mdp)):
            dz = _discounted_state_dist(mdp, pi, Dz)
            occ.group_state_dist[z] = dz
            occ.group_lam[z] = dz[:, None] * pi
            occ.group_mass[z] = p[z]
    return occ


def finite_occupancy(mdp: TabularMdp, policy, horizon: int,
                     spec: Optional[FairnessSpec] = None) -> OccupancyMeasure:
    """Finite-horizon occupancy ``(1/T) sum_{t<T} D^(pi,t) pi``; ``policy`` may be non-stationary."""
    pi = check_policy(mdp, policy, allow_time=True)
    dists = _finite_state_dists(mdp, pi, mdp.initial, horizon)
    occ = OccupancyMeasure(lam=_finite_lambda(pi, dists), state_dist=dists.mean(axis=0))
    if spec is not None:
        p = spec.group_masses(mdp)
        for z, Dz in enumerate(spec.group_distributions(mdp)):
            dz = _finite_state_dists(mdp, pi, Dz, horizon)
            occ.group_state_dist[z] = dz.mean(axis=0)
            occ.group_lam[z] = _finite_lambda(pi, dz)
            occ.group_mass[z] = p[z]
    return occ


@dataclass(frozen=True)
class Evaluation:
    reward: float
    group_values: dict
    gap: float
    tolerance: float

    @property
    def fair(self) -> bool:
        return self.gap <= self.tolerance


def evaluate(mdp: TabularMdp, policy, spec: FairnessSpec, *, mode: str = "discounted",
             horizon: Optional[int] = None, conditioning: str = "initial") -> Evaluation:
    """Exact reward, per-group expected agent reward and the parity gap.

    ``mode="discounted"`` reports ``(1-gamma)^-1 <R, Lambda>`` and group values
    ``<rho, Lambda_z>``.  ``mode="finite"`` (episodic, undiscounted) reports the
    expected sum of rewards over ``horizon`` steps and per-step-averaged group
    values.  ``conditioning="current"`` conditions on the group of the current
    state instead of the initial state.
    """
    if mode == "discounted":
        occ = discounted_occupancy(mdp, policy, spec if conditioning == "initial" else None)
        scale = 1.0 / (1.0 - mdp.discount)
    elif mode == "finite":
        if horizon is None:
            raise ContractError("finite mode requires a horizon")
        occ = finite_occupancy(mdp, policy, horizon, spec if conditioning == "initial" else None)
        scale = float(horizon)
    else:
        raise ContractError(f"unknown evaluation mode {mode!r}")
    rho = spec.rho(mdp)
    reward = scale * float(np.sum(mdp.reward * occ.lam))
    values = {}
    if conditioning == "initial":
        for z in (MAJ, MIN):
            values[GROUP_NAMES[z]] = float(np.sum(occ.group_lam[z] * rho))
    elif conditioning == "current":
        for z, mask in enumerate(spec.masks()):
            lam_z = occ.lam[mask]
            mass = lam_z.sum()
            if mass <= 0:
                raise EmptyGroupError(f"group {GROUP_NAMES[z]} has zero occupancy")
            values[GROUP_NAMES[z]] = float(np.sum(lam_z * rho[mask]) / mass)
    else:
        raise ContractError(f"unknown conditioning {conditioning!r}")
    gap = abs(values["maj"] - values["min"])
    return Evaluation(reward, values, gap, spec.tolerance)


def value_iteration(mdp: TabularMdp, tol: float = 1e-12, max_iter: int = 100_000):
    """Unconstrained optimal values and a greedy deterministic policy."""
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.reward + mdp.discount * mdp.transitions @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) <= tol:
            V = V_new
            break
        V = V_new
    Q = mdp.reward + mdp.discount * mdp.transitions @ V
    policy = np.zeros_like(mdp.reward)
    policy[np.arange(mdp.n_states), Q.argmax(axis=1)] = 1.0
    return V, policy


# -- simulation -----------------------------------------------------------------------


class BatchEnv(Protocol):
    """Vectorized episodic environment.

    ``reset`` returns a batch of ``n`` states (optionally conditioned on the
    initial group), ``step`` advances every episode by one action, and
    ``agent_rewards`` gives the ``(n, n_actions)`` agent reward table for the
    current states.  Concrete state batches are opaque to callers except
    through ``initial_groups``.
    """

    n_actions: int

    def reset(self, n: int, rng: np.random.Generator, group=None): ...

    def step(self, states, actions: np.ndarray, rng: np.random.Generator): ...

    def agent_rewards(self, states) -> np.ndarray: ...

    def initial_groups(self, states) -> np.ndarray: ...


class TabularEnv:
    """Simulator backed by a :class:`TabularMdp`; states are integer arrays."""

    def __init__(self, mdp: TabularMdp, spec: Optional[FairnessSpec] = None):
        self.mdp = mdp
        self.spec = spec if spec is not None else FairnessSpec.demographic_parity(mdp)
        self.n_actions = mdp.n_actions
        self.n_states = mdp.n_states
        self._cum_P = np.cumsum(mdp.transitions, axis=2)
        self._cum_P[:, :, -1] = 1.0
        self._label = np.full(mdp.n_states, -1)
        self._label[self.spec.maj_states] = MAJ
        self._label[self.spec.min_states] = MIN
        self.state_independent_agent_reward = mdp.has_state_independent_agent_reward()

    def reset(self, n: int, rng: np.random.Generator, group=None) -> np.ndarray:
        if group is None:
            d = self.mdp.initial
        else:
            d = self.spec.group_distributions(self.mdp)[_group_index(group)]
        cum = np.cumsum(d)
        cum[-1] = 1.0
        return np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)

    def step(self, states, actions, rng):
        cum = self._cum_P[states, actions]
        nxt = (cum < rng.random(len(states))[:, None]).sum(axis=1)
        return nxt, self.mdp.reward[states, actions], self.spec.rho(self.mdp)[states, actions]

    def agent_rewards(self, states) -> np.ndarray:
        return self.spec.rho(self.mdp)[states]

    def initial_groups(self, states) -> np.ndarray:
        return self._label[states]

    def one_hot(self, states) -> np.ndarray:
        return np.eye(self.n_states)[states]


PolicyFn = Callable[[Any, int], np.ndarray]


def as_policy_fn(policy) -> PolicyFn:
    """Wrap a tabular or non-stationary array policy as ``fn(states, t) -> probs``."""
    if callable(policy):
        return policy
    pi = np.asarray(policy, dtype=float)
    if pi.ndim == 2:
        return lambda states, t: pi[states]
    if pi.ndim == 3:
        return lambda states, t: pi[t][states]
    raise ContractError(f"cannot interpret policy of shape {pi.shape}")


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if probs.shape[1] == 2:
        return (rng.random(probs.shape[0]) >= probs[:, 0]).astype(np.int64)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    return (cum < rng.random(probs.shape[0])[:, None]).sum(axis=1)


@dataclass
class RolloutBatch:
    actions: np.ndarray
    rewards: np.ndarray
    agent_rewards: np.ndarray
    expected_agent_rewards: np.ndarray
    initial_group: np.ndarray
    states: Optional[list] = None

    @property
    def horizon(self) -> int:
        return self.rewards.shape[-1]

    def __len__(self) -> int:
        return self.rewards.shape[0]


@dataclass
class Rollout:
    steps: list  # (state, action, reward, agent_reward)
    initial_group: int

    def __len__(self) -> int:
        return len(self.steps)


def sample_rollouts(env, policy, horizon: int, n: int, rng: np.random.Generator,
                    group=None, keep_states: bool = False) -> RolloutBatch:
    """Simulate ``n`` independent episodes of ``horizon`` steps."""
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    fn = as_policy_fn(policy)
    states = env.reset(n, rng, group=group)
    if group is None:
        init_group = np.asarray(env.initial_groups(states))
    else:
        init_group = np.full(n, _group_index(group))
    # time-major buffers keep the per-step writes contiguous
    acts = np.empty((horizon, n), dtype=np.int64)
    rews = np.empty((horizon, n))
    arews = np.empty((horizon, n))
    exp_arews = np.empty((horizon, n))
    kept = [] if keep_states else None
    for t in range(horizon):
        probs = fn(states, t)
        exp_arews[t] = np.einsum("na,na->n", probs, env.agent_rewards(states))
        a = sample_actions(probs, rng)
        if keep_states:
            kept.append(states)
        states, r, ar = env.step(states, a, rng)
        acts[t] = a
        rews[t] = r
        arews[t] = ar
    return RolloutBatch(np.ascontiguousarray(acts.T), np.ascontiguousarray(rews.T),
                        np.ascontiguousarray(arews.T), np.ascontiguousarray(exp_arews.T), init_group, kept)


def sample_rollout(env, policy, horizon: int, rng: np.random.Generator, group=None) -> Rollout:
    batch = sample_rollouts(env, policy, horizon, 1, rng, group=group, keep_states=True)
    steps = []
    for t in range(horizon):
        s = batch.states[t]
        state = s[0] if isinstance(s, np.ndarray) else s
        steps.append((state, int(batch.actions[0, t]), float(batch.rewards[0, t]),
                      float(batch.agent_rewards[0, t])))
    return Rollout(steps, int(batch.initial_group[0]))


def discounted_sum(x: np.ndarray, discount: float) -> np.ndarray:
    """Sum over the last (time) axis with weights ``discount**t``."""
    weights = discount ** np.arange(x.shape[-1])
    return x @ weights


@dataclass(frozen=True)
class RolloutEstimate:
    reward: float
    rho_maj: float
    rho_min: float
    reward_se: float = float("nan")

    @property
    def gap(self) -> float:
        return abs(self.rho_maj - self.rho_min)


def agent_value_per_episode(batch: RolloutBatch, discount: float, expected: bool = False) -> np.ndarray:
    """Normalized agent value of each episode: ``(1-gamma) sum gamma^t rho`` or the per-step mean if gamma == 1."""
    x = batch.expected_agent_rewards if expected else batch.agent_rewards
    if discount >= 1.0:
        return x.mean(axis=-1)
    return (1.0 - discount) * discounted_sum(x, discount)


def estimate_from_rollouts(reward_batch: RolloutBatch, maj_batch: RolloutBatch, min_batch: RolloutBatch,
                           discount: float, expected_agent_reward: bool = False) -> RolloutEstimate:
    """Monte Carlo reward and group agent-reward estimates from three independent batches.

    Group batches must contain only episodes that started in their group; the
    ``initial_group`` labels are checked.
    """
    for z, batch in ((MAJ, maj_batch), (MIN, min_batch)):
        if len(batch) == 0:
            raise EmptyGroupError(f"no rollouts for group {GROUP_NAMES[z]}")
        if np.any(batch.initial_group != z):
            raise ContractError(f"{GROUP_NAMES[z]} batch contains episodes from another group")
    returns = discounted_sum(reward_batch.rewards, discount)
    se = float(returns.std(ddof=1) / np.sqrt(len(returns))) if len(returns) > 1 else float("nan")
    rho = [float(agent_value_per_episode(b, discount, expected_agent_reward).mean())
           for b in (maj_batch, min_batch)]
    return RolloutEstimate(float(returns.mean()), rho[0], rho[1], se)


def spawn_generators(seed, n: int) -> list[np.random.Generator]:
    """Independent child generators derived deterministically from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]
