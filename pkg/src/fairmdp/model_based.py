"""Exact fairness-constrained planning on known tabular MDPs.

The decision variable is the occupancy measure ``lam[s, a]``.  Flow rows make
it the occupancy of some policy, group-value rows tie each group's expected
agent reward to a shared scalar ``c``, and the policy is read back as
``lam / lam.sum(axis=1)``.

Two horizons are supported:

* discounted (``horizon=None``): ``lam`` is the normalized discounted occupancy
  and the objective is ``(1 - gamma)^-1 <lam, R>``.
* finite (``horizon=T``, used with ``gamma = 1``): one occupancy layer per
  time step, a non-stationary policy of shape ``(T, S, A)``, and the objective
  is the expected undiscounted sum of rewards.  Group values are per-step
  averages, matching ``evaluate(..., mode="finite")``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .lp import LinearProgram, LpSolution, solve
from .mdp import (
    GROUP_NAMES,
    ContractError,
    Evaluation,
    FairnessSpec,
    TabularMdp,
    evaluate,
)

FAIR = "Fair"
INFEASIBLE = "Infeasible"

VERIFY_TOL = 1e-6
_EMPTY_STATE = 1e-12


class NotSeparableError(ContractError):
    """Transitions move probability mass between groups."""

    def __init__(self, triple: tuple[int, int, int]):
        s, a, t = triple
        super().__init__(f"MDP is not separable: transitions[{s}][{a}][{t}] > 0 crosses groups")
        self.triple = triple


@dataclass
class FairSolveResult:
    status: str
    policy: Optional[np.ndarray] = None
    occupancy: Optional[np.ndarray] = None
    c: float = float("nan")
    reward: float = float("nan")
    objective: float = float("nan")
    evaluation: Optional[Evaluation] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def fair(self) -> bool:
        return self.status == FAIR


@dataclass
class FairLp:
    """A :class:`LinearProgram` plus the bookkeeping needed to read it back."""

    program: LinearProgram
    n_layers: int
    n_states: int
    n_actions: int
    c_index: int

    def occupancy(self, x: np.ndarray) -> np.ndarray:
        lam = x[: self.n_layers * self.n_states * self.n_actions]
        return lam.reshape(self.n_layers, self.n_states, self.n_actions)


# -- constraint pieces ----------------------------------------------------------------


def _closure(mdp: TabularMdp, mask: np.ndarray) -> np.ndarray:
    """States reachable from ``mask`` under any action."""
    edges = mdp.transitions.max(axis=1) > 0
    reached = mask.copy()
    frontier = mask.copy()
    while frontier.any():
        nxt = edges[frontier].any(axis=0) & ~reached
        reached |= nxt
        frontier = nxt
    return reached


def group_blocks(mdp: TabularMdp, spec: FairnessSpec) -> list[tuple[np.ndarray, float]]:
    """Per group, the forward-closed block of states it can visit and its mass under ``D``.

    Group values are linear in the single occupancy measure from ``D`` only if
    each group's block is closed, the blocks are disjoint, and ``D`` restricted
    to a block is proportional to that group's initial distribution.  Those
    conditions are checked here.
    """
    hit = mdp.separability_violation()
    if hit is not None:
        raise NotSeparableError(hit)
    dists = spec.group_distributions(mdp)
    blocks = []
    for z, Dz in enumerate(dists):
        block = _closure(mdp, Dz > 0)
        mass = float(mdp.initial[block].sum())
        if mass <= 0:
            raise ContractError(f"group {GROUP_NAMES[z]} block has zero probability under the initial distribution")
        if np.max(np.abs(np.where(block, mdp.initial, 0.0) / mass - Dz)) > 1e-9:
            raise ContractError(
                f"initial distribution restricted to the {GROUP_NAMES[z]} block differs from its group "
                "distribution; group values are not linear in the occupancy measure")
        blocks.append((block, mass))
    if np.any(blocks[0][0] & blocks[1][0]):
        raise ContractError("group blocks overlap: some state is reachable from both groups")
    return blocks


def _flow_rows(mdp: TabularMdp, horizon: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    """Rows making the leading ``K*S*A`` variables an occupancy measure."""
    S, A = mdp.n_states, mdp.n_actions
    P = mdp.transitions.reshape(S * A, S)
    out_flow = np.kron(np.eye(S), np.ones((1, A)))  # (S, S*A): sum_a lam[s', a]
    if horizon is None:
        gamma = mdp.discount
        if gamma >= 1.0:
            raise ContractError("discount 1 requires a finite horizon")
        return out_flow - gamma * P.T, (1.0 - gamma) * mdp.initial
    T = int(horizon)
    if T < 1:
        raise ContractError("horizon must be >= 1")
    n = T * S * A
    rows = np.zeros((T * S, n))
    rhs = np.zeros(T * S)
    for t in range(T):
        block = slice(t * S, (t + 1) * S)
        rows[block, t * S * A:(t + 1) * S * A] = out_flow
        if t == 0:
            rhs[block] = mdp.initial
        else:
            rows[block, (t - 1) * S * A:t * S * A] = -P.T
    return rows, rhs


def _objective(mdp: TabularMdp, horizon: Optional[int]) -> np.ndarray:
    if horizon is None:
        return mdp.reward.ravel() / (1.0 - mdp.discount)
    return np.tile(mdp.reward.ravel(), int(horizon))


def _stack(A_rows: list[np.ndarray], b_rows: list[np.ndarray], n_vars: int):
    A = np.vstack([np.pad(r, ((0, 0), (0, n_vars - r.shape[1]))) for r in A_rows])
    return A, np.concatenate(b_rows)


def build_fair_lp(mdp: TabularMdp, spec: FairnessSpec, horizon: Optional[int] = None) -> FairLp:
    """The occupancy LP with one parity row per group.

    With tolerance ``eps > 0`` two extra variables ``u, v >= 0`` with
    ``u + v = 2 eps`` encode ``value_maj - value_min = u - eps``, i.e. a gap of
    at most ``eps``.
    """
    S, A = mdp.n_states, mdp.n_actions
    K = 1 if horizon is None else int(horizon)
    n_lam = K * S * A
    eps = spec.tolerance
    n_vars = n_lam + 1 + (2 if eps > 0 else 0)
    c_idx = n_lam

    flow, flow_b = _flow_rows(mdp, horizon)
    rho = spec.rho(mdp)
    parity = np.zeros((2, n_vars))
    parity_b = np.zeros(2)
    for z, (block, mass) in enumerate(group_blocks(mdp, spec)):
        coef = np.where(block[:, None], rho, 0.0).ravel() / (mass * K)
        parity[z, :n_lam] = np.tile(coef, K)
        parity[z, c_idx] = -1.0
    rows, rhs = [flow, parity], [flow_b, parity_b]
    if eps > 0:
        parity[1, c_idx + 1] = 1.0
        parity_b[1] = eps
        slack = np.zeros((1, n_vars))
        slack[0, c_idx + 1:c_idx + 3] = 1.0
        rows.append(slack)
        rhs.append(np.array([2.0 * eps]))
    A_eq, b_eq = _stack(rows, rhs, n_vars)
    c = np.zeros(n_vars)
    c[:n_lam] = _objective(mdp, horizon)
    free = np.zeros(n_vars, dtype=bool)
    free[c_idx] = True
    return FairLp(LinearProgram(c, A_eq, b_eq, free), K, S, A, c_idx)


def extract_policy(lam: np.ndarray) -> np.ndarray:
    """``pi = lam / lam.sum(-1)``; states with no occupancy get the uniform distribution."""
    lam = np.maximum(lam, 0.0)
    mass = lam.sum(axis=-1, keepdims=True)
    uniform = np.full_like(lam, 1.0 / lam.shape[-1])
    return np.where(mass > _EMPTY_STATE, lam / np.where(mass > 0, mass, 1.0), uniform)


def _policy_shape(pi: np.ndarray, horizon: Optional[int]) -> np.ndarray:
    return pi[0] if horizon is None else pi


def _evaluate(mdp, pi, spec, horizon):
    if horizon is None:
        return evaluate(mdp, pi, spec)
    return evaluate(mdp, pi, spec, mode="finite", horizon=horizon)


def _finish(mdp, spec, lp: FairLp, sol: LpSolution, horizon, c_value: float,
            policy: Optional[np.ndarray] = None) -> FairSolveResult:
    lam = lp.occupancy(sol.x)
    pi = _policy_shape(extract_policy(lam) if policy is None else policy, horizon)
    ev = _evaluate(mdp, pi, spec, horizon)
    diagnostics = {
        "lp_iterations": sol.iterations,
        "reward_mismatch": abs(ev.reward - sol.objective),
        "gap_excess": max(0.0, ev.gap - spec.tolerance),
    }
    diagnostics["verified"] = (diagnostics["reward_mismatch"] <= VERIFY_TOL
                               and diagnostics["gap_excess"] <= VERIFY_TOL)
    return FairSolveResult(FAIR, pi, _policy_shape(lam, horizon), c_value, ev.reward,
                           sol.objective, ev, diagnostics)


def solve_fair(mdp: TabularMdp, spec: FairnessSpec, horizon: Optional[int] = None) -> FairSolveResult:
    """Best policy whose group values differ by at most ``spec.tolerance``."""
    lp = build_fair_lp(mdp, spec, horizon)
    sol = solve(lp.program)
    if not sol.optimal:
        return FairSolveResult(INFEASIBLE, diagnostics={"lp_status": sol.status.value})
    return _finish(mdp, spec, lp, sol, horizon, float(sol.x[lp.c_index]))


# -- conservative variant -------------------------------------------------------------


def _per_state_lp(mdp: TabularMdp, spec: FairnessSpec, c_value: float,
                  horizon: Optional[int]) -> FairLp:
    """Occupancy LP with ``sum_a lam[s, a] (rho[s, a] - c) = 0`` for every state (and layer).

    With tolerance ``eps`` the per-state mean agent reward may sit anywhere in
    ``[c - eps/2, c + eps/2]``, which keeps every group gap within ``eps``.
    """
    S, A = mdp.n_states, mdp.n_actions
    K = 1 if horizon is None else int(horizon)
    n_lam = K * S * A
    half = spec.tolerance / 2.0
    n_rows_state = K * S
    n_slack = 2 * n_rows_state if half > 0 else 0
    n_vars = n_lam + n_slack
    flow, flow_b = _flow_rows(mdp, horizon)
    rho = spec.rho(mdp)
    rows = []
    for shift, sign in ([(0.0, 0.0)] if half == 0 else [(-half, 1.0), (half, -1.0)]):
        block = np.zeros((n_rows_state, n_vars))
        for k in range(K):
            for s in range(S):
                r = k * S + s
                start = (k * S + s) * A
                block[r, start:start + A] = rho[s] - c_value + shift
        if sign != 0.0:
            offset = n_lam + (0 if sign > 0 else n_rows_state)
            block[:, offset:offset + n_rows_state] = sign * np.eye(n_rows_state)
        rows.append(block)
    A_eq, b_eq = _stack([flow] + rows, [flow_b] + [np.zeros(n_rows_state)] * len(rows), n_vars)
    c = np.zeros(n_vars)
    c[:n_lam] = _objective(mdp, horizon)
    return FairLp(LinearProgram(c, A_eq, b_eq), K, S, A, -1)


def _mixture_at(rho_s: np.ndarray, c_value: float) -> np.ndarray:
    """An action distribution with ``pi @ rho_s`` as close to ``c_value`` as possible."""
    lo, hi = int(np.argmin(rho_s)), int(np.argmax(rho_s))
    pi = np.zeros_like(rho_s)
    span = rho_s[hi] - rho_s[lo]
    if span <= 0:
        pi[:] = 1.0 / rho_s.size
        return pi
    w = float(np.clip((c_value - rho_s[lo]) / span, 0.0, 1.0))
    pi[hi] += w
    pi[lo] += 1.0 - w
    return pi


def _per_state_spread(pi: np.ndarray, rho: np.ndarray) -> float:
    means = np.einsum("...sa,sa->...s", pi, rho)
    return float(means.max() - means.min())


def solve_conservative(mdp: TabularMdp, spec: FairnessSpec, horizon: Optional[int] = None,
                       mode: str = "policy", grid: int = 201) -> FairSolveResult:
    """Best policy that is fair for every initial distribution.

    ``mode="policy"`` enforces the per-state condition
    ``sum_a pi[s, a] rho[s, a] = c`` for every state, searching over the
    scalar ``c`` (each fixed ``c`` gives an LP).  ``mode="printed"`` instead
    imposes ``sum_a lam[s, a] rho[s, a] = c`` with ``c`` free in one LP; the
    per-state policy condition is then only reported as a diagnostic.
    """
    rho = spec.rho(mdp)
    if mode == "printed":
        return _solve_conservative_printed(mdp, spec, horizon)
    if mode != "policy":
        raise ContractError(f"unknown conservative mode {mode!r}")
    half = spec.tolerance / 2.0
    lo = float(rho.min(axis=1).max()) - half
    hi = float(rho.max(axis=1).min()) + half
    if lo > hi + 1e-12:
        return FairSolveResult(INFEASIBLE, diagnostics={"c_range": (lo, hi)})
    hi = max(hi, lo)

    cache: dict[float, LpSolution] = {}

    def value(cv: float) -> float:
        cv = float(cv)
        if cv not in cache:
            cache[cv] = solve(_per_state_lp(mdp, spec, cv, horizon).program)
        sol = cache[cv]
        return sol.objective if sol.optimal else -np.inf

    candidates = np.linspace(lo, hi, grid) if hi > lo else np.array([lo])
    values = np.array([value(cv) for cv in candidates])
    best = int(np.argmax(values))
    if not np.isfinite(values[best]):
        return FairSolveResult(INFEASIBLE, diagnostics={"c_range": (lo, hi)})
    if candidates.size > 1:
        left = candidates[max(best - 1, 0)]
        right = candidates[min(best + 1, candidates.size - 1)]
        refined = minimize_scalar(lambda cv: -value(cv), bounds=(left, right), method="bounded",
                                  options={"xatol": 1e-10})
        if refined.success and -refined.fun > values[best]:
            best_c = float(refined.x)
        else:
            best_c = float(candidates[best])
    else:
        best_c = float(candidates[0])
    value(best_c)
    sol = cache[best_c]
    lp = _per_state_lp(mdp, spec, best_c, horizon)
    lam = lp.occupancy(sol.x)
    pi = extract_policy(lam)
    # unreachable states: any completion works for D, but the per-state
    # condition must hold everywhere for the policy to be fair for all D'
    empty = lam.sum(axis=-1) <= _EMPTY_STATE
    for k, s in zip(*np.nonzero(empty)):
        pi[k, s] = _mixture_at(rho[s], best_c)
    result = _finish(mdp, spec, lp, sol, horizon, best_c, policy=pi)
    spread = _per_state_spread(result.policy, rho)
    result.diagnostics["per_state_spread"] = spread
    result.diagnostics["per_state_ok"] = spread <= spec.tolerance + VERIFY_TOL
    result.diagnostics["verified"] = result.diagnostics["verified"] and result.diagnostics["per_state_ok"]
    return result


def _solve_conservative_printed(mdp, spec, horizon) -> FairSolveResult:
    S, A = mdp.n_states, mdp.n_actions
    K = 1 if horizon is None else int(horizon)
    n_lam = K * S * A
    n_vars = n_lam + 1
    flow, flow_b = _flow_rows(mdp, horizon)
    rho = spec.rho(mdp)
    per_state = np.zeros((K * S, n_vars))
    for k in range(K):
        for s in range(S):
            start = (k * S + s) * A
            per_state[k * S + s, start:start + A] = rho[s]
    per_state[:, n_lam] = -1.0
    A_eq, b_eq = _stack([flow, per_state], [flow_b, np.zeros(K * S)], n_vars)
    c = np.zeros(n_vars)
    c[:n_lam] = _objective(mdp, horizon)
    free = np.zeros(n_vars, dtype=bool)
    free[n_lam] = True
    lp = FairLp(LinearProgram(c, A_eq, b_eq, free), K, S, A, n_lam)
    sol = solve(lp.program)
    if not sol.optimal:
        return FairSolveResult(INFEASIBLE, diagnostics={"lp_status": sol.status.value})
    result = _finish(mdp, spec, lp, sol, horizon, float(sol.x[n_lam]))
    spread = _per_state_spread(result.policy, rho)
    result.diagnostics["per_state_spread"] = spread
    result.diagnostics["per_state_ok"] = spread <= spec.tolerance + VERIFY_TOL
    return result
