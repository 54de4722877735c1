"""Structural causal models used to build path-specific group distributions.

A :class:`CausalGraph` is a DAG whose vertices carry structural equations
``x_i = f_i(parents, noise_i)``.  Evaluation is vectorized: noise is a dict of
arrays (one entry per sample) and every equation maps arrays to an array.

Interventions:

* ``do(X_i = x)`` pins vertex ``i`` before its descendants are evaluated.
* a mediated intervention ``do(X_i = x), med(X_j; X_i = x')`` evaluates the
  graph twice with the same noise: vertex ``j`` takes its value from the pass
  under ``do(X_i = x')``, every other vertex from the pass under
  ``do(X_i = x)``.

The path-specific group distributions pair ``do(Z = maj), med(Y; Z = min)``
with ``do(Z = min)`` and turn both into empirical initial-state
distributions for a fairness spec.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .mdp import MAJ, MIN, ContractError

Equation = Callable[[Mapping[str, np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Noise:
    """Finite-support noise (``values``/``probs``) or a sampler ``fn(rng, n)``."""

    values: Optional[tuple] = None
    probs: Optional[tuple] = None
    sampler: Optional[Callable] = None

    def __post_init__(self):
        if self.sampler is None:
            if self.values is None or self.probs is None or len(self.values) != len(self.probs):
                raise ContractError("finite noise needs matching values and probs")
            p = np.asarray(self.probs, dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ContractError("noise probabilities must form a distribution")

    @property
    def finite(self) -> bool:
        return self.sampler is None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, n))
        idx = rng.choice(len(self.values), size=n, p=np.asarray(self.probs, dtype=float))
        return np.asarray(self.values)[idx]


class CausalGraph:
    def __init__(self, parents: Mapping[str, Sequence[str]], equations: Mapping[str, Equation],
                 noise: Mapping[str, Noise]):
        names = list(parents)
        if set(equations) != set(names) or set(noise) != set(names):
            raise ContractError("parents, equations and noise must cover the same vertices")
        for v, ps in parents.items():
            unknown = [p for p in ps if p not in parents]
            if unknown:
                raise ContractError(f"vertex {v!r} has unknown parent(s) {unknown}")
        try:
            self.order = tuple(TopologicalSorter({v: list(ps) for v, ps in parents.items()}).static_order())
        except CycleError as exc:
            raise ContractError(f"graph has a cycle through {exc.args[1]}") from None
        self.vertices = tuple(names)
        self.parents = {v: tuple(ps) for v, ps in parents.items()}
        self.equations = dict(equations)
        self.noise = dict(noise)

    def sample_noise(self, n: int, rng: np.random.Generator) -> dict:
        return {v: self.noise[v].sample(rng, n) for v in self.vertices}

    def enumerate_noise(self) -> tuple[dict, np.ndarray]:
        """Every joint noise value with its probability (finite supports only)."""
        if not all(self.noise[v].finite for v in self.vertices):
            raise ContractError("exact enumeration needs finite noise supports")
        supports = [list(zip(self.noise[v].values, self.noise[v].probs)) for v in self.vertices]
        combos = list(itertools.product(*supports))
        noise = {v: np.array([c[i][0] for c in combos]) for i, v in enumerate(self.vertices)}
        probs = np.array([np.prod([c[i][1] for i in range(len(self.vertices))]) for c in combos])
        return noise, probs

    def _check_noise(self, noise: Mapping[str, np.ndarray]) -> None:
        missing = [v for v in self.vertices if v not in noise]
        if missing:
            raise ContractError(f"noise missing for vertices {missing}")

    def evaluate(self, noise: Mapping[str, np.ndarray], fixed: Optional[Mapping[str, object]] = None) -> dict:
        """Solve the structural equations in topological order; ``fixed`` pins vertices."""
        self._check_noise(noise)
        fixed = fixed or {}
        n = len(np.atleast_1d(noise[self.vertices[0]]))
        values = {}
        for v in self.order:
            if v in fixed:
                values[v] = np.broadcast_to(np.asarray(fixed[v]), (n,)).copy()
                continue
            pv = {p: values[p] for p in self.parents[v]}
            values[v] = np.broadcast_to(np.asarray(self.equations[v](pv, np.asarray(noise[v]))), (n,)).copy()
        return values

    # -- JSON ---------------------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CausalGraph":
        """Table-driven graph.

        ``{"vertices": [{"name", "parents", "noise": {"values", "probs"},
        "equation": {...}}]}`` where an equation is either
        ``{"type": "linear", "coef": {parent: w}, "noise_coef": w, "intercept": b}``
        or ``{"type": "table", "rows": [[parent values..., noise, value], ...]}``.
        """
        parents, equations, noise = {}, {}, {}
        for i, spec in enumerate(doc.get("vertices", [])):
            try:
                name = spec["name"]
                ps = list(spec.get("parents", []))
                nz = spec["noise"]
                eq = spec["equation"]
            except KeyError as exc:
                raise ContractError(f"vertices[{i}] missing field {exc.args[0]!r}") from None
            parents[name] = ps
            noise[name] = Noise(tuple(nz["values"]), tuple(nz["probs"]))
            equations[name] = _equation_from_dict(eq, ps, f"vertices[{i}].equation")
        return cls(parents, equations, noise)

    @classmethod
    def load(cls, path) -> "CausalGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _equation_from_dict(eq: Mapping, parents: list, where: str) -> Equation:
    kind = eq.get("type")
    if kind == "linear":
        coef = {p: float(eq.get("coef", {}).get(p, 0.0)) for p in parents}
        extra = set(eq.get("coef", {})) - set(parents)
        if extra:
            raise ContractError(f"{where}: coefficients for non-parents {sorted(extra)}")
        w_noise = float(eq.get("noise_coef", 1.0))
        b = float(eq.get("intercept", 0.0))

        def linear(pv, e):
            out = b + w_noise * np.asarray(e, dtype=float)
            for p, w in coef.items():
                out = out + w * pv[p]
            return out

        return linear
    if kind == "table":
        table = {}
        for row in eq.get("rows", []):
            if len(row) != len(parents) + 2:
                raise ContractError(f"{where}: table rows need {len(parents) + 2} entries")
            table[tuple(row[:-1])] = row[-1]

        def lookup(pv, e):
            keys = zip(*([pv[p].tolist() for p in parents] + [np.asarray(e).tolist()]))
            try:
                return np.array([table[tuple(k)] for k in keys])
            except KeyError as exc:
                raise ContractError(f"{where}: no table entry for {exc.args[0]}") from None

        return lookup
    raise ContractError(f"{where}: unknown equation type {kind!r}")


@dataclass(frozen=True)
class InterventionPlan:
    do: Optional[tuple[str, object]] = None
    mediator: Optional[tuple[str, object]] = None  # (vertex j, counterfactual value x' of the do vertex)

    def __post_init__(self):
        if self.mediator is not None:
            if self.do is None:
                raise ContractError("a mediated intervention requires a do-intervention")
            if self.mediator[0] == self.do[0]:
                raise ContractError("mediator must differ from the intervened vertex")


def evaluate_with_plan(graph: CausalGraph, plan: InterventionPlan, noise: Mapping[str, np.ndarray]) -> dict:
    for part in (plan.do, plan.mediator):
        if part is not None and part[0] not in graph.parents:
            raise ContractError(f"plan references unknown vertex {part[0]!r}")
    if plan.do is None:
        return graph.evaluate(noise)
    i, x = plan.do
    if plan.mediator is None:
        return graph.evaluate(noise, {i: x})
    j, x_cf = plan.mediator
    counterfactual = graph.evaluate(noise, {i: x_cf})
    return graph.evaluate(noise, {i: x, j: counterfactual[j]})


def _distribution(graph, plan, noise, weights, assembler, n_states) -> np.ndarray:
    values = evaluate_with_plan(graph, plan, noise)
    states = np.asarray(assembler(values))
    bad = np.flatnonzero((states < 0) | (states >= n_states) | (states != np.round(states)))
    if bad.size:
        raise ContractError(f"assembler produced invalid state {states[bad[0]]!r} for sample {bad[0]}")
    d = np.bincount(states.astype(int), weights=weights, minlength=n_states).astype(float)
    return d / d.sum()


def path_specific_plans(z: str = "Z", y: str = "Y", maj=MAJ, mino=MIN, swapped: bool = False):
    """(maj-side, min-side) plans; ``swapped`` exchanges the roles of the two groups."""
    if swapped:
        maj, mino = mino, maj
    return InterventionPlan((z, maj), (y, mino)), InterventionPlan((z, mino))


def path_specific_groups(graph: CausalGraph, assembler: Callable, n_states: int, n_samples: int,
                         rng: np.random.Generator, z: str = "Z", y: str = "Y", maj=MAJ, mino=MIN,
                         symmetric: bool = False, exact: bool = False):
    """Empirical initial-state distributions for the two sides of the path-specific comparison.

    Both sides share the same noise draws.  ``assembler`` maps a dict of
    vertex-value arrays to integer state indices.  ``exact=True`` enumerates
    finite noise supports instead of sampling.  With ``symmetric`` a second
    pair with the groups swapped is returned as well.
    """
    if exact:
        noise, weights = graph.enumerate_noise()
    else:
        noise, weights = graph.sample_noise(n_samples, rng), None
    pairs = [path_specific_plans(z, y, maj, mino)]
    if symmetric:
        pairs.append(path_specific_plans(z, y, maj, mino, swapped=True))
    out = [tuple(_distribution(graph, p, noise, weights, assembler, n_states) for p in pair) for pair in pairs]
    return out if symmetric else out[0]
