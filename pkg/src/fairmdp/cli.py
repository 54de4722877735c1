"""``fairmdp`` command line: solve, train, loan-experiment, etc-experiment, mix.

Exit codes: 0 on success (a fair policy was found), 2 when the fairness
problem is infeasible, 1 on usage, parse or validation errors.  Every
command takes ``--seed`` (default ``$FAIRMDP_SEED`` or 0) and prints CSV or
plain text that is byte-identical across runs with the same inputs.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from . import experiments
from .loan import LoanParams
from .mdp import (
    ContractError,
    FairnessSpec,
    MdpValidationError,
    TabularEnv,
    TabularMdp,
    evaluate,
    induced_transition,
    load_fixture,
)
from .model_based import solve_conservative, solve_fair
from .model_free import CceConfig, tabular_family, tabular_policy, trace_csv, train
from .rl import (
    EtcConfig,
    explore_then_commit,
    mixed_distribution,
    mixing_time,
    regret_csv,
    regret_curve,
    scaled_n_explore,
    stationary_distribution,
)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("FAIRMDP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ContractError(f"FAIRMDP_SEED must be an integer, got {raw!r}") from None


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _load_mdp(path: str) -> TabularMdp:
    if path.startswith("fixture:"):
        return load_fixture(path.split(":", 1)[1])
    return TabularMdp.load(path)


def _spec(mdp: TabularMdp, args) -> FairnessSpec:
    if args.criterion == "eo":
        if not args.qualified:
            raise ContractError("--criterion eo needs --qualified")
        qualified = np.zeros(mdp.n_states, dtype=bool)
        qualified[[int(s) for s in args.qualified.split(",")]] = True
        return FairnessSpec.equal_opportunity(mdp, qualified, args.tolerance)
    return FairnessSpec.demographic_parity(mdp, args.tolerance)


def _policy_rows(mdp: TabularMdp, policy: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if policy.ndim == 2:
        w.writerow(["state"] + [f"a{a}" for a in range(mdp.n_actions)])
        for s in range(mdp.n_states):
            w.writerow([mdp.state_name(s)] + [_fmt(p) for p in policy[s]])
    else:
        w.writerow(["t", "state"] + [f"a{a}" for a in range(mdp.n_actions)])
        for t in range(policy.shape[0]):
            for s in range(mdp.n_states):
                w.writerow([t, mdp.state_name(s)] + [_fmt(p) for p in policy[t, s]])
    return buf.getvalue()


# -- commands ---------------------------------------------------------------------------------


def cmd_solve(args) -> int:
    mdp = _load_mdp(args.mdp)
    spec = _spec(mdp, args)
    if args.conservative:
        result = solve_conservative(mdp, spec, horizon=args.horizon, mode=args.conservative_mode)
    else:
        result = solve_fair(mdp, spec, horizon=args.horizon)
    out = sys.stdout
    out.write(f"status: {result.status}\n")
    if not result.fair:
        return EXIT_INFEASIBLE
    ev = result.evaluation
    out.write(f"reward: {_fmt(result.reward)}\n")
    out.write(f"c: {_fmt(result.c)}\n")
    out.write(f"value_maj: {_fmt(ev.group_values['maj'])}\n")
    out.write(f"value_min: {_fmt(ev.group_values['min'])}\n")
    out.write(f"gap: {_fmt(ev.gap)}\n")
    if result.policy.ndim == 2:
        for s in range(mdp.n_states):
            probs = ", ".join(_fmt(p) for p in result.policy[s])
            out.write(f"pi({mdp.state_name(s)},.) = ({probs})\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(_policy_rows(mdp, result.policy))
    return EXIT_OK


def cmd_train(args) -> int:
    mdp = _load_mdp(args.mdp)
    spec = _spec(mdp, args)
    horizon = args.horizon
    if horizon is None:
        raise ContractError("train needs --horizon (rollout length)")
    cfg = CceConfig(iterations=args.iterations, n_samples=args.samples, n_elite=args.elite,
                    n_rollouts=args.rollouts, horizon=horizon, smoothing=args.smoothing, sigma=args.sigma,
                    epsilon=math.inf if args.unconstrained else args.tolerance, discount=mdp.discount,
                    weighting="strict" if args.strict_weights else "shifted")
    env = TabularEnv(mdp, spec)
    family = tabular_family(mdp.n_states, mdp.n_actions, args.gain)
    result = train(env, family, cfg, np.random.default_rng(args.seed))
    sys.stdout.write(trace_csv(result.trace))
    policy = tabular_policy(family, result.theta, mdp.n_states)
    if mdp.discount < 1.0:
        ev = evaluate(mdp, policy, spec)
    else:
        ev = evaluate(mdp, policy, spec, mode="finite", horizon=horizon)
    sys.stdout.write(f"# reward {_fmt(ev.reward)} gap {_fmt(ev.gap)}\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(_policy_rows(mdp, policy))
    return EXIT_OK


def _run_cell(cell):
    method, params, cfg, seed, crits = cell
    return experiments.run_method(method, params, cfg, seed, crits)


def cmd_loan_experiment(args) -> int:
    params = LoanParams.load(args.params) if args.params else LoanParams.default()
    cfg = experiments.with_overrides(
        experiments.default_config(), iterations=args.iterations, n_samples=args.samples,
        n_elite=args.elite, n_rollouts=args.rollouts, sigma=args.sigma, gain=args.gain,
        eval_episodes=args.eval_episodes)
    seeds = [args.seed + k for k in range(args.repeats)]
    methods = experiments.METHODS if args.method == "all" else (args.method,)
    cells = []
    for seed in seeds:
        for m in methods:
            crits = ("dp", "eo") if m in ("rb", "cons") and args.method == "all" else None
            cells.append((m, params, cfg, seed, crits))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows = [r for chunk in results for r in chunk]
    sys.stdout.write(experiments.rows_to_csv(rows, timing=args.timing))
    return EXIT_OK


def cmd_etc(args) -> int:
    mdp = _load_mdp(args.mdp)
    spec = _spec(mdp, args)
    pi0 = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    rng = np.random.default_rng(args.seed)
    if args.curve:
        ns = [int(x) for x in args.curve.split(",")]
        curve = regret_curve(mdp, spec, pi0, args.horizon, ns, rng, kappa=args.kappa, trials=args.trials)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["n", "regret"])
        for n, r in zip(curve.n, curve.regret):
            w.writerow([int(n), _fmt(r)])
        sys.stdout.write(f"# slope {_fmt(curve.slope)}\n")
        return EXIT_OK
    n = args.episodes
    eps = args.tolerance if args.tolerance > 0 else n ** (-2.0 / 3.0)
    n0 = args.explore if args.explore is not None else scaled_n_explore(n, args.kappa)
    cfg = EtcConfig(n, n0, pi0, args.horizon, eps)
    result = explore_then_commit(mdp, cfg, spec, rng)
    sys.stdout.write(regret_csv(result))
    if result.flags.get("fallback_to_explore_policy"):
        sys.stderr.write("warning: estimated model infeasible; committed to the exploration policy\n")
    return EXIT_OK


def cmd_mix(args) -> int:
    mdp = _load_mdp(args.mdp)
    if args.policy:
        with open(args.policy, encoding="utf-8") as fh:
            policy = np.asarray(json.load(fh), dtype=float)
    else:
        policy = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.per_group:
        d, steps = mixed_distribution(mdp, policy, args.eps0)
    else:
        P = induced_transition(mdp, policy)
        d = stationary_distribution(P)
        steps = mixing_time(P, args.eps0)
    w.writerow(["state", "stationary"])
    for s in range(mdp.n_states):
        w.writerow([mdp.state_name(s), _fmt(d[s])])
    w.writerow(["mixing_time", steps])
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairmdp", description="Fairness-constrained policies for MDPs")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, mdp_default=None):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default $FAIRMDP_SEED or 0)")
        if mdp_default is not False:
            if mdp_default is None:
                sp.add_argument("mdp", help="MDP JSON file, or fixture:<name> for a shipped model")
            else:
                sp.add_argument("--mdp", default=mdp_default, help="MDP JSON file or fixture:<name>")
            sp.add_argument("--criterion", choices=("dp", "eo"), default="dp")
            sp.add_argument("--qualified", help="comma-separated qualified state indices (eo)")
            sp.add_argument("--tolerance", type=float, default=0.0, help="allowed parity gap")

    s = sub.add_parser("solve", help="exact fair policy for a known tabular MDP")
    common(s)
    s.add_argument("--horizon", type=int, default=None, help="finite horizon (use with discount 1)")
    s.add_argument("--conservative", action="store_true", help="fair for every initial distribution")
    s.add_argument("--conservative-mode", choices=("policy", "printed"), default="policy")
    s.add_argument("--csv", help="write the policy table here")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="constrained cross-entropy on a tabular MDP")
    common(t)
    t.add_argument("--horizon", type=int, default=None)
    t.add_argument("--iterations", type=int, default=100)
    t.add_argument("--samples", type=int, default=100)
    t.add_argument("--elite", type=int, default=10)
    t.add_argument("--rollouts", type=int, default=1000)
    t.add_argument("--smoothing", type=float, default=0.7)
    t.add_argument("--sigma", type=float, default=0.1)
    t.add_argument("--gain", type=float, default=1.0)
    t.add_argument("--unconstrained", action="store_true")
    t.add_argument("--strict-weights", action="store_true", help="weight the elite by raw estimated reward")
    t.add_argument("--csv", help="write the trained policy table here")
    t.set_defaults(func=cmd_train)

    le = sub.add_parser("loan-experiment", help="train and evaluate loan policies")
    common(le, mdp_default=False)
    le.add_argument("--params", help="loan parameter JSON (default: shipped parameters)")
    le.add_argument("--method", choices=experiments.METHODS + ("all",), default="all")
    le.add_argument("--repeats", type=int, default=1, help="number of consecutive seeds")
    le.add_argument("--iterations", type=int)
    le.add_argument("--samples", type=int)
    le.add_argument("--elite", type=int)
    le.add_argument("--rollouts", type=int)
    le.add_argument("--sigma", type=float)
    le.add_argument("--gain", type=float)
    le.add_argument("--eval-episodes", type=int)
    le.add_argument("--jobs", type=int, default=1, help="parallel (method, seed) cells")
    le.add_argument("--timing", action="store_true", help="append wall-clock time (not reproducible)")
    le.set_defaults(func=cmd_loan_experiment)

    e = sub.add_parser("etc-experiment", help="explore-then-commit regret traces")
    common(e, mdp_default="fixture:etc_four_state")
    e.add_argument("--horizon", type=int, default=5)
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--explore", type=int, default=None, help="exploration episodes (default ceil(kappa N^(2/3)))")
    e.add_argument("--kappa", type=float, default=1.0)
    e.add_argument("--curve", help="comma-separated N values: print the regret curve instead")
    e.add_argument("--trials", type=int, default=1)
    e.set_defaults(func=cmd_etc)

    m = sub.add_parser("mix", help="stationary distribution and mixing time")
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("mdp")
    m.add_argument("--policy", help="JSON (S, A) policy (default uniform)")
    m.add_argument("--eps0", type=float, default=1e-3)
    m.add_argument("--per-group", action="store_true", help="mix each group block separately")
    m.set_defaults(func=cmd_mix)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except MdpValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        sys.stderr.write(f"error: malformed JSON: {exc}\n")
        return EXIT_ERROR
    except (ContractError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
