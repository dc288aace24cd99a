"""Command-line entry point: ``ddq {solve,run,bench,recommend,audit,grid}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .agent import INFINITY, AgentConfig, ConfigError, degenerate_config
from .diagnostics import TraceError, invariant_audit, read_trace
from .envs import (
    GridWorldSpec,
    SpecError,
    compile_gridworld,
    default_gridworld,
    dump_gridworld_spec,
    load_gridworld_spec,
)
from .harness import ALGORITHMS, recommend_params, run_bench, run_single, runs_to_csv
from .mdp import MdpError, greedy_policy, load_mdp, optimal_action_values

EXIT_AUDIT_FAILURE = 1
EXIT_USAGE = 2


def load_env(arg: str):
    """``default``, a grid spec file, or an MDP interchange file."""
    if arg == "default":
        return default_gridworld()
    text = Path(arg).read_text()
    data = json.loads(text)
    if "transitions" in data:
        return load_mdp(text)
    return load_gridworld_spec(text)


def _mdp_of(env):
    if isinstance(env, GridWorldSpec):
        return compile_gridworld(env)
    return env


def parse_count(text: str):
    if text.lower() in ("inf", "infinity"):
        return INFINITY
    return int(text)


def parse_seeds(text: str) -> list[int]:
    """``1..10``, ``1,4,9`` or a mix such as ``1..3,7``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _config(args, gamma: float) -> AgentConfig:
    cfg = AgentConfig.from_epsilon(args.epsilon, gamma, args.m1, args.m2)
    return cfg


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "infinity"
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _dump(obj) -> str:
    return json.dumps(_finite(obj), indent=2, default=_json_default)


def _finite(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "infinity"
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def cmd_solve(args) -> int:
    m = _mdp_of(load_env(args.mdp))
    q = optimal_action_values(m, args.tolerance)
    print(_dump({"Q": q.tolist(), "v": q.max(axis=1).tolist(), "policy": greedy_policy(q).tolist()}))
    return 0


def cmd_recommend(args) -> int:
    rec = recommend_params(args.states, args.actions, args.epsilon, args.delta, args.gamma, args.c)
    print(_dump(asdict(rec)))
    return 0


def cmd_run(args) -> int:
    env = load_env(args.env)
    m = _mdp_of(env)
    cfg = degenerate_config(args.algo, _config(args, m.gamma))
    result = run_single(
        env,
        cfg,
        args.seed,
        args.horizon,
        epsilon=args.epsilon,
        algorithm=args.algo,
        trace_path=args.trace,
        monitor_stride=args.stride,
    )
    out = asdict(result)
    if not args.timing:
        out.pop("wallclock_ms")
    print(_dump(out))
    return 0 if result.audit_hard_pass else EXIT_AUDIT_FAILURE


def cmd_bench(args) -> int:
    env = load_env(args.env)
    m = _mdp_of(env)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    summary = run_bench(
        env,
        _config(args, m.gamma),
        algos,
        parse_seeds(args.seeds),
        args.horizon,
        epsilon=args.epsilon,
        workers=args.workers,
        monitor_stride=args.stride,
    )
    csv_text = runs_to_csv(summary.runs, wallclock=args.timing)
    summary_text = _dump(summary.to_dict())
    if args.csv:
        Path(args.csv).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.summary:
        Path(args.summary).write_text(summary_text + "\n")
    else:
        print(summary_text)
    failed = [r for r in summary.runs if not r.audit_hard_pass]
    for r in failed:
        print(f"audit failure: {r.algorithm} seed {r.seed}: {r.audit.get('first_failure')}", file=sys.stderr)
    return EXIT_AUDIT_FAILURE if failed else 0


def cmd_audit(args) -> int:
    m = _mdp_of(load_env(args.env))
    cfg = degenerate_config(args.algo, _config(args, m.gamma))
    report = invariant_audit(read_trace(args.trace), cfg, m.num_states, m.num_actions)
    print(_dump(report.to_dict()))
    return 0 if report.hard_pass else EXIT_AUDIT_FAILURE


def cmd_grid(args) -> int:
    print(dump_gridworld_spec(default_gridworld()))
    return 0


def _add_agent_args(p, with_algo=True):
    if with_algo:
        p.add_argument("--algo", choices=ALGORITHMS, default="ddq")
    p.add_argument("--m1", type=parse_count, default=65)
    p.add_argument("--m2", type=parse_count, default=175)
    p.add_argument("--epsilon", type=float, default=0.06)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddq", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="print Q*, v* and the greedy optimal policy")
    p.add_argument("mdp", help="MDP or grid spec JSON file, or 'default'")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run one agent and report convergence")
    p.add_argument("--env", default="default")
    _add_agent_args(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--horizon", type=int, default=50000)
    p.add_argument("--trace", help="write the per-step trace as JSON lines")
    p.add_argument("--stride", type=int, default=1, help="check 4-epsilon optimality every N steps")
    p.add_argument("--timing", action="store_true", help="include wall-clock time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare algorithms across seeds")
    p.add_argument("--env", default="default")
    p.add_argument("--algos", default=",".join(ALGORITHMS))
    _add_agent_args(p, with_algo=False)
    p.add_argument("--seeds", default="1..10")
    p.add_argument("--horizon", type=int, default=50000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--csv", help="per-run CSV path (default: stdout)")
    p.add_argument("--summary", help="summary JSON path (default: stdout)")
    p.add_argument("--timing", action="store_true", help="fill the wallclock_ms column")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("recommend", help="theoretical parameter values")
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--actions", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--c", type=float, default=1.0, help="constant in the m2 bound")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("audit", help="check a recorded trace against the worst-case bounds")
    p.add_argument("--trace", required=True)
    p.add_argument("--env", default="default")
    _add_agent_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("grid", help="print the default grid spec")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SpecError, MdpError, ConfigError, TraceError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
