"""Experiment driver: parameter recommendation, single runs, multi-seed benchmarks."""

from __future__ import annotations

import csv
import io
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .agent import INFINITY, AgentConfig, degenerate_config, new_agent, observe, select_action
from .diagnostics import (
    PacMonitor,
    StepRecord,
    bellman_residual,
    check_optimism_accuracy,
    compute_known_set,
    invariant_audit,
    kappa,
    write_trace,
)
from .envs import GridWorldSpec, Sampler, compile_gridworld, make_rng
from .mdp import Mdp, sweeps_for_accuracy

log = logging.getLogger(__name__)

ALGORITHMS = ("ddq", "delayed_q", "rmax")

CSV_COLUMNS = [
    "run_id",
    "algorithm",
    "seed",
    "m1",
    "m2",
    "epsilon",
    "gamma",
    "horizon",
    "convergence_step",
    "violations",
    "type1_updates",
    "type2_sweeps",
    "attempted_updates",
    "escape_events",
    "wallclock_ms",
]


@dataclass(frozen=True)
class Recommendation:
    epsilon1: float
    epsilon2: float
    m1: int
    m2: int
    vi_sweeps: int
    kappa: float


def recommend_params(
    num_states: int, num_actions: int, epsilon: float, delta: float, gamma: float, c: float = 1.0
) -> Recommendation:
    """Theoretical parameter choice guaranteeing 4-epsilon optimality w.p. 1 - 2 delta."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if not 0 < epsilon < 1.0 / (1.0 - gamma):
        raise ValueError("epsilon must lie in (0, 1/(1-gamma))")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not c > 0:
        raise ValueError("c must be positive")
    S, A = num_states, num_actions
    eps1 = (1.0 - gamma) * epsilon / 3.0
    eps2 = eps1 / 3.0
    k = kappa(S, A, gamma, eps1)
    m1 = math.log(8 * S * A * (1 + k) / delta) / (2 * (eps1 - 2 * eps2) ** 2 * (1 - gamma) ** 2)
    m2 = c * (S + math.log(8 * S * A / delta)) / (eps2**2 * (1 - gamma) ** 4)
    return Recommendation(eps1, eps2, math.ceil(m1), math.ceil(m2), sweeps_for_accuracy(eps2, gamma), k)


@dataclass
class RunResult:
    algorithm: str
    seed: int
    m1: float
    m2: float
    epsilon: float
    gamma: float
    horizon: int
    convergence_step: int
    converged: bool
    violation_count: int
    type1_updates: int
    type2_sweeps: int
    attempted_updates: int
    escape_count: int
    successful_timesteps: int
    optimism_checks: int
    optimism_failures: int
    optimism_worst_margin: float
    accuracy_failures: int
    accuracy_worst_margin: float
    fingerprint: str
    audit: dict = field(default_factory=dict)
    wallclock_ms: float = 0.0

    @property
    def optimism_pass(self) -> bool:
        return self.optimism_failures == 0

    @property
    def audit_hard_pass(self) -> bool:
        return bool(self.audit.get("hard_pass"))

    @property
    def escape_bound_pass(self) -> bool:
        esc = self.audit.get("escape_total")
        return esc is None or bool(esc["passed"])


def _as_env(env) -> tuple[Mdp, int]:
    if isinstance(env, GridWorldSpec):
        return compile_gridworld(env), env.start - 1
    if isinstance(env, tuple):
        return env
    return env, 0


def run_single(
    env,
    cfg: AgentConfig,
    seed: int,
    horizon: int,
    *,
    epsilon: float,
    algorithm: str = "ddq",
    trace_path=None,
    keep_trace: bool = False,
    monitor_stride: int = 1,
    condition_checks: bool = True,
):
    """Run one agent for ``horizon`` steps with per-step monitoring.

    ``env`` is a GridWorldSpec, an Mdp (start state 0) or an ``(Mdp, start)``
    pair. ``epsilon`` is the accuracy target that the 4-epsilon condition and
    the optimism check refer to. Returns the RunResult, plus the trace records
    when ``keep_trace`` is set.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if monitor_stride < 1:
        raise ValueError("monitor_stride must be at least 1")
    started = time.perf_counter()
    m, s = _as_env(env)
    cfg.validate()
    st = new_agent(cfg, m.num_states, m.num_actions)
    rng = make_rng(seed)
    sampler = Sampler(m)
    monitor = PacMonitor(m, epsilon)

    records: list[StepRecord] = []
    last_violation = 0
    violations = type1 = sweeps = attempted = escapes = successes = 0
    opt_checks = opt_fail = acc_fail = 0
    opt_worst = acc_worst = math.inf
    residual_ok = None
    last_violating_check = False

    def check_conditions():
        nonlocal opt_checks, opt_fail, acc_fail, opt_worst, acc_worst
        known = _known(m, st, cfg)
        rep = check_optimism_accuracy(m, st.Q, known, cfg, epsilon, v_star=monitor.v_star)
        opt_checks += 1
        opt_fail += not rep.optimism_pass
        acc_fail += not rep.accuracy_pass
        opt_worst = min(opt_worst, rep.optimism_margin)
        acc_worst = min(acc_worst, rep.accuracy_margin)

    if condition_checks:
        check_conditions()

    for t in range(1, horizon + 1):
        a = select_action(st, s)
        if residual_ok is None:
            residual_ok = bellman_residual(m, st.Q) <= 3 * cfg.epsilon1
        # the visited pair's count includes this visit
        escape = not (residual_ok[s, a] or st.n_sa[s, a] + 1 >= cfg.m2)
        if (t - 1) % monitor_stride == 0:
            last_violating_check = monitor.violation(st.Q, s)
        violation = last_violating_check
        r, s_next = sampler.step(s, a, rng)
        out = observe(st, s, a, r, s_next)

        if violation:
            violations += 1
            last_violation = t
        escapes += escape
        type1 += out.type1_succeeded
        sweeps += out.type2_triggered
        attempted += out.attempted_update
        successes += out.successful_timestep
        if out.q_changes:
            residual_ok = None
        if condition_checks and out.successful_timestep:
            check_conditions()
        records.append(
            StepRecord(
                t=t,
                s=s,
                a=a,
                r=r,
                s_next=s_next,
                escape=escape,
                violation=violation,
                successful=out.successful_timestep,
                attempted=out.attempted_update,
                type1_attempted=out.type1_attempted,
                type1_succeeded=out.type1_succeeded,
                reached_m2=out.reached_m2,
                type2_triggered=out.type2_triggered,
                learn_changes=list(out.learn_flag_transitions),
                q_changes=list(out.q_changes),
            )
        )
        s = s_next

    audit = invariant_audit(records, cfg, m.num_states, m.num_actions)
    if trace_path is not None:
        write_trace(records, trace_path)

    converged = last_violation < horizon
    result = RunResult(
        algorithm=algorithm,
        seed=seed,
        m1=cfg.m1,
        m2=cfg.m2,
        epsilon=epsilon,
        gamma=cfg.gamma,
        horizon=horizon,
        # runs still violating at the horizon are flagged and capped at it
        convergence_step=min(last_violation + 1, horizon) if last_violation else 0,
        converged=converged,
        violation_count=violations,
        type1_updates=type1,
        type2_sweeps=sweeps,
        attempted_updates=attempted,
        escape_count=escapes,
        successful_timesteps=successes,
        optimism_checks=opt_checks,
        optimism_failures=opt_fail,
        optimism_worst_margin=opt_worst,
        accuracy_failures=acc_fail,
        accuracy_worst_margin=acc_worst,
        fingerprint=m.fingerprint(),
        audit=audit.to_dict(),
        wallclock_ms=(time.perf_counter() - started) * 1000.0,
    )
    if keep_trace:
        return result, records
    return result


def _known(m, st, cfg):
    return compute_known_set(m, st.Q, st.n_sa, cfg)


@dataclass
class AlgoStats:
    mean: float | None
    min: int | None
    max: int | None
    stddev: float | None
    converged_runs: int
    total_runs: int


@dataclass
class BenchSummary:
    algorithms: dict[str, AlgoStats]
    seeds: list[int]
    fingerprint: str
    runs: list[RunResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "seeds": self.seeds,
            "algorithms": {k: asdict(v) for k, v in self.algorithms.items()},
        }


def summarize(runs: list[RunResult]) -> BenchSummary:
    if not runs:
        raise ValueError("no runs to summarize")
    prints = {r.fingerprint for r in runs}
    if len(prints) != 1:
        raise ValueError(f"runs come from different environments: {sorted(prints)}")
    by_algo: dict[str, list[RunResult]] = {}
    for r in runs:
        by_algo.setdefault(r.algorithm, []).append(r)
    seed_sets = {alg: sorted(r.seed for r in rs) for alg, rs in by_algo.items()}
    seeds = next(iter(seed_sets.values()))
    if any(s != seeds for s in seed_sets.values()):
        raise ValueError("algorithms were run on different seed sets")
    stats = {}
    for alg, rs in by_algo.items():
        steps = [r.convergence_step for r in rs if r.converged]
        if len(steps) < len(rs):
            bad = [r.seed for r in rs if not r.converged]
            log.warning("%s did not converge within the horizon for seeds %s", alg, bad)
        stats[alg] = AlgoStats(
            mean=statistics.fmean(steps) if steps else None,
            min=min(steps) if steps else None,
            max=max(steps) if steps else None,
            stddev=statistics.pstdev(steps) if steps else None,
            converged_runs=len(steps),
            total_runs=len(rs),
        )
    return BenchSummary(stats, seeds, prints.pop(), list(runs))


def _bench_job(args):
    env, cfg, algorithm, seed, horizon, epsilon, stride = args
    try:
        return run_single(env, cfg, seed, horizon, epsilon=epsilon, algorithm=algorithm, monitor_stride=stride)
    except Exception as e:  # surfaced with its seed by run_bench
        return e


def run_bench(
    env,
    base_cfg: AgentConfig,
    algorithms,
    seeds,
    horizon: int,
    *,
    epsilon: float,
    workers: int = 1,
    monitor_stride: int = 1,
) -> BenchSummary:
    """Run every (algorithm, seed) pair and summarize convergence steps."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    jobs = []
    for alg in algorithms:
        if alg not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {alg!r}")
        cfg = degenerate_config(alg, base_cfg)
        for seed in seeds:
            jobs.append((env, cfg, alg, seed, horizon, epsilon, monitor_stride))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]
    for job, res in zip(jobs, results):
        if isinstance(res, Exception):
            raise RuntimeError(f"run {job[2]} seed {job[3]} failed: {res}") from res
    return summarize(results)


def _fmt_count(v) -> str:
    return "inf" if v == INFINITY else str(int(v))


def runs_to_csv(runs: list[RunResult], wallclock: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, r in enumerate(runs, start=1):
        w.writerow(
            [
                i,
                r.algorithm,
                r.seed,
                _fmt_count(r.m1),
                _fmt_count(r.m2),
                repr(r.epsilon),
                repr(r.gamma),
                r.horizon,
                r.convergence_step,
                r.violation_count,
                r.type1_updates,
                r.type2_sweeps,
                r.attempted_updates,
                r.escape_count,
                f"{r.wallclock_ms:.0f}" if wallclock else "",
            ]
        )
    return buf.getvalue()
