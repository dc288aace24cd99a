"""Run-time checks of a learning agent against the true environment model.

Everything here reads agent values and the true MDP; nothing feeds back into
learning.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .agent import INFINITY, AgentConfig
from .mdp import Mdp, build_known_mdp, greedy_policy, optimal_action_values, policy_state_values


@dataclass(frozen=True)
class KnownSet:
    k1: np.ndarray  # boolean (S, A): Bellman residual within 3 epsilon1
    k2: np.ndarray  # boolean (S, A): visited at least m2 times

    @property
    def k(self) -> np.ndarray:
        return self.k1 | self.k2


def bellman_residual(m: Mdp, q: np.ndarray) -> np.ndarray:
    """Q(s,a) - (R(s,a) + gamma sum_s' T(s,a,s') max_a' Q(s',a')) under the true model."""
    return q - (m.rewards + m.gamma * (m.transitions @ q.max(axis=1)))


def compute_known_set(m: Mdp, q: np.ndarray, visit_counts: np.ndarray, cfg: AgentConfig) -> KnownSet:
    k1 = bellman_residual(m, q) <= 3 * cfg.epsilon1
    k2 = np.asarray(visit_counts) >= cfg.m2
    return KnownSet(k1, k2)


def detect_escape(known: KnownSet, s: int, a: int) -> bool:
    return not (known.k1[s, a] or known.k2[s, a])


class PacMonitor:
    """Checks the 4-epsilon optimality condition of greedy policies.

    Policy values are cached per policy: Q changes rarely, and a 9-state grid
    only has so many greedy policies in a run.
    """

    def __init__(self, m: Mdp, epsilon: float, tolerance: float = 1e-10):
        self.mdp = m
        self.epsilon = epsilon
        self.q_star = optimal_action_values(m, tolerance)
        self.v_star = self.q_star.max(axis=1)
        self._cache: dict[bytes, np.ndarray] = {}

    def policy_values(self, policy: np.ndarray) -> np.ndarray:
        key = policy.tobytes()
        v = self._cache.get(key)
        if v is None:
            v = policy_state_values(self.mdp, policy)
            self._cache[key] = v
        return v

    def violation(self, q: np.ndarray, s: int) -> bool:
        v = self.policy_values(greedy_policy(q))
        return bool(v[s] < self.v_star[s] - 4 * self.epsilon)


def pac_monitor_step(m: Mdp, q: np.ndarray, s: int, epsilon: float) -> bool:
    """True iff the greedy policy of ``q`` is not 4-epsilon optimal at ``s``."""
    return PacMonitor(m, epsilon).violation(q, s)


@dataclass
class ConditionReport:
    optimism_margin: float
    optimism_pass: bool
    accuracy_margin: float
    accuracy_pass: bool


def check_optimism_accuracy(
    m: Mdp,
    q: np.ndarray,
    known: KnownSet,
    cfg: AgentConfig,
    epsilon: float,
    v_star: np.ndarray | None = None,
) -> ConditionReport:
    """Optimism and accuracy margins of ``q``; a margin >= 0 passes."""
    if v_star is None:
        v_star = optimal_action_values(m).max(axis=1)
    v_t = q.max(axis=1)
    optimism = float(np.min(v_t - v_star + epsilon))

    km = build_known_mdp(m, known.k, np.clip(q, 0.0, m.v_max))
    S = m.num_states
    policy = np.zeros(km.mdp.num_states, dtype=int)
    policy[:S] = greedy_policy(q)
    v_known = policy_state_values(km.mdp, policy)[:S]
    accuracy = float(np.min(epsilon - (v_t - v_known)))
    return ConditionReport(optimism, optimism >= 0, accuracy, accuracy >= 0)


@dataclass
class StepRecord:
    t: int
    s: int
    a: int
    r: float
    s_next: int
    escape: bool | None = None
    violation: bool | None = None
    successful: bool = False
    attempted: bool = False
    type1_attempted: bool = False
    type1_succeeded: bool = False
    reached_m2: bool = False
    type2_triggered: bool = False
    learn_changes: list = field(default_factory=list)
    q_changes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> StepRecord:
        d = json.loads(line)
        d["learn_changes"] = [(tuple(p), old, new) for p, old, new in d.get("learn_changes", [])]
        d["q_changes"] = [tuple(c) for c in d.get("q_changes", [])]
        return cls(**d)


def write_trace(records, path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(rec.to_json())
            f.write("\n")


def read_trace(path) -> list[StepRecord]:
    with open(path) as f:
        return [StepRecord.from_json(line) for line in f if line.strip()]


class TraceError(ValueError):
    pass


def kappa(num_states: int, num_actions: int, gamma: float, epsilon1: float) -> float:
    return num_states * num_actions * (1.0 + 1.0 / ((1.0 - gamma) * epsilon1))


@dataclass
class Check:
    observed: float
    bound: float
    passed: bool


@dataclass
class AuditReport:
    per_pair_successful: dict
    per_pair: Check
    successful_total: Check
    attempted_total: Check
    escape_total: Check | None
    q_monotone: bool
    q_in_range: bool
    first_failure: str | None = None

    @property
    def hard_pass(self) -> bool:
        """Checks that follow from the update arithmetic alone."""
        return (
            self.per_pair.passed
            and self.successful_total.passed
            and self.attempted_total.passed
            and self.q_monotone
            and self.q_in_range
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_pair_successful"] = {f"{s},{a}": c for (s, a), c in sorted(self.per_pair_successful.items())}
        d["hard_pass"] = self.hard_pass
        return d


def invariant_audit(trace, cfg: AgentConfig, num_states: int, num_actions: int) -> AuditReport:
    """Compare event counts in ``trace`` against their worst-case bounds."""
    gamma, eps1 = cfg.gamma, cfg.epsilon1
    v_max = 1.0 / (1.0 - gamma)
    k = kappa(num_states, num_actions, gamma, eps1)
    per_pair_bound = 1.0 + 1.0 / ((1.0 - gamma) * eps1)

    per_pair: dict[tuple[int, int], int] = {}
    successful = attempted = escapes = 0
    escapes_known = True
    q = np.full((num_states, num_actions), v_max)
    monotone = in_range = True
    failure = None

    for i, rec in enumerate(trace, start=1):
        if rec.t != i:
            raise TraceError(f"trace entry {i} has t={rec.t}; expected {i}")
        pair = (rec.s, rec.a)
        if rec.type1_succeeded or rec.reached_m2:
            per_pair[pair] = per_pair.get(pair, 0) + 1
        if rec.successful:
            successful += 1
        if rec.attempted:
            attempted += 1
        if rec.escape is None:
            escapes_known = False
        elif rec.escape:
            escapes += 1
        for s, a, old, new in rec.q_changes:
            if old != q[s, a]:
                monotone = False
                failure = failure or f"t={rec.t}: Q({s},{a}) recorded old value {old} but tracked {q[s, a]}"
            if new > old:
                monotone = False
                failure = failure or f"t={rec.t}: Q({s},{a}) increased {old} -> {new}"
            if not 0.0 <= new <= v_max:
                in_range = False
                failure = failure or f"t={rec.t}: Q({s},{a}) = {new} outside [0, {v_max}]"
            q[s, a] = new

    worst = max(per_pair.values(), default=0)
    escape_check = None
    if escapes_known:
        bounds = []
        if cfg.m1 != INFINITY:
            bounds.append(2 * cfg.m1 * k)
        if cfg.m2 != INFINITY:
            bounds.append(num_states * num_actions * cfg.m2)
        bound = min(bounds) if bounds else math.inf
        escape_check = Check(escapes, bound, escapes <= bound)
    report = AuditReport(
        per_pair_successful=per_pair,
        per_pair=Check(worst, per_pair_bound, worst <= per_pair_bound),
        successful_total=Check(successful, k, successful <= k),
        attempted_total=Check(attempted, num_states * num_actions * (1 + k), attempted <= num_states * num_actions * (1 + k)),
        escape_total=escape_check,
        q_monotone=monotone,
        q_in_range=in_range,
        first_failure=failure,
    )
    if report.first_failure is None and not report.hard_pass:
        report.first_failure = "event count exceeds its bound"
    return report
