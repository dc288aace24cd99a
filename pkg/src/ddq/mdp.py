"""Finite MDPs, exact planning, and the known state-action construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True)
class Mdp:
    """A finite discounted MDP.

    ``transitions`` has shape ``(S, A, S)`` and ``rewards`` shape ``(S, A)``.
    """

    num_states: int
    num_actions: int
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        t = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def v_max(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def fingerprint(self) -> str:
        """Content hash of the model, stable across processes."""
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.num_states}:{self.num_actions}:{self.gamma!r}".encode())
        h.update(np.ascontiguousarray(self.transitions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.rewards, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
        }


class MdpError(ValueError):
    pass


def validate_mdp(m: Mdp) -> list[str]:
    """Return a list of problems with ``m``; empty when well-formed."""
    problems = []
    S, A = m.num_states, m.num_actions
    if S < 1:
        problems.append(f"num_states must be positive, got {S}")
    if A < 1:
        problems.append(f"num_actions must be positive, got {A}")
    if m.transitions.shape != (S, A, S):
        problems.append(f"transitions shape {m.transitions.shape} != {(S, A, S)}")
        return problems
    if m.rewards.shape != (S, A):
        problems.append(f"rewards shape {m.rewards.shape} != {(S, A)}")
        return problems
    if not (0.0 <= m.gamma < 1.0):
        problems.append(f"gamma {m.gamma} not in [0, 1)")
    for s, a, s2 in zip(*np.nonzero((m.transitions < 0) | (m.transitions > 1))):
        problems.append(f"T({s},{a},{s2}) = {m.transitions[s, a, s2]} not in [0, 1]")
    sums = m.transitions.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
        problems.append(f"row ({s},{a}) sums to {float(sums[s, a])!r}, not 1")
    for s, a in zip(*np.nonzero((m.rewards < 0) | (m.rewards > 1))):
        problems.append(f"R({s},{a}) = {m.rewards[s, a]} not in [0, 1]")
    if not np.all(np.isfinite(m.transitions)) or not np.all(np.isfinite(m.rewards)):
        problems.append("non-finite entries")
    return problems


def load_mdp(text: str) -> Mdp:
    data = json.loads(text)
    expected = {"num_states", "num_actions", "gamma", "rewards", "transitions"}
    unknown = set(data) - expected
    if unknown:
        raise MdpError(f"unknown fields: {sorted(unknown)}")
    missing = expected - set(data)
    if missing:
        raise MdpError(f"missing fields: {sorted(missing)}")
    try:
        m = Mdp(
            num_states=int(data["num_states"]),
            num_actions=int(data["num_actions"]),
            transitions=np.asarray(data["transitions"], dtype=float),
            rewards=np.asarray(data["rewards"], dtype=float),
            gamma=data["gamma"],
        )
    except (TypeError, ValueError) as e:
        raise MdpError(f"malformed MDP: {e}") from e
    problems = validate_mdp(m)
    if problems:
        raise MdpError("; ".join(problems))
    return m


def dump_mdp(m: Mdp) -> str:
    return json.dumps(m.to_dict())


def sweeps_for_accuracy(epsilon2: float, gamma: float) -> int:
    """Synchronous sweeps that bring any start in [0, v_max] within ``epsilon2`` of Q*."""
    if epsilon2 <= 0:
        raise ValueError("epsilon2 must be positive")
    n = math.log(1.0 / (epsilon2 * (1.0 - gamma))) / (1.0 - gamma)
    return max(1, math.ceil(n))


def greedy_policy(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest tied action index
    return np.argmax(q, axis=1)


def bellman_backup(m: Mdp, q: np.ndarray) -> np.ndarray:
    return m.rewards + m.gamma * (m.transitions @ q.max(axis=1))


def value_iteration(
    m: Mdp,
    q0: np.ndarray,
    iterations: int,
    restrict: Iterable[tuple[int, int]] | np.ndarray | None = None,
) -> np.ndarray:
    """Run ``iterations`` synchronous Bellman sweeps from ``q0``.

    ``restrict`` is either a set of (s, a) pairs or a boolean (S, A) mask; pairs
    outside it keep their ``q0`` value throughout.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    q = np.array(q0, dtype=float)
    if restrict is None:
        for _ in range(iterations):
            q = bellman_backup(m, q)
        return q
    mask = _as_mask(restrict, m.num_states, m.num_actions)
    for _ in range(iterations):
        q = np.where(mask, bellman_backup(m, q), q)
    return q


def _as_mask(pairs, S: int, A: int) -> np.ndarray:
    if isinstance(pairs, np.ndarray) and pairs.dtype == bool:
        return pairs
    mask = np.zeros((S, A), dtype=bool)
    for s, a in pairs:
        mask[s, a] = True
    return mask


def optimal_action_values(m: Mdp, tolerance: float = 1e-10) -> np.ndarray:
    """Q* to within ``tolerance`` in max norm.

    Stops once the Bellman residual drops to ``tolerance * (1 - gamma)``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    q = np.zeros((m.num_states, m.num_actions))
    target = tolerance * (1.0 - m.gamma)
    while True:
        nxt = bellman_backup(m, q)
        if np.max(np.abs(nxt - q)) <= target:
            return nxt
        q = nxt


def policy_state_values(m: Mdp, policy: np.ndarray) -> np.ndarray:
    """Exact v^pi by a linear solve of v = R_pi + gamma T_pi v."""
    policy = np.asarray(policy, dtype=int)
    if policy.shape != (m.num_states,) or np.any((policy < 0) | (policy >= m.num_actions)):
        raise ValueError("policy does not match the MDP")
    idx = np.arange(m.num_states)
    t_pi = m.transitions[idx, policy]
    r_pi = m.rewards[idx, policy]
    return np.linalg.solve(np.eye(m.num_states) - m.gamma * t_pi, r_pi)


@dataclass(frozen=True)
class KnownMdp:
    """Known state-action MDP.

    States ``0..S-1`` are the originals; state ``S + i`` is the absorbing
    stand-in for ``origin[i]``, the i-th unknown pair.
    """

    mdp: Mdp
    origin: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    @property
    def num_augmented(self) -> int:
        return len(self.origin)


def build_known_mdp(m: Mdp, known, q: np.ndarray) -> KnownMdp:
    """Freeze every pair outside ``known`` at its current value in ``q``.

    ``known`` is a boolean (S, A) mask or an iterable of pairs.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or np.any(q > m.v_max):
        raise ValueError("q entries must lie in [0, v_max]")
    S, A = m.num_states, m.num_actions
    mask = _as_mask(known, S, A)
    unknown = [(int(s), int(a)) for s, a in zip(*np.nonzero(~mask))]
    n = S + len(unknown)
    t = np.zeros((n, A, n))
    r = np.zeros((n, A))
    t[:S, :, :S] = m.transitions
    r[:S] = m.rewards
    for i, (s, a) in enumerate(unknown):
        z = S + i
        frozen = q[s, a] * (1.0 - m.gamma)
        t[s, a, :] = 0.0
        t[s, a, z] = 1.0
        r[s, a] = frozen
        t[z, :, z] = 1.0
        r[z, :] = frozen
    return KnownMdp(Mdp(n, A, t, r, m.gamma), tuple(unknown))
