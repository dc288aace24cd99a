"""Dyna-Delayed Q-learning agent.

The agent is a plain state object plus functions that advance it. It does not
own an environment: callers pick the action, sample the environment, and feed
``observe`` the resulting ``(s, a, r, s')``.

Setting ``m2 = INFINITY`` turns off value-iteration planning and leaves
Delayed Q-learning; setting ``m1 = INFINITY`` turns off batch updates and
leaves R-max style planning on the empirical model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import sweeps_for_accuracy

INFINITY = math.inf


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    m1: float  # int, or INFINITY to disable batch updates
    m2: float  # int, or INFINITY to disable planning
    epsilon1: float
    epsilon2: float
    gamma: float
    vi_sweeps: int | None = None

    def __post_init__(self):
        if self.vi_sweeps is None and self.epsilon2 > 0 and 0 <= self.gamma < 1:
            object.__setattr__(self, "vi_sweeps", sweeps_for_accuracy(self.epsilon2, self.gamma))

    @classmethod
    def from_epsilon(cls, epsilon: float, gamma: float, m1: float, m2: float, **kw) -> AgentConfig:
        """Build a config with epsilon1 = (1 - gamma) epsilon / 3 and epsilon2 = epsilon1 / 3."""
        eps1 = (1.0 - gamma) * epsilon / 3.0
        return cls(m1=m1, m2=m2, epsilon1=eps1, epsilon2=eps1 / 3.0, gamma=gamma, **kw)

    @property
    def v_max(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def problems(self) -> list[str]:
        out = []
        for name in ("m1", "m2"):
            v = getattr(self, name)
            if v != INFINITY and (v != int(v) or v < 1):
                out.append(f"{name} must be a positive integer or INFINITY, got {v}")
        if not self.epsilon1 > 0:
            out.append("epsilon1 must be positive")
        if not self.epsilon2 > 0:
            out.append("epsilon2 must be positive")
        elif not self.epsilon2 < self.epsilon1 / 2:
            out.append("epsilon2 must be below epsilon1 / 2")
        if not 0 <= self.gamma < 1:
            out.append("gamma must lie in [0, 1)")
        if self.vi_sweeps is None or self.vi_sweeps < 1:
            out.append("vi_sweeps must be at least 1")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "m1": _enc_count(self.m1),
            "m2": _enc_count(self.m2),
            "epsilon1": self.epsilon1,
            "epsilon2": self.epsilon2,
            "gamma": self.gamma,
            "vi_sweeps": self.vi_sweeps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AgentConfig:
        return cls(
            m1=_dec_count(d["m1"]),
            m2=_dec_count(d["m2"]),
            epsilon1=d["epsilon1"],
            epsilon2=d["epsilon2"],
            gamma=d["gamma"],
            vi_sweeps=d.get("vi_sweeps"),
        )


def _enc_count(v):
    return "infinity" if v == INFINITY else int(v)


def _dec_count(v):
    return INFINITY if v in ("infinity", None) else int(v)


def degenerate_config(kind: str, base: AgentConfig) -> AgentConfig:
    """Return the config for ``ddq``, ``delayed_q`` or ``rmax`` derived from ``base``."""
    if kind == "ddq":
        return base
    if kind == "delayed_q":
        return replace(base, m2=INFINITY)
    if kind == "rmax":
        return replace(base, m1=INFINITY)
    raise ValueError(f"unknown algorithm {kind!r}")


@dataclass
class AgentState:
    cfg: AgentConfig
    Q: np.ndarray
    U: np.ndarray
    l: np.ndarray
    b: np.ndarray
    learn: np.ndarray
    n_sa: np.ndarray
    n_sas: np.ndarray
    r_sum: np.ndarray
    t_star: int = 0
    t: int = 0

    @property
    def num_states(self) -> int:
        return self.Q.shape[0]

    @property
    def num_actions(self) -> int:
        return self.Q.shape[1]

    def to_dict(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "Q": self.Q.tolist(),
            "U": self.U.tolist(),
            "l": self.l.tolist(),
            "b": self.b.tolist(),
            "learn": self.learn.tolist(),
            "n_sa": self.n_sa.tolist(),
            "n_sas": self.n_sas.tolist(),
            "r_sum": self.r_sum.tolist(),
            "t_star": self.t_star,
            "t": self.t,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> AgentState:
        return cls(
            cfg=AgentConfig.from_dict(d["config"]),
            Q=np.array(d["Q"], dtype=float),
            U=np.array(d["U"], dtype=float),
            l=np.array(d["l"], dtype=np.int64),
            b=np.array(d["b"], dtype=np.int64),
            learn=np.array(d["learn"], dtype=bool),
            n_sa=np.array(d["n_sa"], dtype=np.int64),
            n_sas=np.array(d["n_sas"], dtype=np.int64),
            r_sum=np.array(d["r_sum"], dtype=float),
            t_star=int(d["t_star"]),
            t=int(d["t"]),
        )

    @classmethod
    def loads(cls, text: str) -> AgentState:
        return cls.from_dict(json.loads(text))


@dataclass
class StepOutcome:
    chosen_action: int
    reward: float
    next_state: int
    type1_attempted: bool = False
    type1_succeeded: bool = False
    reached_m2: bool = False
    attempted_update: bool = False
    type2_triggered: bool = False
    type2_updated_pairs: list = field(default_factory=list)
    learn_flag_transitions: list = field(default_factory=list)
    # (s, a, old, new) for every change to Q this step
    q_changes: list = field(default_factory=list)

    @property
    def successful_timestep(self) -> bool:
        return self.type1_succeeded or self.reached_m2


def new_agent(cfg: AgentConfig, num_states: int, num_actions: int) -> AgentState:
    cfg.validate()
    S, A = num_states, num_actions
    return AgentState(
        cfg=cfg,
        Q=np.full((S, A), cfg.v_max),
        U=np.zeros((S, A)),
        l=np.zeros((S, A), dtype=np.int64),
        b=np.zeros((S, A), dtype=np.int64),
        learn=np.ones((S, A), dtype=bool),
        n_sa=np.zeros((S, A), dtype=np.int64),
        n_sas=np.zeros((S, A, S), dtype=np.int64),
        r_sum=np.zeros((S, A)),
    )


def select_action(st: AgentState, s: int) -> int:
    """Greedy action; ties go to the lowest index."""
    return int(np.argmax(st.Q[s]))


def observe(st: AgentState, s: int, a: int, r: float, s_next: int) -> StepOutcome:
    """Advance ``st`` by one timestep given the experience ``(s, a, r, s_next)``."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"reward {r} outside [0, 1]")
    cfg = st.cfg
    st.t += 1
    t = st.t
    out = StepOutcome(chosen_action=a, reward=r, next_state=s_next)

    st.n_sa[s, a] += 1
    st.n_sas[s, a, s_next] += 1
    st.r_sum[s, a] += r
    n = int(st.n_sa[s, a])

    if st.b[s, a] <= st.t_star and not st.learn[s, a]:
        st.learn[s, a] = True
        out.learn_flag_transitions.append(((s, a), False, True))

    out.reached_m2 = n == cfg.m2
    out.attempted_update = bool(st.learn[s, a]) and out.reached_m2

    if cfg.m1 != INFINITY and st.learn[s, a]:
        if st.l[s, a] == 0:
            st.b[s, a] = t
        st.l[s, a] += 1
        st.U[s, a] += r + cfg.gamma * st.Q[s_next].max()
        if st.l[s, a] == cfg.m1:
            out.type1_attempted = True
            out.attempted_update = True
            q_old = st.Q[s, a]
            target = st.U[s, a] / cfg.m1
            if q_old - target >= 2 * cfg.epsilon1:
                st.Q[s, a] = target + cfg.epsilon1
                st.t_star = t
                out.type1_succeeded = True
                out.q_changes.append((s, a, float(q_old), float(st.Q[s, a])))
            elif st.b[s, a] > st.t_star:
                st.learn[s, a] = False
                out.learn_flag_transitions.append(((s, a), True, False))
            st.U[s, a] = 0.0
            st.l[s, a] = 0

    # with m2 = INFINITY no pair can ever be planned on, so the sweep is skipped
    if cfg.m2 != INFINITY and (out.reached_m2 or t == st.t_star):
        st.t_star = t
        out.type2_triggered = True
        _plan(st, out)
    return out


def _plan(st: AgentState, out: StepOutcome) -> None:
    """Value iteration on the empirical model of pairs visited at least m2 times."""
    cfg = st.cfg
    mask = st.n_sa >= cfg.m2
    q_vl = st.Q.copy()
    if mask.any():
        n = np.where(mask, st.n_sa, 1).astype(float)
        r_hat = st.r_sum / n
        t_hat = st.n_sas / n[:, :, None]
        for _ in range(cfg.vi_sweeps):
            backup = r_hat + cfg.gamma * (t_hat @ q_vl.max(axis=1))
            q_vl = np.where(mask, backup, q_vl)
    accept = mask & (q_vl <= st.Q)
    for s, a in zip(*np.nonzero(accept)):
        old = float(st.Q[s, a])
        new = float(q_vl[s, a])
        st.Q[s, a] = new
        out.type2_updated_pairs.append((int(s), int(a)))
        if new != old:
            out.q_changes.append((int(s), int(a), old, new))
