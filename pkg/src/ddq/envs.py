"""Grid worlds with permeable cell boundaries, and sampling from a compiled MDP.

Cells are numbered row-major from 1, so the default 3x3 layout reads

    1 2 3
    4 5 6
    7 8 9

with the start at 1 and the goal at 9. Actions are ``d, l, u, r`` (indices
0-3). Moving through a boundary succeeds with that boundary's permeability and
otherwise leaves the agent where it was. Any action taken at the terminal cell
pays the terminal reward and resets to the start cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp

DIRECTIONS = ("d", "l", "u", "r")
_OFFSETS = {"d": (1, 0), "l": (0, -1), "u": (-1, 0), "r": (0, 1)}
_OPPOSITE = {"d": "u", "u": "d", "l": "r", "r": "l"}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Wall:
    cell: int
    dir: str
    p: float


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    start: int
    terminal: int
    rewards: tuple[float, ...]
    gamma: float
    default_permeability: float = 0.9
    walls: tuple[Wall, ...] = field(default_factory=tuple)

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def neighbor(self, cell: int, direction: str) -> int | None:
        row, col = divmod(cell - 1, self.width)
        dr, dc = _OFFSETS[direction]
        row, col = row + dr, col + dc
        if 0 <= row < self.height and 0 <= col < self.width:
            return row * self.width + col + 1
        return None

    def permeability(self) -> dict[tuple[int, str], float]:
        """Directed edge permeabilities; listed walls apply in both directions."""
        perm = {}
        for cell in range(1, self.num_cells + 1):
            for d in DIRECTIONS:
                perm[cell, d] = 0.0 if self.neighbor(cell, d) is None else self.default_permeability
        for w in self.walls:
            perm[w.cell, w.dir] = w.p
            perm[self.neighbor(w.cell, w.dir), _OPPOSITE[w.dir]] = w.p
        return perm

    def problems(self) -> list[str]:
        out = []
        if self.width < 1 or self.height < 1:
            out.append("width and height must be positive")
            return out
        n = self.num_cells
        for name in ("start", "terminal"):
            c = getattr(self, name)
            if not 1 <= c <= n:
                out.append(f"{name} cell {c} outside 1..{n}")
        if self.start == self.terminal:
            out.append(f"start and terminal are both cell {self.start}")
        if len(self.rewards) != n:
            out.append(f"rewards has {len(self.rewards)} entries, expected {n}")
        for i, r in enumerate(self.rewards, start=1):
            if not 0 <= r <= 1:
                out.append(f"reward {r} of cell {i} outside [0, 1]")
        if not 0 <= self.gamma < 1:
            out.append(f"gamma {self.gamma} outside [0, 1)")
        if not 0 <= self.default_permeability <= 1:
            out.append(f"default_permeability {self.default_permeability} outside [0, 1]")
        for w in self.walls:
            edge = f"edge (cell {w.cell}, dir {w.dir!r})"
            if w.dir not in _OFFSETS:
                out.append(f"{edge}: unknown direction")
            elif not 1 <= w.cell <= n:
                out.append(f"{edge}: cell outside 1..{n}")
            elif self.neighbor(w.cell, w.dir) is None:
                out.append(f"{edge}: outer border cannot be listed")
            if not 0 <= w.p <= 1:
                out.append(f"{edge}: permeability {w.p} outside [0, 1]")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise SpecError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "start": self.start,
            "terminal": self.terminal,
            "gamma": self.gamma,
            "rewards": list(self.rewards),
            "default_permeability": self.default_permeability,
            "walls": [{"cell": w.cell, "dir": w.dir, "p": w.p} for w in self.walls],
        }


_SPEC_FIELDS = {"width", "height", "start", "terminal", "gamma", "rewards", "default_permeability", "walls"}
_REQUIRED = _SPEC_FIELDS - {"default_permeability", "walls"}


def default_gridworld() -> GridWorldSpec:
    """The 3x3 benchmark grid.

    Two low-permeability (0.1) walls sit on the direct route out of the
    centre: 5|6 and 5|8. The fast paths to 9 run along the outer edge
    (1-2-3-6-9 or 1-4-7-8-9); cutting through the centre is slow.
    """
    return GridWorldSpec(
        width=3,
        height=3,
        start=1,
        terminal=9,
        rewards=(0.0,) * 8 + (1.0,),
        gamma=0.8,
        default_permeability=0.9,
        walls=(Wall(5, "r", 0.1), Wall(5, "d", 0.1)),
    )


def load_gridworld_spec(text: str) -> GridWorldSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise SpecError("grid spec must be a JSON object")
    unknown = set(data) - _SPEC_FIELDS
    if unknown:
        raise SpecError(f"unknown fields: {sorted(unknown)}")
    missing = _REQUIRED - set(data)
    if missing:
        raise SpecError(f"missing fields: {sorted(missing)}")
    walls = []
    for i, w in enumerate(data.get("walls", [])):
        extra = set(w) - {"cell", "dir", "p"}
        if extra or not {"cell", "dir", "p"} <= set(w):
            raise SpecError(f"walls[{i}]: expected exactly the fields cell, dir, p")
        walls.append(Wall(int(w["cell"]), str(w["dir"]), float(w["p"])))
    try:
        spec = GridWorldSpec(
            width=int(data["width"]),
            height=int(data["height"]),
            start=int(data["start"]),
            terminal=int(data["terminal"]),
            rewards=tuple(float(r) for r in data["rewards"]),
            gamma=float(data["gamma"]),
            default_permeability=float(data.get("default_permeability", 0.9)),
            walls=tuple(walls),
        )
    except (TypeError, ValueError) as e:
        raise SpecError(f"bad field value: {e}") from e
    spec.validate()
    return spec


def dump_gridworld_spec(spec: GridWorldSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)


def compile_gridworld(spec: GridWorldSpec) -> Mdp:
    spec.validate()
    n = spec.num_cells
    A = len(DIRECTIONS)
    t = np.zeros((n, A, n))
    r = np.zeros((n, A))
    perm = spec.permeability()
    for cell in range(1, n + 1):
        s = cell - 1
        if cell == spec.terminal:
            t[s, :, spec.start - 1] = 1.0
            r[s, :] = spec.rewards[s]
            continue
        for a, d in enumerate(DIRECTIONS):
            p = perm[cell, d]
            r[s, a] = spec.rewards[s]
            t[s, a, s] += 1.0 - p
            if p > 0:
                t[s, a, spec.neighbor(cell, d) - 1] += p
    return Mdp(n, A, t, r, spec.gamma)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class Sampler:
    """Draws ``(reward, next_state)`` from a fixed MDP; cumulative rows are cached."""

    def __init__(self, m: Mdp):
        self.mdp = m
        self._cdf = np.cumsum(m.transitions, axis=2)
        self._last = m.num_states - 1
        self._rewards = m.rewards.tolist()

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
        u = rng.random()
        s_next = int(np.searchsorted(self._cdf[s, a], u, side="right"))
        if s_next > self._last:
            # u landed in the rounding gap above the last cumulative value
            s_next = int(np.flatnonzero(self.mdp.transitions[s, a])[-1])
        return self._rewards[s][a], s_next


def env_step(m: Mdp, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
    """Sample one transition by inverse CDF over ascending state index."""
    return Sampler(m).step(s, a, rng)
