"""Small discrete environments: Key-Door-Treasure, a sparse chain, sticky actions.

Observations are integer state ids. ``step`` returns an :class:`EnvStep`; its
``info`` dict carries the within-episode step counter and a ``truncated``
flag set when the step limit, not a terminal event, ended the episode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

KEY_REWARD = 1.0
DOOR_REWARD = 1.0
TREASURE_REWARD = 5.0

# 7 rows x 9 columns; the wall row holds the only door. The start sits next
# to the door, so the key detour is the part random play rarely completes.
DEFAULT_MAP = """\
K........
.........
.........
.........
........A
########D
T........
"""


class UsageError(RuntimeError):
    """Calling an environment out of protocol (e.g. stepping a finished episode)."""


@dataclass
class EnvStep:
    next_observation: int
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GridLayout:
    height: int
    width: int
    walls: frozenset
    start: tuple[int, int]
    key: tuple[int, int]
    door: tuple[int, int]
    treasure: tuple[int, int]


def parse_layout(text: str) -> GridLayout:
    """Read an ASCII map: ``#`` wall, ``K`` key, ``D`` door, ``T`` treasure, ``A`` start, ``.`` floor."""
    rows = [line.rstrip("\n") for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("map rows must all have the same width")
    walls = set()
    marks: dict[str, list[tuple[int, int]]] = {c: [] for c in "AKDT"}
    for i, row in enumerate(rows):
        for j, c in enumerate(row):
            if c == "#":
                walls.add((i, j))
            elif c in marks:
                marks[c].append((i, j))
            elif c != ".":
                raise ValueError(f"unknown map character {c!r} at row {i}, column {j}")
    for c, found in marks.items():
        if len(found) != 1:
            raise ValueError(f"map needs exactly one {c!r}, found {len(found)}")
    return GridLayout(len(rows), width, frozenset(walls), marks["A"][0], marks["K"][0],
                      marks["D"][0], marks["T"][0])


def load_layout(path: str | Path) -> GridLayout:
    return parse_layout(Path(path).read_text())


class KeyDoorTreasureEnv:
    """Grid world where a key opens a door that guards the treasure.

    Rewards: +1 for the first key pickup, +1 for opening the door, +5 for the
    treasure, which ends the episode. Walls, the grid edge and the closed door
    (without key) block movement; a blocked move still costs one step.
    """

    n_actions = 4

    def __init__(self, layout: GridLayout | None = None, step_limit: int = 300, seed: int | None = None):
        self.layout = layout if layout is not None else parse_layout(DEFAULT_MAP)
        if step_limit < 1:
            raise ValueError("step_limit must be positive")
        self.step_limit = step_limit
        self.rng = np.random.default_rng(seed)
        self.n_states = self.layout.height * self.layout.width * 4
        self._done = True
        self.reset(seed)

    def encode(self, pos: tuple[int, int], has_key: bool, door_open: bool) -> int:
        return ((pos[0] * self.layout.width + pos[1]) * 2 + int(has_key)) * 2 + int(door_open)

    def decode(self, state: int) -> tuple[tuple[int, int], bool, bool]:
        rest, door_open = divmod(state, 2)
        cell, has_key = divmod(rest, 2)
        return divmod(cell, self.layout.width), bool(has_key), bool(door_open)

    @property
    def state(self) -> int:
        return self.encode(self.pos, self.has_key, self.door_open)

    def reset(self, seed: int | None = None) -> int:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = self.layout.start
        self.has_key = False
        self.door_open = False
        self.t = 0
        self._done = False
        return self.state

    def transition(self, state: int, action: int) -> tuple[int, float, bool]:
        """Pure dynamics: ``(next_state, reward, terminal)`` ignoring the step limit."""
        lay = self.layout
        (i, j), has_key, door_open = self.decode(state)
        di, dj = MOVES[action]
        ni, nj = i + di, j + dj
        reward = 0.0
        if not (0 <= ni < lay.height and 0 <= nj < lay.width) or (ni, nj) in lay.walls:
            return state, 0.0, False
        if (ni, nj) == lay.door and not door_open:
            if not has_key:
                return state, 0.0, False
            door_open = True
            reward += DOOR_REWARD
        if (ni, nj) == lay.key and not has_key:
            has_key = True
            reward += KEY_REWARD
        terminal = (ni, nj) == lay.treasure
        if terminal:
            reward += TREASURE_REWARD
        return self.encode((ni, nj), has_key, door_open), reward, terminal

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise UsageError("episode is over; call reset() first")
        nxt, reward, terminal = self.transition(self.state, action)
        self.pos, self.has_key, self.door_open = self.decode(nxt)
        self.t += 1
        truncated = not terminal and self.t >= self.step_limit
        self._done = terminal or truncated
        return EnvStep(nxt, reward, self._done, {"step": self.t, "truncated": truncated})

    def reachable_states(self) -> set[int]:
        return set(_bfs(self, self.encode(self.layout.start, False, False)))

    def shortest_path(self) -> list[int]:
        """Action sequence of a shortest route from the start to the treasure."""
        start = self.encode(self.layout.start, False, False)
        parents = _bfs(self, start)
        goal = next((s for s, p in parents.items() if p is not None and p[2]), None)
        if goal is None:
            raise ValueError("treasure is unreachable")
        actions = []
        s = goal
        while parents[s] is not None:
            prev, a, _ = parents[s]
            actions.append(a)
            s = prev
        return actions[::-1]


def _bfs(env, start: int) -> dict[int, tuple | None]:
    """Breadth-first search over the deterministic transition graph.

    Returns ``{state: (parent, action, terminal_on_arrival)}``; terminal
    arrivals are recorded but not expanded.
    """
    parents: dict[int, tuple | None] = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in range(env.n_actions):
            nxt, _, terminal = env.transition(s, a)
            if nxt not in parents:
                parents[nxt] = (s, a, terminal)
                if not terminal:
                    queue.append(nxt)
    return parents


class SparseChain:
    """Corridor of ``length`` cells; only reaching the far end pays 1.

    Action 1 moves right, action 0 sends the agent back to the start, so the
    reward requires ``length`` consecutive right moves.
    """

    n_actions = 2

    def __init__(self, length: int = 20, step_limit: int = 60, seed: int | None = None):
        if length < 1 or step_limit < 1:
            raise ValueError("length and step_limit must be positive")
        self.length = length
        self.step_limit = step_limit
        self.n_states = length + 1
        self.rng = np.random.default_rng(seed)
        self._done = True
        self.reset(seed)

    def reset(self, seed: int | None = None) -> int:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = 0
        self.t = 0
        self._done = False
        return 0

    @property
    def state(self) -> int:
        return self.pos

    def transition(self, state: int, action: int) -> tuple[int, float, bool]:
        if action == 1:
            nxt = state + 1
            if nxt == self.length:
                return nxt, 1.0, True
            return nxt, 0.0, False
        return 0, 0.0, False

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise UsageError("episode is over; call reset() first")
        nxt, reward, terminal = self.transition(self.pos, action)
        self.pos = nxt
        self.t += 1
        truncated = not terminal and self.t >= self.step_limit
        self._done = terminal or truncated
        return EnvStep(nxt, reward, self._done, {"step": self.t, "truncated": truncated})

    def shortest_path(self) -> list[int]:
        return [1] * self.length


class StickyWrapper:
    """Repeats the previously executed action with probability ``p``.

    The first step of every episode executes the requested action. The
    repeat decision is drawn before the inner dynamics run.
    """

    def __init__(self, env, p: float = 0.25, seed: int | None = None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"repeat probability must lie in [0, 1], got {p}")
        self.env = env
        self.p = p
        self.rng = np.random.default_rng(seed)
        self.last_action: int | None = None

    @property
    def n_states(self) -> int:
        return self.env.n_states

    @property
    def n_actions(self) -> int:
        return self.env.n_actions

    def reset(self, seed: int | None = None) -> int:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.last_action = None
        return self.env.reset(seed)

    def step(self, action: int) -> EnvStep:
        repeated = False
        if self.last_action is not None and self.p > 0.0 and self.rng.random() < self.p:
            action = self.last_action
            repeated = True
        out = self.env.step(action)
        self.last_action = action
        out.info["repeated"] = repeated
        out.info["executed_action"] = action
        return out

    def shortest_path(self) -> list[int]:
        return self.env.shortest_path()


def make_env(name: str, sticky: float = 0.0, seed: int | None = None, step_limit: int | None = None,
             map_path: str | None = None, chain_length: int = 20):
    name = name.lower()
    if name in ("kdt", "keydoortreasure", "key-door-treasure"):
        layout = load_layout(map_path) if map_path else None
        env = KeyDoorTreasureEnv(layout, step_limit=step_limit or 300, seed=seed)
    elif name in ("chain", "sparsechain", "sparse-chain"):
        env = SparseChain(chain_length, step_limit=step_limit or 60, seed=seed)
    else:
        raise ValueError(f"unknown environment {name!r}")
    if sticky > 0.0:
        env = StickyWrapper(env, sticky, seed=seed)
    return env
