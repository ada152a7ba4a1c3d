"""Desk-scale gridworld environments with sticky actions and exact snapshots.

Layouts are plain-text grids:

    ``#`` wall, ``.`` floor, ``S`` start, ``G`` goal, ``K`` key,
    ``D`` door (wall until the key is held), ``C`` cliff (-1, terminal)

Entering ``G`` pays +1 and ends the episode; entering ``C`` pays -1 and ends
it. All other steps pay 0. Episodes also end when the per-environment step
cap is hit.

Dynamics are deterministic given the seed: the only stochasticity is the
sticky-action rule (with probability ``p_sticky`` the previously *executed*
action is applied instead of the chosen one), driven by an internal PCG64
generator whose state is part of every snapshot. Restoring a snapshot and
replaying the same actions therefore reproduces the trajectory bit for bit,
which is what lets a perfect planning model be built on top of a copy of the
environment.

A state is (cell, has_key); ``has_key`` exists only in layouts containing a
key. Features are the one-hot state encoding with (x, y, has_key) scalars
appended, so ``d = state_count + 3``; the feature map is a pure function of
``state_id``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

N_ACTIONS = 4  # 0=up, 1=down, 2=left, 3=right
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

WALL, FLOOR, START, GOAL, KEY, DOOR, CLIFF = "#.SGKDC"
_LEGAL_CHARS = set("#.SGKDC")


class Observation:
    """Immutable (state_id, features) pair.

    Instances are cached per environment, one per state, so identity
    comparison is a valid equality test within a single environment.
    """

    __slots__ = ("state_id", "features")

    def __init__(self, state_id: int, features: np.ndarray):
        self.state_id = state_id
        self.features = features

    def __repr__(self):
        return f"Observation(state_id={self.state_id})"


@dataclass(slots=True)
class StepResult:
    observation: Observation
    reward: float
    terminal: bool


@dataclass(frozen=True, slots=True)
class EnvSnapshot:
    """Complete internal environment state, including sticky register and RNG."""

    env_id: str
    state: int
    steps: int
    prev_action: int  # -1 when the sticky register is clear
    terminal: bool
    rng_state: tuple  # (pcg64 state, inc, has_uint32, uinteger)

    def to_bytes(self) -> bytes:
        payload = [self.env_id, self.state, self.steps, self.prev_action,
                   self.terminal, list(self.rng_state)]
        return json.dumps(payload, separators=(",", ":")).encode("ascii")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EnvSnapshot":
        env_id, state, steps, prev_action, terminal, rng_state = json.loads(raw)
        return cls(env_id, state, steps, prev_action, terminal, tuple(rng_state))


def parse_grid(text: str):
    """Parse a layout string into a list of rows, validating the charset."""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty grid")
    width = max(len(r) for r in rows)
    grid = [list(r.ljust(width, WALL)) for r in rows]
    chars = [c for row in grid for c in row]
    bad = set(chars) - _LEGAL_CHARS
    if bad:
        raise ValueError(f"illegal grid characters: {sorted(bad)}")
    if chars.count(START) != 1:
        raise ValueError("grid must contain exactly one start cell 'S'")
    if DOOR in chars and KEY not in chars:
        raise ValueError("grid has a door but no key")
    return grid


class GridEnv:
    """Episodic gridworld with sticky actions and clonable internal state.

    All transition structure is precomputed into (state, action) lookup
    tables at construction, so ``step`` and the pure ``apply_action`` helper
    are cheap enough to sit inside planning loops.
    """

    def __init__(self, layout: str, name: str, step_cap: int,
                 p_sticky: float = 0.25, frame_skip: int = 1):
        if not 0.0 <= p_sticky <= 1.0:
            raise ValueError(f"p_sticky must be in [0, 1], got {p_sticky}")
        if frame_skip < 1:
            raise ValueError(f"frame_skip must be >= 1, got {frame_skip}")
        self.name = name
        self.layout = layout
        self.step_cap = step_cap
        self.p_sticky = p_sticky
        self.frame_skip = frame_skip
        self.n_actions = N_ACTIONS

        grid = parse_grid(layout)
        self._grid = grid
        self.height = len(grid)
        self.width = len(grid[0])
        digest = hashlib.sha256(
            ("\n".join("".join(r) for r in grid)).encode()).hexdigest()[:12]
        self.env_id = f"{name}:{digest}"

        cells = [(x, y) for y in range(self.height) for x in range(self.width)
                 if grid[y][x] != WALL]
        self._cells = cells
        self._cell_index = {c: i for i, c in enumerate(cells)}
        self._has_key_dim = any(grid[y][x] == KEY for x, y in cells)
        self.n_cells = len(cells)
        self.state_count = self.n_cells * (2 if self._has_key_dim else 1)
        self.feature_dim = self.state_count + 3

        sx, sy = next((x, y) for x, y in cells if grid[y][x] == START)
        self._start_state = self._encode(self._cell_index[(sx, sy)], 0)

        self._build_tables()
        self._build_features()

        self._rng = np.random.default_rng(0)
        self._state = self._start_state
        self._steps = 0
        self._prev_action = -1
        self._terminal = False
        # Lifetime sticky diagnostics; deliberately not cleared by reset().
        self.sticky_applied = 0
        self.sticky_eligible = 0

    # -- state encoding -----------------------------------------------------

    def _encode(self, cell_idx: int, has_key: int) -> int:
        return cell_idx + self.n_cells * has_key if self._has_key_dim else cell_idx

    def decode(self, state_id: int):
        """Return (x, y, has_key) for a state id."""
        if self._has_key_dim:
            has_key, cell_idx = divmod(state_id, self.n_cells)
        else:
            has_key, cell_idx = 0, state_id
        x, y = self._cells[cell_idx]
        return x, y, has_key

    def _build_tables(self):
        s_count, grid = self.state_count, self._grid
        nxt = np.empty((s_count, N_ACTIONS), dtype=np.int32)
        rew = np.zeros((s_count, N_ACTIONS), dtype=np.float64)
        term = np.zeros((s_count, N_ACTIONS), dtype=bool)
        arrival_terminal = np.zeros(s_count, dtype=bool)

        for sid in range(s_count):
            x, y, k = self.decode(sid)
            here = grid[y][x]
            if here in (GOAL, CLIFF):
                arrival_terminal[sid] = True
            for a, (dx, dy) in enumerate(_MOVES):
                tx, ty = x + dx, y + dy
                target = grid[ty][tx] if 0 <= tx < self.width and 0 <= ty < self.height else WALL
                if target == WALL or (target == DOOR and not k):
                    tx, ty = x, y
                    target = here
                nk = 1 if (target == KEY or k) and self._has_key_dim else 0
                nid = self._encode(self._cell_index[(tx, ty)], nk)
                moved = (tx, ty) != (x, y)
                if target == GOAL and moved:
                    rew[sid, a], term[sid, a] = 1.0, True
                elif target == CLIFF and moved:
                    rew[sid, a], term[sid, a] = -1.0, True
                if arrival_terminal[sid]:
                    # Terminal states are absorbing; stepping from them is
                    # illegal anyway, the self-loop is defensive.
                    nid, moved = sid, False
                    rew[sid, a], term[sid, a] = 0.0, True
                nxt[sid, a] = nid
        self._next = nxt
        self._reward = rew
        self._term = term
        self._arrival_terminal = arrival_terminal

    def _build_features(self):
        table = np.zeros((self.state_count, self.feature_dim), dtype=np.float64)
        for sid in range(self.state_count):
            x, y, k = self.decode(sid)
            table[sid, sid] = 1.0
            table[sid, self.state_count] = x / max(self.width - 1, 1)
            table[sid, self.state_count + 1] = y / max(self.height - 1, 1)
            table[sid, self.state_count + 2] = float(k)
        table.setflags(write=False)
        self.feature_table = table
        self._obs_cache = [Observation(s, table[s]) for s in range(self.state_count)]

    # -- public API ----------------------------------------------------------

    def observation(self, state_id: int) -> Observation:
        return self._obs_cache[state_id]

    def reset(self, seed: int | None = None) -> Observation:
        """Start a new episode; reseeds the internal RNG when seed is given."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = self._start_state
        self._steps = 0
        self._prev_action = -1
        self._terminal = False
        return self._obs_cache[self._state]

    def step(self, action: int) -> StepResult:
        if self._terminal:
            raise RuntimeError(f"step() called on terminal episode of {self.env_id}")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} outside minimal action set of size {N_ACTIONS}")
        executed = action
        if self._prev_action >= 0:
            self.sticky_eligible += 1
            if self._rng.random() < self.p_sticky:
                executed = self._prev_action
                self.sticky_applied += 1
        self._prev_action = executed

        reward = 0.0
        terminal = False
        sid = self._state
        for _ in range(self.frame_skip):
            reward += self._reward[sid, executed]
            terminal = bool(self._term[sid, executed])
            sid = int(self._next[sid, executed])
            if terminal:
                break
        self._state = sid
        self._steps += 1
        if self._steps >= self.step_cap:
            terminal = True
        self._terminal = terminal
        return StepResult(self._obs_cache[sid], float(reward), terminal)

    def snapshot(self) -> EnvSnapshot:
        st = self._rng.bit_generator.state
        return EnvSnapshot(
            env_id=self.env_id,
            state=self._state,
            steps=self._steps,
            prev_action=self._prev_action,
            terminal=self._terminal,
            rng_state=(st["state"]["state"], st["state"]["inc"],
                       st["has_uint32"], st["uinteger"]),
        )

    def restore(self, snap: EnvSnapshot) -> None:
        if snap.env_id != self.env_id:
            raise ValueError(
                f"snapshot from {snap.env_id!r} cannot restore {self.env_id!r}")
        s0, s1, s2, s3 = snap.rng_state
        self._rng.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": s0, "inc": s1},
            "has_uint32": s2,
            "uinteger": s3,
        }
        self._state = snap.state
        self._steps = snap.steps
        self._prev_action = snap.prev_action
        self._terminal = snap.terminal

    # -- pure transition structure (used by models and tests) ----------------

    def apply_action(self, state_id: int, action: int):
        """Deterministic one-step dynamics, ignoring stickiness and the cap.

        Returns (next_state_id, reward, terminal).
        """
        return (int(self._next[state_id, action]),
                float(self._reward[state_id, action]),
                bool(self._term[state_id, action]))

    def successor_map(self, state_id: int) -> dict:
        """Map of one-step successor state -> (reward, terminal) over actions."""
        out = {}
        for a in range(N_ACTIONS):
            nid, r, t = self.apply_action(state_id, a)
            out.setdefault(nid, (r, t))
        return out

    def is_arrival_terminal(self, state_id: int) -> bool:
        return bool(self._arrival_terminal[state_id])

    def place(self, state_id: int, prev_action: int | None = -1,
              steps: int | None = 0) -> Observation:
        """Teleport to an arbitrary state without touching the RNG.

        ``None`` keeps the current sticky register / step count. Supports
        corrupted-model successor injection and controlled sampling in tests;
        not part of the agent-facing episode protocol.
        """
        self._state = state_id
        if steps is not None:
            self._steps = steps
        if prev_action is not None:
            self._prev_action = prev_action
        self._terminal = (bool(self._arrival_terminal[state_id])
                          or self._steps >= self.step_cap)
        return self._obs_cache[state_id]

    @property
    def current_state(self) -> int:
        return self._state

    @property
    def episode_steps(self) -> int:
        return self._steps

    @property
    def terminal(self) -> bool:
        return self._terminal

    def fork(self) -> "GridEnv":
        """Fresh instance of the same layout (used as a model's private copy)."""
        return GridEnv(self.layout, self.name, self.step_cap,
                       self.p_sticky, self.frame_skip)


# -- built-in layouts ---------------------------------------------------------

# Corridor with the key next to the start and the goal behind a distant door.
# Random walks pick the key up almost every episode but rarely cover the full
# corridor, so the key->door payoff shows up in long rollouts from frontier
# states well before it shows up in real experience.
KEY_CORRIDOR = """
##############################
#S.K.......................DG#
##############################
"""

FOUR_ROOMS = """
#############
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#S....#....G#
##.####.#####
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#.....#.....#
#############
"""

CLIFF_RIVER = """
##############
#............#
#............#
#............#
#SCCCCCCCCCCG#
##############
"""

_BUILTINS = {
    "key_corridor": (KEY_CORRIDOR, 200),
    "four_rooms": (FOUR_ROOMS, 500),
    "cliff_river": (CLIFF_RIVER, 300),
}


def env_names():
    return sorted(_BUILTINS)


def make_env(name: str, p_sticky: float = 0.25, frame_skip: int = 1) -> GridEnv:
    if name not in _BUILTINS:
        raise ValueError(f"unknown environment {name!r}; built-ins: {env_names()}")
    layout, cap = _BUILTINS[name]
    return GridEnv(layout, name, cap, p_sticky, frame_skip)


def load_grid_file(path: str, step_cap: int = 500, p_sticky: float = 0.25,
                   frame_skip: int = 1) -> GridEnv:
    with open(path) as fh:
        text = fh.read()
    name = "grid"
    return GridEnv(text, name, step_cap, p_sticky, frame_skip)
