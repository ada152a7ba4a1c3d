"""Value learners pluggable into the planning loop.

``QLearner`` is the replay-based learner: uniform batches, a target network,
and one training step per ``train_frequency`` observed transitions, counting
real and simulated frames alike. The value function is linear in the state
features, with an optional single tanh hidden layer.

``SarsaAgent`` is the linear on-policy learner; it has no replay and updates
once per observed transition with the one-step Sarsa rule (no traces).

Both learners see clipped rewards; evaluation elsewhere uses raw rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobio import load_blob, save_blob
from .envs import Observation
from .transitions import Transition


@dataclass(frozen=True)
class EpsilonSchedule:
    """Piecewise-linear exploration schedule over combined (real+simulated) frames."""

    total_frames: int
    eps_start: float = 1.0
    eps_end: float = 0.01
    anneal_fraction: float = 0.10

    def __post_init__(self):
        if self.total_frames < 1:
            raise ValueError("total_frames must be positive")
        if not 0.0 < self.anneal_fraction <= 1.0:
            raise ValueError("anneal_fraction must be in (0, 1]")
        if self.eps_end > self.eps_start:
            raise ValueError("schedule must be non-increasing")

    def value(self, frame: int) -> float:
        anneal_frames = self.anneal_fraction * self.total_frames
        if frame >= anneal_frames:
            return self.eps_end
        frac = frame / anneal_frames
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def epsilon_at(schedule: EpsilonSchedule, frame: int) -> float:
    return schedule.value(frame)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self._s = np.empty(capacity, dtype=np.int32)
        self._a = np.empty(capacity, dtype=np.int32)
        self._r = np.empty(capacity, dtype=np.float64)
        self._s2 = np.empty(capacity, dtype=np.int32)
        self._term = np.empty(capacity, dtype=bool)
        self._sim = np.empty(capacity, dtype=bool)
        self._size = 0
        self._pos = 0

    def __len__(self):
        return self._size

    def insert(self, t: Transition) -> None:
        i = self._pos
        self._s[i] = t.obs.state_id
        self._a[i] = t.action
        self._r[i] = t.reward
        self._s2[i] = t.next_obs.state_id
        self._term[i] = t.terminal
        self._sim[i] = t.simulated
        self._pos = (i + 1) % self.capacity
        if self._size < self.capacity:
            self._size += 1

    def sample(self, rng, batch_size: int):
        """Uniform sample with replacement: (s, a, r, s2, terminal) arrays."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return (self._s[idx], self._a[idx], self._r[idx],
                self._s2[idx], self._term[idx])

    def contents(self):
        """Arrays of the current contents in storage order (for inspection)."""
        n = self._size
        return (self._s[:n], self._a[:n], self._r[:n],
                self._s2[:n], self._term[:n], self._sim[:n])

    @property
    def simulated_count(self) -> int:
        return int(self._sim[:self._size].sum())


def select_action(agent, obs: Observation, eps: float, rng) -> int:
    """Epsilon-greedy action with uniform random tie-breaking.

    Consumes exactly one uniform draw per call, plus one when exploring and
    one when the greedy argmax is tied.
    """
    n = agent.n_actions
    if rng.random() < eps:
        return int(rng.integers(n))
    q = agent.q_values(obs.state_id)
    best = q.max()
    ties = np.flatnonzero(q == best)
    if len(ties) == 1:
        return int(ties[0])
    return int(ties[rng.integers(len(ties))])


@dataclass(frozen=True)
class QLearnerConfig:
    train_frequency: int = 4
    batch_size: int = 32
    step_size: float = 0.01
    discount: float = 0.99
    target_sync_period: int = 500
    hidden_width: int = 0  # 0 = linear value function

    def __post_init__(self):
        if self.train_frequency < 1 or self.batch_size < 1 or self.target_sync_period < 1:
            raise ValueError("train_frequency, batch_size, target_sync_period must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")


class QLearner:
    """Replay-based Q-learner over a fixed feature table.

    States are indexed by id into ``feature_table`` (by default the
    environment's); observations with equal state ids are interchangeable, so
    batches gather feature rows by id. ``frames`` counts every observed
    transition, real, simulated, or phantom, and drives both the training
    trigger and the epsilon schedule.
    """

    kind = "q_learner"

    def __init__(self, feature_table: np.ndarray, n_actions: int,
                 config: QLearnerConfig, replay_capacity: int,
                 schedule: EpsilonSchedule, train_rng, init_rng=None):
        self.features = feature_table
        self.n_actions = n_actions
        self.config = config
        self.schedule = schedule
        self.replay = ReplayBuffer(replay_capacity)
        self._train_rng = train_rng
        self.frames = 0
        self.train_steps = 0
        d = feature_table.shape[1]
        h = config.hidden_width
        if h > 0:
            if init_rng is None:
                raise ValueError("hidden-layer learner needs an init rng")
            scale = 1.0 / np.sqrt(d)
            self.W1 = init_rng.normal(0.0, scale, size=(h, d))
            self.b1 = np.zeros(h)
            self.W2 = init_rng.normal(0.0, 1.0 / np.sqrt(h), size=(n_actions, h))
            self.b2 = np.zeros(n_actions)
        else:
            self.W = np.zeros((n_actions, d))
            self.b = np.zeros(n_actions)
        self._sync_target()

    def _sync_target(self):
        if self.config.hidden_width > 0:
            self._tW1, self._tb1 = self.W1.copy(), self.b1.copy()
            self._tW2, self._tb2 = self.W2.copy(), self.b2.copy()
        else:
            self._tW, self._tb = self.W.copy(), self.b.copy()

    # -- value queries --------------------------------------------------------

    def q_values(self, state_id: int) -> np.ndarray:
        phi = self.features[state_id]
        if self.config.hidden_width > 0:
            hid = np.tanh(self.W1 @ phi + self.b1)
            return self.W2 @ hid + self.b2
        return self.W @ phi + self.b

    def _q_batch(self, ids, target: bool):
        phi = self.features[ids]
        if self.config.hidden_width > 0:
            W1, b1 = (self._tW1, self._tb1) if target else (self.W1, self.b1)
            W2, b2 = (self._tW2, self._tb2) if target else (self.W2, self.b2)
            hid = np.tanh(phi @ W1.T + b1)
            return (hid @ W2.T + b2), phi, hid
        W, b = (self._tW, self._tb) if target else (self.W, self.b)
        return (phi @ W.T + b), phi, None

    @property
    def current_epsilon(self) -> float:
        return self.schedule.value(self.frames)

    def policy(self, eps: float | None = None):
        """Epsilon-greedy policy closure; eps defaults to the live schedule value."""
        def act(obs, rng):
            e = self.current_epsilon if eps is None else eps
            return select_action(self, obs, e, rng)
        return act

    # -- learning -------------------------------------------------------------

    def observe(self, t: Transition) -> None:
        """Insert into replay and advance the frame counter (may train)."""
        self.replay.insert(t)
        self._tick()

    def advance_phantom_frames(self, n: int) -> None:
        """Count n frames without inserting transitions (extra-updates baseline)."""
        for _ in range(n):
            self._tick()

    def _tick(self):
        self.frames += 1
        if self.frames % self.config.train_frequency == 0 and len(self.replay) > 0:
            self.train_step(self._train_rng)

    def train_step(self, rng=None) -> float:
        """One uniform-batch semi-gradient update; returns the mean squared TD error."""
        if rng is None:
            rng = self._train_rng
        if len(self.replay) == 0:
            raise ValueError("train_step on an empty replay buffer")
        cfg = self.config
        s, a, r, s2, term = self.replay.sample(rng, cfg.batch_size)
        r = np.clip(r, -1.0, 1.0)
        q2, _, _ = self._q_batch(s2, target=True)
        y = r + cfg.discount * q2.max(axis=1) * (~term)
        q, phi, hid = self._q_batch(s, target=False)
        rows = np.arange(len(a))
        delta = y - q[rows, a]
        coef = (cfg.step_size / cfg.batch_size) * delta
        if cfg.hidden_width > 0:
            # dq/dW2 rows pick the taken action; backprop through tanh.
            gW2 = np.zeros_like(self.W2)
            onehot = np.zeros((len(a), self.n_actions))
            onehot[rows, a] = coef
            gW2 += onehot.T @ hid
            gb2 = onehot.sum(axis=0)
            ghid = onehot @ self.W2 * (1.0 - hid * hid)
            self.W2 += gW2
            self.b2 += gb2
            self.W1 += ghid.T @ phi
            self.b1 += ghid.sum(axis=0)
        else:
            onehot = np.zeros((len(a), self.n_actions))
            onehot[rows, a] = coef
            self.W += onehot.T @ phi
            self.b += onehot.sum(axis=0)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_period == 0:
            self._sync_target()
        return float(np.mean(delta * delta))

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra=None) -> None:
        if self.config.hidden_width > 0:
            arrays = {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}
        else:
            arrays = {"W": self.W, "b": self.b}
        sidecar = {"kind": "q_learner", "n_actions": self.n_actions,
                   "dim": self.features.shape[1],
                   "hidden_width": self.config.hidden_width,
                   "frames": self.frames, "train_steps": self.train_steps}
        if extra:
            sidecar.update(extra)
        save_blob(path, arrays, sidecar)

    def load_weights(self, path) -> None:
        arrays, meta = load_blob(path)
        if meta.get("kind") != "q_learner":
            raise ValueError(f"{path} is not a q_learner checkpoint")
        if meta["hidden_width"] != self.config.hidden_width:
            raise ValueError("checkpoint hidden width mismatch")
        if self.config.hidden_width > 0:
            self.W1, self.b1 = arrays["W1"], arrays["b1"]
            self.W2, self.b2 = arrays["W2"], arrays["b2"]
        else:
            self.W, self.b = arrays["W"], arrays["b"]
        self._sync_target()


@dataclass(frozen=True)
class SarsaConfig:
    step_size: float = 0.1
    discount: float = 0.99
    lam: float = 0.0  # traces intentionally disabled

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.lam != 0.0:
            raise ValueError("only lambda = 0 is supported")


class SarsaAgent:
    """Linear Sarsa(0) learner: one on-policy update per observed transition."""

    kind = "sarsa"

    def __init__(self, feature_table: np.ndarray, n_actions: int,
                 config: SarsaConfig, schedule: EpsilonSchedule):
        self.features = feature_table
        self.n_actions = n_actions
        self.config = config
        self.schedule = schedule
        self.w = np.zeros((n_actions, feature_table.shape[1]))
        self.frames = 0
        self.train_steps = 0

    def q_values(self, state_id: int) -> np.ndarray:
        return self.w @ self.features[state_id]

    @property
    def current_epsilon(self) -> float:
        return self.schedule.value(self.frames)

    def policy(self, eps: float | None = None):
        def act(obs, rng):
            e = self.current_epsilon if eps is None else eps
            return select_action(self, obs, e, rng)
        return act

    def q_value(self, state_id: int, action: int) -> float:
        return float(self.w[action] @ self.features[state_id])

    def sarsa_update(self, s: int, a: int, r: float, s2: int,
                     a2: int | None, terminal: bool) -> float:
        """w <- w + alpha * delta * phi(s, a); returns the TD error delta."""
        r = max(-1.0, min(1.0, r))
        boot = 0.0 if terminal else self.config.discount * self.q_value(s2, a2)
        delta = r + boot - self.q_value(s, a)
        self.w[a] += self.config.step_size * delta * self.features[s]
        self.train_steps += 1
        return delta

    def observe(self, t: Transition, next_action: int | None, rng=None) -> None:
        """Count the frame and apply the Sarsa update.

        ``next_action`` is the action the behavior (or rollout) policy takes
        at t.next_obs; when the caller has none queued for a non-terminal
        transition, one is drawn epsilon-greedily here.
        """
        self.frames += 1
        a2 = next_action
        if a2 is None and not t.terminal:
            if rng is None:
                raise ValueError("need an rng to draw the successor action")
            a2 = select_action(self, t.next_obs, self.current_epsilon, rng)
        self.sarsa_update(t.obs.state_id, t.action, t.reward,
                          t.next_obs.state_id, a2, t.terminal)
