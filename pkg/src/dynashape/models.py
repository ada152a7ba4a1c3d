"""Planning models behind one prediction interface.

Three families:

* ``PerfectModel`` runs a private copy of the environment, restored from the
  snapshot attached to each rollout start state. Rollouts through it are bit
  identical to stepping a restored environment directly.
* ``TabularModel`` keeps empirical (s, a) -> s' counts with per-successor
  mean clipped rewards and majority terminal flags, learned from real
  transitions only.
* ``ForwardModel`` is a per-action linear predictor of the next feature
  vector plus linear reward and logistic terminal heads, trained with a
  multi-horizon curriculum on the open-loop k-step squared loss.

``CorruptedModel`` wraps the perfect model and, with probability ``eta`` per
prediction, swaps the successor for a uniformly random wrong neighbor, giving
an error source with a known per-step rate.

Every model clips predicted rewards to [-1, 1] at its boundary.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .blobio import load_blob, save_blob
from .envs import GridEnv, Observation
from .transitions import Transition, clip_reward


@dataclass(slots=True)
class ModelPrediction:
    next_observation: Observation
    reward: float  # clipped to [-1, 1]
    terminal: bool


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# Perfect model
# ---------------------------------------------------------------------------

class PerfectModel:
    """Environment-backed ideal simulator.

    Operates entirely on a private copy: planning never touches the caller's
    environment. The snapshot passed to ``begin_rollout`` carries the sticky
    register and RNG state, so predictions replay exactly what the real
    environment would have done from that point.
    """

    needs_snapshot = True

    def __init__(self, env: GridEnv):
        self._env = env.fork()

    def begin_rollout(self, start: Observation, snapshot, rng) -> None:
        if snapshot is None:
            raise ValueError("perfect model requires a start snapshot")
        self._env.restore(snapshot)
        if self._env.current_state != start.state_id:
            raise ValueError("start observation does not match its snapshot")

    def predict(self, obs: Observation, action: int, rng) -> ModelPrediction:
        res = self._env.step(action)
        return ModelPrediction(res.observation, clip_reward(res.reward), res.terminal)

    @property
    def env(self) -> GridEnv:
        return self._env


# ---------------------------------------------------------------------------
# Tabular empirical model
# ---------------------------------------------------------------------------

class TabularModel:
    """Empirical counts model over (state, action) pairs.

    Unvisited queries return a flagged self-loop (reward 0, non-terminal) and
    bump ``unmodeled_queries`` instead of failing, so planning can run from
    frontier states.
    """

    needs_snapshot = False

    def __init__(self, env: GridEnv):
        self._env = env
        self.counts = defaultdict(lambda: defaultdict(int))       # (s,a) -> {s': n}
        self.reward_sums = defaultdict(float)                     # (s,a,s') -> sum clip(r)
        self.terminal_counts = defaultdict(int)                   # (s,a,s') -> n terminal
        self.unmodeled_queries = 0

    def update(self, t: Transition) -> None:
        """Fold one real transition into the counts."""
        if t.simulated:
            raise ValueError("tabular model learns from real transitions only")
        key = (t.obs.state_id, t.action)
        nid = t.next_obs.state_id
        self.counts[key][nid] += 1
        self.reward_sums[key + (nid,)] += clip_reward(t.reward)
        if t.terminal:
            self.terminal_counts[key + (nid,)] += 1

    def begin_rollout(self, start, snapshot, rng) -> None:
        pass

    def predict(self, obs: Observation, action: int, rng) -> ModelPrediction:
        key = (obs.state_id, action)
        succ = self.counts.get(key)
        if not succ:
            self.unmodeled_queries += 1
            return ModelPrediction(obs, 0.0, False)
        states = list(succ)
        counts = np.array([succ[s] for s in states], dtype=np.float64)
        total = counts.sum()
        if len(states) == 1:
            nid = states[0]
        else:
            nid = states[int(rng.choice(len(states), p=counts / total))]
        n = succ[nid]
        reward = self.reward_sums[key + (nid,)] / n
        terminal = self.terminal_counts.get(key + (nid,), 0) / n > 0.5
        return ModelPrediction(self._env.observation(nid), float(reward), bool(terminal))

    def distribution(self, state_id: int, action: int) -> dict:
        """Empirical successor distribution for (s, a); empty if unvisited."""
        succ = self.counts.get((state_id, action), {})
        total = sum(succ.values())
        return {s: n / total for s, n in succ.items()}

    def to_json(self) -> str:
        payload = {
            "counts": {f"{s},{a}": {str(n): c for n, c in sorted(succ.items())}
                       for (s, a), succ in sorted(self.counts.items())},
            "reward_sums": {f"{s},{a},{n}": v
                            for (s, a, n), v in sorted(self.reward_sums.items())},
            "terminal_counts": {f"{s},{a},{n}": v
                                for (s, a, n), v in sorted(self.terminal_counts.items())},
            "unmodeled_queries": self.unmodeled_queries,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str, env: GridEnv) -> "TabularModel":
        model = cls(env)
        payload = json.loads(text)
        for key, succ in payload["counts"].items():
            s, a = map(int, key.split(","))
            for nid, c in succ.items():
                model.counts[(s, a)][int(nid)] = c
        for key, v in payload["reward_sums"].items():
            s, a, n = map(int, key.split(","))
            model.reward_sums[(s, a, n)] = v
        for key, v in payload["terminal_counts"].items():
            s, a, n = map(int, key.split(","))
            model.terminal_counts[(s, a, n)] = v
        model.unmodeled_queries = payload.get("unmodeled_queries", 0)
        return model


# ---------------------------------------------------------------------------
# Parametric forward model
# ---------------------------------------------------------------------------

@dataclass
class ForwardModelParams:
    """Per-action linear dynamics with reward and terminal heads.

    next features = W[a] @ x + b[a]
    reward        = v[a] . x + c[a]        (clipped at prediction time)
    p(terminal)   = sigmoid(u[a] . x + t[a])
    """

    W: np.ndarray  # (A, d, d)
    b: np.ndarray  # (A, d)
    v: np.ndarray  # (A, d)
    c: np.ndarray  # (A,)
    u: np.ndarray  # (A, d)
    t: np.ndarray  # (A,)

    @classmethod
    def init(cls, n_actions: int, dim: int) -> "ForwardModelParams":
        # Identity dynamics is a stable self-loop prior for untrained models.
        W = np.tile(np.eye(dim), (n_actions, 1, 1))
        return cls(W=W,
                   b=np.zeros((n_actions, dim)),
                   v=np.zeros((n_actions, dim)),
                   c=np.zeros(n_actions),
                   u=np.zeros((n_actions, dim)),
                   t=np.zeros(n_actions))

    @property
    def n_actions(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def size(self) -> int:
        a, d = self.n_actions, self.dim
        return a * (d * d + 3 * d + 2)

    def fields(self):
        return {"W": self.W, "b": self.b, "v": self.v,
                "c": self.c, "u": self.u, "t": self.t}

    def pack(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.fields().values()])

    @classmethod
    def unpack(cls, flat: np.ndarray, n_actions: int, dim: int) -> "ForwardModelParams":
        a, d = n_actions, dim
        sizes = [a * d * d, a * d, a * d, a, a * d, a]
        shapes = [(a, d, d), (a, d), (a, d), (a,), (a, d), (a,)]
        parts = []
        off = 0
        for size, shape in zip(sizes, shapes):
            parts.append(flat[off:off + size].reshape(shape).copy())
            off += size
        if off != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, expected {off}")
        return cls(*parts)

    def copy(self) -> "ForwardModelParams":
        return ForwardModelParams(**{k: v.copy() for k, v in self.fields().items()})

    def check_finite(self) -> None:
        for name, arr in self.fields().items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in parameter {name}")

    def save(self, path, phase_log=None, extra=None) -> None:
        sidecar = {"kind": "forward_model", "n_actions": self.n_actions,
                   "dim": self.dim, "phase_log": phase_log or []}
        if extra:
            sidecar.update(extra)
        save_blob(path, self.fields(), sidecar)

    @classmethod
    def load(cls, path) -> "ForwardModelParams":
        arrays, meta = load_blob(path)
        if meta.get("kind") != "forward_model":
            raise ValueError(f"{path} is not a forward-model checkpoint")
        return cls(**arrays)


@dataclass(frozen=True)
class Phase:
    horizon: int
    updates: int
    learning_rate: float
    batch_size: int


@dataclass(frozen=True)
class Curriculum:
    """Training schedule: one multi-step phase after another, horizons non-decreasing."""

    phases: tuple

    def __post_init__(self):
        if not self.phases:
            raise ValueError("curriculum needs at least one phase")
        horizons = [p.horizon for p in self.phases]
        if any(h < 1 for h in horizons):
            raise ValueError("phase horizons must be positive")
        if any(h2 < h1 for h1, h2 in zip(horizons, horizons[1:])):
            raise ValueError(f"phase horizons must be non-decreasing, got {horizons}")

    @property
    def max_horizon(self) -> int:
        return max(p.horizon for p in self.phases)


def curriculum(*phases) -> Curriculum:
    return Curriculum(tuple(Phase(*p) for p in phases))


# Desk-scale analogs of the three pretraining schedules plus the online one.
MODEL_A_CURRICULUM = curriculum((1, 20_000, 1e-2, 32), (3, 20_000, 1e-3, 8))
MODEL_B_CURRICULUM = curriculum((1, 20_000, 1e-2, 32), (3, 20_000, 1e-3, 8),
                                (5, 20_000, 1e-3, 8))
MODEL_C_CURRICULUM = MODEL_B_CURRICULUM
PRETRAIN_CURRICULA = {"A": MODEL_A_CURRICULUM, "B": MODEL_B_CURRICULUM,
                      "C": MODEL_C_CURRICULUM}


class Segment:
    """A run of consecutive transitions from one episode.

    ``xs`` holds length+1 feature vectors (x_0 .. x_L); ``actions``,
    ``rewards`` (already clipped) and ``terminals`` hold the L transitions.
    A terminal may appear only in the final slot, so every window of a
    segment is a valid multi-step training target.
    """

    __slots__ = ("xs", "actions", "rewards", "terminals")

    def __init__(self, xs, actions, rewards, terminals):
        self.xs = np.asarray(xs, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.terminals = np.asarray(terminals, dtype=np.float64)
        n = len(self.actions)
        if self.xs.shape[0] != n + 1:
            raise ValueError(f"segment with {n} actions needs {n + 1} states")
        if len(self.rewards) != n or len(self.terminals) != n:
            raise ValueError("segment arrays disagree on length")
        if np.any(self.terminals[:-1] > 0):
            raise ValueError("terminal transition before the end of a segment")

    def __len__(self):
        return len(self.actions)


def segments_from_transitions(transitions, feature_table, length: int):
    """Chop an in-order transition stream into fixed-length segments.

    Episode boundaries are respected; a tail shorter than ``length`` is
    covered by one extra window ending on the episode's last transition so
    terminal outcomes stay in the data.
    """
    out = []
    episode = []

    def flush():
        n = len(episode)
        starts = list(range(0, n - length + 1, length))
        if n >= length and (n - length) % length != 0 and (n - length) not in starts:
            starts.append(n - length)
        for s in starts:
            window = episode[s:s + length]
            xs = [feature_table[window[0].obs.state_id]]
            xs += [feature_table[t.next_obs.state_id] for t in window]
            out.append(Segment(
                xs,
                [t.action for t in window],
                [clip_reward(t.reward) for t in window],
                [float(t.terminal) for t in window],
            ))
        episode.clear()

    for t in transitions:
        episode.append(t)
        if t.terminal:
            flush()
    flush()
    return out


def _gather_batch(segments, indices, offsets, k):
    """Stack (X0, A, Xt, R, T) arrays for the chosen windows."""
    bsz = len(indices)
    d = segments[0].xs.shape[1]
    x0 = np.empty((bsz, d))
    acts = np.empty((bsz, k), dtype=np.int64)
    xt = np.empty((bsz, k, d))
    rew = np.empty((bsz, k))
    term = np.empty((bsz, k))
    for i, (si, off) in enumerate(zip(indices, offsets)):
        seg = segments[si]
        x0[i] = seg.xs[off]
        xt[i] = seg.xs[off + 1:off + 1 + k]
        acts[i] = seg.actions[off:off + k]
        rew[i] = seg.rewards[off:off + k]
        term[i] = seg.terminals[off:off + k]
    return x0, acts, xt, rew, term


def loss_and_grad(params: ForwardModelParams, batch, k: int):
    """Mean open-loop k-step squared loss over a batch, with its gradient.

    The state fed into step kappa is the model's own prediction from step
    kappa-1 (x_0 is the true start), so gradients flow back through the whole
    unrolled chain. Reward and terminal head errors share the 1/(2k) scaling
    of the feature term; the terminal head is a logistic unit trained with
    squared loss against {0, 1}.
    """
    x0, acts, xt, rew, term = batch
    bsz = x0.shape[0]
    n_actions = params.n_actions
    W, b, v, c, u, t = (params.W, params.b, params.v,
                        params.c, params.u, params.t)

    zs = [x0]
    r_hat = np.empty((bsz, k))
    y_hat = np.empty((bsz, k))
    for kk in range(k):
        a = acts[:, kk]
        z = zs[-1]
        zs.append(np.einsum("bij,bj->bi", W[a], z) + b[a])
        r_hat[:, kk] = np.einsum("bj,bj->b", v[a], z) + c[a]
        y_hat[:, kk] = _sigmoid(np.einsum("bj,bj->b", u[a], z) + t[a])

    feat_err = [zs[kk + 1] - xt[:, kk] for kk in range(k)]
    rho = r_hat - rew
    tau_raw = y_hat - term
    loss = (sum(np.sum(e * e, axis=1) for e in feat_err).mean()
            + np.sum(rho * rho, axis=1).mean()
            + np.sum(tau_raw * tau_raw, axis=1).mean()) / (2.0 * k)

    grads = ForwardModelParams(
        W=np.zeros_like(W), b=np.zeros_like(b), v=np.zeros_like(v),
        c=np.zeros_like(c), u=np.zeros_like(u), t=np.zeros_like(t))
    scale = 1.0 / (k * bsz)
    tau = tau_raw * y_hat * (1.0 - y_hat)

    g = feat_err[k - 1] * scale
    for kk in range(k - 1, -1, -1):
        a = acts[:, kk]
        z = zs[kk]
        rho_k = rho[:, kk] * scale
        tau_k = tau[:, kk] * scale
        for av in range(n_actions):
            mask = a == av
            if not mask.any():
                continue
            grads.W[av] += g[mask].T @ z[mask]
            grads.b[av] += g[mask].sum(axis=0)
            grads.v[av] += rho_k[mask] @ z[mask]
            grads.c[av] += rho_k[mask].sum()
            grads.u[av] += tau_k[mask] @ z[mask]
            grads.t[av] += tau_k[mask].sum()
        if kk > 0:
            g = (np.einsum("bij,bi->bj", W[a], g)
                 + rho_k[:, None] * v[a]
                 + tau_k[:, None] * u[a]
                 + feat_err[kk - 1] * scale)
    return float(loss), grads


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.steps = 0

    def step(self, params: ForwardModelParams, grads: ForwardModelParams, lr: float):
        self.steps += 1
        b1c = 1.0 - self.beta1 ** self.steps
        b2c = 1.0 - self.beta2 ** self.steps
        for name, p in params.fields().items():
            g = grads.fields()[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def train_forward_model(dataset, curriculum: Curriculum, rng,
                        optimizer: str = "sgd",
                        params: ForwardModelParams | None = None):
    """Run the curriculum over the dataset; returns (params, phase_log).

    The dataset is a list of Segments and is never mutated. Each phase draws
    uniform windows of its own horizon. Plain SGD by default; ``adam``
    switches to Adam with the standard defaults.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    min_len = min(len(s) for s in dataset)
    if curriculum.max_horizon > min_len:
        raise ValueError(
            f"curriculum horizon {curriculum.max_horizon} exceeds shortest "
            f"segment length {min_len}")
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    dim = dataset[0].xs.shape[1]
    n_actions = int(max(s.actions.max() for s in dataset)) + 1
    if params is None:
        params = ForwardModelParams.init(n_actions, dim)
    adam = None
    if optimizer == "adam":
        adam = _Adam({k: a.shape for k, a in params.fields().items()})

    lengths = np.array([len(s) for s in dataset])
    phase_log = []
    for phase in curriculum.phases:
        k = phase.horizon
        n_offsets = lengths - k + 1
        losses = []
        for step in range(phase.updates):
            idx = rng.integers(len(dataset), size=phase.batch_size)
            offs = (rng.random(phase.batch_size) * n_offsets[idx]).astype(np.int64)
            batch = _gather_batch(dataset, idx, offs, k)
            loss, grads = loss_and_grad(params, batch, k)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at phase horizon {k}, update {step}")
            if adam is not None:
                adam.step(params, grads, phase.learning_rate)
            else:
                for name, p in params.fields().items():
                    p -= phase.learning_rate * grads.fields()[name]
            losses.append(loss)
        params.check_finite()
        tail = losses[-min(100, len(losses)):]
        phase_log.append({"horizon": k, "updates": phase.updates,
                          "learning_rate": phase.learning_rate,
                          "batch_size": phase.batch_size,
                          "final_loss": float(np.mean(tail))})
    return params, phase_log


def multi_step_feature_error(params: ForwardModelParams, segments, k_max: int):
    """Mean open-loop feature error per horizon, over segment start states.

    Returns an array of length ``k_max`` where entry kappa-1 is the mean L2
    distance between the kappa-step prediction and the realized features.
    """
    usable = [s for s in segments if len(s) >= k_max]
    if not usable:
        raise ValueError(f"no segments of length >= {k_max}")
    errs = np.zeros(k_max)
    for seg in usable:
        z = seg.xs[0]
        for kk in range(k_max):
            a = int(seg.actions[kk])
            z = params.W[a] @ z + params.b[a]
            errs[kk] += np.linalg.norm(z - seg.xs[kk + 1])
    return errs / len(usable)


class ForwardModel:
    """Planning wrapper for ForwardModelParams.

    Raw feature predictions live in a continuous space, while planning needs
    observations that name a state, so each predicted vector is grounded to
    the nearest tabulated state before it is returned (and before it feeds
    the next rollout step). Open-loop raw error is what
    ``multi_step_feature_error`` measures.
    """

    needs_snapshot = False

    def __init__(self, params: ForwardModelParams, env: GridEnv):
        if params.dim != env.feature_dim:
            raise ValueError(f"model dim {params.dim} != environment feature "
                             f"dim {env.feature_dim}")
        self.params = params
        self._env = env
        self._table = env.feature_table
        self._norms = np.einsum("ij,ij->i", self._table, self._table)

    def begin_rollout(self, start, snapshot, rng) -> None:
        pass

    def predict(self, obs: Observation, action: int, rng) -> ModelPrediction:
        x = obs.features
        p = self.params
        x_next = p.W[action] @ x + p.b[action]
        reward = clip_reward(float(p.v[action] @ x + p.c[action]))
        terminal = bool(_sigmoid(float(p.u[action] @ x + p.t[action])) > 0.5)
        scores = self._norms - 2.0 * (self._table @ x_next)
        nid = int(np.argmin(scores))
        return ModelPrediction(self._env.observation(nid), reward, terminal)


class OnlineForwardTrainer:
    """Trains a ForwardModel alongside the agent from its real experience.

    Keeps its own ring of real transitions (episode-aligned so multi-step
    windows never cross a terminal), runs one update every ``train_every``
    real steps, and switches from 1-step to 3-step loss with a learning-rate
    drop after ``switch_fraction`` of the run.
    """

    def __init__(self, model: ForwardModel, total_real_frames: int,
                 capacity: int = 50_000, train_every: int = 4,
                 batch_size: int = 32, switch_fraction: float = 0.25,
                 lr_early: float = 1e-2, lr_late: float = 1e-3,
                 optimizer: str = "sgd"):
        self.model = model
        self.switch_step = int(switch_fraction * total_real_frames)
        self.train_every = train_every
        self.batch_size = batch_size
        self.lr_early = lr_early
        self.lr_late = lr_late
        self.capacity = capacity
        self._table = model._table
        self._store = []          # (episode_id, s_id, action, clip(r), s'_id, terminal)
        self._head = 0
        self._episode = 0
        self._seen = 0
        self.updates = 0
        self._adam = None
        if optimizer == "adam":
            self._adam = _Adam({k: a.shape
                                for k, a in model.params.fields().items()})

    def observe(self, t: Transition, rng) -> None:
        if t.simulated:
            raise ValueError("online model trainer consumes real transitions only")
        row = (self._episode, t.obs.state_id, t.action,
               clip_reward(t.reward), t.next_obs.state_id, t.terminal)
        if len(self._store) < self.capacity:
            self._store.append(row)
        else:
            self._store[self._head] = row
            self._head = (self._head + 1) % self.capacity
        if t.terminal:
            self._episode += 1
        self._seen += 1
        if self._seen % self.train_every == 0:
            self._train_once(rng)

    def _phase(self):
        if self._seen <= self.switch_step:
            return 1, self.lr_early
        return 3, self.lr_late

    def _window_ok(self, start: int, k: int) -> bool:
        n = len(self._store)
        if n < self.capacity:
            if start + k > n:
                return False
            ep = self._store[start][0]
            return all(self._store[start + j][0] == ep for j in range(1, k))
        # Full ring: time order wraps at the head, so a window is consecutive
        # iff none of its interior positions lands on the head.
        ep = self._store[start % n][0]
        for j in range(1, k):
            idx = (start + j) % n
            if idx == self._head or self._store[idx][0] != ep:
                return False
        return True

    def _train_once(self, rng) -> None:
        n = len(self._store)
        k, lr = self._phase()
        if n < k:
            return
        dim = self._table.shape[1]
        x0 = np.empty((self.batch_size, dim))
        acts = np.empty((self.batch_size, k), dtype=np.int64)
        xt = np.empty((self.batch_size, k, dim))
        rew = np.empty((self.batch_size, k))
        term = np.empty((self.batch_size, k))
        filled = 0
        attempts = 0
        while filled < self.batch_size and attempts < self.batch_size * 20:
            attempts += 1
            start = int(rng.integers(n))
            if not self._window_ok(start, k):
                continue
            x0[filled] = self._table[self._store[start % n][1]]
            for j in range(k):
                row = self._store[(start + j) % n]
                acts[filled, j] = row[2]
                rew[filled, j] = row[3]
                xt[filled, j] = self._table[row[4]]
                term[filled, j] = float(row[5])
            filled += 1
        if filled == 0:
            return
        batch = (x0[:filled], acts[:filled], xt[:filled],
                 rew[:filled], term[:filled])
        loss, grads = loss_and_grad(self.model.params, batch, k)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss in online model training")
        if self._adam is not None:
            self._adam.step(self.model.params, grads, lr)
        else:
            for name, p in self.model.params.fields().items():
                p -= lr * grads.fields()[name]
        self.updates += 1


# ---------------------------------------------------------------------------
# Corrupted model
# ---------------------------------------------------------------------------

class CorruptedModel:
    """Perfect model with successor corruption at rate eta.

    With probability eta per prediction the true successor is replaced by a
    uniformly random different one-step neighbor of the current state, and
    reward/terminal are recomputed for the substituted arrival. States whose
    one-step neighborhood is a single state cannot be corrupted.
    """

    needs_snapshot = True

    def __init__(self, env: GridEnv, eta: float):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must be a probability, got {eta}")
        self.eta = eta
        self._inner = PerfectModel(env)
        self._p_env = self._inner.env

    def begin_rollout(self, start, snapshot, rng) -> None:
        self._inner.begin_rollout(start, snapshot, rng)

    def predict(self, obs: Observation, action: int, rng) -> ModelPrediction:
        pred = self._inner.predict(obs, action, rng)
        if self.eta <= 0.0 or rng.random() >= self.eta:
            return pred
        succ = self._p_env.successor_map(obs.state_id)
        alternatives = [nid for nid in succ if nid != pred.next_observation.state_id]
        if not alternatives:
            return pred
        nid = alternatives[int(rng.integers(len(alternatives)))]
        reward, _ = succ[nid]
        env = self._p_env
        env.place(nid, prev_action=None, steps=None)
        return ModelPrediction(env.observation(nid), clip_reward(reward), env.terminal)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

def rollout(model, start: Observation, policy, k: int, rng, snapshot=None):
    """Simulate up to k steps from a start state under the given policy.

    ``policy`` is called as policy(obs, rng). Each step is recorded as an
    independent simulated Transition; the rollout truncates as soon as the
    model predicts a terminal.
    """
    if k < 1:
        raise ValueError(f"rollout length must be >= 1, got {k}")
    model.begin_rollout(start, snapshot, rng)
    obs = start
    out = []
    for _ in range(k):
        action = policy(obs, rng)
        pred = model.predict(obs, action, rng)
        out.append(Transition(obs, action, pred.reward,
                              pred.next_observation, pred.terminal, simulated=True))
        if pred.terminal:
            break
        obs = pred.next_observation
    return out
