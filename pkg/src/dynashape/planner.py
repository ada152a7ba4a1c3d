"""Planning orchestration: shape-budgeted rollouts from recently visited states.

After every real environment step the planner draws ``n`` start states
uniformly (with replacement) from a FIFO buffer of recent *real* states and
rolls each out ``k`` model steps under the agent's current epsilon-greedy
policy. The shape (n, k) must multiply exactly to the configured model-step
budget, so different shapes spend identical model budgets and keep the
real-to-simulated replay ratio fixed.

RNG contract (relied on by shape-equivalence tests): one ``integers`` call
for the n start indices, then each rollout consumes the same stream in
order (action draw, then model draws, per step). Rollouts run sequentially
and their transitions are returned in (rollout, step) order, so runs are
reproducible regardless of how callers schedule them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .envs import EnvSnapshot, Observation
from .models import rollout


class ShapeBudgetError(ValueError):
    """A planning shape that does not multiply to the model-step budget."""


@dataclass(frozen=True)
class PlanningShape:
    n: int  # rollouts per real step
    k: int  # steps per rollout

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError(f"planning shape needs positive n and k, got {self.n}x{self.k}")

    @property
    def budget(self) -> int:
        return self.n * self.k

    def label(self) -> str:
        return f"{self.n}x{self.k}"


def validate_shape(shape: PlanningShape, budget: int) -> None:
    """Exact-budget rule: n*k must equal the budget, no rounding tolerance."""
    if shape.n * shape.k != budget:
        raise ShapeBudgetError(
            f"shape {shape.n}x{shape.k} spends {shape.n * shape.k} model steps "
            f"per real step, but the budget is {budget}")


class PlanningBuffer:
    """FIFO ring of (observation, snapshot) pairs for real states only."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("planning buffer capacity must be positive")
        self.capacity = capacity
        self._items = []
        self._pos = 0

    def __len__(self):
        return len(self._items)

    def record_real_state(self, obs: Observation, snapshot: EnvSnapshot,
                          simulated: bool = False) -> None:
        """Append a really-visited state; recording simulated states is illegal."""
        if simulated:
            raise ValueError("planning start states must come from real experience")
        if len(self._items) < self.capacity:
            self._items.append((obs, snapshot))
        else:
            self._items[self._pos] = (obs, snapshot)
            self._pos = (self._pos + 1) % self.capacity

    def get(self, index: int):
        return self._items[index]

    def state_ids(self):
        return [obs.state_id for obs, _ in self._items]


class Planner:
    """Planning buffer plus budget accounting counters."""

    def __init__(self, buffer_capacity: int):
        self.buffer = PlanningBuffer(buffer_capacity)
        self.predict_calls = 0
        self.truncation_deficit = 0
        self.skipped_steps = 0

    def record_real_state(self, obs, snapshot, simulated: bool = False) -> None:
        self.buffer.record_real_state(obs, snapshot, simulated)


def plan_after_real_step(planner: Planner, agent, model,
                         shape: PlanningShape, rng):
    """Run one planning phase; returns simulated transitions in canonical order.

    An empty buffer (warmup) skips planning for this step and counts the
    event. The caller feeds every returned transition to ``agent.observe`` so
    training frequency sees simulated frames too.
    """
    buf = planner.buffer
    if len(buf) == 0:
        planner.skipped_steps += 1
        return []
    policy = agent.policy()
    starts = rng.integers(0, len(buf), size=shape.n)
    out = []
    for i in starts:
        obs, snap = buf.get(int(i))
        trs = rollout(model, obs, policy, shape.k, rng, snapshot=snap)
        planner.predict_calls += len(trs)
        planner.truncation_deficit += shape.k - len(trs)
        out.extend(trs)
    return out
