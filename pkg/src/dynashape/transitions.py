"""The transition record shared by environments, models, buffers, and learners."""

from __future__ import annotations

from dataclasses import dataclass

from .envs import Observation


def clip_reward(r: float) -> float:
    """Clip a reward into [-1, 1], the scale learners and models operate on."""
    return -1.0 if r < -1.0 else (1.0 if r > 1.0 else float(r))


@dataclass(slots=True)
class Transition:
    """One (s, a, r, s', terminal) record, tagged real or simulated.

    ``reward`` is on the environment scale for real transitions and already
    clipped for simulated ones (models clip at their boundary). Learners clip
    at update time, so both kinds can share a buffer.
    """

    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    terminal: bool
    simulated: bool

    def key(self):
        """Comparable value tuple (used by tests and stream comparisons)."""
        return (self.obs.state_id, self.action, self.reward,
                self.next_obs.state_id, self.terminal, self.simulated)
