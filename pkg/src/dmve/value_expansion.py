"""Latent imagination rollouts and multi-horizon value estimates.

For a rollout ``s_t .. s_{t+H}`` with predicted rewards ``r`` and critic values
``v`` (index 0 is the start state), the h-step expansion is

    V_h = sum_{n<h} gamma^n r[n] + gamma^h v[h],   h = 1..H

All estimators accept arrays or graph nodes; extra trailing axes are batch axes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .world_model import LatentState, WorldModel


@dataclass
class NoiseRecord:
    """Unit-normal draws that fully determine an imagined rollout."""

    action: np.ndarray  # (H, N, action_dim)
    state: np.ndarray  # (H, N, stoch)

    @classmethod
    def draw(cls, rng: np.random.Generator, horizon: int, n: int, action_dim: int, stoch: int) -> "NoiseRecord":
        return cls(rng.standard_normal((horizon, n, action_dim)), rng.standard_normal((horizon, n, stoch)))

    @property
    def horizon(self) -> int:
        return self.action.shape[0]


@dataclass
class ImaginedTrajectory:
    states: list[LatentState]  # H + 1, generated by the transition module only
    actions: list  # H
    rewards: object  # (H + 1, N)
    values: object  # (H + 1, N)
    noise: NoiseRecord | None = None

    @property
    def horizon(self) -> int:
        return ad.value_of(self.rewards).shape[0] - 1


@dataclass
class ValueFamily:
    values: object  # (H, ...) with values[h - 1] = V_h
    gamma: float

    @property
    def horizon(self) -> int:
        return ad.value_of(self.values).shape[0]

    def __getitem__(self, h: int):
        """1-based access: ``family[h]`` is V_h."""
        if not 1 <= h <= self.horizon:
            raise IndexError(f"horizon {h} outside 1..{self.horizon}")
        return self.values[h - 1]


def imagine(
    model: WorldModel,
    actor,
    critic,
    start: LatentState,
    horizon: int,
    noise: NoiseRecord | None = None,
    rng: np.random.Generator | None = None,
    p=None,
) -> ImaginedTrajectory:
    """Roll the transition module forward ``horizon`` steps under the actor.

    ``actor.sample(features, noise, p)`` must return reparameterized actions and
    ``critic.value(features, p)`` scalar values.  Supplying ``noise`` replays a
    recorded rollout exactly; otherwise fresh noise is drawn from ``rng``.
    """
    if horizon < 1:
        raise ValueError(f"imagination horizon must be >= 1, got {horizon}")
    n = len(start)
    if noise is None:
        if rng is None:
            raise ValueError("imagine needs either a noise record or a generator")
        noise = NoiseRecord.draw(rng, horizon, n, model.config.action_dim, model.config.stoch)
    if noise.horizon < horizon:
        raise ValueError(f"noise record covers {noise.horizon} steps, need {horizon}")

    states, actions = [start], []
    state = start
    for i in range(horizon):
        action = actor.sample(state.features(), noise.action[i], p)
        state = model.transition(state, action, noise.state[i], p)
        actions.append(action)
        states.append(state)

    feats = ad.stack([s.features() for s in states], axis=0)
    flat = ad.reshape(feats, ((horizon + 1) * n, model.config.feature_size))
    rewards = ad.reshape(model.reward_head(flat, p), (horizon + 1, n))
    values = ad.reshape(critic.value(flat, p), (horizon + 1, n))
    return ImaginedTrajectory(states, actions, rewards, values, noise)


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {gamma}")


def value_expansion(traj: ImaginedTrajectory, h: int, gamma: float):
    """V_h: discounted sum of the first h rewards plus the discounted bootstrap."""
    _check_gamma(gamma)
    if not 1 <= h <= traj.horizon:
        raise ValueError(f"horizon {h} outside 1..{traj.horizon}")
    total = 0.0
    for n in range(h):
        total = total + gamma**n * traj.rewards[n]
    return total + gamma**h * traj.values[h]


def expansion_family(rewards, values, gamma: float) -> ValueFamily:
    """All V_1..V_H in one pass; ``rewards``/``values`` have H + 1 leading entries."""
    _check_gamma(gamma)
    horizon = ad.value_of(rewards).shape[0] - 1
    partial, out = 0.0, []
    for h in range(1, horizon + 1):
        partial = partial + gamma ** (h - 1) * rewards[h - 1]
        out.append(partial + gamma**h * values[h])
    return ValueFamily(ad.stack(out, axis=0), gamma)


def value_family(traj: ImaginedTrajectory, gamma: float) -> ValueFamily:
    return expansion_family(traj.rewards, traj.values, gamma)


def lambda_weights(horizon: int, lam: float) -> np.ndarray:
    """Mixture weights over V_1..V_H; they sum to one."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    w = np.array([(1.0 - lam) * lam ** (n - 1) for n in range(1, horizon)] + [lam ** (horizon - 1)])
    return w


def lambda_return_from_family(family: ValueFamily, lam: float):
    """Exponentially weighted mixture of the expansions, evaluated at the rollout root."""
    w = lambda_weights(family.horizon, lam)
    total = 0.0
    for n in range(family.horizon):
        total = total + w[n] * family.values[n]
    return total


def lambda_return(traj: ImaginedTrajectory, gamma: float, lam: float):
    return lambda_return_from_family(value_family(traj, gamma), lam)


def write_value_family_csv(path: str | Path, traj: ImaginedTrajectory, gamma: float, state_ids=None) -> None:
    """Rows of (state_id, h, V_h, r_{t+h-1}, v_{t+h}) for offline inspection."""
    rewards = np.asarray(ad.value_of(traj.rewards)).reshape(traj.horizon + 1, -1)
    values = np.asarray(ad.value_of(traj.values)).reshape(traj.horizon + 1, -1)
    family = expansion_family(rewards, values, gamma).values
    ids = range(rewards.shape[1]) if state_ids is None else state_ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state_id", "h", "V_h", "reward", "bootstrap_value"])
        for j, sid in enumerate(ids):
            for h in range(1, traj.horizon + 1):
                writer.writerow([sid, h, repr(float(family[h - 1, j])), repr(float(rewards[h - 1, j])), repr(float(values[h, j]))])
