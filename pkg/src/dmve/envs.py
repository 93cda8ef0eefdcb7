"""Toy pixel POMDPs with known dynamics, episode storage and a Monte-Carlo value oracle.

Both environments render a 1x16x16 grayscale image and pay rewards in [0, 1].
The reward of step ``t`` depends on the hidden state the action is taken in,
so ``(a_t, o_t, r_t)`` triples line up: ``r_t`` is predictable from ``o_t``
and its history.

* :class:`BouncingDot` -- a blob with hidden velocity; actions accelerate it,
  walls reflect it, reward is ``exp(-distance_to_center / reward_scale)``.
* :class:`LinearLatentEnv` -- 2-d linear latent dynamics with bounded uniform
  noise, drawn as a crosshair; reward is affine in the latent, so values
  under linear policies have a closed form (:func:`linear_closed_form_value`).
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

OBS_SHAPE = (1, 16, 16)
ACTION_DIM = 2


class EpisodeDoneError(RuntimeError):
    """``step`` called after the episode limit was reached."""


@dataclass
class EnvState:
    """Hidden ground truth; never exposed to the agent."""

    values: dict[str, np.ndarray]
    t: int
    limit: int
    rng_state: dict | None = None

    def copy(self) -> "EnvState":
        return copy.deepcopy(self)


def _as_f32_grid(img: np.ndarray) -> np.ndarray:
    # observations are stored as float32; round now so storage is lossless
    return np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)[None]


class PixelEnv:
    name = "pixel"
    action_dim = ACTION_DIM
    obs_shape = OBS_SHAPE

    def __init__(self, episode_length: int = 200):
        if episode_length < 1:
            raise ValueError("episode_length must be positive")
        self.episode_length = episode_length
        self._state: EnvState | None = None
        self._rng = np.random.default_rng(0)

    # subclass hooks
    def _initial_values(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _advance(self, values: dict[str, np.ndarray], action: np.ndarray) -> None:
        raise NotImplementedError

    def _reward(self, values: dict[str, np.ndarray]) -> float:
        raise NotImplementedError

    def _render(self, values: dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    # public interface
    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._state = EnvState(self._initial_values(self._rng), 0, self.episode_length)
        return self.observe()

    def step(self, action) -> tuple[float, np.ndarray, bool]:
        st = self._require_state()
        if st.t >= st.limit:
            raise EpisodeDoneError(f"{self.name}: step after episode end (t={st.t}, T={st.limit})")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ValueError(f"{self.name}: action shape {action.shape}, expected ({self.action_dim},)")
        if np.any(np.abs(action) > 1.0 + 1e-12) or not np.all(np.isfinite(action)):
            raise ValueError(f"{self.name}: action {action} outside [-1, 1]")
        reward = self._reward(st.values)
        self._advance(st.values, action)
        st.t += 1
        return reward, self.observe(), st.t >= st.limit

    def observe(self) -> np.ndarray:
        return _as_f32_grid(self._render(self._require_state().values))

    @property
    def state(self) -> EnvState:
        st = self._require_state().copy()
        st.rng_state = copy.deepcopy(self._rng.bit_generator.state)
        return st

    def restore(self, state: EnvState, seed: int | None = None) -> np.ndarray:
        """Resume from ``state``; ``seed`` replaces the saved noise stream."""
        self._state = state.copy()
        self._state.rng_state = None
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        elif state.rng_state is not None:
            self._rng = np.random.default_rng()
            self._rng.bit_generator.state = copy.deepcopy(state.rng_state)
        return self.observe()

    @property
    def done(self) -> bool:
        st = self._require_state()
        return st.t >= st.limit

    def _require_state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError(f"{self.name}: reset() before use")
        return self._state


class BouncingDot(PixelEnv):
    """Blob on a 16x16 canvas steered toward the center by acceleration actions."""

    name = "bouncing_dot"

    def __init__(
        self,
        episode_length: int = 200,
        damping: float = 0.8,
        accel: float = 0.4,
        blob_sigma: float = 2.0,
        reward_scale: float = 4.0,
    ):
        super().__init__(episode_length)
        self.damping = damping
        self.accel = accel
        self.blob_sigma = blob_sigma
        self.reward_scale = reward_scale
        self.size = OBS_SHAPE[-1]
        self.lo, self.hi = 0.0, float(self.size - 1)
        self.target = np.full(2, (self.size - 1) / 2.0)
        grid = np.arange(self.size, dtype=np.float64)
        self._ys, self._xs = np.meshgrid(grid, grid, indexing="ij")

    def _initial_values(self, rng):
        return {
            "pos": rng.uniform(self.lo + 1.0, self.hi - 1.0, size=2),
            "vel": rng.uniform(-0.5, 0.5, size=2),
        }

    def _advance(self, values, action):
        vel = self.damping * values["vel"] + self.accel * action
        pos = values["pos"] + vel
        for i in range(2):
            while pos[i] < self.lo or pos[i] > self.hi:
                if pos[i] < self.lo:
                    pos[i] = 2 * self.lo - pos[i]
                else:
                    pos[i] = 2 * self.hi - pos[i]
                vel[i] = -vel[i]
        values["pos"], values["vel"] = pos, vel

    def _reward(self, values):
        return float(np.exp(-np.linalg.norm(values["pos"] - self.target) / self.reward_scale))

    def _render(self, values):
        x, y = values["pos"]
        d2 = (self._xs - x) ** 2 + (self._ys - y) ** 2
        return np.exp(-d2 / (2.0 * self.blob_sigma**2))


class LinearLatentEnv(PixelEnv):
    """x' = A x + B a + w with w ~ U(-0.05, 0.05)^2; reward 0.5 + 0.2 c.x.

    ``A`` is a 0.9-scaled rotation, so ``|x| <= 2.122`` for any admissible
    action sequence and the reward never leaves [0.07, 0.93].
    """

    name = "linear_latent"
    noise_halfwidth = 0.05
    extent = 2.2

    def __init__(self, episode_length: int = 200, angle: float = 0.3):
        super().__init__(episode_length)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        self.A = 0.9 * rot
        self.B = 0.1 * np.eye(2)
        self.c = np.ones(2) / np.sqrt(2.0)
        self.reward_offset, self.reward_gain = 0.5, 0.2
        self._grid = np.arange(OBS_SHAPE[-1], dtype=np.float64)

    def _initial_values(self, rng):
        return {"x": rng.uniform(-1.0, 1.0, size=2)}

    def _advance(self, values, action):
        w = self._rng.uniform(-self.noise_halfwidth, self.noise_halfwidth, size=2)
        values["x"] = self.A @ values["x"] + self.B @ action + w

    def _reward(self, values):
        return float(self.reward_offset + self.reward_gain * self.c @ values["x"])

    def _render(self, values):
        col, row = (values["x"] + self.extent) / (2 * self.extent) * (OBS_SHAPE[-1] - 1)
        vertical = np.exp(-((self._grid - col) ** 2) / (2 * 0.7**2))
        horizontal = np.exp(-((self._grid - row) ** 2) / (2 * 0.7**2))
        return np.maximum(vertical[None, :], horizontal[:, None])


ENVIRONMENTS: dict[str, type[PixelEnv]] = {
    BouncingDot.name: BouncingDot,
    LinearLatentEnv.name: LinearLatentEnv,
}


def make_env(name: str, episode_length: int = 200) -> PixelEnv:
    try:
        return ENVIRONMENTS[name](episode_length=episode_length)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def env_reset(env: PixelEnv, seed: int) -> np.ndarray:
    return env.reset(seed)


def env_step(env: PixelEnv, action) -> tuple[float, np.ndarray, bool]:
    return env.step(action)


# ---------------------------------------------------------------------------
# episodes


@dataclass
class Episode:
    """``actions[t]`` was taken at ``observations[t]`` and earned ``rewards[t]``."""

    env_name: str
    actions: np.ndarray  # (T, A)
    observations: np.ndarray  # (T, C, H, W)
    rewards: np.ndarray  # (T,)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards))


def write_episode(path: str | Path, episode: Episode) -> None:
    """Header (env name, T, action dim, observation shape), then per-step records."""
    name = episode.env_name.encode("utf-8")
    t, a = episode.actions.shape
    obs_shape = episode.observations.shape[1:]
    parts = [
        struct.pack("<I", len(name)),
        name,
        struct.pack("<III", t, a, len(obs_shape)),
        struct.pack(f"<{len(obs_shape)}I", *obs_shape),
    ]
    for i in range(t):
        parts.append(np.asarray(episode.actions[i], dtype="<f8").tobytes())
        parts.append(np.asarray(episode.observations[i], dtype="<f4").tobytes())
        parts.append(struct.pack("<d", float(episode.rewards[i])))
    Path(path).write_bytes(b"".join(parts))


def read_episode(path: str | Path) -> Episode:
    data = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", data, 0)
    name = data[4 : 4 + n].decode("utf-8")
    pos = 4 + n
    t, a, rank = struct.unpack_from("<III", data, pos)
    pos += 12
    obs_shape = struct.unpack_from(f"<{rank}I", data, pos)
    pos += 4 * rank
    obs_size = int(np.prod(obs_shape))
    record = np.dtype([("a", "<f8", (a,)), ("o", "<f4", (obs_size,)), ("r", "<f8")])
    recs = np.frombuffer(data, dtype=record, count=t, offset=pos)
    return Episode(
        env_name=name,
        actions=recs["a"].astype(np.float64),
        observations=recs["o"].astype(np.float64).reshape(t, *obs_shape),
        rewards=recs["r"].astype(np.float64),
    )


# ---------------------------------------------------------------------------
# value oracles

Policy = Callable[[np.ndarray, EnvState], np.ndarray]


@dataclass
class OracleEstimate:
    mean: float
    stderr: float
    tail_bound: float
    returns: np.ndarray = field(repr=False)


def discounted_return(rewards, gamma: float) -> float:
    out = 0.0
    for r in reversed(list(rewards)):
        out = float(r) + gamma * out
    return out


def oracle_value(
    env: PixelEnv,
    policy: Policy,
    gamma: float,
    n_rollouts: int,
    start_state: EnvState | None = None,
    seed: int = 0,
    max_steps: int | None = None,
) -> OracleEstimate:
    """Monte-Carlo discounted return of ``policy`` from ground-truth rollouts.

    Rollout ``i`` starts from ``start_state`` with noise seed ``seed + i``, or
    from ``env.reset(seed + i)`` when no start state is given.  The policy
    sees the observation and the hidden state (hand-coded oracle policies use
    the latter); a ``reset()`` method, if present, runs before each rollout.
    ``tail_bound`` bounds the discounted reward left after truncation.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    returns = np.empty(n_rollouts)
    steps = 0
    for i in range(n_rollouts):
        obs = env.reset(seed + i) if start_state is None else env.restore(start_state, seed=seed + i)
        if hasattr(policy, "reset"):
            policy.reset()
        rewards = []
        while not env.done and (max_steps is None or len(rewards) < max_steps):
            reward, obs_next, _ = env.step(policy(obs, env.state))
            rewards.append(reward)
            obs = obs_next
        steps = len(rewards)
        returns[i] = discounted_return(rewards, gamma)
    stderr = float(np.std(returns, ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    tail = gamma**steps / (1.0 - gamma) if gamma < 1.0 else float("inf")
    return OracleEstimate(float(np.mean(returns)), stderr, tail, returns)


def linear_policy(gain: np.ndarray) -> Policy:
    """State-feedback policy ``a = gain @ x`` for :class:`LinearLatentEnv`."""
    gain = np.asarray(gain, dtype=np.float64)

    def act(obs, state):
        return gain @ state.values["x"]

    return act


def linear_closed_form_value(
    env: LinearLatentEnv, x0: np.ndarray, gain: np.ndarray, gamma: float, steps: int | None = None
) -> float:
    """Exact expected discounted return of ``a = gain @ x`` from ``x0``.

    The noise is zero-mean and the reward affine, so only the mean dynamics
    ``M = A + B gain`` matter.  ``steps=None`` gives the infinite-horizon value.
    """
    m = env.A + env.B @ np.asarray(gain)
    eye = np.eye(2)
    resolvent = np.linalg.inv(eye - gamma * m)
    if steps is None:
        geo, mat = 1.0 / (1.0 - gamma), resolvent
    else:
        geo = (1.0 - gamma**steps) / (1.0 - gamma)
        mat = (eye - np.linalg.matrix_power(gamma * m, steps)) @ resolvent
    return float(env.reward_offset * geo + env.reward_gain * env.c @ mat @ np.asarray(x0))
