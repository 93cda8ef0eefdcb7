"""Actor, critic, their objectives, and the bundle of all learned parameters."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .distributions import DiagGaussian
from .envs import make_env
from .nets import init_mlp, mlp
from .optim import OptimizerState
from .value_expansion import ValueFamily
from .world_model import WorldModel, WorldModelConfig


class Actor:
    """Gaussian policy over pre-squash actions; samples are squashed by tanh into [-1, 1]."""

    prefix = "actor/"

    def __init__(self, feature_size: int, action_dim: int, hidden: int, rng: np.random.Generator | None = None):
        self.feature_size = feature_size
        self.action_dim = action_dim
        self.hidden = hidden
        self.params = init_mlp(rng, "actor/net", [feature_size, hidden, hidden, 2 * action_dim]) if rng is not None else {}

    def dist(self, features, p=None) -> DiagGaussian:
        return DiagGaussian.from_raw(mlp(self.params if p is None else p, "actor/net", features, 3))

    def sample(self, features, noise, p=None):
        return ad.tanh(self.dist(features, p).sample(noise))

    def mode(self, features, p=None):
        return ad.tanh(self.dist(features, p).mean)


class Critic:
    prefix = "critic/"

    def __init__(self, feature_size: int, hidden: int, rng: np.random.Generator | None = None):
        self.feature_size = feature_size
        self.hidden = hidden
        self.params = init_mlp(rng, "critic/net", [feature_size, hidden, hidden, 1]) if rng is not None else {}

    def value(self, features, p=None):
        return mlp(self.params if p is None else p, "critic/net", features, 3)[:, 0]


def actor_loss(family: ValueFamily):
    """Negative mean over states of max_h V_h; the argmax horizon alone carries gradient."""
    return -ad.mean(ad.maximum_along(family.values, axis=0))


def critic_loss(critic: Critic, features, targets, p=None):
    """Mean of 0.5 (v(s) - V(s))^2 with the targets treated as constants."""
    diff = critic.value(features, p) - ad.stop_gradient(targets)
    return ad.mean(0.5 * ad.square(diff))


@dataclass
class Optimizers:
    model: OptimizerState
    actor: OptimizerState
    critic: OptimizerState


class Agent:
    """World model, actor and critic sharing one latent feature space."""

    def __init__(self, model: WorldModel, actor: Actor, critic: Critic, env_name: str = "bouncing_dot"):
        self.model = model
        self.actor = actor
        self.critic = critic
        self.env_name = env_name

    @classmethod
    def from_config(cls, config: TrainConfig, rng: np.random.Generator) -> "Agent":
        env = make_env(config.env, config.episode_length)
        wm_config = WorldModelConfig(
            obs_shape=env.obs_shape,
            action_dim=env.action_dim,
            deter=config.deter,
            stoch=config.stoch,
            hidden=config.hidden,
            kl_scale=config.kl_scale,
            free_nats=config.free_nats,
        )
        model = WorldModel(wm_config, rng)
        actor = Actor(wm_config.feature_size, env.action_dim, config.hidden, rng)
        critic = Critic(wm_config.feature_size, config.hidden, rng)
        return cls(model, actor, critic, config.env)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {**self.model.params, **self.actor.params, **self.critic.params}

    def manifest(self) -> dict[str, object]:
        c = self.model.config
        return {
            "d_h": c.deter,
            "d_z": c.stoch,
            "hidden": c.hidden,
            "action_dim": c.action_dim,
            "image_shape": list(c.obs_shape),
            "kl_scale": c.kl_scale,
            "free_nats": c.free_nats,
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.params, self.manifest())

    @classmethod
    def load(cls, path: str | Path, env_name: str = "bouncing_dot") -> "Agent":
        params, manifest = load_checkpoint(path)
        wm_config = WorldModelConfig(
            obs_shape=tuple(int(x) for x in manifest["image_shape"]),
            action_dim=int(manifest["action_dim"]),
            deter=int(manifest["d_h"]),
            stoch=int(manifest["d_z"]),
            hidden=int(manifest["hidden"]),
            kl_scale=float(manifest["kl_scale"]),
            free_nats=float(manifest.get("free_nats", 0.0)),
        )
        model = WorldModel(wm_config)
        actor = Actor(wm_config.feature_size, wm_config.action_dim, wm_config.hidden)
        critic = Critic(wm_config.feature_size, wm_config.hidden)
        for owner in (model, actor, critic):
            owner.params = {k: v for k, v in params.items() if k.startswith(owner.prefix)}
        return cls(model, actor, critic, env_name)


class AgentPolicy:
    """Closed-loop controller: filters observations into latent states and acts.

    ``act(obs)`` updates the posterior state from the previous action and the
    new image, then returns ``tanh(mean)`` (``deterministic``) or a sample,
    plus Gaussian exploration noise of scale ``expl_noise``, clipped to [-1, 1].
    """

    def __init__(
        self,
        agent: Agent,
        rng: np.random.Generator,
        expl_noise: float = 0.0,
        deterministic: bool = True,
        sample_posterior: bool = True,
    ):
        self.agent = agent
        self.rng = rng
        self.expl_noise = expl_noise
        self.deterministic = deterministic
        self.sample_posterior = sample_posterior
        self.reset()

    def reset(self) -> None:
        self.state = self.agent.model.initial_state(1)
        self.prev_action = np.zeros((1, self.agent.model.config.action_dim))
        self.posterior_noise: list[np.ndarray] = []
        self.states = []

    def act(self, obs: np.ndarray) -> np.ndarray:
        model = self.agent.model
        if self.sample_posterior:
            noise = self.rng.standard_normal((1, model.config.stoch))
        else:
            noise = np.zeros((1, model.config.stoch))
        self.state = model.represent(self.state, self.prev_action, obs[None], noise)
        self.posterior_noise.append(noise)
        self.states.append(self.state)
        feats = self.state.features()
        if self.deterministic:
            action = self.agent.actor.mode(feats)
        else:
            action = self.agent.actor.sample(feats, self.rng.standard_normal((1, model.config.action_dim)))
        if self.expl_noise > 0.0:
            action = action + self.expl_noise * self.rng.standard_normal(action.shape)
        action = np.clip(action, -1.0, 1.0)
        self.prev_action = action
        return action[0]

    def __call__(self, obs, env_state=None) -> np.ndarray:
        return self.act(obs)
