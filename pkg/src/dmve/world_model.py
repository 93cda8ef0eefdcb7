"""Recurrent latent world model: representation, reconstruction, reward and transition.

The latent state couples a deterministic recurrent vector with a stochastic
vector drawn from a diagonal Gaussian.  Representation (posterior) and
transition (prior) share the recurrent core, so given the same previous state
and action they produce the same deterministic part; they differ only in
whether the current image informs the stochastic part.

Images are small grayscale tensors handled by dense encoder/decoder stacks.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .distributions import DiagGaussian, kl_diag_gaussian
from .nets import dense, init_mlp, mlp

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class WorldModelConfig:
    obs_shape: tuple[int, int, int] = (1, 16, 16)
    action_dim: int = 2
    deter: int = 64
    stoch: int = 16
    hidden: int = 64
    kl_scale: float = 1.0
    free_nats: float = 0.0  # KL below this batch-mean level is not penalized

    @property
    def obs_size(self) -> int:
        return int(np.prod(self.obs_shape))

    @property
    def feature_size(self) -> int:
        return self.deter + self.stoch


@dataclass
class LatentState:
    """Batched model state; fields are arrays or graph nodes with leading batch axis."""

    deter: object
    stoch: object
    mean: object
    std: object

    @property
    def dist(self) -> DiagGaussian:
        return DiagGaussian(self.mean, self.std)

    def features(self):
        return ad.concat([self.deter, self.stoch], axis=-1)

    def detach(self) -> "LatentState":
        return LatentState(*(ad.value_of(x) for x in (self.deter, self.stoch, self.mean, self.std)))

    def __len__(self) -> int:
        return ad.value_of(self.deter).shape[0]


def stack_states(states: list[LatentState]) -> LatentState:
    """Stack detached states along a new leading axis."""
    fields = ("deter", "stoch", "mean", "std")
    return LatentState(*(np.stack([ad.value_of(getattr(s, f)) for s in states]) for f in fields))


def flatten_states(states: LatentState) -> LatentState:
    """Merge the two leading axes of a stacked state, e.g. (L, B, d) -> (L*B, d)."""
    return LatentState(
        *(x.reshape(-1, x.shape[-1]) for x in (states.deter, states.stoch, states.mean, states.std))
    )


@dataclass
class SequenceBatch:
    """B windows of L steps.  ``actions[:, t]`` is the action taken at ``observations[:, t]``."""

    actions: np.ndarray  # (B, L, A)
    observations: np.ndarray  # (B, L, C, H, W)
    rewards: np.ndarray  # (B, L)

    def __post_init__(self):
        b, l = self.rewards.shape
        if self.actions.shape[:2] != (b, l) or self.observations.shape[:2] != (b, l):
            raise ValueError(
                f"inconsistent batch shapes: actions {self.actions.shape}, "
                f"observations {self.observations.shape}, rewards {self.rewards.shape}"
            )

    @property
    def batch_size(self) -> int:
        return self.rewards.shape[0]

    @property
    def length(self) -> int:
        return self.rewards.shape[1]

    def prev_actions(self) -> np.ndarray:
        """Action preceding each step, zero at the window start; (B, L, A)."""
        prev = np.zeros_like(self.actions)
        prev[:, 1:] = self.actions[:, :-1]
        return prev


@dataclass
class ModelLossReport:
    total: object
    recon: float
    reward: float
    kl: float


class WorldModel:
    """Parameters under ``wm/``; every method takes an optional parameter mapping ``p``."""

    prefix = "wm/"

    def __init__(self, config: WorldModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        if rng is not None:
            self.params = self.init_params(rng)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        c = self.config
        params = {}
        params |= init_mlp(rng, "wm/enc", [c.obs_size, c.hidden, c.hidden])
        params |= init_mlp(rng, "wm/img_in", [c.stoch + c.action_dim, c.deter])
        params |= init_mlp(rng, "wm/gru", [2 * c.deter, 3 * c.deter])
        params |= init_mlp(rng, "wm/prior", [c.deter, c.hidden, 2 * c.stoch])
        params |= init_mlp(rng, "wm/post", [c.deter + c.hidden, c.hidden, 2 * c.stoch])
        params |= init_mlp(rng, "wm/dec", [c.feature_size, c.hidden, c.obs_size])
        params |= init_mlp(rng, "wm/reward", [c.feature_size, c.hidden, 1])
        return params

    def _p(self, p: Mapping | None) -> Mapping:
        return self.params if p is None else p

    def initial_state(self, n: int) -> LatentState:
        """Zero state for sequence starts (the attached distribution is standard normal)."""
        c = self.config
        z = np.zeros((n, c.stoch))
        return LatentState(np.zeros((n, c.deter)), z, z.copy(), np.ones((n, c.stoch)))

    # -- components -------------------------------------------------------

    def encode(self, obs, p: Mapping | None = None):
        p = self._p(p)
        flat = np.reshape(obs, (np.shape(obs)[0], self.config.obs_size))
        return mlp(p, "wm/enc", flat, 2, activate_last=True)

    def recurrent(self, prev: LatentState, action, p: Mapping | None = None):
        """GRU-style update of the deterministic vector from (previous state, action)."""
        p = self._p(p)
        d = self.config.deter
        x = ad.elu(dense(p, "wm/img_in/0", ad.concat([prev.stoch, action], axis=-1)))
        parts = dense(p, "wm/gru/0", ad.concat([x, prev.deter], axis=-1))
        reset = ad.sigmoid(parts[:, :d])
        cand = ad.tanh(reset * parts[:, d : 2 * d])
        update = ad.sigmoid(parts[:, 2 * d :])
        return update * cand + (1.0 - update) * prev.deter

    def prior(self, deter, p: Mapping | None = None) -> DiagGaussian:
        return DiagGaussian.from_raw(mlp(self._p(p), "wm/prior", deter, 2))

    def posterior(self, deter, embed, p: Mapping | None = None) -> DiagGaussian:
        return DiagGaussian.from_raw(mlp(self._p(p), "wm/post", ad.concat([deter, embed], axis=-1), 2))

    def represent(self, prev: LatentState, action, obs, noise, p: Mapping | None = None) -> LatentState:
        """Posterior state from (previous state, previous action, current image)."""
        deter = self.recurrent(prev, action, p)
        post = self.posterior(deter, self.encode(obs, p), p)
        return LatentState(deter, post.sample(noise), post.mean, post.std)

    def transition(self, prev: LatentState, action, noise, p: Mapping | None = None) -> LatentState:
        """Prior state from (previous state, action) without looking at an image."""
        deter = self.recurrent(prev, action, p)
        prior = self.prior(deter, p)
        return LatentState(deter, prior.sample(noise), prior.mean, prior.std)

    def decode(self, features, p: Mapping | None = None):
        """Mean image (flat) of the unit-variance decoder distribution, before clamping."""
        return ad.sigmoid(mlp(self._p(p), "wm/dec", features, 2))

    def reconstruct(self, state: LatentState, p: Mapping | None = None):
        flat = ad.clip(self.decode(state.features(), p), 0.0, 1.0)
        n = ad.value_of(state.deter).shape[0]
        return ad.reshape(flat, (n, *self.config.obs_shape))

    def reward_head(self, features, p: Mapping | None = None):
        return mlp(self._p(p), "wm/reward", features, 2)[:, 0]

    def predict_reward(self, state: LatentState, p: Mapping | None = None):
        return self.reward_head(state.features(), p)

    # -- sequences --------------------------------------------------------

    def _observe(self, batch: SequenceBatch, noise, p: Mapping | None):
        if batch.length < 1:
            raise ValueError("cannot observe an empty sequence")
        noise = self._sequence_noise(batch, noise)
        state = self.initial_state(batch.batch_size)
        prev_actions = batch.prev_actions()
        posts, priors = [], []
        for t in range(batch.length):
            deter = self.recurrent(state, prev_actions[:, t], p)
            prior = self.prior(deter, p)
            post = self.posterior(deter, self.encode(batch.observations[:, t], p), p)
            state = LatentState(deter, post.sample(noise[t]), post.mean, post.std)
            posts.append(state)
            priors.append(prior)
        return posts, priors

    def _sequence_noise(self, batch: SequenceBatch, noise) -> np.ndarray:
        shape = (batch.length, batch.batch_size, self.config.stoch)
        if isinstance(noise, np.random.Generator):
            return noise.standard_normal(shape)
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != shape:
            raise ValueError(f"sequence noise has shape {noise.shape}, expected {shape}")
        return noise

    def observe_sequence(self, batch: SequenceBatch, noise, p: Mapping | None = None) -> list[LatentState]:
        """Posterior states for every step, chained from the zero state.

        Args:
            noise: (L, B, stoch) unit-normal array, or a generator to draw it from.
        """
        return self._observe(batch, noise, p)[0]

    def model_loss(self, batch: SequenceBatch, noise, p: Mapping | None = None) -> ModelLossReport:
        """Negative ELBO per step, averaged over batch and time.

        Unit-variance Gaussian likelihoods for pixels and rewards plus the
        scaled KL between posterior and prior.  With ``free_nats > 0`` the
        batch-mean KL enters the total as ``max(KL, free_nats)``.  ``total`` keeps the type of the
        computation (graph node or array); the terms are plain floats.
        """
        c = self.config
        posts, priors = self._observe(batch, noise, p)
        n = batch.length * batch.batch_size
        feats = ad.reshape(ad.stack([s.features() for s in posts], axis=0), (n, c.feature_size))
        target = np.swapaxes(batch.observations, 0, 1).reshape(n, c.obs_size)
        rewards = batch.rewards.T.reshape(n)

        recon_nll = 0.5 * ad.sum(ad.square(target - self.decode(feats, p)), axis=-1) + c.obs_size * _HALF_LOG_2PI
        reward_nll = 0.5 * ad.square(rewards - self.reward_head(feats, p)) + _HALF_LOG_2PI
        kl = ad.stack([kl_diag_gaussian(s.dist, q) for s, q in zip(posts, priors)], axis=0)

        recon, reward, kl = ad.mean(recon_nll), ad.mean(reward_nll), ad.mean(kl)
        kl_term = ad.clip(kl, c.free_nats, np.inf) if c.free_nats > 0 else kl
        total = recon + reward + c.kl_scale * kl_term
        return ModelLossReport(
            total=total,
            recon=float(ad.value_of(recon)),
            reward=float(ad.value_of(reward)),
            kl=float(ad.value_of(kl)),
        )

    def reconstruction_mse(self, batch: SequenceBatch, noise) -> float:
        """Per-pixel squared error of clamped reconstructions over a batch."""
        recon = self.reconstruct(flatten_states(stack_states(self.observe_sequence(batch, noise))))
        target = np.swapaxes(batch.observations, 0, 1).reshape(recon.shape)
        return float(np.mean((recon - target) ** 2))
