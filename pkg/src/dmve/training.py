"""Training loop: model learning, value estimation, actor/critic updates, data collection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agent import Agent, AgentPolicy, Optimizers, actor_loss, critic_loss
from .config import TrainConfig
from .envs import Episode, PixelEnv, make_env, write_episode
from .horizons import append_horizon_diagnostics, estimate_state_value, reconstruction_state
from .optim import NonFiniteError, OptimizerState, adam_step, clip_by_global_norm
from .replay import ReplayDataset
from .value_expansion import NoiseRecord, ValueFamily, imagine, lambda_return_from_family, value_family
from .world_model import flatten_states, stack_states

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "env_step",
    "train_step",
    "model_loss",
    "recon_loss",
    "reward_loss",
    "kl",
    "actor_loss",
    "critic_loss",
    "mean_selected_horizon",
    "eval_return_mean",
    "eval_return_std",
]


@dataclass
class StepMetrics:
    model_loss: float
    recon_loss: float
    reward_loss: float
    kl: float
    actor_loss: float
    critic_loss: float
    mean_selected_horizon: float | None = None


def make_optimizers(config: TrainConfig) -> Optimizers:
    return Optimizers(
        model=OptimizerState(lr=config.model_lr),
        actor=OptimizerState(lr=config.actor_lr),
        critic=OptimizerState(lr=config.critic_lr),
    )


def _finite(name: str, value) -> float:
    value = float(np.asarray(value))
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} became {value}")
    return value


def critic_targets(agent: Agent, config: TrainConfig, batch, posterior_noise, posts, start, traj, family: ValueFamily):
    """Critic regression targets for the configured estimator.

    Returns (targets, selection) where selection is the horizon selection for
    the dynamic-horizon estimator and ``None`` otherwise.
    """
    if config.estimator == "mve":
        return family.values[-1], None
    if config.estimator == "lambda":
        return lambda_return_from_family(family, config.lam), None
    model = agent.model
    prev_actions = batch.prev_actions()
    prev = model.initial_state(batch.batch_size)
    hats = []
    # one time step at a time so the re-encoding matches the observation pass exactly
    for t, post in enumerate(posts):
        hats.append(reconstruction_state(model, prev, prev_actions[:, t], post, posterior_noise[t]))
        prev = post
    state_hat = flatten_states(stack_states(hats))
    selection = estimate_state_value(
        model,
        agent.actor,
        agent.critic,
        prev=None,
        prev_action=None,
        state=start,
        posterior_noise=None,
        horizon=config.horizon,
        k=config.num_horizons,
        gamma=config.gamma,
        noise=traj.noise,
        traj=traj,
        state_hat=state_hat,
    )
    return selection.value, selection


def train_step(
    agent: Agent,
    opt: Optimizers,
    dataset: ReplayDataset,
    config: TrainConfig,
    rng: np.random.Generator,
    diag_path: Path | None = None,
    step: int = 0,
) -> StepMetrics:
    """One model update followed by one actor and one critic update."""
    model, actor, critic = agent.model, agent.actor, agent.critic
    batch = dataset.sample(config.batch_size, config.seq_len, rng)
    posterior_noise = rng.standard_normal((config.seq_len, config.batch_size, model.config.stoch))

    graph = ad.Graph(trainable=(model.prefix,))
    report = model.model_loss(batch, posterior_noise, p=graph.bind(model.params))
    model_total = _finite("model_loss", report.total.value)
    grads = ad.backprop(graph, report.total)
    adam_step(model.params, clip_by_global_norm(grads, config.grad_clip), opt.model)
    del graph

    posts = model.observe_sequence(batch, posterior_noise)
    start = flatten_states(stack_states(posts))
    noise = NoiseRecord.draw(rng, config.horizon, len(start), model.config.action_dim, model.config.stoch)

    graph = ad.Graph(trainable=(actor.prefix,))
    traj = imagine(model, actor, critic, start, config.horizon, noise=noise, p=graph.bind(agent.params))
    family_graph = value_family(traj, config.gamma)
    a_loss = actor_loss(family_graph)
    actor_value = _finite("actor_loss", a_loss.value)
    actor_grads = ad.backprop(graph, a_loss)
    family = ValueFamily(family_graph.values.value, config.gamma)
    del graph, family_graph, a_loss

    targets, selection = critic_targets(agent, config, batch, posterior_noise, posts, start, traj, family)
    del traj

    graph = ad.Graph(trainable=(critic.prefix,))
    c_loss = critic_loss(critic, start.features(), targets, p=graph.bind(critic.params))
    critic_value = _finite("critic_loss", c_loss.value)
    critic_grads = ad.backprop(graph, c_loss)

    adam_step(actor.params, clip_by_global_norm(actor_grads, config.grad_clip), opt.actor)
    adam_step(critic.params, clip_by_global_norm(critic_grads, config.grad_clip), opt.critic)

    if selection is not None and diag_path is not None:
        append_horizon_diagnostics(diag_path, step, selection)
    return StepMetrics(
        model_loss=model_total,
        recon_loss=report.recon,
        reward_loss=report.reward,
        kl=report.kl,
        actor_loss=actor_value,
        critic_loss=critic_value,
        mean_selected_horizon=None if selection is None else selection.mean_horizon,
    )


def fit_world_model(model, batch, steps: int, lr: float, rng: np.random.Generator, grad_clip: float = 100.0) -> list[float]:
    """Model-only training on one fixed batch (full-batch Adam); returns the per-step losses."""
    opt = OptimizerState(lr=lr)
    losses = []
    for _ in range(steps):
        graph = ad.Graph(trainable=(model.prefix,))
        report = model.model_loss(batch, rng, p=graph.bind(model.params))
        losses.append(_finite("model_loss", report.total.value))
        adam_step(model.params, clip_by_global_norm(ad.backprop(graph, report.total), grad_clip), opt)
    return losses


# ---------------------------------------------------------------------------
# environment interaction


def collect_random_episode(env: PixelEnv, seed: int) -> Episode:
    rng = np.random.default_rng(seed)
    obs = env.reset(seed)
    acts, obss, rews = [], [], []
    done = False
    while not done:
        action = rng.uniform(-1.0, 1.0, size=env.action_dim)
        reward, nxt, done = env.step(action)
        acts.append(action)
        obss.append(obs)
        rews.append(reward)
        obs = nxt
    return Episode(env.name, np.array(acts), np.array(obss), np.array(rews))


def collect_episode(
    env: PixelEnv,
    agent: Agent,
    expl_noise: float,
    seed: int,
    deterministic: bool = False,
    trace: dict | None = None,
) -> Episode:
    """Closed-loop episode; ``trace`` (if given) receives online states and posterior noise."""
    policy = AgentPolicy(agent, np.random.default_rng(seed), expl_noise=expl_noise, deterministic=deterministic)
    obs = env.reset(seed)
    acts, obss, rews = [], [], []
    done = False
    while not done:
        action = policy.act(obs)
        reward, nxt, done = env.step(action)
        acts.append(action)
        obss.append(obs)
        rews.append(reward)
        obs = nxt
    if trace is not None:
        trace["states"] = policy.states
        trace["posterior_noise"] = policy.posterior_noise
    return Episode(env.name, np.array(acts), np.array(obss), np.array(rews))


def evaluate_agent(agent: Agent, env: PixelEnv, episodes: int, seed: int) -> np.ndarray:
    """Undiscounted returns of ``episodes`` noise-free episodes with seeds ``seed + i``."""
    return np.array(
        [collect_episode(env, agent, 0.0, seed + i, deterministic=True).total_return for i in range(episodes)]
    )


# ---------------------------------------------------------------------------
# full runs


@dataclass
class RunArtifacts:
    out_dir: Path
    metrics_path: Path
    eval_path: Path
    checkpoint_path: Path
    train_steps: int = 0
    env_steps: int = 0
    dataset_episodes: int = 0
    eval_history: list[tuple[int, float, float]] = field(default_factory=list)
    seed_return: float = float("nan")
    mean_selected_horizon: float | None = None

    @property
    def final_return(self) -> float:
        return self.eval_history[-1][1] if self.eval_history else float("nan")


def _fmt(value) -> str:
    return "" if value is None else repr(float(value)) if isinstance(value, float) else str(value)


def run_training(config: TrainConfig, out_dir: str | Path) -> RunArtifacts:
    """Seed the dataset with random episodes, then alternate C train steps with one collected episode.

    Stops once the environment-step budget is spent.  Evaluation (noise-free,
    ``eval_episodes`` fixed seeds) runs whenever the step count crosses a
    multiple of ``eval_interval`` and once at the end; results go to the last
    metrics row written before them and to ``eval.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    episodes_dir = out / "episodes"
    if config.save_episodes:
        episodes_dir.mkdir(exist_ok=True)
    art = RunArtifacts(out, out / "metrics.csv", out / "eval.csv", out / "final.ckpt")
    diag_path = out / "horizons.csv" if config.diag_interval and config.estimator == "dmve" else None
    if diag_path is not None and diag_path.exists():
        diag_path.unlink()

    streams = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, train_rng = (np.random.default_rng(s) for s in streams[:2])
    collect_seeds = np.random.default_rng(streams[2]).integers(2**31, size=1_000_000 // config.episode_length + 1)
    eval_seed = int(np.random.default_rng(streams[3]).integers(2**31))

    env = make_env(config.env, config.episode_length)
    eval_env = make_env(config.env, config.episode_length)
    agent = Agent.from_config(config, init_rng)
    opt = make_optimizers(config)
    dataset = ReplayDataset(config.dataset_capacity)
    n_episodes = 0

    def add_episode(ep: Episode) -> None:
        nonlocal n_episodes
        dataset.add(ep)
        if config.save_episodes:
            write_episode(episodes_dir / f"episode_{n_episodes:05d}.bin", ep)
        n_episodes += 1
        art.env_steps += len(ep)

    metrics_fh = open(art.metrics_path, "w", newline="")
    eval_fh = open(art.eval_path, "w", newline="")
    metrics = csv.writer(metrics_fh)
    evals = csv.writer(eval_fh)
    metrics.writerow(METRICS_COLUMNS)
    evals.writerow(["env_step", "train_step", "eval_return_mean", "eval_return_std"])
    pending: list[list] = []
    horizons: list[float] = []

    def flush() -> None:
        for row in pending:
            metrics.writerow([_fmt(v) for v in row])
        pending.clear()
        metrics_fh.flush()

    def run_eval() -> None:
        returns = evaluate_agent(agent, eval_env, config.eval_episodes, eval_seed)
        mean, std = float(np.mean(returns)), float(np.std(returns))
        art.eval_history.append((art.env_steps, mean, std))
        evals.writerow([art.env_steps, art.train_steps, repr(mean), repr(std)])
        eval_fh.flush()
        if pending:
            pending[-1][-2:] = [mean, std]
        log.info("env_step=%d eval_return=%.3f +- %.3f", art.env_steps, mean, std)

    try:
        for i in range(config.seed_episodes):
            add_episode(collect_random_episode(env, int(collect_seeds[n_episodes])))
        art.seed_return = float(np.mean([ep.total_return for ep in dataset.episodes]))
        last_eval_step = -1
        while art.env_steps < config.total_steps:
            for _ in range(config.collect_interval):
                art.train_steps += 1
                diag = diag_path if diag_path is not None and art.train_steps % config.diag_interval == 0 else None
                m = train_step(agent, opt, dataset, config, train_rng, diag_path=diag, step=art.train_steps)
                if m.mean_selected_horizon is not None:
                    horizons.append(m.mean_selected_horizon)
                pending.append(
                    [art.env_steps, art.train_steps, m.model_loss, m.recon_loss, m.reward_loss, m.kl,
                     m.actor_loss, m.critic_loss, m.mean_selected_horizon, None, None]
                )
            before = art.env_steps
            add_episode(collect_episode(env, agent, config.expl_noise, int(collect_seeds[n_episodes])))
            crossed = art.env_steps // config.eval_interval > before // config.eval_interval
            if crossed or art.env_steps >= config.total_steps:
                run_eval()
                last_eval_step = art.env_steps
            flush()
        if last_eval_step != art.env_steps:
            run_eval()
            flush()
        agent.save(art.checkpoint_path)
    except BaseException:
        flush()
        agent.save(out / "partial.ckpt")
        raise
    finally:
        metrics_fh.close()
        eval_fh.close()
    art.dataset_episodes = len(dataset)
    art.mean_selected_horizon = float(np.mean(horizons)) if horizons else None
    return art
