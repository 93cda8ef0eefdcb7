"""Reconstruction-driven horizon selection.

The decoded image of a state is re-encoded into a second state that shares
the deterministic path and the posterior noise of the original.  Both states
are imagined forward with one shared noise record, and the horizons where
their value expansions agree most are kept; the final estimate averages the
original state's expansions over those horizons.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .value_expansion import ImaginedTrajectory, NoiseRecord, ValueFamily, imagine, value_family
from .world_model import LatentState, WorldModel


def reconstruction_state(model: WorldModel, prev: LatentState, prev_action, state: LatentState, noise) -> LatentState:
    """Re-encode the reconstruction of ``state``; ``noise`` must be the draw that produced it."""
    recon = model.reconstruct(state)
    return model.represent(prev, prev_action, recon, noise)


def horizon_errors(family: ValueFamily, family_hat: ValueFamily) -> np.ndarray:
    """|V_h(s) - V_h(s_hat)| for h = 1..H (batch axes preserved)."""
    if family.horizon != family_hat.horizon:
        raise ValueError(f"families have horizons {family.horizon} and {family_hat.horizon}")
    if family.gamma != family_hat.gamma:
        raise ValueError(f"families use different discounts {family.gamma} and {family_hat.gamma}")
    return np.abs(ad.value_of(family.values) - ad.value_of(family_hat.values))


def select_horizons(errors: np.ndarray, k: int) -> np.ndarray:
    """1-based horizons of the ``k`` smallest errors along axis 0.

    Ties go to the smaller horizon (stable sort).  Rows of the result are in
    ascending error order; shape is ``(k,) + errors.shape[1:]``.
    """
    errors = np.asarray(errors)
    horizon = errors.shape[0]
    if not 1 <= k <= horizon:
        raise ValueError(f"K={k} outside 1..{horizon}")
    return np.argsort(errors, axis=0, kind="stable")[:k] + 1


def dmve_value(family: ValueFamily, horizons: np.ndarray) -> np.ndarray:
    """Mean of V_h over the selected horizons."""
    horizons = np.asarray(horizons)
    if horizons.size == 0:
        raise ValueError("no horizons selected")
    if horizons.min() < 1 or horizons.max() > family.horizon:
        raise ValueError(f"selected horizons {horizons} outside 1..{family.horizon}")
    values = ad.value_of(family.values)
    if values.ndim == 1:
        return values[horizons - 1].mean(axis=0)
    return np.take_along_axis(values, horizons - 1, axis=0).mean(axis=0)


@dataclass
class HorizonSelection:
    errors: np.ndarray  # (H, N)
    horizons: np.ndarray  # (K, N), 1-based
    value: np.ndarray  # (N,)
    state_hat: LatentState
    traj: ImaginedTrajectory
    traj_hat: ImaginedTrajectory
    family: ValueFamily
    family_hat: ValueFamily

    @property
    def mean_horizon(self) -> float:
        return float(np.mean(self.horizons))

    @property
    def per_state_mean_horizon(self) -> np.ndarray:
        return np.mean(self.horizons, axis=0)


def estimate_state_value(
    model: WorldModel,
    actor,
    critic,
    prev: LatentState,
    prev_action,
    state: LatentState,
    posterior_noise,
    horizon: int,
    k: int,
    gamma: float,
    noise: NoiseRecord,
    traj: ImaginedTrajectory | None = None,
    state_hat: LatentState | None = None,
) -> HorizonSelection:
    """Adaptive-horizon value estimate for every state in the batch.

    Args:
        prev, prev_action, posterior_noise: the context that produced ``state``.
        noise: imagination noise shared by both rollouts.
        traj: an already computed rollout of ``state`` under ``noise`` (e.g. the
            one recorded for the actor update); recomputed when omitted.
        state_hat: a precomputed reconstruction-based state.
    """
    if state_hat is None:
        state_hat = reconstruction_state(model, prev, prev_action, state, posterior_noise)
    if traj is None:
        traj = imagine(model, actor, critic, state, horizon, noise=noise)
    traj_hat = imagine(model, actor, critic, state_hat, horizon, noise=noise)
    rewards, values = ad.value_of(traj.rewards), ad.value_of(traj.values)
    family = value_family(ImaginedTrajectory(traj.states, traj.actions, rewards, values, noise), gamma)
    family_hat = value_family(traj_hat, gamma)
    errors = horizon_errors(family, family_hat)
    chosen = select_horizons(errors, k)
    return HorizonSelection(
        errors=errors,
        horizons=chosen,
        value=dmve_value(family, chosen),
        state_hat=state_hat,
        traj=traj,
        traj_hat=traj_hat,
        family=family,
        family_hat=family_hat,
    )


HORIZON_CSV_COLUMNS = ["step", "state_id", "selected_horizons", "mean_selected_horizon", "min_error", "max_error"]


def append_horizon_diagnostics(path: str | Path, step: int, selection: HorizonSelection) -> None:
    """Append one row per state; selected horizons are space-separated, ascending."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(HORIZON_CSV_COLUMNS)
        errors = selection.errors.reshape(selection.errors.shape[0], -1)
        chosen = selection.horizons.reshape(selection.horizons.shape[0], -1)
        for j in range(errors.shape[1]):
            hs = sorted(int(h) for h in chosen[:, j])
            writer.writerow(
                [
                    step,
                    j,
                    " ".join(map(str, hs)),
                    repr(float(np.mean(hs))),
                    repr(float(errors[:, j].min())),
                    repr(float(errors[:, j].max())),
                ]
            )
