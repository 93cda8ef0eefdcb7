"""Dense layers over flat parameter dictionaries.

Parameters live in plain ``dict[str, ndarray]`` keyed ``"<prefix>/<layer>/w"``
and ``"<prefix>/<layer>/b"``.  Apply functions accept any mapping, so the
same code runs on raw arrays or on a :class:`~dmve.autodiff.ParamView`.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from . import autodiff as ad


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out)


def init_mlp(rng: np.random.Generator, prefix: str, sizes: Sequence[int]) -> dict[str, np.ndarray]:
    params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = init_dense(rng, n_in, n_out)
        params[f"{prefix}/{i}/w"] = w
        params[f"{prefix}/{i}/b"] = b
    return params


def dense(p: Mapping, name: str, x):
    return ad.matmul(x, p[f"{name}/w"]) + p[f"{name}/b"]


def mlp(p: Mapping, prefix: str, x, n_layers: int, activate_last: bool = False):
    """ELU hidden layers; the last layer is linear unless ``activate_last``."""
    for i in range(n_layers):
        x = dense(p, f"{prefix}/{i}", x)
        if i < n_layers - 1 or activate_last:
            x = ad.elu(x)
    return x


def subset(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k: v for k, v in params.items() if k.startswith(prefix)}
