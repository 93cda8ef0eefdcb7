"""Self-describing binary container of named float64 arrays.

Layout (little-endian)::

    b"DMVE" | u32 format version
    repeated until EOF:
        u32 name length | utf-8 name | u32 rank | u64 dim * rank | f64 data
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

MAGIC = b"DMVE"
FORMAT_VERSION = 1
MANIFEST_PREFIX = "manifest/"


class CheckpointError(ValueError):
    pass


def write_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos, out = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{rank}Q", data, pos + 4)
            pos += 4 + 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt record") from exc
    return out


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], manifest: Mapping[str, object]) -> None:
    """Write parameters plus manifest entries (stored as ``manifest/<key>`` arrays)."""
    arrays = dict(params)
    arrays[MANIFEST_PREFIX + "format_version"] = np.asarray(float(FORMAT_VERSION))
    for key, value in manifest.items():
        arrays[MANIFEST_PREFIX + key] = np.asarray(value, dtype=np.float64)
    write_arrays(path, arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    arrays = read_arrays(path)
    manifest = {k[len(MANIFEST_PREFIX):]: v for k, v in arrays.items() if k.startswith(MANIFEST_PREFIX)}
    params = {k: v for k, v in arrays.items() if not k.startswith(MANIFEST_PREFIX)}
    return params, manifest
