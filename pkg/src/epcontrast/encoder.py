"""Per-point MLP encoder with hand-derived backpropagation.

Each point is embedded independently from a 9-dimensional input feature:
centroid-centered xyz scaled to the unit bounding box, the point's rgb,
and the scene-mean rgb (the one piece of scene context). Two ReLU hidden
layers feed a linear output layer. Forward caches pre-activations so the
backward pass can produce exact parameter gradients.

Checkpoints use the EPCK layout: magic ``EPCK``, uint32-LE version (=1),
uint32-LE layer count, then per layer fan_out and fan_in as uint32-LE
followed by the float64-LE weight matrix (row-major) and bias vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheError, FormatError, PayloadLengthError, ShapeError
from .pointcloud import PointCloud
from .rng import substream

_MAGIC = b"EPCK"
_VERSION = 1

INPUT_DIM = 9


@dataclass(frozen=True)
class MlpParams:
    """Weights (fan_out, fan_in) and biases per layer; also reused as the
    container for gradients and optimizer moments, which mirror its shapes."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must pair up layer by layer")
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer shapes inconsistent: W {w.shape}, b {b.shape}")
            if prev is not None and w.shape[1] != prev:
                raise ShapeError(
                    f"layer input {w.shape[1]} does not chain from previous output {prev}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters contain non-finite entries")
            prev = w.shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def map(self, fn) -> "MlpParams":
        """New container with ``fn`` applied to every array."""
        return MlpParams(
            tuple(fn(w) for w in self.weights),
            tuple(fn(b) for b in self.biases),
        )

    def zip_map(self, other: "MlpParams", fn) -> "MlpParams":
        return MlpParams(
            tuple(fn(a, b) for a, b in zip(self.weights, other.weights)),
            tuple(fn(a, b) for a, b in zip(self.biases, other.biases)),
        )


def encoder_init(d_in: int, hidden: int, c_out: int, seed: int) -> MlpParams:
    """Uniform He-style init: W ~ U[-sqrt(6/fan_in), +sqrt(6/fan_in)], b = 0."""
    if min(d_in, hidden, c_out) < 1:
        raise ValueError("all layer dimensions must be >= 1")
    sizes = [d_in, hidden, hidden, c_out]
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        rng = substream(seed, layer)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


def encoder_features(cloud: PointCloud) -> np.ndarray:
    """N x 9 input features; see the module docstring."""
    pos = cloud.positions
    centered = pos - pos.mean(axis=0)
    extent = float(np.max(pos.max(axis=0) - pos.min(axis=0)))
    if extent > 0.0:
        centered = centered / extent
    mean_rgb = np.broadcast_to(cloud.colors.mean(axis=0), cloud.colors.shape)
    return np.hstack([centered, cloud.colors, mean_rgb])


def encoder_forward(
    params: MlpParams, cloud: PointCloud
) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Embed every point; returns (N x C embedding, activation cache)."""
    x = encoder_features(cloud)
    if x.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(
            f"encoder expects input dim {params.weights[0].shape[1]}, features have {x.shape[1]}"
        )
    w1, w2, w3 = params.weights
    b1, b2, b3 = params.biases
    z1 = x @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w3.T + b3
    return out, (x, z1, a1, z2, a2)


def encoder_backward(
    params: MlpParams, cache: tuple[np.ndarray, ...], grad_embedding: np.ndarray
) -> MlpParams:
    """Exact parameter gradients for a cached forward pass."""
    if len(cache) != 5:
        raise CacheError(f"cache must hold 5 arrays, got {len(cache)}")
    x, z1, a1, z2, a2 = cache
    w1, w2, w3 = params.weights
    n = x.shape[0]
    if (
        x.shape != (n, w1.shape[1])
        or z1.shape != (n, w1.shape[0])
        or z2.shape != (n, w2.shape[0])
        or grad_embedding.shape != (n, w3.shape[0])
    ):
        raise CacheError(
            "cache shapes do not match these parameters (stale cache?)"
        )
    dout = grad_embedding
    dw3 = dout.T @ a2
    db3 = dout.sum(axis=0)
    da2 = dout @ w3
    dz2 = da2 * (z2 > 0.0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2
    dz1 = da1 * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return MlpParams((dw1, dw2, dw3), (db1, db2, db3))


def save_checkpoint(params: MlpParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(params.weights)))
        for w, b in zip(params.weights, params.biases):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (layers,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    weights, biases = [], []
    for _ in range(layers):
        if offset + 8 > len(blob):
            raise PayloadLengthError(f"{path}: truncated layer header at byte {offset}")
        fan_out, fan_in = struct.unpack_from("<II", blob, offset)
        offset += 8
        need = 8 * fan_out * fan_in + 8 * fan_out
        if offset + need > len(blob):
            raise PayloadLengthError(
                f"{path}: expected {need} payload bytes at {offset}, file has {len(blob) - offset}"
            )
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=offset)
        offset += 8 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if offset != len(blob):
        raise PayloadLengthError(
            f"{path}: {len(blob) - offset} trailing bytes after the last layer"
        )
    return MlpParams(tuple(weights), tuple(biases))
