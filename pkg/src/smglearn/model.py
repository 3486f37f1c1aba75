"""Fully-connected encoder/bottleneck/decoder segmentation network.

The network maps a flattened ``H x W`` image to per-pixel foreground
logits through ``256 -> 64 -> 16 -> 64 -> 256`` (for the default 16x16 grid).
Hidden layers use ReLU; the bottleneck uses softplus so that its activation,
which doubles as the replay-scoring feature, is strictly positive and never
has zero norm.  Output logits are clamped to +-30 before the sigmoid.

Parameters live in one flat float64 vector (see :class:`NetSpec` for the
layout).  Gradients are exact reverse-mode derivatives computed by the
kernels in :mod:`smglearn.kernels`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from smglearn import kernels
from smglearn.errors import IntegrityError, NumericOverflowError, ShapeError

GRID = (16, 16)
LOGIT_CLAMP = kernels.numpy_impl.LOGIT_CLAMP


@dataclass(frozen=True)
class Subject:
    image: np.ndarray
    mask: np.ndarray
    site_id: int
    subject_id: int

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ShapeError(
                f"image {self.image.shape} and mask {self.mask.shape} differ"
            )

    @property
    def key(self) -> tuple[int, int]:
        return (self.site_id, self.subject_id)

    @property
    def nbytes(self) -> int:
        """Storage payload: float32 image plus uint8 mask."""
        return self.image.size * 4 + self.mask.size


@dataclass(frozen=True)
class Batch:
    """Stacked subjects, flattened to ``(B, H*W)`` float64 arrays."""

    x: np.ndarray
    y: np.ndarray
    keys: tuple

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], grid=GRID) -> "Batch":
        if len(subjects) == 0:
            raise ShapeError("batch must be non-empty")
        for s in subjects:
            if s.image.shape != tuple(grid):
                raise ShapeError(f"subject shape {s.image.shape} != grid {tuple(grid)}")
        x = np.stack([s.image.ravel() for s in subjects]).astype(np.float64)
        y = np.stack([s.mask.ravel() for s in subjects]).astype(np.float64)
        return cls(np.ascontiguousarray(x), np.ascontiguousarray(y),
                   tuple(s.key for s in subjects))

    def __len__(self) -> int:
        return self.x.shape[0]

    def concat(self, other: "Batch") -> "Batch":
        return Batch(
            np.ascontiguousarray(np.vstack([self.x, other.x])),
            np.ascontiguousarray(np.vstack([self.y, other.y])),
            self.keys + other.keys,
        )

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(
            np.ascontiguousarray(self.x[idx]),
            np.ascontiguousarray(self.y[idx]),
            tuple(self.keys[i] for i in idx),
        )


BatchLike = Union[Batch, Sequence[Subject]]


@dataclass(frozen=True)
class NetSpec:
    """Layer widths and the canonical flat-parameter layout.

    The layout is ``W1, b1, W2, b2, W3, b3, W4, b4`` with ``Wk`` stored
    row-major as ``(fan_in, fan_out)``.
    """

    grid: tuple = GRID
    hidden: int = 64
    bottleneck: int = 16

    @property
    def sizes(self) -> np.ndarray:
        n = self.grid[0] * self.grid[1]
        return np.array([n, self.hidden, self.bottleneck, self.hidden, n], dtype=np.int64)

    @property
    def layout_id(self) -> str:
        return "fc-" + "-".join(str(int(s)) for s in self.sizes)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return int(sum(s[k] * s[k + 1] + s[k + 1] for k in range(4)))

    def slices(self) -> list[tuple[str, slice, tuple]]:
        """``(name, slice, shape)`` for every tensor in the flat layout."""
        s = self.sizes
        out, o = [], 0
        for k in range(4):
            n_w = int(s[k] * s[k + 1])
            out.append((f"W{k + 1}", slice(o, o + n_w), (int(s[k]), int(s[k + 1]))))
            o += n_w
            out.append((f"b{k + 1}", slice(o, o + int(s[k + 1])), (int(s[k + 1]),)))
            o += int(s[k + 1])
        return out


DEFAULT_NET = NetSpec()


def as_batch(batch: BatchLike, net: NetSpec = DEFAULT_NET) -> Batch:
    if isinstance(batch, Batch):
        if len(batch) == 0:
            raise ShapeError("batch must be non-empty")
        if batch.x.shape[1] != int(net.sizes[0]):
            raise ShapeError(f"batch width {batch.x.shape[1]} != {int(net.sizes[0])}")
        return batch
    return Batch.from_subjects(batch, net.grid)


def _check_params(params: np.ndarray, net: NetSpec) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != net.n_params:
        raise ShapeError(
            f"parameter vector has shape {params.shape}, layout {net.layout_id} "
            f"needs ({net.n_params},)"
        )
    return np.ascontiguousarray(params)


def init_params(seed, net: NetSpec = DEFAULT_NET) -> np.ndarray:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for weights and biases."""
    rng = np.random.default_rng(seed)
    theta = np.empty(net.n_params)
    for name, sl, shape in net.slices():
        fan_in = shape[0] if name.startswith("W") else int(net.sizes[int(name[1]) - 1])
        bound = 1.0 / np.sqrt(fan_in)
        theta[sl] = rng.uniform(-bound, bound, size=sl.stop - sl.start)
    return theta


def forward(params, batch: BatchLike, net: NetSpec = DEFAULT_NET) -> np.ndarray:
    """Per-pixel foreground probabilities, shaped ``(B, H, W)``."""
    theta = _check_params(params, net)
    b = as_batch(batch, net)
    probs, _ = kernels.mlp_forward(theta, b.x, net.sizes)
    return probs.reshape((len(b),) + tuple(net.grid))


def loss_and_grad(params, batch: BatchLike, net: NetSpec = DEFAULT_NET):
    """Mean per-pixel BCE over the batch and its exact gradient."""
    theta = _check_params(params, net)
    b = as_batch(batch, net)
    loss, grad = kernels.mlp_loss_grad(theta, b.x, b.y, net.sizes)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericOverflowError("non-finite loss or gradient")
    return float(loss), grad


def bottleneck_features(params, subjects: Union[Subject, BatchLike],
                        net: NetSpec = DEFAULT_NET) -> np.ndarray:
    """Bottleneck activations; ``(k,)`` for one subject, ``(B, k)`` for a batch.

    With a fully-connected bottleneck there is a single spatial position, so
    the average-pooled feature map is the activation vector itself.
    """
    theta = _check_params(params, net)
    single = isinstance(subjects, Subject)
    b = as_batch([subjects] if single else subjects, net)
    _, z = kernels.mlp_forward(theta, b.x, net.sizes)
    return z[0] if single else z


# checkpoint: magic, 32-byte NUL-padded layout id, u64 count, float32 payload
_MAGIC = b"SMGLCKP1"
_HEADER = struct.Struct("<8s32sQ")


def save_checkpoint(path, params, net: NetSpec = DEFAULT_NET) -> None:
    theta = _check_params(params, net)
    lid = net.layout_id.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, lid, theta.shape[0]))
        fh.write(theta.astype("<f4").tobytes())


def load_checkpoint(path, net: NetSpec = DEFAULT_NET) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated checkpoint header")
    magic, lid, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    lid = lid.rstrip(b"\0").decode("ascii")
    if lid != net.layout_id or count != net.n_params:
        raise IntegrityError(
            f"{path}: layout {lid}/{count} does not match {net.layout_id}/{net.n_params}"
        )
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * count:
        raise IntegrityError(f"{path}: payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def round_to_checkpoint(params) -> np.ndarray:
    """Round to the float32 values a checkpoint stores."""
    return np.asarray(params, dtype=np.float64).astype(np.float32).astype(np.float64)
