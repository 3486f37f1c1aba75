"""Synthetic multi-site segmentation data.

Each subject is a filled ellipse on a 16x16 grid.  A site applies its own
intensity transform (``image * contrast + bias``), repeated 3x3 box blurs and
additive Gaussian noise, standing in for one acquisition protocol.  Masks are
never touched by the transform.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from smglearn import kernels
from smglearn.errors import ConfigError, IntegrityError
from smglearn.model import GRID, Subject

# per-site subject counts of the six-site prostate collection
SITE_COUNTS = (30, 30, 19, 13, 12, 12)
MIN_SUBJECTS = 7

# (first site, last site) endpoints of the monotone shift schedule
BIAS_RANGE = (0.0, 2.5)
CONTRAST_RANGE = (1.0, 0.6)
NOISE_RANGE = (0.05, 0.25)
BLUR_RANGE = (0, 2)


@dataclass(frozen=True)
class SiteSpec:
    site_id: int
    intensity_bias: float = 0.0
    contrast_scale: float = 1.0
    noise_sigma: float = 0.0
    blur_radius: int = 0
    n_subjects: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.contrast_scale <= 0:
            raise ConfigError(f"contrast_scale must be > 0, got {self.contrast_scale}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.blur_radius < 0:
            raise ConfigError(f"blur_radius must be >= 0, got {self.blur_radius}")


@dataclass(frozen=True)
class SiteDataset:
    spec: SiteSpec
    train: tuple
    val: tuple
    test: tuple

    @property
    def site_id(self) -> int:
        return self.spec.site_id

    def split(self, name: str) -> tuple:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_subjects(self) -> list[Subject]:
        return sorted(self.train + self.val + self.test, key=lambda s: s.subject_id)


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = math.floor(0.6 * n)
    n_val = math.floor(0.15 * n)
    return n_train, n_val, n - n_train - n_val


def render_ellipse(rng: np.random.Generator, grid=GRID) -> np.ndarray:
    """Binary mask of a randomly placed, sized and rotated ellipse."""
    h, w = grid
    cy = (h - 1) / 2 + rng.uniform(-2.0, 2.0)
    cx = (w - 1) / 2 + rng.uniform(-2.0, 2.0)
    ay = rng.uniform(2.5, 5.5)
    ax = rng.uniform(2.5, 5.5)
    phi = rng.uniform(0.0, math.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(phi) + dy * math.sin(phi)
    v = -dx * math.sin(phi) + dy * math.cos(phi)
    mask = ((u / ax) ** 2 + (v / ay) ** 2 <= 1.0).astype(np.uint8)
    if not mask.any():  # pragma: no cover - semi-axes >= 2.5 always cover a pixel
        mask[int(round(cy)), int(round(cx))] = 1
    return mask


def apply_site_transform(clean: np.ndarray, spec: SiteSpec,
                         rng: np.random.Generator) -> np.ndarray:
    img = clean.astype(np.float64) * spec.contrast_scale + spec.intensity_bias
    if spec.blur_radius:
        img = kernels.box_blur(np.ascontiguousarray(img), spec.blur_radius)
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return img


def generate_site(spec: SiteSpec, grid=GRID) -> SiteDataset:
    if spec.n_subjects < MIN_SUBJECTS:
        raise ConfigError(
            f"site {spec.site_id}: n_subjects={spec.n_subjects} leaves an empty split; "
            f"need >= {MIN_SUBJECTS}"
        )
    subjects = []
    for sid in range(spec.n_subjects):
        rng = np.random.default_rng([spec.seed, spec.site_id, sid])
        mask = render_ellipse(rng, grid)
        image = apply_site_transform(mask, spec, rng)
        subjects.append(Subject(image, mask, spec.site_id, sid))
    order = np.random.default_rng([spec.seed, spec.site_id]).permutation(spec.n_subjects)
    n_train, n_val, _ = split_sizes(spec.n_subjects)

    def pick(idx):
        return tuple(sorted((subjects[i] for i in idx), key=lambda s: s.subject_id))

    return SiteDataset(
        spec,
        pick(order[:n_train]),
        pick(order[n_train:n_train + n_val]),
        pick(order[n_train + n_val:]),
    )


def _lerp(a: float, b: float, frac: float) -> float:
    return a + (b - a) * frac


def default_stream(n_sites: int = 6, base_seed: int = 0) -> list[SiteSpec]:
    """Site specs whose shift grows monotonically with the site index.

    Site ids run ``1..n_sites``.  Intensity bias and noise increase while
    contrast decreases; blur grows in unit steps.  Subject counts follow
    ``SITE_COUNTS`` (padded with its last value for longer streams).
    """
    if n_sites < 2:
        raise ConfigError(f"n_sites must be >= 2, got {n_sites}")
    specs = []
    for k in range(n_sites):
        frac = k / (n_sites - 1)
        count = SITE_COUNTS[k] if k < len(SITE_COUNTS) else SITE_COUNTS[-1]
        specs.append(SiteSpec(
            site_id=k + 1,
            intensity_bias=round(_lerp(*BIAS_RANGE, frac), 6),
            contrast_scale=round(_lerp(*CONTRAST_RANGE, frac), 6),
            noise_sigma=round(_lerp(*NOISE_RANGE, frac), 6),
            blur_radius=int(round(_lerp(*BLUR_RANGE, frac))),
            n_subjects=count,
            seed=int(base_seed),
        ))
    return specs


def generate_stream(specs: Sequence[SiteSpec]) -> dict[int, SiteDataset]:
    return {s.site_id: generate_site(s) for s in specs}


# --- export / import: JSON header line, then split index, images, masks ---

def export_site(ds: SiteDataset, path) -> None:
    subjects = ds.all_subjects()
    split_of = {s.subject_id: name for name in ("train", "val", "test")
                for s in ds.split(name)}
    header = {
        "spec": asdict(ds.spec),
        "grid": list(subjects[0].image.shape),
        "subjects": [{"subject_id": s.subject_id, "split": split_of[s.subject_id]}
                     for s in subjects],
    }
    images = np.stack([s.image for s in subjects]).astype("<f4")
    masks = np.stack([s.mask for s in subjects]).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(images.tobytes())
        fh.write(masks.tobytes())


def import_site(path) -> SiteDataset:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise IntegrityError(f"{path}: missing header")
    header = json.loads(raw[:nl])
    spec = SiteSpec(**header["spec"])
    h, w = header["grid"]
    n = len(header["subjects"])
    body = raw[nl + 1:]
    if len(body) != n * h * w * 5:
        raise IntegrityError(f"{path}: payload size {len(body)} != {n * h * w * 5}")
    images = np.frombuffer(body[:n * h * w * 4], dtype="<f4").reshape(n, h, w)
    masks = np.frombuffer(body[n * h * w * 4:], dtype=np.uint8).reshape(n, h, w)
    splits = {"train": [], "val": [], "test": []}
    for i, meta in enumerate(header["subjects"]):
        splits[meta["split"]].append(Subject(images[i].astype(np.float64), masks[i].copy(),
                                             spec.site_id, meta["subject_id"]))
    return SiteDataset(spec, tuple(splits["train"]), tuple(splits["val"]),
                       tuple(splits["test"]))
