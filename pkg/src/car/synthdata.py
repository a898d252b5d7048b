"""Synthetic ambiguous datasets with analytically known predictive
distributions.

Three tasks:

* bimodal regression - scalar x on [0,1] mapped to one of two noisy
  branches chosen by a biased coin, so p(y|x) is a two-component mixture
  with known mixing weight and means;
* boundary segmentation - a two-class strip image whose true boundary
  column is drawn from a configured distribution, so identical inputs
  carry several valid labelings;
* flip-class segmentation - a fixed class layout where whole regions
  independently flip to designated alternate classes with known
  probabilities, giving exact per-pixel marginals to calibrate against.

All generators are pure functions of (config, count): one vectorized pass
per dataset, deterministic across platforms via counter-based streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arrayio, rng


@dataclass
class BimodalRegressionConfig:
    pi: float = 0.5  # probability of selecting branch b=1
    sigma: float = 0.01
    n: int = 10000
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must be in [0,1], got {self.pi}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")
        return self


@dataclass
class BoundarySegConfig:
    height: int = 8
    width: int = 16
    boundary_probs: np.ndarray = None  # over columns 1..width-1; None = uniform
    noise_std: float = 1.0
    seed: int = 0
    classes: int = 2

    def __post_init__(self):
        if self.boundary_probs is None:
            n = max(1, self.width - 1)
            self.boundary_probs = np.full(n, 1.0 / n)
        else:
            self.boundary_probs = np.asarray(self.boundary_probs, dtype=np.float64)

    def validate(self):
        if self.width < 2:
            raise ValueError("width must be at least 2")
        if self.boundary_probs.shape != (self.width - 1,):
            raise ValueError(
                f"need {self.width - 1} boundary probabilities, got "
                f"{self.boundary_probs.shape}")
        if np.any(self.boundary_probs < 0) or abs(self.boundary_probs.sum() - 1) > 1e-9:
            raise ValueError("boundary probabilities must form a distribution")
        return self


def default_flip_base(height=8, width=8):
    """Three vertical bands of classes 0, 1, 2."""
    base = np.zeros((height, width), dtype=np.int64)
    third = width // 3
    base[:, third:2 * third] = 1
    base[:, 2 * third:] = 2
    return base


@dataclass
class FlipClassConfig:
    base: np.ndarray = field(default_factory=default_flip_base)
    # (class, alternate class, flip probability)
    flip_pairs: list = field(default_factory=lambda: [
        (0, 3, 8 / 17), (1, 4, 7 / 17), (2, 5, 6 / 17)])
    classes: int = 6
    noise_std: float = 1.0
    seed: int = 0

    def validate(self):
        self.base = np.asarray(self.base, dtype=np.int64)
        sources = [p[0] for p in self.flip_pairs]
        alts = [p[1] for p in self.flip_pairs]
        if len(set(sources)) != len(sources):
            raise ValueError("overlapping flip pairs: duplicate source class")
        base_classes = set(np.unique(self.base).tolist())
        if len(set(alts)) != len(alts) or set(alts) & (set(sources) | base_classes):
            raise ValueError("overlapping flip pairs: alternate classes must be "
                             "distinct from sources, base classes and each other")
        for cls, alt, p in self.flip_pairs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"flip probability {p} outside [0,1]")
            if not (0 <= cls < self.classes and 0 <= alt < self.classes):
                raise ValueError(f"flip pair ({cls},{alt}) outside K={self.classes}")
        if self.base.max() >= self.classes or self.base.min() < 0:
            raise ValueError("base layout uses classes outside K")
        return self


# ---------------------------------------------------------------------------
# bimodal regression
# ---------------------------------------------------------------------------


def bimodal_branch_values(x, b):
    """Noise-free target for inputs x and branch indicator b (0 or 1)."""
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mid = ((-1.0) ** b) * (-1.25 * x + 1.0)
    return np.where(x < 0.4, 0.5 - b, np.where(x < 0.8, mid, 0.0))


def gen_bimodal(config: BimodalRegressionConfig):
    """(x, y) arrays of shape (n,). Branch b=1 is selected with probability pi."""
    config.validate()
    g = rng.stream(config.seed, rng.STREAM_DATA)
    x = g.uniform(0.0, 1.0, size=config.n)
    b = (g.uniform(size=config.n) < config.pi).astype(np.float64)
    eps = g.normal(0.0, config.sigma, size=config.n) if config.sigma > 0 else 0.0
    return x, bimodal_branch_values(x, b) + eps


def bimodal_conditional_mean(config, x):
    """E[y|x] in closed form; `config` may also be a bare pi value."""
    pi = config.pi if hasattr(config, "pi") else float(config)
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x outside [0,1]")
    return np.where(x < 0.4, 0.5 - pi,
                    np.where(x < 0.8, (1.0 - 2.0 * pi) * (-1.25 * x + 1.0), 0.0))


def bimodal_mode_centers(x):
    """Noise-free y of each branch at x: (upper b=0, lower b=1)."""
    x = np.asarray(x, dtype=np.float64)
    return bimodal_branch_values(x, np.zeros_like(x)), bimodal_branch_values(x, np.ones_like(x))


# ---------------------------------------------------------------------------
# boundary segmentation
# ---------------------------------------------------------------------------


def _strip_image(height, width, noise):
    """Fixed horizontal gradient channel plus a per-sample noise channel."""
    grad = np.broadcast_to(np.linspace(0.0, 1.0, width), (height, width))
    img = np.empty(noise.shape[:1] + (height, width, 2))
    img[..., 0] = grad
    img[..., 1] = noise
    return img


def gen_boundary_seg(config: BoundarySegConfig, count):
    """(images, labels): images (count,H,W,2), labels (count,H,W) in {0,1}.

    Pixels left of the drawn boundary column are class 0.
    """
    config.validate()
    g = rng.stream(config.seed, rng.STREAM_DATA)
    columns = g.choice(np.arange(1, config.width), size=count, p=config.boundary_probs)
    noise = g.normal(0.0, config.noise_std, size=(count, config.height, config.width))
    cols = np.arange(config.width)
    labels = (cols[None, None, :] >= columns[:, None, None]).astype(np.int64)
    labels = np.broadcast_to(labels, (count, config.height, config.width)).copy()
    return _strip_image(config.height, config.width, noise), labels


# ---------------------------------------------------------------------------
# flip-class segmentation
# ---------------------------------------------------------------------------


def gen_flipclass(config: FlipClassConfig, count):
    """(images, labels): each sample independently flips every configured
    class region to its alternate with the configured probability."""
    config.validate()
    g = rng.stream(config.seed, rng.STREAM_DATA)
    h, w = config.base.shape
    flips = g.uniform(size=(count, len(config.flip_pairs)))
    noise = g.normal(0.0, config.noise_std, size=(count, h, w))
    labels = np.broadcast_to(config.base, (count, h, w)).copy()
    for j, (cls, alt, p) in enumerate(config.flip_pairs):
        flip_mask = flips[:, j] < p
        region = config.base == cls
        labels[flip_mask[:, None, None] & region[None, :, :]] = alt
    norm = config.base.astype(np.float64) / max(1, config.classes - 1)
    img = np.empty((count, h, w, 2))
    img[..., 0] = norm
    img[..., 1] = noise
    return img, labels


def ground_truth_pixel_distribution(config):
    """Exact per-pixel class marginals implied by the generator: (H,W,K)."""
    if isinstance(config, BoundarySegConfig):
        config.validate()
        # P(class 0 at column j) = P(boundary column > j)
        tail = np.concatenate([[1.0], 1.0 - np.cumsum(config.boundary_probs)])
        p0 = np.clip(tail[:config.width], 0.0, 1.0)
        out = np.zeros((config.height, config.width, 2))
        out[..., 0] = p0[None, :]
        out[..., 1] = 1.0 - p0[None, :]
        return out
    if isinstance(config, FlipClassConfig):
        config.validate()
        h, w = config.base.shape
        out = np.zeros((h, w, config.classes))
        flip_for = {cls: (alt, p) for cls, alt, p in config.flip_pairs}
        for cls in range(config.classes):
            region = config.base == cls
            if not region.any():
                continue
            if cls in flip_for:
                alt, p = flip_for[cls]
                out[region, cls] = 1.0 - p
                out[region, alt] = p
            else:
                out[region, cls] = 1.0
        return out
    raise TypeError(f"no analytic marginal for {type(config).__name__}")


# ---------------------------------------------------------------------------
# helpers shared by training and evaluation
# ---------------------------------------------------------------------------


def one_hot_labels(labels, classes):
    """(..., H, W) class indices -> (..., H, W, K) one-hot float64."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def flatten_images(images):
    """(N, ...) -> (N, prod(...)) feature matrix."""
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[0], -1)


def load_external_predictions(path, expected_shape=None):
    """Load a prediction-map file and validate simplex rows.

    The trailing axis is the class axis; every row must sum to 1 within
    1e-6. `expected_shape` (when given) must match exactly.
    """
    arr = arrayio.load_array(path)
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise arrayio.FormatError(
            f"prediction map shape {arr.shape} != expected {tuple(expected_shape)}")
    sums = arr.sum(axis=-1)
    if np.any(arr < -1e-9) or np.any(np.abs(sums - 1.0) > 1e-6):
        worst = float(np.abs(sums - 1.0).max())
        raise arrayio.FormatError(
            f"prediction map rows violate the simplex (worst |sum-1| = {worst:g})")
    return arr
