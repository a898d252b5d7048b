"""Canonical experiment setups: dataset + architecture + training recipe per
task, shared by the command-line driver and the test suite.

Shapes follow the desk-scale defaults: 4-layer MLPs, hidden width 64 for
regression and 128 for the segmentation toys; the refinement network sees
(input features, calibration output, noise) concatenated, and the
discriminator sees (input features, label map).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, nn
from . import synthdata as sd
from .training import TrainConfig

TASKS = ("bimodal_regression", "boundary_seg", "flipclass_seg")


@dataclass
class Experiment:
    task: str
    gen: object
    f_spec: nn.MlpSpec
    g_spec: nn.MlpSpec
    d_spec: nn.MlpSpec
    train: TrainConfig
    n_data: int

    @property
    def categorical(self):
        return self.task != "bimodal_regression"

    def generate(self, count=None, seed=None):
        """(features, targets, labels) for training or evaluation.

        features: (n, x_dim); targets: (n, out_width) - raw y for
        regression, flattened one-hot for segmentation; labels: raw (n,)
        y or (n, H, W) class maps.
        """
        gen = self.gen
        if seed is not None or count is not None:
            gen = _replace_gen(gen, count, seed)
        if self.task == "bimodal_regression":
            x, y = sd.gen_bimodal(gen)
            return x[:, None], y[:, None], y
        if self.task == "boundary_seg":
            images, labels = sd.gen_boundary_seg(gen, count or self.n_data)
        else:
            images, labels = sd.gen_flipclass(gen, count or self.n_data)
        features = sd.flatten_images(images)
        onehot = sd.one_hot_labels(labels, gen.classes)
        return features, onehot.reshape(len(labels), -1), labels

    def marginal(self):
        return sd.ground_truth_pixel_distribution(self.gen)

    def label_shape(self):
        if self.task == "boundary_seg":
            return (self.gen.height, self.gen.width)
        if self.task == "flipclass_seg":
            return self.gen.base.shape
        return ()


def _replace_gen(gen, count, seed):
    import copy

    gen = copy.deepcopy(gen)
    if seed is not None:
        gen.seed = seed
    if count is not None and hasattr(gen, "n"):
        gen.n = count
    return gen


def _mlp(widths, out, init="uniform_he", classes=0):
    return nn.MlpSpec(widths=list(widths), out=out, classes=classes, init=init)


def build_regression(pi=0.9, sigma=0.03, n=10000, seed=0, lambda_cal=1.0,
                     m_samples=20, hidden=64, pretrain_iters=2000,
                     adv_iters=20000, batch_size=32, d_on=199, d_off=1,
                     lr=1e-4):
    """1D bimodal regression: scalar networks, Gaussian-form losses,
    constant toy learning rate.

    The discriminator trains on essentially every iteration (199 on / 1
    off); rarer or faster D updates let the refinement network park all
    its mass on the dominant mode.
    """
    gen = sd.BimodalRegressionConfig(pi=pi, sigma=sigma, n=n, seed=seed).validate()
    h = hidden
    f_spec = _mlp([1, h, h, h, 1], "identity")
    g_spec = _mlp([3, h, h, h, 1], "identity")  # x + calibration + noise
    d_spec = _mlp([2, h, h, h, 1], "sigmoid")   # x + y
    train = TrainConfig(
        task="regression", m_samples=m_samples, batch_size=batch_size,
        pretrain_iters=pretrain_iters, adv_iters=adv_iters,
        weights=losses.LossWeights(adv=1.0, lambda_cal=lambda_cal, r1=10.0),
        lr_f=nn.LrSchedule(lr), lr_g=nn.LrSchedule(lr), lr_d=nn.LrSchedule(lr),
        d_on=d_on, d_off=d_off, noise_dim=1, classes=0, seed=seed)
    return Experiment("bimodal_regression", gen, f_spec, g_spec, d_spec, train, n)


def _segmentation_specs(x_dim, pixels, classes, hidden, noise_dim):
    pk = pixels * classes
    f_spec = _mlp([x_dim, hidden, hidden, hidden, pk], "softmax_per_pixel",
                  classes=classes)
    g_spec = _mlp([x_dim + pk + noise_dim, hidden, hidden, hidden, pk],
                  "softmax_per_pixel", classes=classes)
    d_spec = _mlp([x_dim + pk, hidden, hidden, hidden, 1], "sigmoid")
    return f_spec, g_spec, d_spec


def _segmentation_train(classes, seed, m_samples, batch_size, pretrain_iters,
                        adv_iters, lambda_cal, adv_weight, d_on, d_off, lr,
                        noise_dim):
    """Shared segmentation recipe. The defaults encode a schedule that keeps
    the refinement net stochastic: the per-pixel softmax saturates under
    adversarial pressure, and once it does, gradients die and the noise
    pathway never develops. A heavy calibration weight holds unrouted pixels
    soft until the noise routing emerges, the discriminator trains on nearly
    every iteration so its density-ratio gradient herds samples onto the
    underrepresented modes, and its learning rate anneals to zero so the
    inter-mode valleys flatten late in training. Small M keeps each draw's
    handle on the sample mean large (the per-draw calibration differential
    scales as 1/M)."""
    return TrainConfig(
        task="segmentation", m_samples=m_samples, batch_size=batch_size,
        pretrain_iters=pretrain_iters, adv_iters=adv_iters,
        weights=losses.LossWeights(adv=adv_weight, lambda_cal=lambda_cal, r1=10.0),
        lr_f=nn.LrSchedule(lr), lr_g=nn.LrSchedule(lr),
        lr_d=nn.LrSchedule(lr, mode="linear_decay_to_zero", total=adv_iters),
        d_on=d_on, d_off=d_off, noise_dim=noise_dim, classes=classes, seed=seed)


def build_boundary(seed=0, n=4096, hidden=128, m_samples=4,
                   pretrain_iters=3000, adv_iters=8000, batch_size=32,
                   lambda_cal=200.0, adv_weight=1.0, d_on=199, d_off=1,
                   lr=1e-4, noise_dim=64, height=8, width=16):
    """Two-class vertical-boundary toy (H x W grid, 2 input channels)."""
    gen = sd.BoundarySegConfig(height=height, width=width, seed=seed).validate()
    x_dim = height * width * 2
    f_spec, g_spec, d_spec = _segmentation_specs(x_dim, height * width, 2,
                                                 hidden, noise_dim)
    train = _segmentation_train(2, seed, m_samples, batch_size, pretrain_iters,
                                adv_iters, lambda_cal, adv_weight, d_on, d_off,
                                lr, noise_dim)
    return Experiment("boundary_seg", gen, f_spec, g_spec, d_spec, train, n)


def build_flipclass(seed=0, n=4096, hidden=128, m_samples=4,
                    pretrain_iters=3000, adv_iters=8000, batch_size=32,
                    lambda_cal=200.0, adv_weight=1.0, d_on=199, d_off=1,
                    lr=1e-4, noise_dim=64):
    """Six-class region-flipping toy (8 x 8 grid, flip probabilities
    8/17, 7/17, 6/17)."""
    gen = sd.FlipClassConfig(seed=seed).validate()
    h, w = gen.base.shape
    x_dim = h * w * 2
    f_spec, g_spec, d_spec = _segmentation_specs(x_dim, h * w, gen.classes,
                                                 hidden, noise_dim)
    train = _segmentation_train(gen.classes, seed, m_samples, batch_size,
                                pretrain_iters, adv_iters, lambda_cal,
                                adv_weight, d_on, d_off, lr, noise_dim)
    return Experiment("flipclass_seg", gen, f_spec, g_spec, d_spec, train, n)


def stochastic_classes(gen: sd.FlipClassConfig):
    """All classes taking part in a flip (sources and alternates)."""
    return {c for pair in gen.flip_pairs for c in pair[:2]}


def seg_output_to_labels(rows, label_shape, classes):
    """(..., P*K) probability rows -> (..., H, W) argmax class maps."""
    rows = np.asarray(rows)
    probs = rows.reshape(rows.shape[:-1] + tuple(label_shape) + (classes,))
    return probs.argmax(axis=-1)
