"""Loss terms: cross entropy, Gaussian/MSE, non-saturating adversarial pair,
exact categorical KL calibration loss, R1 gradient penalty, and the combined
generator objective.

Probability-map arguments are graph nodes shaped (..., K) with the class
axis last; reductions are sum over classes, mean over everything else, so
loss weights are resolution-independent. Logs are clamped at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class LossWeights:
    adv: float = 1.0
    lambda_cal: float = 1.0
    r1: float = 10.0

    def validate(self):
        if self.lambda_cal < 0:
            raise ValueError("lambda_cal must be nonnegative")
        return self


def _check_simplex(value, what, atol=1e-6):
    sums = value.sum(axis=-1)
    if np.any(value < -1e-9) or not np.allclose(sums, 1.0, atol=atol):
        raise ValueError(f"{what}: rows are not on the probability simplex")


def _masked_pixel_mean(per_pixel, ignore_mask, what):
    """Mean of a (...,)-shaped node over pixels not flagged by ignore_mask."""
    if ignore_mask is None:
        return ad.mean_(per_pixel)
    keep = 1.0 - np.asarray(ignore_mask, dtype=np.float64)
    if keep.shape != per_pixel.value.shape:
        raise ValueError(f"{what}: mask shape {keep.shape} != {per_pixel.value.shape}")
    n_keep = keep.sum()
    if n_keep == 0:
        raise ValueError(f"{what}: every pixel is masked out")
    return ad.scale(ad.sum_(ad.mul(per_pixel, ad.constant(keep))), 1.0 / n_keep)


def loss_ce_categorical(probs, label, ignore_mask=None):
    """Mean over unmasked pixels of -sum_k y_k log p_k.

    `probs`: node (..., K) on the simplex; `label`: one-hot array or node of
    the same shape; `ignore_mask`: optional (...) array, nonzero = excluded.
    """
    label = ad.as_node(label)
    if label.value.shape != probs.value.shape:
        raise ValueError(
            f"cross entropy: probs {probs.value.shape} vs label {label.value.shape}")
    _check_simplex(probs.value, "cross entropy probs")
    per_pixel = ad.neg(ad.sum_(ad.mul(label, ad.log_clamped(probs)), axis=-1))
    return _masked_pixel_mean(per_pixel, ignore_mask, "cross entropy")


def loss_mse(pred, target):
    """Half mean squared error (unit-variance Gaussian negative log-lik,
    dropping the constant)."""
    pred = ad.as_node(pred)
    target = ad.as_node(target)
    if pred.value.shape != target.value.shape:
        raise ValueError(f"mse: {pred.value.shape} vs {target.value.shape}")
    return ad.scale(ad.mean_(ad.square(ad.sub(pred, target))), 0.5)


def loss_adv_generator(d_fake):
    """Non-saturating generator loss: mean of -log D(fake)."""
    return ad.mean_(ad.neg(ad.log_clamped(ad.as_node(d_fake))))


def loss_discriminator(d_fake, d_real):
    """Mean of -log(1 - D(fake)) plus mean of -log D(real)."""
    fake_term = ad.mean_(ad.neg(ad.log_clamped(ad.sub(1.0, ad.as_node(d_fake)))))
    real_term = ad.mean_(ad.neg(ad.log_clamped(ad.as_node(d_real))))
    return ad.add(fake_term, real_term)


def loss_cal_categorical(sample_mean, calib, ignore_mask=None):
    """Exact KL(sample_mean || calib): per pixel sum_k G(log G - log F),
    summed over classes, averaged over pixels. Gradients reach only
    `sample_mean`; the calibration target is detached here."""
    sample_mean = ad.as_node(sample_mean)
    calib = ad.stop_gradient(ad.as_node(calib))
    if sample_mean.value.shape != calib.value.shape:
        raise ValueError(
            f"calibration KL: {sample_mean.value.shape} vs {calib.value.shape}")
    _check_simplex(sample_mean.value, "calibration KL sample mean")
    _check_simplex(calib.value, "calibration KL target")
    log_ratio = ad.sub(ad.log_clamped(sample_mean), ad.log_clamped(calib))
    per_pixel = ad.sum_(ad.mul(sample_mean, log_ratio), axis=-1)
    return _masked_pixel_mean(per_pixel, ignore_mask, "calibration KL")


def loss_cal_gaussian(sample_mean, calib):
    """Gaussian-form calibration loss: half MSE against a detached target."""
    return loss_mse(sample_mean, ad.stop_gradient(ad.as_node(calib)))


def r1_penalty(discriminator, real_batch, weight=10.0):
    """weight * mean_batch ||d D(x) / d x||^2 at the real points.

    Runs a second tape pass with `real_batch` as a leaf and returns the
    result as a constant node: the penalty's dependence on the
    discriminator parameters is second-order and is treated as zero here,
    so it contributes a value (for monitoring/logging) but no gradient.
    Call it before building the discriminator's own loss graph - the
    internal backward pass would clobber gradients on any shared leaves.
    """
    x = ad.leaf(np.asarray(real_batch, dtype=np.float64))
    out = discriminator(x)
    batch = x.value.shape[0]
    if out.value.size != batch:
        raise ValueError(
            f"r1: discriminator output {out.value.shape} is not one score per item")
    ad.backward(ad.sum_(out))
    g = x.grad_value().reshape(batch, -1)
    return ad.constant(weight * float(np.mean(np.sum(g * g, axis=1))))


def loss_generator_total(adv, cal, weights: LossWeights):
    """w_adv * adversarial + lambda_cal * calibration."""
    weights.validate()
    return ad.add(ad.scale(ad.as_node(adv), weights.adv),
                  ad.scale(ad.as_node(cal), weights.lambda_cal))
