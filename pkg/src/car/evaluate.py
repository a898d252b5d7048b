"""Evaluation recipes for trained models: GED at several sample counts,
HM-IoU, calibration offsets, reliability/ECE and entropy maps for the
segmentation toys; KDE log-likelihood and per-probe mode statistics for the
regression toy.

Everything works on fresh generator draws with an evaluation seed, so
results are deterministic and independent of the training stream.
"""

from __future__ import annotations

import numpy as np

from . import metrics, nn, training
from . import synthdata as sd
from .experiments import Experiment, seg_output_to_labels, stochastic_classes

EVAL_SEED_OFFSET = 7919  # keep evaluation draws off the training streams


def make_sampler(exp: Experiment, record, calibration=None):
    """(x, m, seed) -> (n, m, out_width) refinement samples, numpy only."""
    if calibration is None:
        calibration = training.make_calibration(record.f_params, exp.f_spec)

    def draw(x, m, seed):
        return training.infer_samples(calibration, record.g_params, exp.g_spec,
                                      x, m, seed, exp.train.noise_dim)
    return draw


def _task_distance(exp: Experiment):
    if exp.task == "flipclass_seg":
        return metrics.make_class_distance(stochastic_classes(exp.gen))
    return metrics.distance_fg


def _task_iou(exp: Experiment):
    if exp.task == "flipclass_seg":
        classes = stochastic_classes(exp.gen)

        def iou(a, b):
            val = metrics.class_mean_iou(a, b, classes)
            return 1.0 if val is None else val
        return iou
    return metrics.iou_foreground


def _skipless(d):
    def wrapped(a, b):
        val = d(a, b)
        return 0.0 if val is None else val
    return wrapped


def eval_segmentation(exp: Experiment, record, sample_counts=(16, 50, 100),
                      n_inputs=8, n_labels=16, seed=0, calibration=None):
    """Metric suite for a trained segmentation model.

    For each of `n_inputs` fresh inputs, draws the largest requested sample
    count once and compares against `n_labels` fresh generator labels.
    """
    if not sample_counts or min(sample_counts) < 1:
        raise ValueError("sample_counts must be positive")
    eval_seed = seed + EVAL_SEED_OFFSET
    shape = exp.label_shape()
    classes = exp.gen.classes
    features, _, _ = exp.generate(count=n_inputs, seed=eval_seed)
    _, _, label_pool = exp.generate(count=n_inputs * n_labels, seed=eval_seed + 1)
    label_sets = label_pool.reshape(n_inputs, n_labels, *shape)

    sampler = make_sampler(exp, record, calibration)
    m_max = max(sample_counts)
    rows = sampler(features, m_max, eval_seed + 2)
    sample_maps = seg_output_to_labels(rows, shape, classes)

    d = _skipless(_task_distance(exp))
    iou = _task_iou(exp)
    ged_scores = {}
    for count in sample_counts:
        per_input = [metrics.ged(list(sample_maps[i, :count]), list(label_sets[i]), d)
                     for i in range(n_inputs)]
        ged_scores[int(count)] = float(np.mean(per_input))

    hm = float(np.mean([
        metrics.hm_iou(list(sample_maps[i, :16]), list(label_sets[i, :4]), iou=iou)
        for i in range(n_inputs)]))

    # refinement calibration: empirical class frequency over 16 samples
    marginal = exp.marginal()
    onehot = sd.one_hot_labels(sample_maps[:, :16], classes)
    g_bar = onehot.mean(axis=(0, 1))
    masks = {cls: marginal[..., cls] > 1e-9 for cls in _tracked_classes(exp)}
    g_offsets = metrics.calibration_offset(g_bar, marginal, masks)

    result = {
        "ged": ged_scores,
        "hm_iou_16": hm,
        "g_offsets": {int(k): v for k, v in g_offsets.items()},
        "f_offsets": None,
        "ece": None,
        "reliability": None,
        "entropy_mean": None,
        "g_bar": g_bar,
        "f_mean": None,
        "marginal": marginal,
        "sample_maps": sample_maps,
        "label_sets": label_sets,
    }

    # calibration network: probabilities, offsets, reliability, entropy.
    # Skipped when the record carries no calibration weights (conditioning
    # on an externally supplied calibration instead).
    if record.f_params:
        f_rows = nn.mlp_apply(record.f_params, exp.f_spec, features)
        f_probs = f_rows.reshape(n_inputs, *shape, classes)
        f_mean = f_probs.mean(axis=0)
        f_offsets = metrics.calibration_offset(f_mean, marginal, masks)
        conf = f_probs.max(axis=-1)
        pred = f_probs.argmax(axis=-1)
        correct = pred == label_sets[:, 0]
        rel = metrics.reliability(conf.reshape(-1), correct.reshape(-1))
        result.update(
            f_offsets={int(k): v for k, v in f_offsets.items()},
            ece=rel.ece,
            reliability=rel,
            entropy_mean=metrics.entropy_map(f_mean),
            f_mean=f_mean,
        )
    return result


def _tracked_classes(exp: Experiment):
    if exp.task == "flipclass_seg":
        return sorted(stochastic_classes(exp.gen))
    return list(range(exp.gen.classes))


def oracle_ged(exp: Experiment, sample_counts=(16,), n_inputs=8, n_labels=16,
               seed=0):
    """GED of the generator against itself: two independent fresh label
    sets. Oracle floor for the sampling protocol."""
    eval_seed = seed + EVAL_SEED_OFFSET
    shape = exp.label_shape()
    d = _skipless(_task_distance(exp))
    out = {}
    for count in sample_counts:
        _, _, pool_a = exp.generate(count=n_inputs * count, seed=eval_seed + 3)
        _, _, pool_b = exp.generate(count=n_inputs * n_labels, seed=eval_seed + 4)
        a = pool_a.reshape(n_inputs, count, *shape)
        b = pool_b.reshape(n_inputs, n_labels, *shape)
        out[int(count)] = float(np.mean([
            metrics.ged(list(a[i]), list(b[i]), d) for i in range(n_inputs)]))
    return out


def eval_pretrained(exp: Experiment, record, n_inputs=256, seed=0):
    """Stage-1 fidelity: mean absolute error of F vs the analytic marginal
    and its reliability diagram against fresh labels."""
    eval_seed = seed + EVAL_SEED_OFFSET
    shape = exp.label_shape()
    classes = exp.gen.classes
    features, _, labels = exp.generate(count=n_inputs, seed=eval_seed + 5)
    f_rows = nn.mlp_apply(record.f_params, exp.f_spec, features)
    f_probs = f_rows.reshape(n_inputs, *shape, classes)
    marginal = exp.marginal()
    mae = float(np.abs(f_probs - marginal[None]).mean())
    conf = f_probs.max(axis=-1).reshape(-1)
    correct = (f_probs.argmax(axis=-1) == labels).reshape(-1)
    rel = metrics.reliability(conf, correct)
    return {"mae": mae, "ece": rel.ece, "reliability": rel,
            "f_mean": f_probs.mean(axis=0), "marginal": marginal}


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


def eval_regression(exp: Experiment, record, n_eval=200, m=50, bandwidth=0.05,
                    seed=0, calibration=None):
    """KDE log-likelihood on fresh data plus per-probe mode statistics."""
    eval_seed = seed + EVAL_SEED_OFFSET
    gen = exp.gen
    eval_gen = sd.BimodalRegressionConfig(pi=gen.pi, sigma=gen.sigma,
                                          n=n_eval, seed=eval_seed + 6)
    xs, ys = sd.gen_bimodal(eval_gen)
    sampler = make_sampler(exp, record, calibration)

    def kde_sampler(x, count):
        return sampler(x[:, None], count, eval_seed + 7)[:, :, 0]

    med, iqr, per_item = metrics.regression_loglik(kde_sampler, xs, ys, m, bandwidth)

    probes = probe_points()
    probe_stats = mode_statistics(exp, record, probes, m=m,
                                  seed=eval_seed + 8, calibration=calibration)
    return {"loglik_median": med, "loglik_iqr": iqr, "per_item": per_item,
            "eval_x": xs, "eval_y": ys, **probe_stats}


def probe_points(n_flat=50, n_slope=50):
    """Probe grids for the constant branch and the sloped branch."""
    flat = np.linspace(0.0, 0.4, n_flat, endpoint=False)
    slope = np.linspace(0.4, 0.8, n_slope, endpoint=False)
    return {"flat": flat, "slope": slope}


def mode_statistics(exp: Experiment, record, probes, m=50, seed=0,
                    calibration=None):
    """Per-probe dominant-mode frequencies and sample-mean gap vs the
    calibration output."""
    gen = exp.gen
    sampler = make_sampler(exp, record, calibration)
    if calibration is None:
        calibration = training.make_calibration(record.f_params, exp.f_spec)
    out = {}
    for name, xs in probes.items():
        draws = sampler(xs[:, None], m, seed)[:, :, 0]
        upper, lower = sd.bimodal_mode_centers(xs)
        if gen.pi >= 0.5:
            dominant, other = lower, upper
        else:
            dominant, other = upper, lower
        near_dom = (np.abs(draws - dominant[:, None])
                    <= np.abs(draws - other[:, None]))
        calib = calibration(xs[:, None])[:, 0]
        out[name] = {
            "x": xs,
            "dominant_freq": near_dom.mean(axis=1),
            "minor_freq": 1.0 - near_dom.mean(axis=1),
            "sample_mean": draws.mean(axis=1),
            "calibration": calib,
            "mean_gap": np.abs(draws.mean(axis=1) - calib),
            "separation": np.abs(dominant - other),
        }
    return out
