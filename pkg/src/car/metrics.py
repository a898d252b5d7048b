"""Evaluation metrics: IoU variants, (weighted) generalized energy distance,
Hungarian matching and HM-IoU, entropy maps, reliability diagrams with ECE,
per-class calibration offsets, and KDE-based regression log-likelihood.

Label arguments are integer class maps of identical shape; probability maps
carry the class axis last. Everything here is a pure function.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# IoU and label-map distances
# ---------------------------------------------------------------------------


def iou_foreground(a, b, foreground=(1,)):
    """IoU of the foreground pixel sets; 1.0 when both are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"iou: shapes {a.shape} vs {b.shape}")
    fg_a = np.isin(a, list(foreground))
    fg_b = np.isin(b, list(foreground))
    union = np.logical_or(fg_a, fg_b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(fg_a, fg_b).sum() / union)


def distance_fg(a, b, foreground=(1,)):
    """1 - foreground IoU; the GED distance for binary tasks."""
    return 1.0 - iou_foreground(a, b, foreground)


def class_mean_iou(a, b, class_set):
    """Mean per-class IoU over the classes of `class_set` present in either
    map. Returns None when none of them appears in either map (the pair
    carries no information about those classes)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"iou: shapes {a.shape} vs {b.shape}")
    scores = []
    for k in class_set:
        in_a = a == k
        in_b = b == k
        union = np.logical_or(in_a, in_b).sum()
        if union == 0:
            continue
        scores.append(np.logical_and(in_a, in_b).sum() / union)
    if not scores:
        return None
    return float(np.mean(scores))


def make_class_distance(class_set):
    """Distance 1 - mean class IoU; None marks a skipped pair."""
    def d(a, b):
        iou = class_mean_iou(a, b, class_set)
        return None if iou is None else 1.0 - iou
    return d


# ---------------------------------------------------------------------------
# generalized energy distance
# ---------------------------------------------------------------------------


def _mean_pairwise(xs, ys, d):
    total = 0.0
    for x in xs:
        for y in ys:
            total += d(x, y)
    return total / (len(xs) * len(ys))


def ged(samples, labels, d=distance_fg):
    """2 E[d(s,y)] - E[d(s,s')] - E[d(y,y')], expectations as full
    cross-pair means including same-index pairs."""
    if not len(samples) or not len(labels):
        raise ValueError("ged needs nonempty sample and label sets")
    cross = _mean_pairwise(samples, labels, d)
    self_s = _mean_pairwise(samples, samples, d)
    self_y = _mean_pairwise(labels, labels, d)
    return 2.0 * cross - self_s - self_y


def _weighted_skip_mean(pairs, d):
    """pairs: iterable of (x, y, weight); weighted mean of d over pairs
    where d is defined. Returns (value, any_pair_survived)."""
    num = 0.0
    den = 0.0
    for x, y, w in pairs:
        dist = d(x, y)
        if dist is None:
            continue
        num += w * dist
        den += w
    if den == 0:
        return 0.0, False
    return num / den, True


def ged_weighted(samples, modes, weights, class_set):
    """Mode-weighted GED with per-pair skip rule.

    `modes` are the distinct label modes with probability masses `weights`;
    distance is 1 - mean IoU over `class_set`, and pairs in which no class
    of the set appears are dropped from the corresponding expectation
    (weights renormalized over the survivors). All three expectations
    empty -> 0 with a warning.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(modes) != len(weights):
        raise ValueError("one weight per mode required")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("mode weights must form a distribution")
    d = make_class_distance(class_set)
    n_s = len(samples)
    cross, ok1 = _weighted_skip_mean(
        ((s, y, w) for s in samples for y, w in zip(modes, weights)), d)
    self_s, ok2 = _weighted_skip_mean(
        ((s, s2, 1.0) for s in samples for s2 in samples), d)
    self_y, ok3 = _weighted_skip_mean(
        ((y, y2, w * w2) for y, w in zip(modes, weights)
         for y2, w2 in zip(modes, weights)), d)
    if not (ok1 or ok2 or ok3):
        warnings.warn("weighted GED: every pair was skipped; defining the score as 0")
        return 0.0
    return 2.0 * cross - self_s - self_y


# ---------------------------------------------------------------------------
# Hungarian assignment / HM-IoU
# ---------------------------------------------------------------------------


def hungarian(cost):
    """Minimum-cost perfect matching on a square matrix.

    O(n^3) shortest-augmenting-path formulation with dual potentials.
    Returns (assignment row->column, total cost).
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"hungarian needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("hungarian: non-finite cost entries")
    n = a.shape[0]
    # 1-based columns; p[j] = row matched to column j, p[0] = row being placed
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0 - 1, :] - u[i0] - v[1:]
            cols = np.nonzero(free)[0]
            better = cur[cols - 1] < minv[cols]
            upd = cols[better]
            minv[upd] = cur[upd - 1]
            way[upd] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    total = float(a[np.arange(n), assignment].sum())
    return assignment, total


def hungarian_brute_force(cost):
    """Exhaustive permutation oracle; n <= ~8 only."""
    from itertools import permutations

    a = np.asarray(cost, dtype=np.float64)
    n = a.shape[0]
    rows = np.arange(n)
    best, best_perm = np.inf, None
    for perm in permutations(range(n)):
        total = a[rows, list(perm)].sum()
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm), float(best)


def hm_iou(samples, labels, iou=iou_foreground, n_target=None):
    """Mean IoU of the optimal 1:1 matching between samples and labels,
    with labels duplicated cyclically to the sample count."""
    if not len(samples) or not len(labels):
        raise ValueError("hm_iou needs nonempty inputs")
    n = n_target or len(samples)
    if len(samples) != n:
        raise ValueError(f"expected {n} samples, got {len(samples)}")
    reps = [labels[i % len(labels)] for i in range(n)]
    cost = np.empty((n, n))
    for i, s in enumerate(samples):
        for j, y in enumerate(reps):
            cost[i, j] = 1.0 - iou(s, y)
    _, total = hungarian(cost)
    return 1.0 - total / n


# ---------------------------------------------------------------------------
# entropy and calibration
# ---------------------------------------------------------------------------


def entropy_map(probs):
    """Per-element entropy in nats of a (..., K) probability map; 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    sums = p.sum(axis=-1)
    if np.any(p < -1e-9) or not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("entropy_map: rows are not on the probability simplex")
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


@dataclass
class ReliabilityReport:
    edges: np.ndarray      # 11 boundaries of the 10 bins
    counts: np.ndarray     # items per bin
    mean_conf: np.ndarray  # mean confidence per bin (0 for empty bins)
    accuracy: np.ndarray   # accuracy per bin (0 for empty bins)
    ece: float

    def rows(self):
        return [(self.edges[b], self.edges[b + 1], int(self.counts[b]),
                 float(self.mean_conf[b]), float(self.accuracy[b]))
                for b in range(len(self.counts))]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_low", "bin_high", "count", "mean_conf", "accuracy"])
            writer.writerows(self.rows())

    def to_dict(self):
        return {
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "mean_conf": self.mean_conf.tolist(),
            "accuracy": self.accuracy.tolist(),
            "ece": self.ece,
        }


def reliability(confidences, correct, n_bins=10):
    """Confidence-binned accuracy and expected calibration error.

    Bins partition [0,1] into `n_bins` right-closed intervals; empty bins
    count 0 and add nothing to the ECE.
    """
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    corr = np.asarray(correct).reshape(-1).astype(np.float64)
    if conf.shape != corr.shape:
        raise ValueError("confidences and correctness flags must align")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences outside [0,1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.digitize(conf, edges[1:-1], right=True)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sums_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sums_corr = np.bincount(idx, weights=corr, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, sums_conf / np.maximum(counts, 1), 0.0)
        accuracy = np.where(counts > 0, sums_corr / np.maximum(counts, 1), 0.0)
    total = counts.sum()
    ece = 0.0
    if total:
        ece = float(np.sum(counts / total * np.abs(accuracy - mean_conf)))
    return ReliabilityReport(edges, counts, mean_conf, accuracy, ece)


def calibration_offset(pred_probs, gt_probs, masks):
    """Per-class |mean predicted probability - mean true probability| over
    each class mask.

    `pred_probs`/`gt_probs`: (H, W, K) maps; `masks`: {class: (H, W) bool}.
    Empty masks are skipped with a warning.
    """
    pred = np.asarray(pred_probs, dtype=np.float64)
    gt = np.asarray(gt_probs, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"calibration offset: {pred.shape} vs {gt.shape}")
    offsets = {}
    for cls, mask in masks.items():
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            warnings.warn(f"calibration offset: empty mask for class {cls}; skipped")
            continue
        offsets[cls] = float(abs(pred[mask, cls].mean() - gt[mask, cls].mean()))
    return offsets


# ---------------------------------------------------------------------------
# regression log-likelihood (Gaussian KDE over model samples)
# ---------------------------------------------------------------------------


def kde_log_density(samples, y, bandwidth):
    """log of a Gaussian KDE built on `samples`, evaluated at y."""
    s = np.asarray(samples, dtype=np.float64).reshape(-1)
    z = -0.5 * ((y - s) / bandwidth) ** 2
    zmax = z.max()
    return float(zmax + np.log(np.exp(z - zmax).sum())
                 - np.log(len(s)) - 0.5 * np.log(2 * np.pi) - np.log(bandwidth))


def regression_loglik(sampler, xs, ys, m, bandwidth=0.05):
    """Median and interquartile range of per-item KDE log-likelihoods.

    `sampler(xs, m)` must return an (len(xs), m) array of model samples.
    Returns (median, iqr, per_item array).
    """
    if m < 2:
        raise ValueError("need at least 2 samples per item")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    draws = np.asarray(sampler(xs, m), dtype=np.float64)
    if draws.shape != (len(xs), m):
        raise ValueError(f"sampler returned {draws.shape}, expected {(len(xs), m)}")
    per_item = np.array([kde_log_density(draws[i], ys[i], bandwidth)
                         for i in range(len(xs))])
    q25, q50, q75 = np.percentile(per_item, [25, 50, 75])
    return float(q50), float(q75 - q25), per_item
