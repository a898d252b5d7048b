"""Two-stage training: pretrain the calibration network on the pixelwise
loss, freeze it, then adversarially train the refinement network against a
discriminator while the KL calibration term ties the refinement sample
mean to the frozen calibration output.

The M per-input noise draws are subsumed in the batch dimension: a batch
of B inputs becomes B*M generator rows, grouped per input, and the sample
mean is a reshape+mean on the same graph. The generator updates every
iteration; the discriminator follows an on/off cycle.
"""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrayio, losses, nn, rng
from . import autodiff as ad

CHECKPOINT_MAGIC = b"CARC"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "segmentation"  # segmentation | regression
    m_samples: int = 20
    batch_size: int = 32
    pretrain_iters: int = 5000
    adv_iters: int = 20000
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    lr_f: nn.LrSchedule = field(default_factory=lambda: nn.LrSchedule(1e-4))
    lr_g: nn.LrSchedule = field(default_factory=lambda: nn.LrSchedule(1e-4))
    lr_d: nn.LrSchedule = field(default_factory=lambda: nn.LrSchedule(1e-4))
    d_on: int = 50
    d_off: int = 200
    noise_dim: int = 8
    classes: int = 0  # 0 for regression
    seed: int = 0
    log_every: int = 100
    holdout_frac: float = 0.1

    def validate(self):
        if self.task not in ("segmentation", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.m_samples < 1 or self.batch_size < 1:
            raise ValueError("m_samples and batch_size must be >= 1")
        if self.d_on < 1 or self.d_off < 1:
            raise ValueError("discriminator on/off counts must be >= 1")
        if self.task == "segmentation" and self.classes < 2:
            raise ValueError("segmentation needs classes >= 2")
        self.weights.validate()
        return self


@dataclass
class RunRecord:
    f_params: dict = field(default_factory=dict)
    g_params: dict = field(default_factory=dict)
    d_params: dict = field(default_factory=dict)
    f_adam: nn.AdamState = None
    g_adam: nn.AdamState = None
    d_adam: nn.AdamState = None
    pretrain_iter: int = 0
    adv_iter: int = 0
    log: list = field(default_factory=list)


def d_update_active(iteration, on_count, off_count):
    """True on the first `on_count` iterations of every on+off cycle."""
    if on_count < 1 or off_count < 1:
        raise ValueError("on/off counts must be >= 1")
    return iteration % (on_count + off_count) < on_count


def holdout_split(n, frac=0.1):
    """Deterministic split by index: leading (1-frac) train, trailing holdout."""
    cut = max(1, int(round(n * (1.0 - frac))))
    cut = min(cut, n - 1) if n > 1 else n
    return np.arange(cut), np.arange(cut, n)


def _check_finite(value, what, iteration):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became {value} at iteration {iteration}")


# ---------------------------------------------------------------------------
# stage 1: calibration network
# ---------------------------------------------------------------------------


def _pixel_view(node, classes):
    batch, width = node.value.shape
    return ad.reshape(node, (batch, width // classes, classes))


def pretrain_calibration(data, f_spec, config: TrainConfig, record=None):
    """Train F on the pixelwise loss (cross entropy for segmentation, half
    MSE for regression). Returns (params, log rows)."""
    config.validate()
    features, targets = data
    n = len(features)
    if n == 0:
        raise ValueError("empty dataset")
    train_idx, _ = holdout_split(n, config.holdout_frac)

    record = record or RunRecord()
    if not record.f_params:
        record.f_params = nn.mlp_new(f_spec, config.seed)
        record.f_adam = nn.adam_new(record.f_params)
    params, state = record.f_params, record.f_adam
    batches = rng.stream(config.seed + record.pretrain_iter, rng.STREAM_BATCH)

    log = []
    for it in range(record.pretrain_iter, config.pretrain_iters):
        t0 = time.perf_counter()
        idx = train_idx[batches.integers(0, len(train_idx), size=config.batch_size)]
        x = features[idx]
        y = targets[idx]
        leaves = nn.params_to_leaves(params)
        out = nn.mlp_forward(leaves, f_spec, ad.constant(x))
        if config.task == "segmentation":
            loss = losses.loss_ce_categorical(_pixel_view(out, config.classes),
                                              y.reshape(out.value.shape[0], -1,
                                                        config.classes))
        else:
            loss = losses.loss_mse(out, y)
        value = float(loss.value)
        _check_finite(value, "pretraining loss", it)
        ad.backward(loss)
        grads = {name: node.grad_value() for name, node in leaves.items()}
        nn.adam_step(params, grads, state, nn.lr_at(config.lr_f, it))
        if it % config.log_every == 0 or it == config.pretrain_iters - 1:
            log.append({"iter": it, "loss_ce": value,
                        "lr_g": nn.lr_at(config.lr_f, it), "lr_d": 0.0,
                        "wall_ms": (time.perf_counter() - t0) * 1e3})
    record.pretrain_iter = config.pretrain_iters
    record.log.extend(log)
    return params, log


def holdout_loss(data, f_spec, params, config: TrainConfig):
    """Stage-1 loss on the held-out split (numpy forward only)."""
    features, targets = data
    _, hold = holdout_split(len(features), config.holdout_frac)
    out = nn.mlp_apply(params, f_spec, features[hold])
    if config.task == "segmentation":
        probs = out.reshape(len(hold), -1, config.classes)
        y = targets[hold].reshape(probs.shape)
        return float(-(y * np.log(np.maximum(probs, 1e-12))).sum(-1).mean())
    return float(0.5 * np.mean((out - targets[hold]) ** 2))


# ---------------------------------------------------------------------------
# stage 2: adversarial refinement
# ---------------------------------------------------------------------------


def make_calibration(f_params, f_spec):
    """Frozen calibration map: batch features -> calibration output, pure
    numpy so no gradient can reach (or alter) the stage-1 parameters."""
    def calibrate(x):
        return nn.mlp_apply(f_params, f_spec, x)
    return calibrate


def constant_calibration(target_row):
    """Oracle conditioning: every input gets the same calibration row
    (e.g. the exact analytic marginal)."""
    row = np.asarray(target_row, dtype=np.float64).reshape(-1)

    def calibrate(x):
        return np.broadcast_to(row, (len(x), row.size)).copy()
    return calibrate


def train_refinement(data, calibration, g_spec, d_spec, config: TrainConfig,
                     record=None, callback=None, callback_every=0):
    """Adversarial stage. `calibration` is a frozen batch->map callable (see
    `make_calibration`) or an (f_params, f_spec) pair. Returns the record
    holding trained G, D and the metric log.

    `callback(record)` runs every `callback_every` iterations (e.g. periodic
    checkpointing) without disturbing the training streams."""
    config.validate()
    if isinstance(calibration, tuple):
        calibration = make_calibration(*calibration)
    features, targets = data
    n = len(features)
    if n == 0:
        raise ValueError("empty dataset")
    train_idx, _ = holdout_split(n, config.holdout_frac)

    record = record or RunRecord()
    if not record.g_params:
        record.g_params = nn.mlp_new(g_spec, config.seed + 1)
        record.g_adam = nn.adam_new(record.g_params)
        record.d_params = nn.mlp_new(d_spec, config.seed + 2)
        record.d_adam = nn.adam_new(record.d_params)
    g_params, g_adam = record.g_params, record.g_adam
    d_params, d_adam = record.d_params, record.d_adam

    m = config.m_samples
    batches = rng.stream(config.seed + record.adv_iter, rng.STREAM_BATCH)
    noises = rng.stream(config.seed + record.adv_iter, rng.STREAM_NOISE)
    categorical = config.task == "segmentation"

    start = record.adv_iter
    for it in range(start, start + config.adv_iters):
        t0 = time.perf_counter()
        idx = train_idx[batches.integers(0, len(train_idx), size=config.batch_size)]
        x = features[idx]
        y = targets[idx]
        calib = calibration(x)

        # generator pass: M draws per input stacked along the batch axis
        x_rep = np.repeat(x, m, axis=0)
        calib_rep = np.repeat(calib, m, axis=0)
        eps = noises.normal(size=(len(x_rep), config.noise_dim))
        g_leaves = nn.params_to_leaves(g_params)
        g_in = np.concatenate([x_rep, calib_rep], axis=1)
        fake = nn.mlp_forward(g_leaves, g_spec, ad.constant(g_in), ad.constant(eps))
        width = fake.value.shape[1]
        sample_mean = ad.mean_(ad.reshape(fake, (len(x), m, width)), axis=1)

        if categorical:
            cal_loss = losses.loss_cal_categorical(
                _pixel_view(sample_mean, config.classes),
                calib.reshape(len(x), -1, config.classes))
        else:
            cal_loss = losses.loss_cal_gaussian(sample_mean, calib)

        d_fake_for_g = nn.mlp_forward(d_params, d_spec,
                                      ad.concat([ad.constant(x_rep), fake], axis=1))
        adv_loss = losses.loss_adv_generator(d_fake_for_g)
        g_loss = losses.loss_generator_total(adv_loss, cal_loss, config.weights)
        g_value = float(g_loss.value)
        _check_finite(g_value, "generator loss", it)
        ad.backward(g_loss)
        g_grads = {name: node.grad_value() for name, node in g_leaves.items()}
        lr_g = nn.lr_at(config.lr_g, it - start)
        nn.adam_step(g_params, g_grads, g_adam, lr_g)

        # discriminator pass, on schedule only (None logged when idle)
        d_value = None
        r1_value = None
        lr_d = nn.lr_at(config.lr_d, it - start)
        if d_update_active(it, config.d_on, config.d_off):
            real_in = np.concatenate([x, y], axis=1)
            r1 = losses.r1_penalty(
                lambda inp: nn.mlp_forward(d_params, d_spec, inp),
                real_in, weight=config.weights.r1)
            r1_value = float(r1.value)
            d_leaves = nn.params_to_leaves(d_params)
            fake_in = np.concatenate([x_rep, fake.value], axis=1)  # detached
            d_fake = nn.mlp_forward(d_leaves, d_spec, ad.constant(fake_in))
            d_real = nn.mlp_forward(d_leaves, d_spec, ad.constant(real_in))
            d_loss = ad.add(losses.loss_discriminator(d_fake, d_real), r1)
            d_value = float(d_loss.value)
            _check_finite(d_value, "discriminator loss", it)
            ad.backward(d_loss)
            d_grads = {name: node.grad_value() for name, node in d_leaves.items()}
            nn.adam_step(d_params, d_grads, d_adam, lr_d)

        if it % config.log_every == 0 or it == start + config.adv_iters - 1:
            record.log.append({
                "iter": it,
                "loss_adv": float(adv_loss.value),
                "loss_cal": float(cal_loss.value),
                "loss_g": g_value,
                "loss_d": d_value,
                "r1": r1_value,
                "lr_g": lr_g,
                "lr_d": lr_d,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            })
        record.adv_iter = it + 1
        if callback and callback_every and (it + 1 - start) % callback_every == 0:
            callback(record)
    return record


def infer_samples(calibration, g_params, g_spec, x, m, seed, noise_dim):
    """M seed-deterministic refinement samples per input, numpy only.

    Returns (len(x), m, out_width). `calibration` as in train_refinement.
    """
    if isinstance(calibration, tuple):
        calibration = make_calibration(*calibration)
    x = np.asarray(x, dtype=np.float64)
    if m == 0:
        return np.zeros((len(x), 0, int(g_spec.widths[-1])))
    calib = calibration(x)
    x_rep = np.repeat(x, m, axis=0)
    calib_rep = np.repeat(calib, m, axis=0)
    eps = rng.stream(seed, rng.STREAM_EVAL).normal(size=(len(x_rep), noise_dim))
    out = nn.mlp_apply(g_params, g_spec, np.concatenate([x_rep, calib_rep], axis=1), eps)
    return out.reshape(len(x), m, -1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _adam_meta(state):
    if state is None:
        return None
    return {"beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "weight_decay": state.weight_decay, "t": state.t}


def _pack_arrays(arrays):
    chunks = []
    for name, arr in arrays.items():
        blob = arrayio.array_bytes(arr)
        nameb = name.encode()
        chunks.append(struct.pack("<I", len(nameb)) + nameb +
                      struct.pack("<I", len(blob)) + blob)
    return struct.pack("<I", len(arrays)) + b"".join(chunks)


def _unpack_arrays(buf, offset):
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = buf[offset:offset + nlen].decode()
        offset += nlen
        (blen,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        arrays[name] = arrayio.array_from_bytes(buf[offset:offset + blen])
        offset += blen
    return arrays


def checkpoint_save(record: RunRecord, path):
    arrays = {}
    for group, params in (("f", record.f_params), ("g", record.g_params),
                          ("d", record.d_params)):
        for name, arr in params.items():
            arrays[f"{group}.{name}"] = arr
    for group, state in (("f", record.f_adam), ("g", record.g_adam),
                         ("d", record.d_adam)):
        if state is None:
            continue
        for name in state.m:
            arrays[f"{group}.adam_m.{name}"] = state.m[name]
            arrays[f"{group}.adam_v.{name}"] = state.v[name]
    meta = {
        "pretrain_iter": record.pretrain_iter,
        "adv_iter": record.adv_iter,
        "adam": {g: _adam_meta(s) for g, s in
                 (("f", record.f_adam), ("g", record.g_adam), ("d", record.d_adam))},
        # wall_ms is the one non-deterministic log field; dropping it keeps
        # checkpoints of identical (config, seed) runs bit-identical
        "log": [{k: v for k, v in row.items() if k != "wall_ms"}
                for row in record.log],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    payload = struct.pack("<I", len(meta_bytes)) + meta_bytes + _pack_arrays(arrays)
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION,
                                            zlib.crc32(payload))
    Path(path).write_bytes(header + payload)


def checkpoint_load(path):
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != CHECKPOINT_MAGIC:
        raise arrayio.FormatError("not a checkpoint file (bad magic)")
    version, crc = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise arrayio.FormatError(f"unsupported checkpoint version {version}")
    payload = buf[12:]
    if zlib.crc32(payload) != crc:
        raise arrayio.FormatError("checkpoint checksum mismatch (corrupt file)")
    (mlen,) = struct.unpack_from("<I", payload, 0)
    meta = json.loads(payload[4:4 + mlen].decode())
    arrays = _unpack_arrays(payload, 4 + mlen)

    record = RunRecord(pretrain_iter=meta["pretrain_iter"],
                       adv_iter=meta["adv_iter"], log=meta["log"])
    groups = {"f": ({}, {}, {}), "g": ({}, {}, {}), "d": ({}, {}, {})}
    for key, arr in arrays.items():
        group, rest = key.split(".", 1)
        params, ms, vs = groups[group]
        if rest.startswith("adam_m."):
            ms[rest[len("adam_m."):]] = arr
        elif rest.startswith("adam_v."):
            vs[rest[len("adam_v."):]] = arr
        else:
            params[rest] = arr
    for group, attr in (("f", "f"), ("g", "g"), ("d", "d")):
        params, ms, vs = groups[group]
        setattr(record, f"{attr}_params", params)
        ameta = meta["adam"][group]
        if ameta is not None:
            state = nn.AdamState(ameta["beta1"], ameta["beta2"], ameta["eps"],
                                 ameta["weight_decay"], ameta["t"], ms, vs)
            setattr(record, f"{attr}_adam", state)
    return record


def checkpoint_hash(path):
    return zlib.crc32(Path(path).read_bytes())
