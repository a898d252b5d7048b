"""Experiment configuration: a flat, typed key-value text format with dotted
sections, plus the run manifest written next to every training run.

Format, one entry per line::

    task = flipclass_seg
    seed = 3
    out = runs/flipclass
    gen.n = 4096
    train.adv_iters = 4000
    train.lambda_cal = 5.0
    eval.sample_counts = 16,50,100

`#` starts a comment; blank lines are ignored. Every key is declared in
SCHEMA below with its type and the tasks it applies to; unknown keys,
malformed values, and keys applied to the wrong task are rejected. Values
not present fall back to the experiment builder defaults, so a config file
only needs the fields it overrides.

The config hash is a sha256 over the canonical *effective* configuration
(all semantic fields materialized, sorted, defaults filled in), so it
changes exactly when a semantic field changes. The output directory is
plumbing, not semantics, and is excluded from the hash.
"""

from __future__ import annotations

import hashlib
import inspect
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import experiments


class ConfigError(ValueError):
    pass


def _parse_int(text):
    return int(text, 10)


def _parse_float(text):
    value = float(text)
    if value != value:
        raise ValueError("nan is not a valid config value")
    return value


def _parse_str(text):
    return text


def _parse_int_list(text):
    items = [p.strip() for p in text.split(",") if p.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(p, 10) for p in items)


_ALL = tuple(experiments.TASKS)
_SEG = ("boundary_seg", "flipclass_seg")
_REG = ("bimodal_regression",)


@dataclass(frozen=True)
class Field:
    parse: callable
    tasks: tuple
    kwarg: str = None  # experiment-builder keyword; None = handled elsewhere
    help: str = ""


#: every legal config key
SCHEMA = {
    "task": Field(_parse_str, _ALL, help="bimodal_regression | boundary_seg | flipclass_seg"),
    "seed": Field(_parse_int, _ALL, kwarg="seed", help="master RNG seed"),
    "out": Field(_parse_str, _ALL, help="run-directory root"),
    "gen.n": Field(_parse_int, _ALL, kwarg="n", help="dataset size"),
    "gen.pi": Field(_parse_float, _REG, kwarg="pi", help="mode-selection probability"),
    "gen.sigma": Field(_parse_float, _REG, kwarg="sigma", help="mode noise std"),
    "gen.height": Field(_parse_int, ("boundary_seg",), kwarg="height", help="grid rows"),
    "gen.width": Field(_parse_int, ("boundary_seg",), kwarg="width", help="grid columns"),
    "train.m_samples": Field(_parse_int, _ALL, kwarg="m_samples", help="M draws for the sample mean"),
    "train.batch_size": Field(_parse_int, _ALL, kwarg="batch_size"),
    "train.pretrain_iters": Field(_parse_int, _ALL, kwarg="pretrain_iters"),
    "train.adv_iters": Field(_parse_int, _ALL, kwarg="adv_iters"),
    "train.d_on": Field(_parse_int, _ALL, kwarg="d_on", help="D updates per cycle"),
    "train.d_off": Field(_parse_int, _ALL, kwarg="d_off", help="D idle iterations per cycle"),
    "train.lr": Field(_parse_float, _ALL, kwarg="lr", help="constant learning rate"),
    "train.lambda_cal": Field(_parse_float, _ALL, kwarg="lambda_cal", help="calibration-loss weight"),
    "train.adv_weight": Field(_parse_float, _SEG, kwarg="adv_weight", help="adversarial-loss weight"),
    "train.hidden": Field(_parse_int, _ALL, kwarg="hidden", help="MLP hidden width"),
    "train.noise_dim": Field(_parse_int, _SEG, kwarg="noise_dim", help="refinement noise width"),
    "eval.sample_counts": Field(_parse_int_list, _ALL, help="GED sample counts"),
    "eval.n_inputs": Field(_parse_int, _SEG, help="inputs scored per eval"),
    "eval.n_labels": Field(_parse_int, _SEG, help="fresh labels per input"),
    "eval.m": Field(_parse_int, _REG, help="samples per item for log-likelihood"),
    "eval.bandwidth": Field(_parse_float, _REG, help="KDE bandwidth"),
}

_BUILDERS = {
    "bimodal_regression": experiments.build_regression,
    "boundary_seg": experiments.build_boundary,
    "flipclass_seg": experiments.build_flipclass,
}


@dataclass
class EvalSettings:
    sample_counts: tuple = (16, 50, 100)
    n_inputs: int = 8
    n_labels: int = 16
    m: int = 50
    bandwidth: float = 0.05

    def validate(self):
        if not self.sample_counts or min(self.sample_counts) < 1:
            raise ConfigError("eval.sample_counts must be positive")
        if self.n_inputs < 1 or self.n_labels < 1 or self.m < 1:
            raise ConfigError("eval counts must be positive")
        if self.bandwidth <= 0:
            raise ConfigError("eval.bandwidth must be positive")
        return self


@dataclass
class ExperimentConfig:
    task: str
    seed: int = 0
    out: str = "runs"
    overrides: dict = field(default_factory=dict)  # builder kwarg -> value
    eval: EvalSettings = field(default_factory=EvalSettings)

    def build(self):
        """Instantiate the experiment (validates nested configs)."""
        kwargs = dict(self.overrides)
        kwargs["seed"] = self.seed
        try:
            return _BUILDERS[self.task](**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(text, path="<config>"):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            entries[key] = SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc

    task = entries.pop("task", None)
    if task is None:
        raise ConfigError(f"{path}: missing required key 'task'")
    if task not in _BUILDERS:
        raise ConfigError(f"{path}: unknown task {task!r}")

    cfg = ExperimentConfig(task=task)
    eval_kwargs = {}
    for key, value in entries.items():
        spec = SCHEMA[key]
        if task not in spec.tasks:
            raise ConfigError(f"{path}: key {key!r} does not apply to task {task!r}")
        if key == "seed":
            cfg.seed = value
        elif key == "out":
            cfg.out = value
        elif key.startswith("eval."):
            eval_kwargs[key.split(".", 1)[1]] = value
        else:
            cfg.overrides[spec.kwarg] = value
    cfg.eval = EvalSettings(**eval_kwargs).validate()
    cfg.build()  # fail fast on invalid nested values
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def _builder_defaults(task):
    sig = inspect.signature(_BUILDERS[task])
    return {name: p.default for name, p in sig.parameters.items()
            if p.default is not inspect.Parameter.empty}


def effective_items(cfg):
    """Sorted (key, value) pairs of the fully materialized configuration."""
    defaults = _builder_defaults(cfg.task)
    items = {"task": cfg.task, "seed": cfg.seed, "out": cfg.out}
    for key, spec in SCHEMA.items():
        if spec.kwarg is None or cfg.task not in spec.tasks or key == "seed":
            continue
        if spec.kwarg in cfg.overrides:
            items[key] = cfg.overrides[spec.kwarg]
        elif spec.kwarg in defaults:
            items[key] = defaults[spec.kwarg]
    ev = cfg.eval
    items["eval.sample_counts"] = tuple(ev.sample_counts)
    if cfg.task == "bimodal_regression":
        items["eval.m"] = ev.m
        items["eval.bandwidth"] = ev.bandwidth
    else:
        items["eval.n_inputs"] = ev.n_inputs
        items["eval.n_labels"] = ev.n_labels
    return sorted(items.items())


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def format_config(cfg):
    """Canonical self-contained text (used for config.snapshot)."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in effective_items(cfg))


def config_hash(cfg):
    semantic = [(k, v) for k, v in effective_items(cfg) if k != "out"]
    text = "".join(f"{k} = {_format_value(v)}\n" for k, v in semantic)
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


@dataclass
class RunManifest:
    config_hash: str
    config_text: str
    started: str = field(default_factory=_now)
    finished: str = ""
    artifacts: list = field(default_factory=list)

    def finish(self, artifacts):
        self.finished = _now()
        self.artifacts = sorted(str(a) for a in artifacts)
        return self

    def to_json(self):
        return json.dumps({
            "config_hash": self.config_hash,
            "config": self.config_text,
            "started": self.started,
            "finished": self.finished,
            "artifacts": self.artifacts,
        }, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        manifest = cls(config_hash=data["config_hash"],
                       config_text=data["config"],
                       started=data["started"])
        manifest.finished = data["finished"]
        manifest.artifacts = list(data["artifacts"])
        return manifest

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())
