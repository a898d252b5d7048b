"""Command-line driver.

Subcommands::

    car gradcheck [--seed N] [--json FILE] [--inject-broken]
    car generate --config FILE --out DIR
    car train --config FILE [--data DIR] [--repeat N]
    car eval --run DIR [--samples N ...] [--oracle]
    car plot --run DIR

The environment variable CAR_SEED overrides the config seed. Exit codes:
0 success, 1 validation/config error, 2 runtime or numeric failure.

Run-directory layout (one per train invocation)::

    <out>/<task>-s<seed>/
        config.snapshot     fully materialized config (re-parseable)
        manifest.json       config hash, timestamps, artifact list
        checkpoints/        pretrain.carc, ck_<iter>.carc, final.carc
        logs/metrics.jsonl  one JSON object per logged iteration
        eval/               metrics.json, reliability.csv, ... (car eval)
        plots/              losses.svg, ... (car plot)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import arrayio, checks, evaluate, metrics, svgplot, training
from . import config as cfgmod
from .config import ConfigError


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_config(path):
    cfg = cfgmod.load_config(path)
    env_seed = os.environ.get("CAR_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed, 10)
        except ValueError:
            raise ConfigError(f"CAR_SEED must be an integer, got {env_seed!r}")
        cfg.build()
    return cfg


def _run_dir(cfg):
    return Path(cfg.out) / f"{cfg.task}-s{cfg.seed}"


def _require(path, hint):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path} not found; {hint}")
    return path


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args):
    if args.inject_broken:
        with checks.broken_backward():
            report = checks.run_battery(seed=args.seed)
    else:
        report = checks.run_battery(seed=args.seed)
    text = json.dumps(report, indent=2) + "\n"
    if args.json:
        Path(args.json).write_text(text)
    else:
        sys.stdout.write(text)
    worst = max(report["cases"], key=lambda row: row["max_rel_error"])
    print(f"gradcheck: {len(report['cases'])} cases, max rel error "
          f"{report['max_rel_error']:.3g} ({worst['name']}), "
          f"{'PASS' if report['passed'] else 'FAIL'}", file=sys.stderr)
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args):
    cfg = _load_config(args.config)
    exp = cfg.build()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    features, targets, labels = exp.generate()
    if cfg.task == "bimodal_regression":
        # regression analog of the pixel marginal: E[y|x] on a dense grid
        from . import synthdata as sd
        grid = np.linspace(0.0, 1.0, 401)
        marginal = np.stack([grid, sd.bimodal_conditional_mean(exp.gen, grid)])
    else:
        marginal = exp.marginal()
    entries = []
    for name, role, arr in (("features", "features", features),
                            ("targets", "targets", targets),
                            ("labels", "labels", np.asarray(labels, dtype=np.float64)),
                            ("marginal", "marginal", np.asarray(marginal))):
        filename = f"{name}.card"
        arrayio.save_array(out / filename, arr)
        entries.append((name, role, filename))
    arrayio.write_manifest(out / "manifest.txt", entries)
    (out / "config.snapshot").write_text(cfgmod.format_config(cfg))
    print(f"generate: wrote {len(entries)} arrays to {out} "
          f"(n={len(features)}, task={cfg.task})")
    return 0


def _load_dataset(data_dir):
    manifest = _require(Path(data_dir) / "manifest.txt",
                        "run `car generate` first or drop --data to "
                        "generate the dataset inline")
    entries = {name: filename for name, _, filename
               in arrayio.read_manifest(manifest)}
    for required in ("features", "targets"):
        if required not in entries:
            raise ConfigError(f"dataset at {data_dir} has no '{required}' entry")
    features = arrayio.load_array(Path(data_dir) / entries["features"])
    targets = arrayio.load_array(Path(data_dir) / entries["targets"])
    return features, targets


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_one(cfg, data_dir):
    exp = cfg.build()
    run = _run_dir(cfg)
    ckpt_dir = run / "checkpoints"
    log_dir = run / "logs"
    for sub in (ckpt_dir, log_dir, run / "eval", run / "plots"):
        sub.mkdir(parents=True, exist_ok=True)

    manifest = cfgmod.RunManifest(config_hash=cfgmod.config_hash(cfg),
                                  config_text=cfgmod.format_config(cfg))
    (run / "config.snapshot").write_text(manifest.config_text)

    if data_dir:
        data = _load_dataset(data_dir)
        if data[0].shape[1] != exp.f_spec.widths[0]:
            raise ConfigError(
                f"dataset feature width {data[0].shape[1]} does not match "
                f"task input width {exp.f_spec.widths[0]}")
    else:
        features, targets, _ = exp.generate()
        data = (features, targets)

    record = training.RunRecord()
    training.pretrain_calibration(data, exp.f_spec, exp.train, record=record)
    training.checkpoint_save(record, ckpt_dir / "pretrain.carc")

    def periodic(rec):
        training.checkpoint_save(rec, ckpt_dir / f"ck_{rec.adv_iter}.carc")

    every = max(1, exp.train.adv_iters // 4)
    training.train_refinement(data, (record.f_params, exp.f_spec), exp.g_spec,
                              exp.d_spec, exp.train, record=record,
                              callback=periodic, callback_every=every)
    training.checkpoint_save(record, ckpt_dir / "final.carc")

    log_path = log_dir / "metrics.jsonl"
    with open(log_path, "w") as fh:
        for row in record.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    artifacts = [p.relative_to(run) for p in sorted(ckpt_dir.iterdir())]
    artifacts += [log_path.relative_to(run), Path("config.snapshot")]
    manifest.finish(artifacts)
    manifest.save(run / "manifest.json")

    last = record.log[-1] if record.log else {}
    print(f"train: {run} done (iter {record.adv_iter}, "
          f"loss_g {last.get('loss_g', float('nan')):.4f}, "
          f"checkpoint {training.checkpoint_hash(ckpt_dir / 'final.carc'):08x})")
    return 0


def cmd_train(args):
    if args.repeat < 1:
        raise ConfigError("--repeat must be >= 1")
    cfg = _load_config(args.config)
    base_seed = cfg.seed
    for k in range(args.repeat):
        cfg.seed = base_seed + k
        cfg.build()
        _train_one(cfg, args.data)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_run(run):
    run = Path(run)
    snapshot = _require(run / "config.snapshot",
                        "train a model there first with `car train`")
    cfg = cfgmod.parse_config(snapshot.read_text(), str(snapshot))
    return run, cfg


def _write_regression_eval(run, exp, record, result, m):
    eval_dir = run / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    flat, slope = result["flat"], result["slope"]
    summary = {
        "loglik_median": result["loglik_median"],
        "loglik_iqr": result["loglik_iqr"],
        "flat_dominant_freq": float(flat["dominant_freq"].mean()),
        "flat_mean_gap": float(flat["mean_gap"].mean()),
        "slope_minor_freq_min": float(
            slope["minor_freq"][slope["separation"] > 0.1].min()),
    }
    (eval_dir / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")

    # scatter table: ground truth, per-probe samples, sample mean, calibration
    sampler = evaluate.make_sampler(exp, record)
    grid = np.linspace(0.0, 1.0, 120, endpoint=False)
    draws = sampler(grid[:, None], min(m, 8), exp.train.seed)[:, :, 0]
    calib = training.make_calibration(record.f_params, exp.f_spec)(
        grid[:, None])[:, 0]
    lines = ["kind,x,y"]
    lines += [f"truth,{x:.6g},{y:.6g}"
              for x, y in zip(result["eval_x"], result["eval_y"])]
    lines += [f"sample,{x:.6g},{v:.6g}"
              for x, row in zip(grid, draws) for v in row]
    lines += [f"sample_mean,{x:.6g},{v:.6g}" for x, v in zip(grid, draws.mean(axis=1))]
    lines += [f"calibration,{x:.6g},{v:.6g}" for x, v in zip(grid, calib)]
    (eval_dir / "scatter.csv").write_text("\n".join(lines) + "\n")
    print(f"eval: {run} loglik median {summary['loglik_median']:.4f} "
          f"(iqr {summary['loglik_iqr']:.4f})")


def _write_segmentation_eval(run, result):
    eval_dir = run / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    has_f = result["reliability"] is not None
    summary = {
        "ged": {str(k): v for k, v in result["ged"].items()},
        "hm_iou_16": result["hm_iou_16"],
        "g_offsets": {str(k): v for k, v in result["g_offsets"].items()},
        "f_offsets": ({str(k): v for k, v in result["f_offsets"].items()}
                      if has_f else None),
        "ece": result["ece"],
        "entropy_mean": (float(np.mean(result["entropy_mean"]))
                         if has_f else None),
    }
    (eval_dir / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    if has_f:
        result["reliability"].to_csv(eval_dir / "reliability.csv")
        arrayio.save_array(eval_dir / "entropy.card", result["entropy_mean"])
    geds = ", ".join(f"GED({k})={v:.4f}" for k, v in sorted(result["ged"].items()))
    ece = f"{result['ece']:.4f}" if has_f else "n/a"
    print(f"eval: {run} {geds}, HM-IoU(16)={result['hm_iou_16']:.4f}, "
          f"ECE={ece}")


def cmd_eval(args):
    run, cfg = _load_run(args.run)
    counts = tuple(args.samples) if args.samples else tuple(cfg.eval.sample_counts)
    if not counts or min(counts) < 1:
        raise ConfigError("--samples values must be positive")
    exp = cfg.build()

    if args.oracle:
        if exp.task == "bimodal_regression":
            raise ConfigError("--oracle scores generator-vs-itself GED, "
                              "which applies to segmentation tasks only")
        result = evaluate.oracle_ged(exp, sample_counts=counts, seed=cfg.seed)
        eval_dir = run / "eval"
        eval_dir.mkdir(parents=True, exist_ok=True)
        (eval_dir / "oracle.json").write_text(
            json.dumps({"ged": {str(k): v for k, v in result.items()}},
                       indent=2) + "\n")
        geds = ", ".join(f"GED({k})={v:.4f}" for k, v in sorted(result.items()))
        print(f"eval --oracle: {run} generator-vs-itself {geds}")
        return 0

    ckpt = _require(run / "checkpoints" / "final.carc",
                    "train a model there first with `car train`")
    record = training.checkpoint_load(ckpt)
    if exp.task == "bimodal_regression":
        result = evaluate.eval_regression(exp, record, m=cfg.eval.m,
                                          bandwidth=cfg.eval.bandwidth,
                                          seed=cfg.seed)
        _write_regression_eval(run, exp, record, result, cfg.eval.m)
    else:
        result = evaluate.eval_segmentation(exp, record, sample_counts=counts,
                                            n_inputs=cfg.eval.n_inputs,
                                            n_labels=cfg.eval.n_labels,
                                            seed=cfg.seed)
        _write_segmentation_eval(run, result)
    return 0


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def _plot_losses(run, plots):
    log_path = _require(run / "logs" / "metrics.jsonl",
                        "train a model there first with `car train`")
    rows = [json.loads(line) for line in log_path.read_text().splitlines()
            if line.strip()]
    fig = svgplot.Figure(title="training losses", xlabel="iteration",
                         ylabel="loss")
    if not rows:
        print("plot: metric log is empty; writing empty axes", file=sys.stderr)
    for key in ("loss_ce", "loss_g", "loss_adv", "loss_cal", "loss_d", "r1"):
        pts = [(r["iter"], r[key]) for r in rows
               if r.get(key) is not None]
        if pts:
            fig.polyline([p[0] for p in pts], [p[1] for p in pts], label=key)
    return [fig.save(plots / "losses.svg")]


def _plot_regression_scatter(run, plots):
    table = run / "eval" / "scatter.csv"
    if not table.exists():
        return []
    by_kind = {}
    for line in table.read_text().splitlines()[1:]:
        kind, x, y = line.split(",")
        by_kind.setdefault(kind, []).append((float(x), float(y)))
    fig = svgplot.Figure(title="refinement samples", xlabel="x", ylabel="y")
    styles = {"truth": ("scatter", "#111111", 1.6),
              "sample": ("scatter", "#88ccee", 1.6),
              "sample_mean": ("line", "#ee6677", None),
              "calibration": ("line", "#228833", None)}
    for kind in ("sample", "truth", "sample_mean", "calibration"):
        pts = by_kind.get(kind)
        if not pts:
            continue
        kind_style, color, radius = styles[kind]
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        if kind_style == "scatter":
            fig.scatter(xs, ys, label=kind, color=color, radius=radius)
        else:
            fig.polyline(xs, ys, label=kind, color=color)
    return [fig.save(plots / "scatter.svg")]


def _plot_reliability(run, plots):
    table = run / "eval" / "reliability.csv"
    if not table.exists():
        return []
    rows = [line.split(",") for line in table.read_text().splitlines()[1:]]
    lows = [float(r[0]) for r in rows]
    highs = [float(r[1]) for r in rows]
    acc = [float(r[4]) for r in rows]
    fig = svgplot.Figure(title="reliability diagram", xlabel="confidence",
                         ylabel="accuracy")
    fig.bars(lows, highs, acc, label="accuracy")
    fig.polyline([0.0, 1.0], [0.0, 1.0], label="ideal", color="#999999")
    return [fig.save(plots / "reliability.svg")]


def _plot_entropy(run, plots):
    table = run / "eval" / "entropy.card"
    if not table.exists():
        return []
    grid = arrayio.load_array(table)
    fig = svgplot.Figure(title="calibration entropy (nats)", xlabel="column",
                         ylabel="row")
    fig.heatmap(grid, label="entropy")
    return [fig.save(plots / "entropy.svg")]


def cmd_plot(args):
    run = Path(args.run)
    plots = run / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written = _plot_losses(run, plots)
    written += _plot_regression_scatter(run, plots)
    written += _plot_reliability(run, plots)
    written += _plot_entropy(run, plots)
    print("plot: wrote " + ", ".join(str(p) for p in written))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="car",
        description="calibrated adversarial refinement: desk-scale lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the JSON report to this file")
    p.add_argument("--inject-broken", action="store_true",
                   help="negative control: corrupt one backward rule")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("generate", help="write a dataset + marginals to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="two-stage training into a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset directory from `car generate`")
    p.add_argument("--repeat", type=int, default=1,
                   help="run N seeds (seed, seed+1, ...)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric suite for a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--samples", type=int, nargs="*",
                   help="sample counts for GED (default: config)")
    p.add_argument("--oracle", action="store_true",
                   help="score the data generator against itself instead")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render SVG figures for a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (training.TrainingDiverged, FloatingPointError,
            arrayio.FormatError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
