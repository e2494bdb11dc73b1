"""Command-line front end: generate, preprocess, train, evaluate, ensemble,
ablate and report. Every command writes ``manifest.json`` into its output
directory and holds a lock file there while it runs."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import ensemble as ens
from . import ingest, pipeline, preprocess, synthgen, training
from .evaluation import MetricReport, evaluate, evaluate_logits, fmt3, format_table
from .model import ModelConfig
from .types import ENCODINGS, HEADS, BlockConfig, ConfigError, ParseError

log = logging.getLogger("mislstm")

MODEL_ALIASES = {
    "mis_lstm": "mis_lstm",
    "lstm": "lstm_baseline",
    "cnn1d": "cnn1d_baseline",
    "cnn2d": "cnn2d_baseline",
}


class UsageError(Exception):
    pass


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(paths: Sequence[str | Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.name not in ("manifest.json", ".lock"):
                    out[str(f)] = sha256(f)
        elif p.is_file():
            out[str(p)] = sha256(p)
    return out


@contextlib.contextmanager
def locked(out_dir: Path):
    """Refuse to run two commands against the same output directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, configs: dict, inputs: Sequence) -> None:
    manifest = {
        "command": command,
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        "configs": configs,
        "seed": getattr(args, "seed", None),
        "inputs": input_hashes(inputs),
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "torch": torch.__version__},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _json_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _print_report(report: MetricReport) -> None:
    print(format_table([report]))


# -- generate ---------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = synthgen.SynthConfig.from_file(args.config) if args.config else synthgen.SynthConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.strength is not None:
        overrides["signal_strength"] = args.strength
    if args.subjects is not None:
        overrides["n_subjects"] = args.subjects
    if args.days is not None:
        overrides["days_per_subject"] = args.days
    cfg = replace(cfg, **overrides)
    out = Path(args.out)
    with locked(out):
        sp, lp = synthgen.write(cfg, out)
        write_manifest(out, "generate", args, {"synth": asdict(cfg)}, [args.config] if args.config else [])
    print(f"wrote {sp} and {lp}")
    return 0


# -- preprocess -------------------------------------------------------------


def cmd_preprocess(args) -> int:
    src = Path(args.data)
    sensors = Path(args.sensors) if args.sensors else src / "sensors.csv"
    labels = Path(args.labels) if args.labels else src / "labels.csv"
    conf = _json_config(args.config)
    pcfg = preprocess.PreprocessConfig(
        clip_bounds={k: tuple(v) for k, v in conf.get("clip_bounds", {}).items()},
        discrete_scaling=conf.get("discrete_scaling", "max"),
    )
    out = Path(args.out)
    with locked(out):
        dataset = ingest.build_dataset(ingest.parse_sensor_file(sensors), ingest.parse_labels_file(labels))
        if dataset.dropped:
            log.warning("dropped %d unlabeled day(s)", dataset.dropped)
        data = pipeline.prepare(dataset, split_seed=args.seed or 0, ratio=args.ratio, config=pcfg)
        pipeline.save_prepared(data, out)
        write_manifest(out, "preprocess", args, {"preprocess": asdict(pcfg), "ratio": args.ratio}, [sensors, labels])
    print(f"{len(data)} days ({len(data.train_idx)} train, {len(data.val_idx)} validation) -> {out}")
    return 0


# -- train ------------------------------------------------------------------


def resolve_configs(args, n_subjects: int) -> tuple[training.TrainConfig, ModelConfig, BlockConfig]:
    """Preset, then JSON config sections, then explicit flags."""
    conf = _json_config(args.config)
    seed = args.seed if args.seed is not None else 0
    if args.preset == "desk":
        block, mcfg = pipeline.desk_configs(n_subjects)
        tcfg = training.desk_train_config(seed)
    else:
        block, mcfg, tcfg = BlockConfig(), ModelConfig(n_subjects=n_subjects), training.TrainConfig(seed=seed)
    if "train" in conf:
        tcfg = replace(tcfg, **conf["train"])
    if "block" in conf:
        b = dict(conf["block"])
        if "value_range" in b:
            b["value_range"] = tuple(b["value_range"])
        block = replace(block, **b)
    if "model" in conf:
        m = dict(conf["model"])
        cont = m.pop("continuous", None)
        if cont:
            if "stages" in cont:
                cont["stages"] = tuple(tuple(s) for s in cont["stages"])
            for k in ("stem_kernel", "stem_stride"):
                if k in cont:
                    cont[k] = tuple(cont[k])
            m["continuous"] = replace(mcfg.continuous, **cont)
        mcfg = replace(mcfg, **m)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if args.n_hours is not None:
        block = replace(block, n_hours=args.n_hours)
    if args.encoding is not None:
        block = replace(block, encoding=args.encoding)
    return tcfg, mcfg, block


def run_training(
    data: pipeline.PreparedData,
    kind: str,
    tcfg: training.TrainConfig,
    mcfg: ModelConfig,
    block: BlockConfig,
    discrete_branch: bool,
    out: Path,
) -> training.CheckpointBundle:
    """Train, then write the checkpoint, the epoch log and logit dumps."""
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_event(event):
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            print(f"epoch {event['epoch']:3d}  loss {event['train_loss']:.3f}  val macro-F1 {fmt3(event['val_average'])}")

        bundle = training.train(data, kind, tcfg, mcfg, block, discrete_branch, on_event=on_event)
    model = bundle.build()
    builder = pipeline.InputBuilder(data, kind, block, discrete_branch)
    model_id = out.name
    for split, idx in (("train", data.train_idx), ("val", data.val_idx)):
        logits = training.predict_logits(model, builder, idx)
        ens.write_logits_jsonl(out / f"logits_{split}.jsonl", model_id, [data.day_ids[i] for i in idx], logits)
    training.save_checkpoint(bundle, out, extra={"discrete_branch": discrete_branch, "model_id": model_id})
    report = evaluate_logits(training.predict_logits(model, builder, data.val_idx), data.labels[data.val_idx], model_id)
    (out / "metrics.json").write_text(report.to_json())
    return bundle


def cmd_train(args) -> int:
    data = pipeline.load_prepared(args.data)
    kind = MODEL_ALIASES[args.model]
    tcfg, mcfg, block = resolve_configs(args, data.n_subjects)
    discrete_branch = not args.no_discrete_branch
    out = Path(args.out)
    with locked(out):
        torch.set_num_threads(max(1, args.threads))
        t0 = time.time()
        bundle = run_training(data, kind, tcfg, mcfg, block, discrete_branch, out)
        configs = {
            "kind": kind,
            "train": asdict(tcfg),
            "model": asdict(bundle.model_config),
            "block": asdict(block),
            "discrete_branch": discrete_branch,
            "seconds": round(time.time() - t0, 1),
        }
        write_manifest(out, "train", args, configs, [args.data, args.config] if args.config else [args.data])
    print(f"best epoch {bundle.epoch}  val macro-F1 {fmt3(bundle.val_average)}")
    _print_report(MetricReport(bundle.val_f1, {}, out.name))
    return 0


# -- evaluate ---------------------------------------------------------------


def _labels_for(data: pipeline.PreparedData, day_ids: Sequence[str]) -> np.ndarray:
    pos = {d: i for i, d in enumerate(data.day_ids)}
    missing = [d for d in day_ids if d not in pos]
    if missing:
        raise UsageError(f"{len(missing)} day id(s) not in the dataset, e.g. {missing[0]}")
    return data.labels[[pos[d] for d in day_ids]]


def cmd_evaluate(args) -> int:
    data = pipeline.load_prepared(args.data)
    if bool(args.checkpoint) == bool(args.logits):
        raise UsageError("give exactly one of --checkpoint or --logits")
    if args.checkpoint:
        bundle = training.load_checkpoint(args.checkpoint)
        meta = json.loads((Path(args.checkpoint) / "meta.json").read_text())
        builder = pipeline.InputBuilder(data, bundle.kind, bundle.block_config, meta.get("discrete_branch", True))
        idx = data.val_idx
        logits = training.predict_logits(bundle.build(), builder, idx)
        report = evaluate_logits(logits, data.labels[idx], Path(args.checkpoint).name)
        inputs = [args.checkpoint, args.data]
    else:
        pools = ens.read_logits_jsonl(args.logits)
        if len(pools) != 1:
            raise UsageError("--logits file must hold exactly one model")
        (model_id, (day_ids, logits)), = pools.items()
        report = evaluate_logits(logits, _labels_for(data, day_ids), model_id)
        inputs = [args.logits, args.data]
    out = Path(args.out)
    with locked(out):
        (out / "report.json").write_text(report.to_json())
        write_manifest(out, "evaluate", args, {}, inputs)
    _print_report(report)
    return 0


# -- ensemble ---------------------------------------------------------------


def _pool_paths(args) -> list[Path]:
    paths = [Path(p) for p in args.logits or []]
    if args.manifest:
        root = Path(args.manifest).parent
        listed = json.loads(Path(args.manifest).read_text())
        entries = listed["logits"] if isinstance(listed, dict) else listed
        paths += [Path(p) if Path(p).is_absolute() else root / p for p in entries]
    if not paths:
        raise UsageError("no logit files given (use --logits or --manifest)")
    return paths


def cmd_ensemble(args) -> int:
    data = pipeline.load_prepared(args.data)
    paths = _pool_paths(args)
    pool = ens.pool_from_files(paths, margin_kind=args.margin)
    labels = _labels_for(data, pool.day_ids)
    if args.fit_logits:
        fit_pool = ens.pool_from_files(args.fit_logits, margin_kind=args.margin)
        if fit_pool.model_ids != pool.model_ids:
            raise UsageError("--fit-logits must list the same models in the same order")
        fitted = fit_pool.fit(fit_pool.logits, _labels_for(data, fit_pool.day_ids), args.quantile)
        pool = replace(pool, best_index=fitted.best_index, thresholds=fitted.thresholds)
    else:
        pool = pool.fit(pool.logits, labels, args.quantile)
    methods = list(ens.ENSEMBLE_METHODS) if args.method == "all" else [args.method]
    out = Path(args.out)
    reports = []
    with locked(out):
        for i, mid in enumerate(pool.model_ids):
            reports.append(evaluate(ens.head_argmax(pool.logits[i]), labels, mid))
        decisions = {}
        for m in methods:
            pred = ens.ENSEMBLE_METHODS[m](pool)
            decisions[m] = pred
            reports.append(evaluate(pred, labels, m))
        with open(out / "decisions.jsonl", "w", encoding="utf-8") as fh:
            for j, day in enumerate(pool.day_ids):
                row = {"day_id": day, **{m: dict(zip(HEADS, map(int, p[j]))) for m, p in decisions.items()}}
                fh.write(json.dumps(row) + "\n")
        ens.write_thresholds(out / "thresholds.json", pool)
        (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2))
        configs = {"quantile": args.quantile, "margin": args.margin, "best_model": pool.model_ids[pool.best_index]}
        write_manifest(out, "ensemble", args, configs, [*paths, *(args.fit_logits or []), args.data])
    print(f"best single model: {pool.model_ids[pool.best_index]}")
    print(format_table(reports))
    return 0


# -- ablate -----------------------------------------------------------------


def cmd_ablate(args) -> int:
    data = pipeline.load_prepared(args.data)
    out = Path(args.out)
    hours = args.hours or [2, 4, 6]
    encodings = args.encodings or list(ENCODINGS)
    grid: dict[str, dict[str, float]] = {}
    reports = []
    with locked(out):
        torch.set_num_threads(max(1, args.threads))
        for enc in encodings:
            for n in hours:
                a = argparse.Namespace(**{**vars(args), "n_hours": n, "encoding": enc})
                tcfg, mcfg, block = resolve_configs(a, data.n_subjects)
                run_dir = out / f"{enc}_n{n}"
                bundle = run_training(data, "mis_lstm", tcfg, mcfg, block, True, run_dir)
                grid.setdefault(enc, {})[str(n)] = bundle.val_average
                reports.append(MetricReport(bundle.val_f1, {}, f"{enc} N={n}"))
        table = format_ablation(grid, hours)
        (out / "ablation.json").write_text(json.dumps(grid, indent=2))
        (out / "ablation.txt").write_text(table + "\n\n" + format_table(reports) + "\n")
        write_manifest(out, "ablate", args, {"hours": hours, "encodings": encodings}, [args.data])
    print(table)
    return 0


def format_ablation(grid: dict[str, dict[str, float]], hours: Sequence[int]) -> str:
    header = ["Encoding", *(f"N={n}" for n in hours)]
    rows = [[enc, *(fmt3(v[str(n)]) for n in hours)] for enc, v in grid.items()]
    width = max(len(r[0]) for r in [header, *rows])
    return "\n".join(
        "  ".join([r[0].ljust(width), *(c.rjust(6) for c in r[1:])]) for r in [header, *rows]
    )


# -- report -----------------------------------------------------------------


def load_reports(paths: Sequence[str | Path]) -> list[MetricReport]:
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "metrics.json" if (p / "metrics.json").exists() else p / "report.json"
        payload = json.loads(p.read_text())
        items = payload if isinstance(payload, list) else [payload]
        for item in items:
            r = MetricReport.from_dict(item)
            if not r.name:
                r.name = p.parent.name
            out.append(r)
    return out


def plot_reports(reports: Sequence[MetricReport], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.arange(len(HEADS) + 1)
    width = 0.8 / max(len(reports), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, r in enumerate(reports):
        vals = [r.per_head[h] for h in HEADS] + [r.average]
        ax.bar(x + i * width, vals, width, label=r.name)
    ax.set_xticks(x + width * (len(reports) - 1) / 2, [h.upper() for h in HEADS] + ["Avg"])
    ax.set_ylim(0, 1)
    ax.set_ylabel("macro-F1")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_history(run_dir: Path, path: Path) -> bool:
    log_path = run_dir / "train_log.jsonl"
    if not log_path.exists():
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r["epoch"] for r in rows], [r["val_average"] for r in rows], label="val macro-F1")
    ax.plot([r["epoch"] for r in rows], [r["train_loss"] for r in rows], label="train loss")
    ax.set_xlabel("epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return True


def cmd_report(args) -> int:
    reports = load_reports(args.inputs)
    out = Path(args.out)
    with locked(out):
        table = format_table(reports)
        (out / "table.txt").write_text(table + "\n")
        plot_reports(reports, out / "metrics.png")
        for p in args.inputs:
            if Path(p).is_dir():
                plot_history(Path(p), out / f"history_{Path(p).name}.png")
        write_manifest(out, "report", args, {}, args.inputs)
    print(table)
    return 0


# -- parser -----------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="grid cache written by preprocess")
    p.add_argument("--config", help="JSON with optional train/model/block sections")
    p.add_argument("--preset", choices=("desk", "default"), default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mislstm", description="Block-image CNN + LSTM day classifier with a confidence-gated ensemble.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic sensors/labels dataset")
    p.add_argument("--config", help="key=value synthgen config")
    p.add_argument("--seed", type=int)
    p.add_argument("--strength", type=float, help="planted signal strength")
    p.add_argument("--subjects", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="CSV -> grid cache and statistics")
    p.add_argument("--data", default=".", help="directory holding sensors.csv and labels.csv")
    p.add_argument("--sensors")
    p.add_argument("--labels")
    p.add_argument("--config", help="JSON with clip_bounds / discrete_scaling")
    p.add_argument("--seed", type=int, help="split seed")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model")
    _add_train_flags(p)
    p.add_argument("--model", choices=tuple(MODEL_ALIASES), default="mis_lstm")
    p.add_argument("--n-hours", type=int)
    p.add_argument("--encoding", choices=ENCODINGS)
    p.add_argument("--no-discrete-branch", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint or a logit file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--logits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="soft, hard and UALRE ensembles over logit files")
    p.add_argument("--data", required=True)
    p.add_argument("--logits", nargs="+")
    p.add_argument("--manifest", help="JSON list (or {'logits': [...]}) of logit files")
    p.add_argument("--fit-logits", nargs="+", help="logits for choosing the best model and thresholds")
    p.add_argument("--method", choices=(*ens.ENSEMBLE_METHODS, "all"), default="all")
    p.add_argument("--quantile", type=float, default=0.5)
    p.add_argument("--margin", choices=("top2", "top3"), default="top2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("ablate", help="N-hours x encoding grid for MIS-LSTM")
    _add_train_flags(p)
    p.add_argument("--hours", type=int, nargs="+")
    p.add_argument("--encodings", nargs="+", choices=ENCODINGS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate, n_hours=None, encoding=None)

    p = sub.add_parser("report", help="tables and plots from stored metrics")
    p.add_argument("inputs", nargs="+", help="metrics/report JSON files or run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "quantile", None) is not None and not 0.0 <= args.quantile <= 1.0:
        parser.error("--quantile must lie in [0, 1]")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ParseError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
