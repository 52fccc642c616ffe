"""Command-line experiment runner.

Verbs::

    pseudolab generate --config exp.cfg --out data/
    pseudolab train    --config exp.cfg --set scheme=fixmatch --seeds 0,1,2 --out runs/
    pseudolab evaluate --run runs/<run_id>
    pseudolab sweep    --config exp.cfg --set sweep=tau:0.5,0.7,0.9 --out runs/
    pseudolab report   --run runs/<run_id>

Every run writes ``<out>/<run_id>/`` containing ``manifest.txt``,
``config.txt``, a seed-averaged ``metrics.csv`` and one ``seed-<s>/``
directory per seed with that seed's ``metrics.csv``, ``decisions.csv`` and
``checkpoints/``. Exit status is 0 on success, 2 for configuration errors and
3 for runtime or numeric failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import ExperimentConfig, Mode, config_hash, dump_config, load_config, resolve_key, \
    with_overrides
from .errors import ConfigError, NumericError, ReportingError
from .netcore import load_checkpoint, save_checkpoint
from .pseudolabel import Scheme
from .synthdata import (VAL_STREAM, Dataset, Kind, generate_dataset, load_dataset,
                        save_dataset, split_labeled)
from .trainer import CSV_COLUMNS, MetricsLog, Snapshot, accuracy, train

log = logging.getLogger("pseudolab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DECISION_COLUMNS = ("epoch", "video_id", "truth", "pred_F", "conf_F", "pred_A", "conf_A")


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    seeds: tuple[int, ...]
    out_dir: Path
    status: str = "incomplete"
    duration_s: float = 0.0
    final_acc: dict[int, float] = field(default_factory=dict)
    label: str = ""

    @property
    def path(self) -> Path:
        return self.out_dir / "manifest.txt"

    def summary(self) -> tuple[float, float, float]:
        return M.mean_and_range(list(self.final_acc.values()))

    def write(self) -> None:
        mean, lo, hi = self.summary()
        lines = [
            f"run_id={self.run_id}",
            f"status={self.status}",
            f"config_hash={self.config_hash}",
            f"seeds={','.join(str(s) for s in self.seeds)}",
            f"duration_s={self.duration_s:.3f}",
            f"out_dir={self.out_dir}",
        ]
        if self.label:
            lines.append(f"label={self.label}")
        for s, acc in sorted(self.final_acc.items()):
            lines.append(f"val_acc_F.seed-{s}={acc!r}")
        if self.final_acc:
            lines += [f"val_acc_F.mean={mean!r}", f"val_acc_F.min={lo!r}", f"val_acc_F.max={hi!r}"]
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        run_dir = Path(run_dir)
        path = run_dir / "manifest.txt"
        if not path.exists():
            raise ReportingError(f"{run_dir} has no manifest.txt")
        kv = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            key, _, value = line.partition("=")
            kv[key] = value
        seeds = tuple(int(s) for s in kv["seeds"].split(",") if s)
        accs = {int(k.split("seed-")[1]): float(v) for k, v in kv.items()
                if k.startswith("val_acc_F.seed-")}
        return cls(kv["run_id"], kv["config_hash"], seeds, run_dir, kv["status"],
                   float(kv["duration_s"]), accs, kv.get("label", ""))


# --------------------------------------------------------------------------
# config handling


def _split_sweep(overrides):
    rest, sweep = [], None
    for item in overrides:
        key, _, value = item.partition("=")
        if key.strip() == "sweep":
            axis, colon, values = value.partition(":")
            if not colon:
                raise ConfigError(f"sweep must look like axis:v1,v2,... (got {value!r})")
            sweep = (axis.strip(), [v.strip() for v in values.split(",") if v.strip()])
        else:
            rest.append(item)
    return rest, sweep


def build_config(config_path=None, overrides=(), seeds=None) -> ExperimentConfig:
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    cfg = with_overrides(cfg, list(overrides))
    if seeds is not None:
        cfg = with_overrides(cfg, {"run.seeds": seeds})
    if cfg.train.mode is Mode.SUPERVISED:
        cfg = replace(cfg, train=replace(cfg.train, lam=0.0))
    cfg.validate()
    return cfg


def make_run_id(cfg: ExperimentConfig) -> str:
    h = hashlib.sha1(f"{config_hash(cfg)}:{time.time_ns()}".encode()).hexdigest()
    return h[:10]


# --------------------------------------------------------------------------
# data


def datasets(cfg: ExperimentConfig, data_path=None) -> tuple[Dataset, Dataset]:
    """Training pool and held-out validation set for ``cfg``."""
    if data_path:
        train_set = load_dataset(data_path)
        val_path = Path(str(data_path).replace("train", "val"))
        if val_path != Path(data_path) and val_path.exists():
            return train_set, load_dataset(val_path)
    else:
        train_set = generate_dataset(cfg.data)
    counts = (cfg.eval.val_videos_per_class,) * cfg.data.num_classes
    return train_set, generate_dataset(cfg.data, VAL_STREAM, counts=counts)


# --------------------------------------------------------------------------
# writers


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def decisions_csv(metrics: MetricsLog, video_ids) -> str:
    rows = []
    for epoch in sorted(metrics.snapshots):
        snap = metrics.snapshots[epoch]
        has_A = snap.pred_A is not None
        for i in range(len(snap.truth)):
            rows.append((epoch, int(video_ids[i]), int(snap.truth[i]), int(snap.pred_F[i]),
                         float(snap.conf_F[i]), int(snap.pred_A[i]) if has_A else -1,
                         float(snap.conf_A[i]) if has_A else float("nan")))
    return M.csv_block(DECISION_COLUMNS, rows)


def read_snapshots(path) -> dict[int, Snapshot]:
    by_epoch: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_epoch.setdefault(int(row["epoch"]), []).append(row)
    out = {}
    for epoch, rows in by_epoch.items():
        col = lambda name, t: np.array([t(r[name]) for r in rows])
        pred_A = col("pred_A", int)
        has_A = bool(len(pred_A)) and pred_A[0] >= 0
        out[epoch] = Snapshot(epoch, col("truth", int), col("pred_F", int), col("conf_F", float),
                              pred_A if has_A else None,
                              col("conf_A", float) if has_A else None)
    return out


def read_metrics(path) -> MetricsLog:
    from .trainer import EpochRecord

    mlog = MetricsLog()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vals = {c: float(row[c]) for c in CSV_COLUMNS}
            mlog.records.append(EpochRecord(
                int(vals["epoch"]), vals["lr"], vals["loss_sup_F"], vals["loss_sup_A"],
                vals["loss_unsup_F"], vals["loss_unsup_A"], int(vals["n_confident"]), 0,
                vals["pl_ratio"], vals["val_acc_F"], vals["val_acc_A"]))
    return mlog


def mean_metrics_csv(logs: list[MetricsLog]) -> str:
    """Column-wise mean over seeds, epoch by epoch."""
    n = min(len(m) for m in logs)
    rows = []
    for i in range(n):
        recs = [m.records[i] for m in logs]
        row = [recs[0].epoch]
        for c in CSV_COLUMNS[1:]:
            row.append(float(np.mean([getattr(r, c) for r in recs])))
        rows.append(row)
    return M.csv_block(CSV_COLUMNS, rows)


def _train_one(cfg, train_set, val, seed, seed_dir: Path):
    split = split_labeled(train_set, cfg.split.labeled_fraction, cfg.split.scheme, seed=seed)
    pair, mlog = train(cfg, train_set, split, seed=seed, val=val)
    if mlog.records and mlog.records[-1].epoch not in mlog.snapshots:
        from .trainer import take_snapshot

        last = mlog.records[-1].epoch
        mlog.snapshots[last] = take_snapshot(pair, cfg, split.unlabeled_set(), last)
    _write_text(seed_dir / "metrics.csv", mlog.to_csv())
    _write_text(seed_dir / "decisions.csv", decisions_csv(mlog, train_set.ids[split.unlabeled_idx]))
    ckpt = seed_dir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    save_checkpoint(pair.primary, ckpt / "primary.ckpt")
    if pair.auxiliary is not None:
        save_checkpoint(pair.auxiliary, ckpt / "auxiliary.ckpt")
    return pair, mlog


def run(cfg: ExperimentConfig, out_root, *, data_path=None, run_id=None,
        label: str = "") -> RunManifest:
    """Generate, split, train and export every seed of ``cfg``."""
    cfg.validate()
    run_id = run_id or make_run_id(cfg)
    out_dir = Path(out_root) / run_id
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(run_id, config_hash(cfg), cfg.run.seeds, out_dir, label=label)
    manifest.write()
    _write_text(out_dir / "config.txt", dump_config(cfg))
    start = time.perf_counter()
    train_set, val = datasets(cfg, data_path)
    logs = []
    for seed in cfg.run.seeds:
        seed_dir = out_dir / f"seed-{seed}"
        _, mlog = _train_one(cfg, train_set, val, seed, seed_dir)
        logs.append(mlog)
        if cfg.eval.paired_reference and cfg.pseudo_label.scheme is not Scheme.FIXMATCH:
            ref_cfg = with_overrides(cfg, {"pseudo_label.scheme": "fixmatch"})
            _train_one(ref_cfg, train_set, val, seed, seed_dir / "reference")
        if mlog.records:
            manifest.final_acc[seed] = mlog.records[-1].val_acc_F
        manifest.duration_s = time.perf_counter() - start
        manifest.write()
        log.info("run %s seed %d: val_acc_F=%s", run_id, seed,
                 manifest.final_acc.get(seed, float("nan")))
    _write_text(out_dir / "metrics.csv", mean_metrics_csv(logs) if logs else "")
    manifest.status = "complete"
    manifest.duration_s = time.perf_counter() - start
    manifest.write()
    return manifest


def _sweep_job(args):
    cfg, out_root, data_path, label = args
    return run(cfg, out_root, data_path=data_path, label=label)


def sweep(cfg: ExperimentConfig, axis: str, values, out_root, *, data_path=None,
          jobs: int = 1) -> list[RunManifest]:
    """One run per value of ``axis``; all runs share the seed list."""
    resolve_key(axis)
    values = list(values)
    if not values:
        return []
    cfgs = []
    for v in values:
        c = with_overrides(cfg, [f"{axis}={v}"])
        if c.train.mode is Mode.SUPERVISED:
            c = replace(c, train=replace(c.train, lam=0.0))
        c.validate()
        cfgs.append(c)
    jobs_args = [(c, out_root, data_path, f"{axis}={v}") for c, v in zip(cfgs, values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            manifests = list(pool.map(_sweep_job, jobs_args))
    else:
        manifests = [_sweep_job(a) for a in jobs_args]
    rows = []
    for v, m in zip(values, manifests):
        mean, lo, hi = m.summary()
        rows.append((axis, v, m.run_id, mean, lo, hi))
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    name = f"sweep-{axis.replace('.', '_')}.csv"
    _write_text(out / name, M.csv_block(("axis", "value", "run_id", "val_acc_F_mean",
                                         "val_acc_F_min", "val_acc_F_max"), rows))
    return manifests


# --------------------------------------------------------------------------
# evaluate / report


def _run_config(run_dir: Path) -> ExperimentConfig:
    path = run_dir / "config.txt"
    if not path.exists():
        raise ReportingError(f"{run_dir} has no config.txt")
    return load_config(path)


def evaluate(run_dir, *, num_clips=None, data_path=None) -> str:
    """Multi-clip accuracy, per-kind accuracy and stride degradation per seed."""
    run_dir = Path(run_dir)
    cfg = _run_config(run_dir)
    manifest = RunManifest.read(run_dir)
    num_clips = num_clips or cfg.eval.num_clips
    _, val = datasets(cfg, data_path)
    spatial = [c for c in range(cfg.data.num_classes) if cfg.data.kind_of(c) is Kind.SPATIAL]
    temporal = [c for c in range(cfg.data.num_classes) if cfg.data.kind_of(c) is Kind.TEMPORAL]
    rows, blocks = [], []
    for seed in manifest.seeds:
        ckpt = run_dir / f"seed-{seed}" / "checkpoints"
        if not (ckpt / "primary.ckpt").exists():
            raise ReportingError(f"missing checkpoint for seed {seed}")
        nets = [("primary", load_checkpoint(ckpt / "primary.ckpt"), cfg.temporal.primary)]
        if (ckpt / "auxiliary.ckpt").exists():
            nets.append(("auxiliary", load_checkpoint(ckpt / "auxiliary.ckpt"), cfg.temporal.aux))
        for name, net, clip in nets:
            table = M.class_accuracy(net, val, num_clips, clip)
            strides = [s for s in (1, 2, 4, 8) if clip.frames % s == 0]
            deg = M.stride_degradation(net, val.of_kind(Kind.TEMPORAL), strides, clip=clip,
                                       num_clips=num_clips)
            rows.append((seed, name, accuracy(net, val, num_clips, clip),
                         table.mean_over(spatial), table.mean_over(temporal),
                         deg.drop_at(deg.strides[-1])))
            blocks.append(f"# seed {seed} {name} stride degradation (temporal classes)\n"
                          + deg.to_csv())
    text = M.csv_block(("seed", "net", "accuracy", "acc_spatial", "acc_temporal",
                        "drop_max_stride"), rows)
    full = text + "\n" + "\n".join(blocks)
    _write_text(run_dir / "evaluation.csv", full)
    return full


def report(run_dir, *, tau=None) -> str:
    """CSV blocks: run summary, seed-averaged metrics, subset curves, gaps."""
    run_dir = Path(run_dir)
    cfg = _run_config(run_dir)
    manifest = RunManifest.read(run_dir)
    tau = cfg.tau if tau is None else tau
    mean, lo, hi = manifest.summary()
    parts = ["# summary\n" + M.csv_block(
        ("run_id", "status", "seeds", "val_acc_F_mean", "val_acc_F_min", "val_acc_F_max"),
        [(manifest.run_id, manifest.status, " ".join(map(str, manifest.seeds)), mean, lo, hi)])]
    for seed in manifest.seeds:
        seed_dir = run_dir / f"seed-{seed}"
        mlog = read_metrics(seed_dir / "metrics.csv")
        mlog.snapshots = read_snapshots(seed_dir / "decisions.csv")
        has_aux = any(s.pred_A is not None for s in mlog.snapshots.values())
        ref = None
        if (seed_dir / "reference" / "decisions.csv").exists():
            ref = read_metrics(seed_dir / "reference" / "metrics.csv")
            ref.snapshots = read_snapshots(seed_dir / "reference" / "decisions.csv")
        interval = cfg.eval.snapshot_interval
        if has_aux and interval:
            # Only epochs with snapshots are sampled.
            last = max(r.epoch for r in mlog.records) if mlog.records else 0
            trimmed = MetricsLog(records=[r for r in mlog.records
                                          if r.epoch <= last - last % interval])
            trimmed.snapshots = mlog.snapshots
            points = M.subset_accuracy_curve(trimmed, interval, ref, tau=tau)
            parts.append(f"# seed {seed} subset accuracy curve\n" + M.subset_curve_csv(points))
        if has_aux and mlog.snapshots:
            last = mlog.snapshots[max(mlog.snapshots)]
            K = cfg.data.num_classes
            small = M.ClassAccuracyTable.from_predictions(last.pred_A, last.truth, K)
            large = M.ClassAccuracyTable.from_predictions(last.pred_F, last.truth, K)
            parts.append(f"# seed {seed} per-class gap (auxiliary - primary, unlabeled pool)\n"
                         + M.gaps_csv(M.per_class_gap(small, large)))
            if ref is not None and ref.snapshots:
                base = ref.snapshots[max(ref.snapshots)]
                base_tab = M.ClassAccuracyTable.from_predictions(base.pred_F, base.truth, K)
                gain = large.accuracy - base_tab.accuracy
                parts.append(f"# seed {seed} primary gain over reference vs auxiliary accuracy\n"
                             + M.gain_bins_csv(M.gain_vs_aux_bins(gain, small.accuracy)))
    text = "\n".join(parts)
    _write_text(run_dir / "report.csv", text)
    return text


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pseudolab", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
        sp.add_argument("--out", default="runs", help="output directory")

    g = sub.add_parser("generate", help="write the training and validation datasets")
    common(g)
    for name in ("train", "sweep"):
        t = sub.add_parser(name, help="train every seed" if name == "train"
                           else "one run per value of a config key")
        common(t)
        t.add_argument("--data", help="dataset file written by 'generate'")
        t.add_argument("--run-id", help="fixed run directory name")
        t.add_argument("--jobs", type=int, default=1, help="parallel processes for sweeps")
        if name == "sweep":
            t.add_argument("--axis", help="config key to vary")
            t.add_argument("--values", help="comma-separated values")
    e = sub.add_parser("evaluate", help="evaluate the checkpoints of a run")
    e.add_argument("--run", required=True)
    e.add_argument("--num-clips", type=int)
    e.add_argument("--data")
    r = sub.add_parser("report", help="export metric CSV blocks for a run")
    r.add_argument("--run", required=True)
    r.add_argument("--tau", type=float)
    return p


def _cmd_generate(args) -> None:
    cfg = build_config(args.config, args.overrides, args.seeds)
    train_set, val = datasets(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("train.bin", train_set), ("val.bin", val)):
        save_dataset(ds, out / name)
        print(f"{out / name}: {len(ds)} videos")


def _cmd_train(args) -> None:
    overrides, sweep_spec = _split_sweep(args.overrides)
    cfg = build_config(args.config, overrides, args.seeds)
    if sweep_spec or getattr(args, "axis", None):
        axis, values = sweep_spec or (args.axis, [v for v in (args.values or "").split(",") if v])
        manifests = sweep(cfg, axis, values, args.out, data_path=args.data, jobs=args.jobs)
        for m in manifests:
            mean, lo, hi = m.summary()
            print(f"{m.label}\t{m.run_id}\tval_acc_F={mean:.4f} [{lo:.4f}, {hi:.4f}]")
        if not manifests:
            print("sweep has no values; nothing to run")
        return
    m = run(cfg, args.out, data_path=args.data, run_id=args.run_id)
    mean, lo, hi = m.summary()
    print(f"{m.out_dir}\tval_acc_F={mean:.4f} [{lo:.4f}, {hi:.4f}]")


def _cmd_sweep(args) -> None:
    _, sweep_spec = _split_sweep(args.overrides)
    if not sweep_spec and not args.axis:
        raise ConfigError("sweep needs --axis/--values or --set sweep=axis:v1,v2")
    _cmd_train(args)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"generate": _cmd_generate, "train": _cmd_train, "sweep": _cmd_sweep,
                "evaluate": lambda a: print(evaluate(a.run, num_clips=a.num_clips, data_path=a.data),
                                            end=""),
                "report": lambda a: print(report(a.run, tau=a.tau), end="")}
    try:
        handlers[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ReportingError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
