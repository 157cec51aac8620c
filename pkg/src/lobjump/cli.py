"""Command-line driver: one subcommand per pipeline stage plus ``pipeline`` to chain them.

Every stage writes into ``--out-dir`` under temporary names and renames them
only when the stage succeeds, then records a manifest with the seed, config
hash, library versions and output checksums.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from . import evaluation as ev
from . import features as feat
from . import jumps, lob, models, synth
from .config import PRESETS, PipelineConfig, config_hash, load_config, to_ini
from .nn import load_checkpoint, save_checkpoint

log = logging.getLogger("lobjump")

EXIT_OK, EXIT_STAGE_FAILED, EXIT_USAGE, EXIT_INCOMPLETE_GRID = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "lobjump": pkg}


class Stage:
    """Output bookkeeping for one stage run."""

    def __init__(self, name: str, out_dir, cfg: PipelineConfig, seed: int, inputs=()):
        self.name = name
        self.out_dir = Path(out_dir)
        self.cfg = cfg
        self.seed = seed
        self.inputs = [Path(p) for p in inputs]
        self.pending: list[tuple[Path, Path]] = []

    def path(self, rel: str) -> Path:
        final = self.out_dir / rel
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = final.with_name(final.name + ".partial")
        self.pending.append((tmp, final))
        return tmp

    def __enter__(self):
        for p in self.inputs:
            if not p.exists():
                raise StageError(self.name, f"missing input {p}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for tmp, _ in self.pending:
                tmp.unlink(missing_ok=True)
            if not isinstance(exc, StageError):
                raise StageError(self.name, f"{exc_type.__name__}: {exc}") from exc
            return False
        outputs = {}
        for tmp, final in self.pending:
            if tmp.exists():
                tmp.replace(final)
                outputs[str(final.relative_to(self.out_dir))] = _sha256(final)
        manifest = {
            "stage": self.name,
            "seed": self.seed,
            "config_hash": config_hash(self.cfg),
            "versions": _versions(),
            "inputs": {p.name: _sha256(p) for p in self.inputs if p.is_file()},
            "outputs": outputs,
        }
        (self.out_dir / f"manifest_{self.name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return False


# -- stages ---------------------------------------------------------------------

def stock_seed(seed: int, index: int) -> int:
    return seed + 7919 * index


def run_synth(cfg: PipelineConfig, out_dir, stock_index: int = 0) -> None:
    scfg = dataclasses.replace(cfg.scenario, seed=stock_seed(cfg.scenario.seed, stock_index))
    with Stage("synth", out_dir, cfg, scfg.seed) as st:
        sc = synth.generate(scfg)
        lob.write_events(st.path("events.csv"), sc.events, scfg.ticksize)
        synth.write_truth(st.path("truth.csv"), sc.truth)
        log.info("synth: %d events, %d planted jumps", len(sc.events), len(sc.truth))


def run_replay(cfg: PipelineConfig, events_path, out_dir) -> None:
    with Stage("replay", out_dir, cfg, cfg.scenario.seed, [events_path]) as st:
        events, _ = lob.read_events(events_path)
        snaps = lob.replay(events, session_length=cfg.scenario.n_seconds)
        lob.write_snapshots(st.path("snapshots.bin"), snaps)
        log.info("replay: %d snapshots", len(snaps))


def run_detect(cfg: PipelineConfig, snapshots_path, out_dir) -> jumps.JumpLabels:
    with Stage("detect", out_dir, cfg, cfg.scenario.seed, [snapshots_path]) as st:
        snaps = lob.read_snapshots(snapshots_path)
        labels = jumps.detect_jumps(jumps.minute_prices(snaps), cfg.detector)
        jumps.write_labels(st.path("labels.csv"), labels)
        log.info("detect: %d jumps in %d detectable minutes", labels.n_jumps, int(labels.detectable.sum()))
    return labels


def _frame_source(cfg, snapshots_path, events_path):
    snaps = lob.read_snapshots(snapshots_path)
    events, _ = lob.read_events(events_path)
    return feat.FrameSource.from_streams(snaps, events, dt=cfg.features.dt, dt_long=cfg.features.dt_long,
                                         session_length=cfg.scenario.seconds_per_day)


def run_features(cfg: PipelineConfig, snapshots_path, events_path, out_dir, chunk: int = 23_400) -> None:
    with Stage("features", out_dir, cfg, cfg.scenario.seed, [snapshots_path, events_path]) as st:
        src = _frame_source(cfg, snapshots_path, events_path)
        with feat.FeatureWriter(st.path("features.bin"), src.n_seconds) as w:
            for a in range(1, src.n_seconds + 1, chunk):
                w.write(src.frames(np.arange(a, min(a + chunk, src.n_seconds + 1))))


def run_dataset(cfg: PipelineConfig, labels_path, out_dir, features_path=None, snapshots_path=None,
                events_path=None, stock_index: int = 0) -> dsmod.Dataset:
    inputs = [labels_path] + [p for p in (features_path, snapshots_path, events_path) if p]
    with Stage("dataset", out_dir, cfg, cfg.dataset.seed, inputs) as st:
        labels = jumps.read_labels(labels_path)
        if features_path:
            src = feat.FileFrameSource(features_path)
        elif snapshots_path and events_path:
            src = _frame_source(cfg, snapshots_path, events_path)
        else:
            raise StageError("dataset", "needs --features or both --snapshots and --events")
        ds = dsmod.build_dataset(src, labels, cfg.dataset)
        ds.meta["stock"] = stock_index
        dsmod.write_dataset(st.path("dataset.bin"), ds)
        log.info("dataset: %d samples, positive share %.3f", len(ds), ds.positive_share)
    return ds


def _spec_for(arch: str, ds: dsmod.Dataset, output: str = "binary") -> models.ModelSpec:
    spec = models.make_spec(arch, T=ds.X.shape[1])
    return models.three_class_variant(spec) if output == "three_class" else spec


def run_train(cfg: PipelineConfig, dataset_path, out_dir, architectures=None, output: str = "binary") -> None:
    from .plotting import plot_history

    architectures = architectures or cfg.pipeline.architectures
    with Stage("train", out_dir, cfg, cfg.train.seed, [dataset_path]) as st:
        ds = dsmod.read_dataset(dataset_path)
        for arch in architectures:
            spec = _spec_for(arch, ds, output)
            models.write_spec(st.path(f"{arch}.ini"), spec)
            prev = None
            hist_rows = []
            for k in range(len(cfg.split.entries)):
                sp = dsmod.split(ds.meta, cfg.split, k, cfg.dataset.seed)
                if len(sp.train) == 0:
                    raise StageError("train", f"set {k + 1} has no training samples")
                init = None
                if cfg.train.curriculum and prev is not None:
                    init = models.build_network(spec, cfg.train.seed)
                    init.set_weights(prev)
                res = models.train(spec, ds.subset(sp.train), ds.subset(sp.validation), cfg.train, init=init,
                                   log=log.debug)
                prev = res.net.get_weights()
                save_checkpoint(st.path(f"{arch}_set{k + 1}.ckpt"), res.net)
                plot_history(res.history, st.path(f"{arch}_set{k + 1}_loss.png"), f"{arch} set {k + 1}")
                hist_rows += [{"set": k + 1, **h} for h in res.history]
                log.info("train: %s set %d best epoch %d", arch, k + 1, res.best_epoch)
            with open(st.path(f"{arch}_history.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, ["set", "epoch", "train_loss", "val_loss"], lineterminator="\n")
                w.writeheader()
                for row in hist_rows:
                    w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def run_eval(cfg: PipelineConfig, dataset_paths: dict[str, Path], models_dirs: dict[str, Path], out_dir,
             architectures=None) -> dict[str, ev.Grid]:
    from .plotting import plot_grid

    architectures = architectures or cfg.pipeline.architectures
    stocks = list(dataset_paths)
    inputs = list(dataset_paths.values())
    grids: dict[str, ev.Grid] = {}
    with Stage("eval", out_dir, cfg, cfg.train.seed, inputs) as st:
        data = {s: dsmod.read_dataset(p) for s, p in dataset_paths.items()}
        sets = list(range(1, len(cfg.split.entries) + 1))
        baseline = ev.Grid(sets, stocks)
        pred_rows = []
        for arch in architectures:

            def cell(k, stock, arch=arch):
                ds = data[stock]
                sp = dsmod.split(ds.meta, cfg.split, k - 1, cfg.dataset.seed)
                if len(sp.test) == 0:
                    raise ev.MissingCell(f"set {k} has no test samples")
                spec = models.read_spec(models_dirs[stock] / f"{arch}.ini")
                net = load_checkpoint(models_dirs[stock] / f"{arch}_set{k}.ckpt", models.build_network(spec))
                test = ds.subset(sp.test)
                prob = models.predict(net, spec, test.X)
                labels = (test.y > 0).astype(int)
                for i, p, y in zip(sp.test.tolist(), np.atleast_1d(prob).tolist(), labels.tolist()):
                    pred_rows.append((arch, k, stock, i, p, y))
                if (k, stock) not in baseline.cells:
                    rb = ev.random_baseline(labels, cfg.train.seed + k, cfg.pipeline.random_trials)
                    baseline.cells[(k, stock)] = rb
                return models.classify(prob), labels

            grid = ev.rolling_grid(cell, sets, stocks)
            grids[arch] = grid
            ev.write_grid_csv(st.path(f"report_{arch}.csv"), grid)
            plot_grid(grid, st.path(f"grid_{arch}.png"))
        grids["Random"] = baseline
        text = []
        for name, grid in grids.items():
            text.append(f"F1 by set and stock: {name}\n")
            text.append(ev.format_grid(grid, "f1"))
            text.append("\n")
        summary = {name: ev.EvalReport(*(g.mean(m) for m in ("precision", "recall", "f1", "kappa")))
                   for name, g in grids.items()}
        text.append(ev.format_summary(summary))
        st.path("report.txt").write_text("".join(text))
        with open(st.path("predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["architecture", "set", "stock", "sample", "probability", "label"])
            for a, k, s, i, p, y in pred_rows:
                w.writerow([a, k, s, i, f"{p:.10g}", y])
    return grids


def run_attention(cfg: PipelineConfig, dataset_path, models_dir, out_dir, set_index: int | None = None) -> None:
    from .plotting import plot_attention

    with Stage("attention", out_dir, cfg, cfg.train.seed, [dataset_path]) as st:
        ds = dsmod.read_dataset(dataset_path)
        k = set_index or len(cfg.split.entries)
        spec = models.read_spec(Path(models_dir) / "CNN_LSTM_A.ini")
        net = load_checkpoint(Path(models_dir) / f"CNN_LSTM_A_set{k}.ckpt", models.build_network(spec))
        sp = dsmod.split(ds.meta, cfg.split, k - 1, cfg.dataset.seed)
        idx = sp.test if len(sp.test) else np.arange(len(ds))
        rep = models.export_attention(net, spec, ds.X[idx])
        with open(st.path("attention.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "weight"])
            for name, weight in zip(rep.names, rep.weights.tolist()):
                w.writerow([name, f"{weight:.10g}"])
        top = rep.top(cfg.pipeline.attention_top_k)
        st.path("attention_top.txt").write_text("".join(f"{n:28s} {v:.5f}\n" for n, v in top))
        plot_attention(top, len(rep.names), st.path("attention_top.png"))


def run_pipeline(cfg: PipelineConfig, out_dir) -> dict[str, ev.Grid]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(to_ini(cfg))
    datasets, model_dirs = {}, {}
    for i, stock in enumerate(cfg.pipeline.stocks):
        d = out / stock
        run_synth(cfg, d, i)
        run_replay(cfg, d / "events.csv", d)
        run_detect(cfg, d / "snapshots.bin", d)
        if cfg.pipeline.write_features:
            run_features(cfg, d / "snapshots.bin", d / "events.csv", d)
            run_dataset(cfg, d / "labels.csv", d, features_path=d / "features.bin", stock_index=i)
        else:
            run_dataset(cfg, d / "labels.csv", d, snapshots_path=d / "snapshots.bin", events_path=d / "events.csv",
                        stock_index=i)
        run_train(cfg, d / "dataset.bin", d / "models")
        datasets[stock] = d / "dataset.bin"
        model_dirs[stock] = d / "models"
    grids = run_eval(cfg, datasets, model_dirs, out / "report")
    if "CNN_LSTM_A" in cfg.pipeline.architectures:
        first = cfg.pipeline.stocks[0]
        run_attention(cfg, datasets[first], model_dirs[first], out / "report")
    return grids


# -- argument parsing ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file overriding the defaults")
    p.add_argument("--scenario", choices=PRESETS, help="start from a named preset before applying --config")
    p.add_argument("--seed", type=int, help="seed for every random stage")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="directory for outputs (default: out)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobjump", description="Limit-order-book jump prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event stream and jump truth")
    _common(p)
    p.add_argument("--stock-index", type=int, default=0)

    p = sub.add_parser("replay", help="rebuild per-second book snapshots from events")
    _common(p)
    p.add_argument("--events", type=Path, required=True)

    p = sub.add_parser("detect", help="label one-minute return jumps")
    _common(p)
    p.add_argument("--snapshots", type=Path, required=True)

    p = sub.add_parser("features", help="write per-second feature frames")
    _common(p)
    p.add_argument("--snapshots", type=Path, required=True)
    p.add_argument("--events", type=Path, required=True)

    p = sub.add_parser("dataset", help="build labeled, normalised training windows")
    _common(p)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--features", type=Path)
    p.add_argument("--snapshots", type=Path)
    p.add_argument("--events", type=Path)
    p.add_argument("--stock-index", type=int, default=0)

    p = sub.add_parser("train", help="train models on every split of a dataset")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--arch", action="append", choices=models.ARCHITECTURES)
    p.add_argument("--three-class", action="store_true", help="up/down/none softmax head")

    p = sub.add_parser("eval", help="evaluate checkpoints on the test days of every split")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True, help="directory written by train")
    p.add_argument("--stock", default="SYN")
    p.add_argument("--arch", action="append", choices=models.ARCHITECTURES)

    p = sub.add_parser("attention", help="export the feature attention of a CNN_LSTM_A checkpoint")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--set", type=int)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p)
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config, args.scenario)
    if args.seed is not None:
        cfg.scenario = dataclasses.replace(cfg.scenario, seed=args.seed)
        cfg.dataset = dataclasses.replace(cfg.dataset, seed=args.seed)
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = _config(args)
    except (OSError, KeyError, ValueError) as exc:
        print(f"lobjump {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out_dir
    try:
        c = args.command
        if c == "synth":
            run_synth(cfg, out, args.stock_index)
        elif c == "replay":
            run_replay(cfg, args.events, out)
        elif c == "detect":
            run_detect(cfg, args.snapshots, out)
        elif c == "features":
            run_features(cfg, args.snapshots, args.events, out)
        elif c == "dataset":
            run_dataset(cfg, args.labels, out, args.features, args.snapshots, args.events, args.stock_index)
        elif c == "train":
            run_train(cfg, args.dataset, out, args.arch, "three_class" if args.three_class else "binary")
        elif c == "eval":
            grids = run_eval(cfg, {args.stock: args.dataset}, {args.stock: args.models}, out, args.arch)
            if not all(g.complete for g in grids.values()):
                print(f"lobjump eval: some grid cells failed, see {out / 'report.txt'}", file=sys.stderr)
                return EXIT_INCOMPLETE_GRID
        elif c == "attention":
            run_attention(cfg, args.dataset, args.models, out, args.set)
        elif c == "pipeline":
            grids = run_pipeline(cfg, out)
            print((out / "report" / "report.txt").read_text(), end="")
            if not all(g.complete for g in grids.values()):
                print("lobjump pipeline: some grid cells failed", file=sys.stderr)
                return EXIT_INCOMPLETE_GRID
    except StageError as exc:
        print(f"lobjump {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
