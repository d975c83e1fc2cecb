"""Command-line pipeline: synthesize data, build graph stores, train,
evaluate, interpret, and verify gradients.

A JSON config file is the source of hyperparameters; command-line flags
override it, and the effective merged config is written next to every run's
outputs.  Usage problems exit 2, runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import interpret as interpret_mod
from . import synth as synth_mod
from .errors import RoiginError
from .fnc import build_graph, load_subject, read_labels_csv
from .model import Model, ModelConfig, assemble
from .trainer import (
    EvalReport,
    TrainConfig,
    aggregate_reports,
    evaluate,
    residualize_labels,
    run_seed,
    split,
    write_report,
)
from .verify import DEFAULT_EPS, format_table, run_battery


class UsageError(RoiginError):
    """Bad invocation (missing file, impossible flag combination); exit 2."""


@dataclass
class DataConfig:
    store_dir: str | None = None
    target: str = "score"
    covariates: list[str] | None = None  # None = every stored covariate column
    roi_labels: str | None = None

    def to_dict(self) -> dict:
        return {
            "store_dir": self.store_dir,
            "target": self.target,
            "covariates": self.covariates,
            "roi_labels": self.roi_labels,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DataConfig":
        return cls(**payload)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "threads": self.threads,
        }


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise UsageError(f"config file not found: {cfg_path}")
    try:
        payload = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {cfg_path} is not valid JSON: {err}")
    return RunConfig(
        model=ModelConfig.from_dict(payload.get("model", {})),
        train=TrainConfig.from_dict(payload.get("train", {})),
        data=DataConfig.from_dict(payload.get("data", {})),
        threads=int(payload.get("threads", 1)),
    )


def write_config(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    )


def _apply_train_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    model_dict = cfg.model.to_dict()
    if args.readout is not None:
        model_dict["readout"] = args.readout
    if args.aggregation is not None:
        model_dict["aggregation"] = args.aggregation
    if args.edge_keep_pct is not None:
        model_dict["edge_keep_pct"] = args.edge_keep_pct
    train_dict = cfg.train.to_dict()
    if args.seed is not None:
        train_dict["seeds"] = [args.seed]
    data_dict = cfg.data.to_dict()
    if args.data_dir is not None:
        data_dict["store_dir"] = args.data_dir
    threads = cfg.threads if args.threads is None else args.threads
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    return RunConfig(
        model=ModelConfig.from_dict(model_dict),
        train=TrainConfig.from_dict(train_dict),
        data=DataConfig.from_dict(data_dict),
        threads=threads,
    )


def _load_dataset(cfg: RunConfig) -> data_mod.GraphDataset:
    if cfg.data.store_dir is None:
        raise UsageError("no data store given; pass --data-dir or set data.store_dir")
    store = Path(cfg.data.store_dir)
    if not (store / "graphs.npz").is_file():
        raise UsageError(f"no graph store at {store}")
    dataset = data_mod.load_store(store)
    meta_path = store / "meta.json"
    stored_pct = None
    if meta_path.is_file():
        stored_pct = json.loads(meta_path.read_text()).get("edge_keep_pct")
    if stored_pct is None or abs(stored_pct - cfg.model.edge_keep_pct) > 1e-12:
        dataset = data_mod.rethreshold(dataset, cfg.model.edge_keep_pct)
    return dataset


# -- commands ------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth_mod.SignalSpec(
        salient_rois=tuple(int(r) for r in args.salient_rois.split(",") if r != ""),
        noise_sd=args.noise_sd,
        nonlinearity=args.nonlinearity,
    )
    dataset = synth_mod.generate(
        n_subjects=args.n_subjects,
        n_regions=args.n_regions,
        t_samples=args.t_samples,
        spec=spec,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    synth_mod.write_dataset(dataset, out)
    print(f"wrote {len(dataset)} subjects to {out}")
    return 0


def cmd_build_graphs(args: argparse.Namespace) -> int:
    data_dir = Path(args.data_dir)
    labels_path = data_dir / "labels.csv"
    if not labels_path.is_file():
        raise UsageError(f"no labels.csv in {data_dir}")
    table = read_labels_csv(labels_path, target=args.target)
    graphs = []
    for sid, score in zip(table.subject_ids, table.scores):
        subject_path = data_dir / f"{sid}.csv"
        if not subject_path.is_file():
            raise UsageError(f"missing subject file {subject_path}")
        fnc = load_subject(subject_path, kind=args.input_kind)
        graphs.append(build_graph(fnc, args.edge_keep_pct, label=score))
    dataset = data_mod.from_graphs(graphs, table.subject_ids, table.covariates)
    out = Path(args.out_dir)
    data_mod.save_store(
        dataset,
        out,
        meta={
            "n_regions": dataset.n_nodes,
            "n_subjects": len(dataset),
            "edge_keep_pct": args.edge_keep_pct,
            "target": args.target,
            "source": str(data_dir),
        },
    )
    print(f"wrote graph store for {len(dataset)} subjects to {out}")
    return 0


def _seed_dir(out: Path, seed: int, multi: bool) -> Path:
    return out / f"seed_{seed}" if multi else out


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_train_overrides(load_config(args.config), args)
    dataset = _load_dataset(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out)
    seeds = list(cfg.train.seeds)
    multi = len(seeds) > 1
    runs = []
    for seed in seeds:
        run = run_seed(dataset, cfg.model, cfg.train, seed, cfg.data.covariates)
        seed_out = _seed_dir(out, seed, multi)
        seed_out.mkdir(parents=True, exist_ok=True)
        run.model.save(seed_out / "checkpoint.json")
        run.result.history.write_csv(seed_out / "history.csv")
        write_report(run.test_report, seed_out / "report.json")
        status = "diverged; kept last good checkpoint" if run.result.diverged else (
            f"best epoch {run.result.best_epoch}"
        )
        print(
            f"seed {seed}: {status}, val mse {run.val_report.mse:.4f}, "
            f"test mse {run.test_report.mse:.4f}, test corr {run.test_report.pearson_corr:.4f}"
        )
        runs.append(run)
    if multi:
        write_report(aggregate_reports(runs), out / "report.json", include_predictions=False)
    return 0


def _discover_seed_runs(run_dir: Path, cfg: RunConfig) -> list[tuple[int, Path]]:
    if (run_dir / "checkpoint.json").is_file():
        return [(cfg.train.seeds[0], run_dir)]
    found = []
    for sub in sorted(run_dir.glob("seed_*")):
        if (sub / "checkpoint.json").is_file():
            found.append((int(sub.name.split("_", 1)[1]), sub))
    if not found:
        raise UsageError(f"no checkpoints under {run_dir}")
    return found


def _load_run(args: argparse.Namespace) -> tuple[RunConfig, data_mod.GraphDataset, list[tuple[int, Path]]]:
    run_dir = Path(args.run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise UsageError(f"no config.json in {run_dir}")
    cfg = load_config(str(cfg_path))
    if args.data_dir is not None:
        cfg.data.store_dir = args.data_dir
    dataset = _load_dataset(cfg)
    return cfg, dataset, _discover_seed_runs(run_dir, cfg)


def _split_subset(
    dataset: data_mod.GraphDataset,
    cfg: RunConfig,
    seed: int,
    which: str,
) -> data_mod.GraphDataset:
    train_idx, val_idx, test_idx = split(len(dataset), cfg.train.split_fractions, seed)
    residuals = residualize_labels(dataset, train_idx, cfg.data.covariates)
    prepared = dataset.with_labels(residuals)
    chosen = {"train": train_idx, "val": val_idx, "test": test_idx}[which]
    return prepared.subset(chosen)


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg, dataset, seed_runs = _load_run(args)
    out = Path(args.out_dir) if args.out_dir else Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    multi = len(seed_runs) > 1
    reports = []
    per_seed = []
    for seed, seed_path in seed_runs:
        model = assemble(cfg.model, n_nodes=dataset.n_nodes, seed=seed)
        model.load(seed_path / "checkpoint.json")
        subset = _split_subset(dataset, cfg, seed, args.split)
        report = evaluate(model, subset, cfg.train.batch_size)
        seed_out = _seed_dir(out, seed, multi)
        seed_out.mkdir(parents=True, exist_ok=True)
        write_report(report, seed_out / "report.json")
        if args.emit_attention:
            _write_attention(model, subset, cfg, seed_out / "attention.json")
        reports.append(report)
        per_seed.append(
            {"seed": seed, "mse": report.mse, "pearson_corr": report.pearson_corr}
        )
        print(f"seed {seed}: {args.split} mse {report.mse:.4f}, corr {report.pearson_corr:.4f}")
    if multi:
        combined = EvalReport(
            mse=float(np.mean([r.mse for r in reports])),
            pearson_corr=float(np.mean([r.pearson_corr for r in reports])),
            n=reports[0].n,
            per_seed=per_seed,
        )
        write_report(combined, out / "report.json", include_predictions=False)
    return 0


def _write_attention(
    model: Model,
    subset: data_mod.GraphDataset,
    cfg: RunConfig,
    path: Path,
) -> None:
    payload: dict[str, list[list[float]]] = {}
    batch = cfg.train.batch_size
    for start in range(0, len(subset), batch):
        idx = np.arange(start, min(start + batch, len(subset)))
        result = model.forward(
            subset.features[idx],
            subset.adjacency[idx],
            subset.edge_mask[idx],
            record_attention=True,
        )
        for row, s_idx in enumerate(idx):
            payload[subset.subject_ids[s_idx]] = [
                [float(v) for v in layer[row]] for layer in result.attention
            ]
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_interpret(args: argparse.Namespace) -> int:
    cfg, dataset, seed_runs = _load_run(args)
    out = Path(args.out_dir) if args.out_dir else Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels_path = args.roi_labels or cfg.data.roi_labels
    labels = interpret_mod.read_roi_labels(labels_path) if labels_path else {}
    multi = len(seed_runs) > 1
    freq_stack = []
    for seed, seed_path in seed_runs:
        model = assemble(cfg.model, n_nodes=dataset.n_nodes, seed=seed)
        model.load(seed_path / "checkpoint.json")
        subset = _split_subset(dataset, cfg, seed, args.split)
        selections = interpret_mod.collect_selections(model, subset, cfg.train.batch_size)
        freqs = interpret_mod.roi_frequencies(model, subset, cfg.train.batch_size, labels)
        seed_out = _seed_dir(out, seed, multi)
        seed_out.mkdir(parents=True, exist_ok=True)
        interpret_mod.write_frequencies_csv(freqs, seed_out / "roi_freq.csv")
        tops = interpret_mod.top_rois(freqs, args.threshold)
        interpret_mod.write_top_rois_json(tops, seed_out / "top_rois.json")
        interpret_mod.write_selections_json(
            selections, subset.subject_ids, seed_out / "pool_selections.json"
        )
        freq_stack.append([f.freq for f in freqs])
        print(f"seed {seed}: {len(tops)} regions at threshold {args.threshold}")
    if multi:
        mean_freqs = np.mean(np.asarray(freq_stack), axis=0)
        merged = [
            interpret_mod.RoiFrequency(
                roi_id=r, label=labels.get(r, f"roi_{r}"), freq=float(mean_freqs[r])
            )
            for r in range(dataset.n_nodes)
        ]
        interpret_mod.write_frequencies_csv(merged, out / "roi_freq.csv")
        interpret_mod.write_top_rois_json(
            interpret_mod.top_rois(merged, args.threshold), out / "top_rois.json"
        )
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_battery(base_seed=args.seed, n_seeds=args.n_seeds, eps=args.eps)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


# -- parser --------------------------------------------------------------------


def _formatter(prog: str) -> argparse.HelpFormatter:
    return argparse.HelpFormatter(prog, width=96)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roigin",
        description="ROI-aware graph isomorphism networks for connectivity regression",
        formatter_class=_formatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser(
        "synth",
        help="generate a synthetic dataset with a planted signal",
        formatter_class=_formatter,
    )
    p.add_argument("--out-dir", required=True, help="directory for subject CSVs and labels")
    p.add_argument("--n-subjects", type=int, default=200)
    p.add_argument("--n-regions", type=int, default=53)
    p.add_argument("--t-samples", type=int, default=200)
    p.add_argument(
        "--salient-rois",
        default="3,7,12,21,33,45",
        help="comma-separated region indices carrying the planted signal",
    )
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--nonlinearity", choices=("linear", "tanh"), default="linear")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser(
        "build-graphs",
        help="turn subject CSVs into a serialized graph store",
        formatter_class=_formatter,
    )
    p.add_argument("--data-dir", required=True, help="directory with <subject>.csv and labels.csv")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--edge-keep-pct", type=float, default=1.0)
    p.add_argument("--input-kind", choices=("auto", "timeseries", "fnc"), default="auto")
    p.add_argument("--target", default="score", help="labels.csv column used as the target")
    p.set_defaults(func=cmd_build_graphs)

    p = commands.add_parser(
        "train",
        help="train on a graph store",
        formatter_class=_formatter,
    )
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--data-dir", help="graph store directory (overrides config)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="train a single seed instead of the config list")
    p.add_argument("--threads", type=int, help="worker threads; 1 forces the serial path")
    p.add_argument("--readout", choices=("sero", "garo", "meanmax"))
    p.add_argument("--aggregation", choices=("sum", "mean"))
    p.add_argument("--edge-keep-pct", type=float)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser(
        "evaluate",
        help="evaluate a trained run on a data split",
        formatter_class=_formatter,
    )
    p.add_argument("--run-dir", required=True, help="training output directory")
    p.add_argument("--data-dir", help="graph store directory (overrides run config)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out-dir", help="where to write reports (default: run dir)")
    p.add_argument("--emit-attention", action="store_true", help="write per-subject attention")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser(
        "interpret",
        help="region survival frequencies through the first pooling layer",
        formatter_class=_formatter,
    )
    p.add_argument("--run-dir", required=True)
    p.add_argument("--data-dir", help="graph store directory (overrides run config)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--roi-labels", help="optional roi_id,label CSV")
    p.add_argument("--out-dir", help="where to write outputs (default: run dir)")
    p.set_defaults(func=cmd_interpret)

    p = commands.add_parser(
        "gradcheck",
        help="finite-difference verification of every differentiable piece",
        formatter_class=_formatter,
    )
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except RoiginError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
