"""Command-line interface: exit codes, artifact layout, reproducibility, and
golden help text."""

import json
from pathlib import Path

import numpy as np
import pytest

from roigin.cli import build_parser, main

GOLDEN = Path(__file__).parent / "data" / "golden"

TINY_CONFIG = {
    "model": {
        "layer_dims": [4, 5, 6],
        "pool_ratios": [0.6, 0.6, 0.6],
        "clusters_k": 3,
        "aggregation": "sum",
        "readout": "sero",
        "edge_keep_pct": 1.0,
        "head_hidden": None,
    },
    "train": {
        "lr0": 0.003,
        "lr_decay_every": 30,
        "lr_decay_factor": 0.5,
        "epochs": 2,
        "batch_size": 8,
        "lambda1": 0.1,
        "seeds": [0, 1],
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-08,
        "unit_loss_mode": "signed",
        "split_fractions": [0.70, 0.15, 0.15],
    },
    "data": {"store_dir": None, "target": "score", "covariates": None, "roi_labels": None},
    "threads": 1,
}


def synth_args(out_dir, n=20):
    return [
        "synth",
        "--out-dir",
        str(out_dir),
        "--n-subjects",
        str(n),
        "--n-regions",
        "8",
        "--t-samples",
        "30",
        "--salient-rois",
        "1,4,6",
        "--noise-sd",
        "0.3",
        "--seed",
        "9",
    ]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> build-graphs -> single-seed train, shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw"
    store = root / "store"
    run = root / "run"
    assert main(synth_args(raw)) == 0
    assert main(["build-graphs", "--data-dir", str(raw), "--out-dir", str(store)]) == 0
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    assert (
        main(
            [
                "train",
                "--config",
                str(config),
                "--data-dir",
                str(store),
                "--out-dir",
                str(run),
                "--seed",
                "13",
                "--threads",
                "1",
            ]
        )
        == 0
    )
    return {"raw": raw, "store": store, "run": run, "config": config}


class TestExitCodes:
    def test_missing_config_is_usage_error(self, tmp_path):
        code = main(
            ["train", "--config", str(tmp_path / "missing.toml"), "--out-dir", str(tmp_path)]
        )
        assert code == 2

    def test_unknown_flag_rejected(self, tmp_path, capsys):
        code = main(["synth", "--out-dir", str(tmp_path), "--bogus", "1"])
        capsys.readouterr()
        assert code == 2

    def test_missing_subcommand(self, capsys):
        code = main([])
        capsys.readouterr()
        assert code == 2

    def test_train_without_store_is_usage_error(self, tmp_path):
        assert main(["train", "--out-dir", str(tmp_path)]) == 2

    def test_invalid_threads(self, tmp_path, pipeline):
        code = main(
            [
                "train",
                "--config",
                str(pipeline["config"]),
                "--data-dir",
                str(pipeline["store"]),
                "--out-dir",
                str(tmp_path),
                "--threads",
                "0",
            ]
        )
        assert code == 2

    def test_runtime_error_exits_one(self, tmp_path, pipeline):
        bad_cfg = dict(TINY_CONFIG)
        bad_cfg = json.loads(json.dumps(TINY_CONFIG))
        bad_cfg["model"]["layer_dims"] = [4, 5, 6]
        bad_cfg["train"]["epochs"] = 1
        config = tmp_path / "cfg.json"
        # store has 8-node graphs; a model built for 53 nodes must fail cleanly
        config.write_text(json.dumps(bad_cfg))
        run_dir = tmp_path / "run"
        code = main(
            [
                "evaluate",
                "--run-dir",
                str(tmp_path / "nonexistent"),
                "--data-dir",
                str(pipeline["store"]),
            ]
        )
        assert code == 2


class TestSynth:
    def test_outputs_and_reproducibility(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(synth_args(a, n=6)) == 0
        assert main(synth_args(b, n=6)) == 0
        assert (a / "labels.csv").is_file()
        assert (a / "signal_spec.json").is_file()
        assert sorted(p.name for p in a.glob("sub-*.csv")) == [
            f"sub-{i:04d}.csv" for i in range(6)
        ]
        for name in ["labels.csv", "signal_spec.json", "sub-0003.csv"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestBuildGraphs:
    def test_store_contents(self, pipeline):
        store = pipeline["store"]
        assert (store / "graphs.npz").is_file()
        meta = json.loads((store / "meta.json").read_text())
        assert meta["n_regions"] == 8
        assert meta["edge_keep_pct"] == 1.0

    def test_missing_labels_usage_error(self, tmp_path):
        code = main(["build-graphs", "--data-dir", str(tmp_path), "--out-dir", str(tmp_path)])
        assert code == 2


class TestTrain:
    def test_single_seed_artifacts(self, pipeline):
        run = pipeline["run"]
        for name in ("checkpoint.json", "history.csv", "report.json", "config.json"):
            assert (run / name).is_file(), name
        cfg = json.loads((run / "config.json").read_text())
        assert cfg["train"]["seeds"] == [13]
        assert cfg["threads"] == 1
        history = (run / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,lr,smooth_l1,unit,tpk,total,val_mse,val_corr"
        assert len(history) == 3

    def test_deterministic_rerun_bit_identical(self, pipeline, tmp_path):
        rerun = tmp_path / "rerun"
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(pipeline["config"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--out-dir",
                    str(rerun),
                    "--seed",
                    "13",
                    "--threads",
                    "1",
                ]
            )
            == 0
        )
        for name in ("checkpoint.json", "history.csv"):
            assert (rerun / name).read_bytes() == (pipeline["run"] / name).read_bytes()

    def test_multi_seed_layout(self, pipeline, tmp_path):
        out = tmp_path / "multi"
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(pipeline["config"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--out-dir",
                    str(out),
                ]
            )
            == 0
        )
        assert (out / "seed_0" / "checkpoint.json").is_file()
        assert (out / "seed_1" / "checkpoint.json").is_file()
        report = json.loads((out / "report.json").read_text())
        assert {"mse", "pearson_corr", "per_seed", "n"} <= set(report)
        assert len(report["per_seed"]) == 2

    def test_flag_overrides_config(self, pipeline, tmp_path):
        out = tmp_path / "garo"
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(pipeline["config"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--out-dir",
                    str(out),
                    "--seed",
                    "0",
                    "--readout",
                    "garo",
                ]
            )
            == 0
        )
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["model"]["readout"] == "garo"


class TestEvaluate:
    def test_report_schema(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert (
            main(
                [
                    "evaluate",
                    "--run-dir",
                    str(pipeline["run"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--split",
                    "test",
                    "--out-dir",
                    str(out),
                ]
            )
            == 0
        )
        report = json.loads((out / "report.json").read_text())
        assert "mse" in report and "pearson_corr" in report
        assert report["n"] == len(report["predictions"])

    def test_emit_attention(self, pipeline, tmp_path):
        out = tmp_path / "eval_attn"
        assert (
            main(
                [
                    "evaluate",
                    "--run-dir",
                    str(pipeline["run"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--emit-attention",
                    "--out-dir",
                    str(out),
                ]
            )
            == 0
        )
        attention = json.loads((out / "attention.json").read_text())
        first = next(iter(attention.values()))
        assert len(first) == 3  # one attention vector per block
        assert len(first[0]) == 5  # ceil(0.6 * 8) nodes survive block 1


class TestInterpret:
    def test_outputs(self, pipeline, tmp_path):
        out = tmp_path / "interp"
        assert (
            main(
                [
                    "interpret",
                    "--run-dir",
                    str(pipeline["run"]),
                    "--data-dir",
                    str(pipeline["store"]),
                    "--threshold",
                    "0.5",
                    "--out-dir",
                    str(out),
                ]
            )
            == 0
        )
        lines = (out / "roi_freq.csv").read_text().splitlines()
        assert lines[0] == "roi_id,label,freq"
        assert len(lines) == 9
        tops = json.loads((out / "top_rois.json").read_text())
        assert all(t["freq"] >= 0.5 for t in tops)
        selections = json.loads((out / "pool_selections.json").read_text())
        record = next(iter(selections.values()))
        assert len(record) == 3
        assert len(record[0]["kept_indices"]) == 5


class TestGradcheckCommand:
    def test_single_seed_battery_passes(self, capsys):
        assert main(["gradcheck", "--seed", "1", "--n-seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "full_model" in out and "FAIL" not in out


class TestGoldenHelp:
    @pytest.mark.parametrize(
        "command", ["synth", "build-graphs", "train", "evaluate", "interpret", "gradcheck"]
    )
    def test_subcommand_help_matches_golden(self, command):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices[command]
        expected = (GOLDEN / f"help_{command}.txt").read_text()
        assert sub.format_help() == expected

    def test_help_lists_every_flag(self):
        text = (GOLDEN / "help_train.txt").read_text()
        for flag in ("--config", "--data-dir", "--out-dir", "--seed", "--threads",
                     "--readout", "--aggregation", "--edge-keep-pct"):
            assert flag in text
