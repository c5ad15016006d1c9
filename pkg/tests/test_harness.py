import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal
from PIL import Image
from typer.testing import CliRunner

from src.data_io.datasets import Dataset
from src.data_io.idx_loader import save_idx
from src.data_io.usps_loader import save_usps
from src.drcn_engine.checkpoint import load_checkpoint
from src.drcn_engine.trainer import evaluate
from src.harness import experiment
from src.harness.cli import EXIT_CONFIG, EXIT_DIVERGED, app
from src.harness.config import parse_config, write_config_snapshot
from src.harness.diagnostics import (
    BLOCK_GAP,
    FLAT_TILE_VALUE,
    compose_grid,
    dump_reconstruction_grid,
    reconstruction_shift_distances,
)
from src.harness.experiment import resolve_datasets, run_experiment, run_repeats, run_sweep, verify_run_dir
from src.tensor_core.errors import ConfigError, ManifestError, TrainingError

TINY = {
    "source": "synthetic",
    "target": "synthetic-invert",
    "synthetic_size": 12,
    "synthetic_count": 40,
    "synthetic_test": 20,
    "conv_channels": "2,3,4",
    "kernel_sizes": "5,3,1",
    "batch_source": 16,
    "batch_target": 16,
    "max_epochs": 2,
    "grid_images": 4,
}


def tiny(tmp_path, name="run", **extra):
    return parse_config(overrides={**TINY, "out": tmp_path / name, **extra})


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.env"
        path.write_text("")
        cfg = parse_config(path)
        assert cfg.baseline == "drcn"
        assert cfg.train.lam == 0.5
        assert cfg.train.noise.zero_mask_fraction == 0.25

    def test_lambda_out_of_range(self):
        with pytest.raises(ConfigError, match="lambda"):
            parse_config(overrides={"lambda": 1.5})

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("# tuned\nlambda=0.4\nseed=7\n")
        cfg = parse_config(path, {"lambda": 0.6})
        assert cfg.train.lam == 0.6
        assert cfg.train.seed == 7

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("learning_rate=0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config(path)

    def test_type_mismatch_names_key_and_type(self):
        with pytest.raises(ConfigError, match="seed.*integer"):
            parse_config(overrides={"seed": "abc"})

    def test_fc_width_must_be_on_grid(self):
        assert parse_config(overrides={"fc_width": 650}).train.fc_width == 650
        with pytest.raises(ConfigError, match="fc_width"):
            parse_config(overrides={"fc_width": 310})

    def test_same_domain_only_for_target_baseline(self):
        with pytest.raises(ConfigError):
            parse_config(overrides={"source": "usps", "target": "usps"})
        assert parse_config(overrides={"source": "usps", "target": "usps", "flavor": "convnet_tgt"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.env")

    def test_snapshot_parses_back_to_same_config(self, tmp_path):
        cfg = parse_config(overrides={"lambda": 0.7, "zero_mask": "false", "source_size": 500, "shift": "rotate"})
        write_config_snapshot(cfg, tmp_path / "config.env")
        again = parse_config(tmp_path / "config.env")
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()

    def test_hash_ignores_output_directory(self):
        assert parse_config(overrides={"out": "a"}).config_hash() == parse_config(overrides={"out": "b"}).config_hash()
        assert parse_config(overrides={"seed": 1}).config_hash() != parse_config(overrides={"seed": 2}).config_hash()


class TestGrid:
    def test_layout_of_single_image(self, toy_model, tmp_path):
        model = toy_model()
        path = dump_reconstruction_grid(model, np.random.default_rng(0).random((1, 1, 12, 12)), tmp_path / "g.pgm")
        assert path.read_bytes().startswith(b"P5")
        with Image.open(path) as image:
            assert image.size == (12, 2 * 12 + BLOCK_GAP)

    def test_digit_sized_layout(self):
        canvas = compose_grid(np.zeros((1, 1, 28, 28)), np.zeros((1, 1, 28, 28)))
        assert canvas.shape == (2 * 28 + BLOCK_GAP, 28)

    def test_constant_tiles_are_mid_gray(self):
        canvas = compose_grid(np.full((1, 1, 4, 4), 0.3), np.full((1, 1, 4, 4), 0.3))
        assert_array_equal(canvas[:4], np.full((4, 4), FLAT_TILE_VALUE))
        assert_array_equal(canvas[4 + BLOCK_GAP:], np.full((4, 4), FLAT_TILE_VALUE))

    def test_multi_column_layout(self):
        canvas = compose_grid(np.random.default_rng(1).random((5, 1, 3, 3)), np.zeros((5, 1, 3, 3)), columns=3)
        assert canvas.shape == (2 * 2 * 3 + BLOCK_GAP, 9)

    def test_shift_distances(self, toy_model):
        images = np.random.default_rng(2).random((3, 1, 12, 12))
        to_source, to_shifted = reconstruction_shift_distances(toy_model(), images, 1.0 - images)
        assert to_source >= 0 and to_shifted >= 0


class TestExperiment:
    def test_synthetic_datasets(self, tmp_path):
        data = resolve_datasets(tiny(tmp_path))
        assert len(data.source_train) + len(data.source_val) == 40
        assert len(data.target_train) == 40 and len(data.target_test) == 20
        assert data.shift.kind == "invert"

    def test_digit_domains_share_the_model_input_size(self, tmp_path):
        rng = np.random.default_rng(0)
        usps_dir, mnist_dir = tmp_path / "usps", tmp_path / "mnist"
        usps_dir.mkdir()
        mnist_dir.mkdir()
        labels = np.arange(30, dtype=np.int64) % 3
        save_usps(Dataset(images=rng.random((30, 1, 8, 8)), labels=labels), usps_dir / "usps_train.bin")
        for images_file, labels_file in experiment.MNIST_FILES.values():
            save_idx(
                Dataset(images=rng.random((30, 1, 14, 14)), labels=labels),
                mnist_dir / images_file, mnist_dir / labels_file,
            )
        cfg = parse_config(overrides={
            **TINY, "source": usps_dir, "target": mnist_dir, "input_size": 12, "max_epochs": 1, "out": tmp_path / "run",
        })
        data = resolve_datasets(cfg)
        assert data.source_train.image_shape == data.target_train.image_shape == (1, 12, 12)
        assert data.target_test.image_shape == (1, 12, 12)
        assert any("rescale" in step for step in data.source_train.provenance)
        assert run_experiment(cfg).stop_reason in ("max_epochs", "converged")

    @pytest.mark.parametrize("flavor", ["convae", "convae_convnet_src"])
    def test_autoencoder_baselines_learn_the_target(self, tmp_path, monkeypatch, flavor):
        pools = []
        real_train = experiment.train

        def recording_train(model, source, target, *args, **kwargs):
            if target is not None:
                pools.append(target.images)
            return real_train(model, source, target, *args, **kwargs)

        monkeypatch.setattr(experiment, "train", recording_train)
        cfg = tiny(tmp_path, flavor=flavor)
        run_experiment(cfg)
        assert len(pools) == 1
        assert_array_equal(pools[0], resolve_datasets(cfg).target_train.images)

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ConfigError):
            resolve_datasets(parse_config(overrides={"source": "svhn", "target": "mnist"}))
        with pytest.raises(ConfigError, match="shift"):
            resolve_datasets(tiny(tmp_path, target="synthetic-blur"))

    def test_run_directory(self, tmp_path):
        report = run_experiment(tiny(tmp_path))
        out = tmp_path / "run"
        assert sorted(p.name for p in out.iterdir()) == [
            "config.env", "model.ckpt", "reconstruction.pgm", "report.json", "train_log.csv",
        ]
        assert report.stop_reason == "max_epochs" and report.epochs_run == 2
        assert 0.0 <= report.target_accuracy <= 1.0
        assert report.recon_distance_source is not None
        saved = json.loads((out / "report.json").read_text())
        assert saved["config_hash"] == report.config_hash
        assert {t["operation"] for t in saved["timings"]} >= {"train_epoch", "evaluate"}
        assert len(pd.read_csv(out / "train_log.csv")) == 2
        restored = load_checkpoint(out / "model.ckpt")
        assert restored.has_decoder
        data = resolve_datasets(tiny(tmp_path))
        assert evaluate(restored, data.target_test) == report.target_accuracy
        assert evaluate(restored, data.source_val) == report.source_val_accuracy

    def test_reconstruction_dumps_on_cadence(self, tmp_path):
        run_experiment(tiny(tmp_path, dump_every=1))
        grids = sorted(p.name for p in (tmp_path / "run").glob("reconstruction*.pgm"))
        assert grids == ["reconstruction.pgm", "reconstruction_epoch001.pgm", "reconstruction_epoch002.pgm"]

    def test_runs_are_deterministic(self, tmp_path):
        first = run_experiment(tiny(tmp_path, "a"))
        second = run_experiment(tiny(tmp_path, "b"))
        assert first.config_hash == second.config_hash
        assert first.target_accuracy == second.target_accuracy
        assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()

    def test_lambda_one_matches_convnet_src(self, tmp_path):
        drcn = run_experiment(tiny(tmp_path, "drcn", **{"lambda": 1.0}))
        convnet = run_experiment(tiny(tmp_path, "convnet", flavor="convnet_src"))
        assert drcn.target_accuracy == convnet.target_accuracy
        assert drcn.source_val_accuracy == convnet.source_val_accuracy

    def test_convnet_tgt_builds_no_decoder(self, tmp_path):
        cfg = tiny(tmp_path, source="synthetic-invert", flavor="convnet_tgt")
        report = run_experiment(cfg)
        assert not load_checkpoint(tmp_path / "run" / "model.ckpt").has_decoder
        assert not list((tmp_path / "run").glob("*.pgm"))
        assert report.recon_distance_source is None

    @pytest.mark.parametrize("flavor", ["drcn_s", "drcn_st", "convae", "convae_convnet_src"])
    def test_other_baselines_run(self, tmp_path, flavor):
        report = run_experiment(tiny(tmp_path, flavor=flavor))
        assert report.stop_reason in ("max_epochs", "converged")
        if flavor == "convae":
            assert report.target_accuracy is None
        else:
            assert report.target_accuracy is not None

    def test_two_phase_log_is_renumbered(self, tmp_path):
        run_experiment(tiny(tmp_path, flavor="convae_convnet_src"))
        log = pd.read_csv(tmp_path / "run" / "train_log.csv")
        assert list(log["epoch"]) == list(range(1, len(log) + 1))
        assert log["loss_c"].notna().any() and log["loss_r"].notna().any()

    def test_divergence_is_reported(self, tmp_path, monkeypatch):
        def diverge(*args, **kwargs):
            raise TrainingError("epoch 1, reconstruction pipeline: loss is nan")

        monkeypatch.setattr(experiment, "train", diverge)
        report = run_experiment(tiny(tmp_path))
        assert report.stop_reason == "diverged"
        assert "reconstruction pipeline" in report.message
        assert json.loads((tmp_path / "run" / "report.json").read_text())["stop_reason"] == "diverged"

    def test_repeats_summary(self, tmp_path):
        reports, frame = run_repeats(tiny(tmp_path, repeat=2, seed=3))
        assert [r.seed for r in reports] == [3, 4]
        assert (tmp_path / "run" / "seed_3" / "report.json").is_file()
        assert len(pd.read_csv(tmp_path / "run" / "repeats.csv")) == 2

    def test_sweep_picks_best_source_validation(self, tmp_path):
        best, frame = run_sweep(tiny(tmp_path, max_epochs=1), lambdas=(0.4, 0.6))
        assert len(frame) == 2
        top = frame.loc[frame["source_val_accuracy"].idxmax()]
        assert best.train.lam == top["lam"]
        assert (tmp_path / "run" / "sweep.csv").is_file()

    def test_manifest_check(self, tmp_path):
        run_experiment(tiny(tmp_path))
        out = tmp_path / "run"
        (out / "stray.txt").write_text("x")
        with pytest.raises(ManifestError, match="stray.txt"):
            verify_run_dir(out, has_decoder=True)
        (out / "stray.txt").unlink()
        (out / "model.ckpt").unlink()
        with pytest.raises(ManifestError, match="model.ckpt"):
            verify_run_dir(out, has_decoder=True)


class TestCli:
    def test_train_and_eval(self, tmp_path):
        runner = CliRunner()
        config = tmp_path / "tiny.env"
        config.write_text("".join(f"{key}={value}\n" for key, value in TINY.items()))
        result = runner.invoke(app, ["train", "--config", str(config), "--out", str(tmp_path / "run")])
        assert result.exit_code == 0, result.output
        ckpt = tmp_path / "run" / "model.ckpt"
        assert ckpt.is_file()

        grid = tmp_path / "grid.pgm"
        images = tmp_path / "images.bin"
        save_usps(resolve_datasets(tiny(tmp_path)).target_test, images)
        result = runner.invoke(
            app, ["reconstruct", "--checkpoint", str(ckpt), "--images", str(images), "--out", str(grid)]
        )
        assert result.exit_code == 0, result.output
        assert grid.read_bytes().startswith(b"P5")

        result = runner.invoke(app, ["eval", "--checkpoint", str(ckpt), "--data", str(images)])
        assert result.exit_code == 0, result.output
        assert 0.0 <= float(result.stdout.strip().splitlines()[-1]) <= 1.0

    def test_config_error_exit_code(self):
        result = CliRunner().invoke(app, ["train", "--lambda", "1.5"])
        assert result.exit_code == EXIT_CONFIG

    def test_divergence_exit_code(self, tmp_path, monkeypatch):
        def diverge(*args, **kwargs):
            raise TrainingError("epoch 1, classification pipeline: loss is nan")

        monkeypatch.setattr(experiment, "train", diverge)
        config = tmp_path / "tiny.env"
        config.write_text("".join(f"{key}={value}\n" for key, value in TINY.items()))
        result = CliRunner().invoke(app, ["train", "--config", str(config), "--out", str(tmp_path / "run")])
        assert result.exit_code == EXIT_DIVERGED

    @pytest.mark.parametrize("args", [
        ["train", "--lambda", "abc"],
        ["train", "--seed", "x1"],
        ["train", "--repeat", "two"],
        ["sweep", "--lambda", "abc"],
        ["sweep", "--fc-width", "310"],
    ])
    def test_malformed_flags_are_config_errors(self, args):
        result = CliRunner().invoke(app, args)
        assert result.exit_code == EXIT_CONFIG, result.output

    def test_malformed_count_is_a_config_error(self, tmp_path):
        runner = CliRunner()
        config = tmp_path / "tiny.env"
        config.write_text("".join(f"{key}={value}\n" for key, value in TINY.items()))
        runner.invoke(app, ["train", "--config", str(config), "--out", str(tmp_path / "run")])
        images = tmp_path / "images.bin"
        save_usps(resolve_datasets(tiny(tmp_path)).target_test, images)
        result = runner.invoke(app, [
            "reconstruct", "--checkpoint", str(tmp_path / "run" / "model.ckpt"),
            "--images", str(images), "--out", str(tmp_path / "g.pgm"), "--count", "many",
        ])
        assert result.exit_code == EXIT_CONFIG
