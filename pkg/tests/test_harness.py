import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from twinsense.cli import main as cli_main
from twinsense.harness import (ConfigError, DataError, PATTERN_HEADER,
                               RESULT_HEADER, cmd_baseline, cmd_generate,
                               cmd_pattern, cmd_refine, cmd_sweep,
                               config_hash, derive_seed, load_config)
from twinsense.scene import BaseStation, Scene, UserGrid, save_scene


def tiny_scene():
    return Scene(
        name="tiny",
        bs=BaseStation(pos=(6.0, 18.0, 15.0), boresight_rad=-math.pi / 2),
        grid=UserGrid(origin=(0.0, 0.0), width=12.0, height=12.0,
                      spacing=2.0, user_height=2.0),
        buildings=[np.array([[4.0, 4.0], [8.0, 4.0],
                             [8.0, 8.0], [4.0, 8.0]])],
    )


def tiny_config_dict(scene_path, out_dir):
    return {
        "scene_path": str(scene_path),
        "output_dir": str(out_dir),
        "seed": 11,
        "n_t": 8,
        "codebook_size": 8,
        "h1": 16,
        "h2": 16,
        "m_t_default": 4,
        "sweep": [2, 4],
        "refine_fractions": [0.0, 0.5],
        "refine_source": "twin",
        "baseline_sparsity": 4,
        "perturbations": [
            {"label": "twin", "building_error_m": 1.0, "drop_foliage": True},
        ],
        "ray": {"max_order": 1},
        "train": {"epochs": 8, "batch_size": 16, "lr": 0.005},
    }


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness")
    scene_path = root / "scene.json"
    save_scene(tiny_scene(), scene_path)
    cfg_path = root / "config.json"
    out_dir = root / "runs"
    with open(cfg_path, "w") as fh:
        json.dump(tiny_config_dict(scene_path, out_dir), fh)
    return root, cfg_path, out_dir


@pytest.fixture(scope="module")
def generated(workdir):
    root, cfg_path, out_dir = workdir
    cfg = load_config(cfg_path)
    stats = cmd_generate(cfg)
    return cfg, stats


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(5, "a") == derive_seed(5, "a")

    def test_distinct_tags(self):
        assert derive_seed(5, "a") != derive_seed(5, "b")
        assert derive_seed(5, "a") != derive_seed(6, "a")

    def test_range(self):
        for s in range(20):
            assert 0 <= derive_seed(s, "x") < 2 ** 63


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_sweep_exceeds_antennas(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"scene_path": "s.json", "n_t": 8,
                                 "sweep": [4, 16]}))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_overrides(self, workdir):
        _, cfg_path, _ = workdir
        cfg = load_config(cfg_path, seed_override=99, out_override="elsewhere")
        assert cfg.seed == 99 and cfg.output_dir == "elsewhere"

    def test_hash_changes_with_seed(self, workdir):
        _, cfg_path, _ = workdir
        a = load_config(cfg_path)
        b = load_config(cfg_path, seed_override=99)
        assert config_hash(a) == config_hash(load_config(cfg_path))
        assert config_hash(a) != config_hash(b)


class TestGenerate:
    def test_datasets_written(self, generated):
        cfg, stats = generated
        ddir = Path(cfg.output_dir) / "datasets"
        for label in ("target", "twin"):
            assert (ddir / f"{label}_train.jsonl").exists()
            assert (ddir / f"{label}_test.jsonl").exists()
            assert stats[label]["train"] > 0 and stats[label]["test"] > 0

    def test_manifest(self, generated):
        cfg, _ = generated
        with open(Path(cfg.output_dir) / "run_manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["config_hash"] == config_hash(cfg)
        assert manifest["seed"] == cfg.seed


class TestSweep:
    def test_rows_and_rerun_identical(self, generated):
        cfg, _ = generated
        path = cmd_sweep(cfg)
        header, rows = read_csv(path)
        assert header == RESULT_HEADER
        # 2 sources x 2 measurement counts
        assert len(rows) == 4
        for r in rows:
            assert r[0] == "sweep" and r[1] in ("target", "twin")
            assert 0.0 <= float(r[5]) <= 1.0
        first = path.read_bytes()
        # deterministic apart from the wall-clock column
        header2, rows2 = read_csv(cmd_sweep(cfg))
        stripped = [[c for i, c in enumerate(r) if i != 7] for r in rows]
        stripped2 = [[c for i, c in enumerate(r) if i != 7] for r in rows2]
        assert stripped == stripped2

    def test_checkpoints_written(self, generated):
        cfg, _ = generated
        ckpt = Path(cfg.output_dir) / "checkpoints"
        for label in ("target", "twin"):
            for m in (2, 4):
                assert (ckpt / f"{label}_m{m}.json").exists()

    def test_missing_datasets(self, workdir):
        root, cfg_path, _ = workdir
        cfg = load_config(cfg_path, out_override=str(root / "empty"))
        with pytest.raises(DataError):
            cmd_sweep(cfg)


class TestRefine:
    def test_rows(self, generated):
        cfg, _ = generated
        header, rows = read_csv(cmd_refine(cfg))
        assert header == RESULT_HEADER
        kinds = [r[0] for r in rows]
        # fraction 0 -> one pretrained row; fraction 0.5 -> refine + baseline
        assert kinds == ["refine", "refine", "refine_baseline"]
        assert int(rows[0][4]) == 0
        assert int(rows[1][4]) == int(rows[2][4]) > 0
        for r in rows:
            assert 0.0 <= float(r[5]) <= 1.0

    def test_pretrained_checkpoint(self, generated):
        cfg, _ = generated
        assert (Path(cfg.output_dir) / "checkpoints"
                / "refine_pretrained_twin.json").exists()


class TestPattern:
    def test_csv_schema(self, generated, tmp_path):
        cfg, _ = generated
        ckpt = Path(cfg.output_dir) / "checkpoints" / "target_m4.json"
        out = tmp_path / "pattern.csv"
        header, rows = read_csv(cmd_pattern(ckpt, 19, out))
        assert header == PATTERN_HEADER
        assert len(rows) == 19 * 4  # angles x measurement vectors
        assert float(rows[0][0]) == 0.0 and float(rows[-1][0]) == 180.0

    def test_bad_checkpoint(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{}")
        with pytest.raises(DataError):
            cmd_pattern(p, 5, tmp_path / "out.csv")


class TestBaseline:
    def test_rows(self, generated):
        cfg, _ = generated
        header, rows = read_csv(cmd_baseline(cfg))
        assert header == RESULT_HEADER
        assert [int(r[3]) for r in rows] == [2, 4]
        for r in rows:
            assert r[0] == "baseline"
            assert 0.0 <= float(r[5]) <= 1.0


class TestCli:
    def test_config_error_exit_code(self, tmp_path):
        assert cli_main(["sweep", "--config", str(tmp_path / "nope.json")]) == 2

    def test_data_error_exit_code(self, workdir, tmp_path):
        _, cfg_path, _ = workdir
        assert cli_main(["sweep", "--config", str(cfg_path),
                         "--out", str(tmp_path / "void")]) == 3

    def test_pattern_success(self, generated, tmp_path):
        cfg, _ = generated
        ckpt = Path(cfg.output_dir) / "checkpoints" / "target_m2.json"
        out = tmp_path / "p.csv"
        assert cli_main(["pattern", "--checkpoint", str(ckpt),
                         "--angles", "7", "--out", str(out)]) == 0
        assert out.exists()
