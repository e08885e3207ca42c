"""Experiment orchestration: dataset generation for target/twin scenes,
measurement-count sweeps, rehearsal-refinement curves, beam-pattern export,
and the classical OMP baseline. All outputs are frozen-schema CSV/JSON so
runs are reproducible and externally plottable.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import Dataset, generate_dataset, load_dataset, save_dataset, split_dataset
from .csense import (grid_dictionary, omp, random_measurement_matrix,
                     received_measurements, reconstruct_channel, sensing_operator)
from .learn import (TrainConfig, beam_pattern, evaluate_accuracy,
                    fine_tune_rehearsal, init_model, load_checkpoint,
                    save_checkpoint, steer_init_encoder, train)
from .precoding import dft_codebook, label_beam
from .raytrace import RayConfig
from .scene import PerturbationSpec, load_scene, perturb_scene

RESULT_HEADER = ["experiment", "scene", "error_m", "m_t", "n_real",
                 "accuracy", "final_loss", "wall_s", "seed"]
PATTERN_HEADER = ["angle_deg", "vector_idx", "gain_db"]


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class PerturbationLabel:
    label: str
    building_error_m: float = 0.0
    drop_foliage: bool = False


@dataclass
class ExperimentConfig:
    scene_path: str
    output_dir: str = "runs"
    seed: int = 0
    n_t: int = 32
    codebook_size: int = 32
    h1: int = 256
    h2: int = 256
    m_t_default: int = 8
    sweep: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    refine_fractions: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    refine_source: str | None = None  # perturbation label to pretrain on
    # rehearsal fine-tuning interleaves two domains and converges more
    # slowly than single-domain training; its arms get this multiple of
    # the full-data step budget
    refine_steps_factor: float = 3.0
    subsample: float = 1.0
    train_frac: float = 0.8
    baseline_sigma: float = 0.0
    baseline_sparsity: int = 8
    perturbations: list[PerturbationLabel] = field(default_factory=list)
    ray: RayConfig = field(default_factory=RayConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if any(m > self.n_t or m < 1 for m in self.sweep):
            raise ConfigError("sweep values must lie in [1, n_t]")
        if any(not 0.0 <= f <= 1.0 for f in self.refine_fractions):
            raise ConfigError("refine fractions must lie in [0, 1]")
        if self.refine_steps_factor <= 0:
            raise ConfigError("refine_steps_factor must be positive")


def load_config(path, seed_override: int | None = None,
                out_override: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        cfg = ExperimentConfig(
            scene_path=raw["scene_path"],
            output_dir=raw.get("output_dir", "runs"),
            seed=int(raw.get("seed", 0)),
            n_t=int(raw.get("n_t", 32)),
            codebook_size=int(raw.get("codebook_size", 32)),
            h1=int(raw.get("h1", 256)),
            h2=int(raw.get("h2", 256)),
            m_t_default=int(raw.get("m_t_default", 8)),
            sweep=list(raw.get("sweep", [1, 2, 4, 8, 16, 32])),
            refine_fractions=list(raw.get("refine_fractions", [0.0, 0.25, 0.5, 1.0])),
            refine_source=raw.get("refine_source"),
            refine_steps_factor=float(raw.get("refine_steps_factor", 3.0)),
            subsample=float(raw.get("subsample", 1.0)),
            train_frac=float(raw.get("train_frac", 0.8)),
            baseline_sigma=float(raw.get("baseline_sigma", 0.0)),
            baseline_sparsity=int(raw.get("baseline_sparsity", 8)),
            perturbations=[PerturbationLabel(**p) for p in raw.get("perturbations", [])],
            ray=RayConfig(**raw.get("ray", {})),
            train=TrainConfig(**raw.get("train", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    if seed_override is not None:
        cfg.seed = seed_override
    if out_override is not None:
        cfg.output_dir = out_override
    cfg.validate()
    return cfg


def derive_seed(seed: int, tag: str) -> int:
    """Stable (seed, purpose-tag) -> subseed derivation."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_manifest(cfg: ExperimentConfig, command: str, wall_s: float) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "seed": cfg.seed,
        "wall_time_s": wall_s,
        "noiseless_eval": cfg.train.noise_snr is None,
    }
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / "datasets"


def _sources(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    return [("target", 0.0)] + [(p.label, p.building_error_m)
                                for p in cfg.perturbations]


def _load_split(cfg: ExperimentConfig, label: str, split: str) -> Dataset:
    path = _dataset_dir(cfg) / f"{label}_{split}.jsonl"
    if not path.exists():
        raise DataError(f"missing dataset {path}; run `twinsense generate` first")
    return load_dataset(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig) -> dict:
    """Ray-trace and label the target scene and every twin variant."""
    t0 = time.time()
    try:
        scene = load_scene(cfg.scene_path)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"cannot read scene {cfg.scene_path}: {e}") from e
    cb = dft_codebook(cfg.codebook_size)
    ddir = _dataset_dir(cfg)
    ddir.mkdir(parents=True, exist_ok=True)
    stats = {}
    variants = [("target", scene)]
    for p in cfg.perturbations:
        spec = PerturbationSpec(building_error_m=p.building_error_m,
                                drop_foliage=p.drop_foliage,
                                seed=derive_seed(cfg.seed, f"perturb:{p.label}"))
        variants.append((p.label, perturb_scene(scene, spec)))
    for label, sc in variants:
        ds = generate_dataset(sc, cfg.ray, cb,
                              seed=derive_seed(cfg.seed, f"data:{label}"),
                              subsample=cfg.subsample, N_t=cfg.n_t)
        # one shared split seed: variants with identical sample sets get
        # identical splits, so no variant trains on the target test users
        tr, te = split_dataset(ds, cfg.train_frac,
                               seed=derive_seed(cfg.seed, "split"))
        save_dataset(tr, ddir / f"{label}_train.jsonl")
        save_dataset(te, ddir / f"{label}_test.jsonl")
        stats[label] = {"train": len(tr), "test": len(te),
                        "excluded_zero_path": ds.meta["excluded_zero_path"]}
        print(f"{label}: {len(tr)} train / {len(te)} test "
              f"({ds.meta['excluded_zero_path']} zero-path users excluded)")
    _write_manifest(cfg, "generate", time.time() - t0)
    return stats


def _train_one(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
               m_t: int, seed_tag: str, epochs: int | None = None):
    seed = derive_seed(cfg.seed, seed_tag)
    model = init_model(cfg.n_t, m_t, cfg.h1, cfg.h2, cfg.codebook_size, seed=seed)
    steer_init_encoder(model, train_ds)
    tcfg = dc_replace(cfg.train, seed=seed,
                      epochs=cfg.train.epochs if epochs is None else epochs)
    model, history = train(model, train_ds, val_ds, tcfg)
    return model, history, seed


def _equalized_epochs(cfg: ExperimentConfig, full_n: int, run_steps_per_epoch: int) -> int:
    """Epoch count giving a run the same total optimizer steps as a run over
    the full training set; keeps small-fraction arms fairly budgeted."""
    full_steps = cfg.train.epochs * math.ceil(full_n / cfg.train.batch_size)
    return max(1, round(full_steps / max(run_steps_per_epoch, 1)))


def cmd_sweep(cfg: ExperimentConfig) -> Path:
    """Accuracy vs measurement count, per training source, on target test."""
    t0 = time.time()
    target_test = _load_split(cfg, "target", "test")
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    rows = []
    for label, err in _sources(cfg):
        train_ds = _load_split(cfg, label, "train")
        for m_t in cfg.sweep:
            tstart = time.time()
            model, history, seed = _train_one(cfg, train_ds, target_test,
                                              m_t, f"sweep:{label}:{m_t}")
            acc = evaluate_accuracy(model, target_test)
            save_checkpoint(model, out / "checkpoints" / f"{label}_m{m_t}.json",
                            cfg.train)
            rows.append(["sweep", label, err, m_t, len(train_ds),
                         f"{acc:.6f}", f"{history.epochs[-1].train_loss:.6f}",
                         f"{time.time() - tstart:.2f}", seed])
    rows.sort(key=lambda r: (r[1], r[3]))
    path = out / "sweep.csv"
    _write_rows(path, RESULT_HEADER, rows)
    _write_manifest(cfg, "sweep", time.time() - t0)
    return path


def cmd_refine(cfg: ExperimentConfig) -> Path:
    """Rehearsal fine-tuning curve vs amount of target training data."""
    t0 = time.time()
    if cfg.refine_source is None:
        if not cfg.perturbations:
            raise ConfigError("refine needs a perturbation to pretrain on")
        source = cfg.perturbations[-1].label
    else:
        source = cfg.refine_source
    err = next((p.building_error_m for p in cfg.perturbations if p.label == source), 0.0)
    twin_train = _load_split(cfg, source, "train")
    target_train = _load_split(cfg, "target", "train")
    target_test = _load_split(cfg, "target", "test")
    m_t = cfg.m_t_default

    pretrained, _, pre_seed = _train_one(cfg, twin_train, target_test, m_t,
                                         f"refine:pretrain:{source}")
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_checkpoint(pretrained, out / "checkpoints" / f"refine_pretrained_{source}.json",
                    cfg.train)

    order = np.random.default_rng(
        (derive_seed(cfg.seed, "refine:subset"), 0)).permutation(len(target_train))
    rows = []
    for frac in cfg.refine_fractions:
        n = int(round(frac * len(target_train)))
        tstart = time.time()
        if n == 0:
            acc = evaluate_accuracy(pretrained, target_test)
            rows.append(["refine", source, err, m_t, 0, f"{acc:.6f}", "",
                         f"{time.time() - tstart:.2f}", pre_seed])
            continue
        subset = Dataset(samples=[target_train.samples[i] for i in order[:n]],
                         meta=dict(target_train.meta))
        seed = derive_seed(cfg.seed, f"refine:{frac}")
        bs = cfg.train.batch_size
        n_real_per = bs - min(int(round(bs * cfg.train.rehearsal_mix)), bs - 1)
        ft_epochs = max(1, round(cfg.refine_steps_factor
                                 * _equalized_epochs(cfg, len(target_train),
                                                     math.ceil(n / n_real_per))))
        tcfg = dc_replace(cfg.train, seed=seed, epochs=ft_epochs)
        model = copy.deepcopy(pretrained)
        model, history = fine_tune_rehearsal(model, twin_train, subset, tcfg)
        acc = evaluate_accuracy(model, target_test)
        rows.append(["refine", source, err, m_t, n, f"{acc:.6f}",
                     f"{history.epochs[-1].train_loss:.6f}",
                     f"{time.time() - tstart:.2f}", seed])
        # target-only comparator at the same data and step budget
        tstart = time.time()
        base, bhist, bseed = _train_one(
            cfg, subset, target_test, m_t, f"refine:baseline:{frac}",
            epochs=_equalized_epochs(cfg, len(target_train),
                                     math.ceil(n / bs)))
        bacc = evaluate_accuracy(base, target_test)
        rows.append(["refine_baseline", "target", 0.0, m_t, n, f"{bacc:.6f}",
                     f"{bhist.epochs[-1].train_loss:.6f}",
                     f"{time.time() - tstart:.2f}", bseed])
    path = out / "refine.csv"
    _write_rows(path, RESULT_HEADER, rows)
    _write_manifest(cfg, "refine", time.time() - t0)
    return path


def cmd_pattern(checkpoint_path, angles_n: int, out_path) -> Path:
    """Beam-pattern CSV over a uniform [0, 180] degree grid."""
    try:
        model = load_checkpoint(checkpoint_path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise DataError(f"cannot read checkpoint {checkpoint_path}: {e}") from e
    angles_deg = np.linspace(0.0, 180.0, angles_n)
    gains = beam_pattern(model.P_enc, np.deg2rad(angles_deg))
    rows = []
    for i, a in enumerate(angles_deg):
        for m in range(gains.shape[1]):
            rows.append([f"{a:.4f}", m, f"{gains[i, m]:.6f}"])
    _write_rows(out_path, PATTERN_HEADER, rows)
    return Path(out_path)


def cmd_baseline(cfg: ExperimentConfig) -> Path:
    """OMP with random constant-modulus measurements, labeled from the
    reconstructed channel; the classical comparator to the learned encoder."""
    t0 = time.time()
    target_test = _load_split(cfg, "target", "test")
    cb = dft_codebook(cfg.codebook_size)
    gd = grid_dictionary(2 * cfg.n_t, cfg.n_t, 1)
    rows = []
    for m_t in cfg.sweep:
        tstart = time.time()
        seed = derive_seed(cfg.seed, f"baseline:{m_t}")
        mm = random_measurement_matrix(cfg.n_t, m_t, seed=seed)
        Psi = sensing_operator(mm) @ gd.A_D
        hits = 0
        for i, s in enumerate(target_test.samples):
            Y = received_measurements(s.h, mm, sigma=cfg.baseline_sigma,
                                      seed=derive_seed(seed, f"noise:{i}"))
            z = omp(Y.flatten(order="F"), Psi, cfg.baseline_sparsity, 1e-6)
            H_hat = reconstruct_channel(z, gd, cfg.n_t, 1)
            if np.any(H_hat):
                hits += int(label_beam(H_hat[0], cb) == s.label_tx)
        acc = hits / len(target_test)
        rows.append(["baseline", "target", 0.0, m_t, len(target_test),
                     f"{acc:.6f}", "", f"{time.time() - tstart:.2f}", seed])
    path = Path(cfg.output_dir) / "baseline.csv"
    _write_rows(path, RESULT_HEADER, rows)
    _write_manifest(cfg, "baseline", time.time() - t0)
    return path
