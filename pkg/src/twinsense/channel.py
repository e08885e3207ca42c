"""Geometric channel assembly and labeled dataset generation.

Channels are sums of rank-one terms over traced propagation paths, with
half-wavelength ULA array responses on both ends. Datasets pair each grid
user's channel with its exhaustive-search optimal beam index and persist
as JSON lines (meta header + one sample per line).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .precoding import Codebook, label_beam
from .raytrace import PathTracer, PropagationPath, RayConfig
from .scene import Scene, generate_user_grid, require_valid, scene_hash


@dataclass
class ChannelSample:
    h: np.ndarray  # (N_r, N_t) complex
    label_tx: int
    label_rx: int = 0
    user_pos: tuple = (0.0, 0.0, 0.0)
    scene_name: str = ""


@dataclass
class Dataset:
    samples: list[ChannelSample] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def channel_vectors(self) -> np.ndarray:
        """Column-major vectorized channels stacked as rows, (n, N_r*N_t)."""
        return np.array([s.h.flatten(order="F") for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label_tx for s in self.samples], dtype=int)


def array_response(angle_rad: float, n_antennas: int) -> np.ndarray:
    """Unit-norm half-wavelength ULA response a(theta)."""
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    n = np.arange(n_antennas)
    return np.exp(1j * np.pi * n * np.cos(angle_rad)) / math.sqrt(n_antennas)


def assemble_channel(paths: list[PropagationPath], N_t: int, N_r: int,
                     bs_boresight_rad: float = 0.0) -> np.ndarray:
    """Sum of rank-one path terms: H = sum_l alpha_l a_r(theta_l) a_t(phi_l)^H.

    Transmit angles are taken relative to the BS boresight; the receiver
    boresight is fixed at 0. An empty path list yields the zero matrix.
    """
    if N_t < 1 or N_r < 1:
        raise ValueError("antenna counts must be >= 1")
    H = np.zeros((N_r, N_t), dtype=complex)
    for p in paths:
        a_t = array_response(p.aod_rad - bs_boresight_rad, N_t)
        a_r = array_response(p.aoa_rad, N_r)
        H += p.gain * np.outer(a_r, a_t.conj())
    return H


def assemble_channel_factored(paths: list[PropagationPath], N_t: int, N_r: int,
                              bs_boresight_rad: float = 0.0):
    """Factored form (A_r, A_t, alpha) with A_r diag(alpha) A_t^H == H."""
    if N_t < 1 or N_r < 1:
        raise ValueError("antenna counts must be >= 1")
    L = len(paths)
    A_r = np.zeros((N_r, L), dtype=complex)
    A_t = np.zeros((N_t, L), dtype=complex)
    alpha = np.zeros(L, dtype=complex)
    for l, p in enumerate(paths):
        A_t[:, l] = array_response(p.aod_rad - bs_boresight_rad, N_t)
        A_r[:, l] = array_response(p.aoa_rad, N_r)
        alpha[l] = p.gain
    return A_r, A_t, alpha


def generate_dataset(scene: Scene, cfg: RayConfig, codebook: Codebook,
                     seed: int = 0, subsample: float = 1.0,
                     N_t: int | None = None, N_r: int = 1) -> Dataset:
    """Trace every grid user, assemble its channel, and label the best beam.

    ``subsample`` keeps a deterministic seeded fraction of the grid. Users
    with zero propagation paths are excluded and counted in the metadata.
    """
    require_valid(scene)
    if N_t is None:
        N_t = codebook.vectors.shape[0]
    positions = generate_user_grid(scene)
    if subsample < 1.0:
        rng = np.random.default_rng((seed, 0xC0FFEE))
        keep = rng.random(len(positions)) < subsample
        positions = positions[keep]
    tracer = PathTracer(scene, cfg)
    samples: list[ChannelSample] = []
    excluded = 0
    for pos in positions:
        paths = tracer.trace(pos)
        if not paths:
            excluded += 1
            continue
        H = assemble_channel(paths, N_t, N_r, scene.bs.boresight_rad)
        if N_r != 1:
            raise NotImplementedError("dataset labeling is single-antenna-receiver only")
        label = label_beam(H[0], codebook)
        samples.append(ChannelSample(h=H, label_tx=label, label_rx=0,
                                     user_pos=tuple(pos),
                                     scene_name=scene.name))
    meta = {
        "N_t": N_t,
        "N_r": N_r,
        "carrier_hz": cfg.carrier_hz,
        "codebook_size": codebook.size,
        "scene_hash": scene_hash(scene),
        "scene_name": scene.name,
        "seed": seed,
        "split": "full",
        "excluded_zero_path": excluded,
    }
    return Dataset(samples=samples, meta=meta)


def split_dataset(ds: Dataset, train_frac: float, seed: int = 0):
    """Deterministic shuffled split into (train, test)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng((seed, 0x5B117))
    perm = rng.permutation(n)
    n_train = int(math.floor(n * train_frac))
    mk = lambda idx, tag: Dataset(
        samples=[ds.samples[i] for i in idx],
        meta={**ds.meta, "split": tag},
    )
    return mk(perm[:n_train], "train"), mk(perm[n_train:], "test")


# ---------------------------------------------------------------------------
# JSONL persistence: line 1 is the meta header, then one sample per line.
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(ds.meta, sort_keys=True) + "\n")
        for s in ds.samples:
            vec = s.h.flatten(order="F")
            fh.write(json.dumps({
                "pos": list(s.user_pos),
                "h": [[float(c.real), float(c.imag)] for c in vec],
                "label": int(s.label_tx),
            }) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        meta = json.loads(fh.readline())
        samples = []
        shape = (meta["N_r"], meta["N_t"])
        for line in fh:
            d = json.loads(line)
            vec = np.array([complex(re, im) for re, im in d["h"]])
            samples.append(ChannelSample(
                h=vec.reshape(shape, order="F"),
                label_tx=int(d["label"]),
                user_pos=tuple(d["pos"]),
                scene_name=meta.get("scene_name", ""),
            ))
    return Dataset(samples=samples, meta=meta)
