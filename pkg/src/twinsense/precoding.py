"""Codebooks, spectral efficiency, SVD baseband design, exhaustive RF search.

This is both the labeling oracle for dataset generation (optimal beam index
per channel) and the evaluation metric layer (achievable rate of a hybrid
precoder/combiner pair).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Codebook:
    vectors: np.ndarray  # (N, K) complex, columns are candidate RF vectors
    kind: str = "dft"

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


class RankDeficientError(ValueError):
    pass


def dft_codebook(N: int) -> Codebook:
    """Constant-modulus DFT beams; orthonormal columns when K = N."""
    if N < 1:
        raise ValueError("codebook size must be >= 1")
    n = np.arange(N)
    vectors = np.exp(-2j * np.pi * np.outer(n, n) / N) / math.sqrt(N)
    return Codebook(vectors=vectors, kind="dft")


def identity_combiner() -> Codebook:
    """Trivial single-antenna receive codebook."""
    return Codebook(vectors=np.ones((1, 1), dtype=complex), kind="dft")


def spectral_efficiency(H, F, W, snr: float) -> float:
    """Achievable rate in bits/s/Hz of effective precoder F and combiner W.

    Computes log2|I + Qn^{-1} W^H H F F^H H^H W| with the combined-noise
    covariance Qn = (1/snr) W^H W.
    """
    H = np.asarray(H, dtype=complex)
    F = np.asarray(F, dtype=complex)
    W = np.asarray(W, dtype=complex)
    Qn = (W.conj().T @ W) / snr
    if np.linalg.matrix_rank(Qn) < Qn.shape[0]:
        raise ValueError("combiner is rank deficient (singular W^H W)")
    G = W.conj().T @ H @ F
    M = np.linalg.solve(Qn, G @ G.conj().T)
    sign, logdet = np.linalg.slogdet(np.eye(M.shape[0]) + M)
    val = float(np.real(logdet)) / math.log(2.0)
    return max(val, 0.0) if val > -1e-9 else val


def _inv_sqrt_hermitian(A: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(A)
    if np.min(vals) <= 0:
        raise RankDeficientError("F_RF^H F_RF is not positive definite")
    return (vecs * (vals ** -0.5)) @ vecs.conj().T

def optimal_baseband(H_eff, F_RF, N_S: int):
    """SVD baseband design for a fixed RF precoder/combiner choice.

    Returns (F_BB, W_BB) with F_BB built from the top right singular
    vectors of the effective channel (whitened by F_RF^H F_RF and rescaled
    so that ||F_RF F_BB||_F^2 = N_S) and W_BB from the top left singular
    vectors.
    """
    H_eff = np.asarray(H_eff, dtype=complex)
    F_RF = np.asarray(F_RF, dtype=complex)
    U, s, Vh = np.linalg.svd(H_eff)
    achievable = int(np.sum(s > max(H_eff.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    if achievable < N_S:
        raise RankDeficientError(
            f"effective channel supports only {achievable} streams, need {N_S}")
    F_BB = _inv_sqrt_hermitian(F_RF.conj().T @ F_RF) @ Vh.conj().T[:, :N_S]
    scale = math.sqrt(N_S) / np.linalg.norm(F_RF @ F_BB, "fro")
    F_BB = F_BB * scale
    W_BB = U[:, :N_S]
    return F_BB, W_BB


def exhaustive_search(H, F_cb: Codebook, W_cb: Codebook, snr: float,
                      N_S: int = 1, N_tRF: int = 1, N_rRF: int = 1):
    """Best RF column subsets by brute force over both codebooks.

    Evaluates the rate achieved with the SVD-optimal baseband for every
    combination of N_tRF distinct transmit columns and N_rRF distinct
    receive columns; ties resolve to the smallest lexicographic index
    tuple. Returns (tx_indices, rx_indices, best_rate).
    """
    H = np.asarray(H, dtype=complex)
    if not np.any(H):
        raise ValueError("all-zero channel")
    if F_cb.size < N_tRF or W_cb.size < N_rRF:
        raise ValueError("codebook smaller than the number of RF chains")
    best = None
    for rx in itertools.combinations(range(W_cb.size), N_rRF):
        W_RF = W_cb.vectors[:, list(rx)]
        for tx in itertools.combinations(range(F_cb.size), N_tRF):
            F_RF = F_cb.vectors[:, list(tx)]
            H_eff = W_RF.conj().T @ H @ F_RF
            try:
                F_BB, W_BB = optimal_baseband(H_eff, F_RF, N_S)
            except RankDeficientError:
                continue
            rate = spectral_efficiency(H, F_RF @ F_BB, W_RF @ W_BB, snr)
            if best is None or rate > best[2] + 1e-12:
                best = (tx, rx, rate)
    if best is None:
        raise RankDeficientError("no codebook combination supports the stream count")
    return best


def label_beam(h, cb: Codebook) -> int:
    """Optimal single-stream transmit beam index: argmax_k |h^T f_k|.

    Single-antenna-receiver specialization of the exhaustive search;
    smallest index wins on ties.
    """
    h = np.asarray(h, dtype=complex).reshape(-1)
    if not np.any(h):
        raise ValueError("zero channel vector")
    corr = np.abs(h @ cb.vectors)
    return int(np.argmax(corr))
