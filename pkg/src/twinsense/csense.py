"""Classical compressive channel sensing: measurement model, vectorized
sensing operator, angle-grid dictionary, OMP recovery, reconstruction.

This is the non-learned baseline the trained encoder is compared against,
and the home of the Kronecker identity the encoder emulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import array_response


@dataclass
class MeasurementMatrix:
    P: np.ndarray  # (N_t, M_t) transmit measurements
    Q: np.ndarray  # (N_r, M_r) receive measurements
    power: float = 1.0


@dataclass
class GridDictionary:
    A_D: np.ndarray  # (N_t*N_r, N_grid^2 or N_grid) dictionary
    grid: np.ndarray  # angle grid in radians
    N_t: int
    N_r: int


def random_measurement_matrix(N: int, M: int, seed: int = 0,
                              power: float = 1.0) -> MeasurementMatrix:
    """Random constant-modulus transmit measurements, trivial receive side."""
    rng = np.random.default_rng((seed, 0xFA5E))
    omega = rng.uniform(0.0, 2.0 * np.pi, size=(N, M))
    P = np.exp(1j * omega) / math.sqrt(N)
    return MeasurementMatrix(P=P, Q=np.ones((1, 1), dtype=complex), power=power)


def received_measurements(H, mm: MeasurementMatrix, sigma: float = 0.0,
                          seed: int = 0) -> np.ndarray:
    """Pilot measurements Y = sqrt(power) Q^H H P + Q^H N, seeded noise."""
    H = np.asarray(H, dtype=complex)
    N_r, N_t = H.shape
    if mm.P.shape[0] != N_t or mm.Q.shape[0] != N_r:
        raise ValueError("measurement matrix dimensions do not match H")
    Y = math.sqrt(mm.power) * mm.Q.conj().T @ H @ mm.P
    if sigma > 0:
        rng = np.random.default_rng((seed, 0x0153))
        noise = (rng.standard_normal((N_r, mm.P.shape[1]))
                 + 1j * rng.standard_normal((N_r, mm.P.shape[1]))) * (sigma / math.sqrt(2.0))
        Y = Y + mm.Q.conj().T @ noise
    return Y


def sensing_operator(mm: MeasurementMatrix) -> np.ndarray:
    """sqrt(power) (P^T kron Q^H): maps vec(H) to vec of the noiseless Y."""
    return math.sqrt(mm.power) * np.kron(mm.P.T, mm.Q.conj().T)


def grid_dictionary(N_grid: int, N_t: int, N_r: int = 1) -> GridDictionary:
    """Angle-grid dictionary with columns a_t^*(phi_i) kron a_r(theta_j).

    Columns enumerate the uniform grid {0, 2pi/N, ...} in phi-major,
    theta-minor order; for N_r = 1 this collapses to N_grid conjugated
    transmit responses.
    """
    if N_grid < 1:
        raise ValueError("N_grid must be >= 1")
    angles = 2.0 * np.pi * np.arange(N_grid) / N_grid
    at = np.stack([array_response(a, N_t).conj() for a in angles], axis=1)
    if N_r == 1:
        A_D = at.astype(complex)
    else:
        ar = np.stack([array_response(a, N_r) for a in angles], axis=1)
        cols = [np.kron(at[:, i], ar[:, j])
                for i in range(N_grid) for j in range(N_grid)]
        A_D = np.stack(cols, axis=1)
    return GridDictionary(A_D=A_D, grid=angles, N_t=N_t, N_r=N_r)


def omp(y, Psi, max_sparsity: int, residual_tol: float = 0.0) -> np.ndarray:
    """Orthogonal matching pursuit.

    Greedily selects the column with the largest normalized correlation
    |psi_k^H r| / ||psi_k||, least-squares refits on the support, and stops
    at ``max_sparsity`` atoms or when ||r|| <= residual_tol * ||y||.
    Deterministic: exact correlation ties go to the smallest index.
    """
    y = np.asarray(y, dtype=complex).reshape(-1)
    if y.size == 0:
        raise ValueError("empty measurement vector")
    Psi = np.asarray(Psi, dtype=complex)
    norms = np.linalg.norm(Psi, axis=0)
    if np.any(norms < 1e-15):
        raise ValueError("dictionary contains a zero column")
    z = np.zeros(Psi.shape[1], dtype=complex)
    ynorm = np.linalg.norm(y)
    if ynorm == 0.0:
        return z
    support: list[int] = []
    residual = y.copy()
    for _ in range(max_sparsity):
        if np.linalg.norm(residual) <= residual_tol * ynorm:
            break
        corr = np.abs(Psi.conj().T @ residual) / norms
        corr[support] = -1.0
        k = int(np.argmax(corr))
        support.append(k)
        coef, *_ = np.linalg.lstsq(Psi[:, support], y, rcond=None)
        residual = y - Psi[:, support] @ coef
    if support:
        z[support] = coef
    return z


def reconstruct_channel(z, gd: GridDictionary, N_t: int, N_r: int = 1) -> np.ndarray:
    """Unvectorize A_D z back into an (N_r, N_t) channel estimate."""
    vec = gd.A_D @ np.asarray(z, dtype=complex).reshape(-1)
    return vec.reshape((N_r, N_t), order="F")
