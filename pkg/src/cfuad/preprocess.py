"""Pilot-projection channel estimates and the CNN input tensor."""

from __future__ import annotations

import numpy as np

from .airlink import ReceivedFrames


def normalize_pilots(phi: np.ndarray) -> np.ndarray:
    """Divide every pilot column by its squared norm, so ``phi_norm_k^H phi_k = 1``."""
    energy = np.sum(np.abs(phi) ** 2, axis=0)
    if np.any(energy == 0):
        raise ValueError(f"degenerate pilot: zero-norm column(s) {np.flatnonzero(energy == 0)}")
    return phi / energy


def estimate_channels(phi_norm: np.ndarray, frames, rho: float) -> np.ndarray:
    """Per-AP projections ``phi_norm^H Y_m / sqrt(rho)``, shape (M, K, N)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    y = frames.y if isinstance(frames, ReceivedFrames) else np.asarray(frames)
    if y.ndim != 3 or y.shape[1] != phi_norm.shape[0]:
        raise ValueError(f"frame shape {y.shape} does not match pilots {phi_norm.shape}")
    return np.matmul(phi_norm.conj().T, y) / np.sqrt(rho)


def assemble_tensor(est: np.ndarray, mode: str = "magnitude", num_aps: int | None = None) -> np.ndarray:
    """Arrange estimates as an (N, K, depth) real tensor.

    ``magnitude`` gives ``c[n, k, m] = |G_m[k, n]|`` with depth M;
    ``reim-stack`` puts real parts in channels ``0..M-1`` and imaginary
    parts in ``M..2M-1``.
    """
    est = np.asarray(est)
    if est.ndim != 3:
        raise ValueError(f"estimates must have shape (M, K, N), got {est.shape}")
    if num_aps is not None and est.shape[0] != num_aps:
        raise ValueError(f"expected estimates for {num_aps} APs, got {est.shape[0]}")
    per_ap = est.transpose(2, 1, 0)  # (N, K, M)
    if mode == "magnitude":
        return np.abs(per_ap)
    if mode == "reim-stack":
        return np.concatenate([per_ap.real, per_ap.imag], axis=2)
    raise ValueError(f"unknown feature mode {mode!r}")
