"""Pilot generation and synthesis of the uplink pilot-phase observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import LargeScale


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex normal samples with unit variance."""
    z = rng.standard_normal((*np.atleast_1d(shape), 2))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


@dataclass
class ReceivedFrames:
    """Per-AP received pilot blocks ``y[m]`` of shape (tau, N)."""

    y: np.ndarray  # (M, tau, N) complex

    @property
    def aggregate(self) -> np.ndarray:
        """CPU view: the AP blocks stacked vertically, shape (tau*M, N)."""
        m, tau, n = self.y.shape
        return self.y.reshape(m * tau, n)


def gen_pilots(tau: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random non-orthogonal pilots, one CN(0, I) column per user."""
    if tau < 1 or k < 1:
        raise ValueError("pilot length and user count must be >= 1")
    return crandn(rng, (tau, k))


def sample_channels(ls: LargeScale, num_antennas: int, rng: np.random.Generator) -> np.ndarray:
    """Rayleigh channels ``g[m, k, n] = sqrt(beta[m, k]) h[m, k, n]``."""
    beta = np.asarray(ls.beta if isinstance(ls, LargeScale) else ls)
    if np.any(beta <= 0) or not np.all(np.isfinite(beta)):
        raise ValueError("large-scale coefficients must be positive and finite")
    h = crandn(rng, (*beta.shape, num_antennas))
    return np.sqrt(beta)[..., None] * h


def synthesize_frame(
    phi: np.ndarray,
    activity: np.ndarray,
    channels: np.ndarray,
    rho: float,
    rng: np.random.Generator | None,
) -> ReceivedFrames:
    """Received block ``Y_m = sqrt(rho) Phi A G_m + W_m`` for every AP.

    ``rng=None`` suppresses the noise term; tests use it to check the
    signal path exactly.
    """
    tau, k = phi.shape
    activity = np.asarray(activity)
    if activity.shape != (k,) or channels.ndim != 3 or channels.shape[1] != k:
        raise ValueError(
            f"dimension mismatch: pilots {phi.shape}, activity {activity.shape}, "
            f"channels {channels.shape}"
        )
    m, _, n = channels.shape
    active = np.flatnonzero(activity)
    y = np.sqrt(rho) * (phi[:, active] @ channels[:, active, :])
    if rng is not None:
        y = y + crandn(rng, (m, tau, n))
    return ReceivedFrames(np.ascontiguousarray(y))


def aggregate_covariance(phi: np.ndarray, activity, beta: np.ndarray, rho: float,
                         noise_var: float = 1.0) -> np.ndarray:
    """Block-diagonal covariance of one aggregate column, shape (tau*M, tau*M)."""
    tau = phi.shape[0]
    m = beta.shape[0]
    q = np.zeros((tau * m, tau * m), dtype=complex)
    weights = rho * np.asarray(activity)[None, :] * beta
    for i in range(m):
        q[i * tau:(i + 1) * tau, i * tau:(i + 1) * tau] = (phi * weights[i]) @ phi.conj().T
    return q + noise_var * np.eye(tau * m)
