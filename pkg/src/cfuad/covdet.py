"""Covariance-based activity detection per AP, fused across APs by union.

Each AP estimates the composite received powers ``gamma_k = rho a_k beta_mk``
by coordinate descent on its Gaussian negative log-likelihood. Because the
large-scale gain is absorbed in ``gamma``, no fading knowledge is needed.
All routines accept arbitrary leading batch dimensions on the frames.
"""

from __future__ import annotations

import numpy as np


def sample_covariance(frames) -> np.ndarray:
    """``Y Y^H / N`` for frames of shape (..., tau, N)."""
    y = np.asarray(frames)
    return y @ np.swapaxes(y.conj(), -1, -2) / y.shape[-1]


def model_covariance(gamma, phi, sigma2: float = 1.0) -> np.ndarray:
    """``Phi diag(gamma) Phi^H + sigma2 I`` with gamma of shape (..., K)."""
    gamma = np.asarray(gamma, dtype=float)
    tau = phi.shape[0]
    q = (phi * gamma[..., None, :]) @ phi.conj().T
    return q + sigma2 * np.eye(tau)


def per_ap_nll(gamma, phi, frame, sigma2: float = 1.0):
    """``N log|Q| + Tr(Q^-1 Y Y^H)`` for one AP (or a batch of them)."""
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("powers must be non-negative")
    y = np.asarray(frame)
    n = y.shape[-1]
    q = model_covariance(gamma, phi, sigma2)
    _, logdet = np.linalg.slogdet(q)
    x = np.linalg.solve(q, y)
    trace = np.real(np.sum(y.conj() * x, axis=(-2, -1)))
    out = n * logdet + trace
    return out if np.ndim(out) else float(out)


def coordinate_descent(phi, frames, sigma2: float = 1.0, sweeps: int = 15,
                       tol: float = 1e-8, order: str = "round-robin",
                       rng: np.random.Generator | None = None,
                       trace: bool = False, check_inverse: bool = False):
    """Estimate per-user powers by cyclic exact coordinate minimization.

    Each coordinate step adds ``d`` to ``gamma_k``; the optimal step is
    ``(b - a) / a**2`` with ``a = phi_k^H Q^-1 phi_k`` and
    ``b = phi_k^H Q^-1 S Q^-1 phi_k``, clipped so ``gamma_k`` stays >= 0.
    ``Q^-1`` follows each step through a Sherman-Morrison update and is
    recomputed from scratch after every sweep.

    Returns ``gamma`` (..., K); with ``trace=True`` also the list of NLL
    values after every coordinate update (first entry: the starting
    point), and with ``check_inverse=True`` the worst relative Frobenius
    error of the maintained inverse seen at sweep ends.
    """
    if sweeps < 1:
        raise ValueError("need at least one sweep")
    frames = np.asarray(frames)
    tau, k = phi.shape
    lead = frames.shape[:-2]
    sig = sample_covariance(frames)
    gamma = np.zeros((*lead, k))
    eye = np.eye(tau)
    qinv = np.broadcast_to(eye / sigma2, (*lead, tau, tau)).astype(complex)
    nll_trace = [per_ap_nll(gamma, phi, frames, sigma2)] if trace else None
    worst_inverse_err = 0.0
    for _ in range(sweeps):
        if order == "random":
            coords = (rng or np.random.default_rng()).permutation(k)
        else:
            coords = range(k)
        biggest = np.zeros(lead)
        for j in coords:
            f = phi[:, j]
            q = qinv @ f
            a = np.real(q @ f.conj())
            b = np.real(np.sum(q.conj() * (sig @ q[..., None])[..., 0], axis=-1))
            step = np.maximum((b - a) / (a * a), -gamma[..., j])
            gamma[..., j] += step
            qinv = qinv - (step / (1.0 + step * a))[..., None, None] * (
                q[..., :, None] * q.conj()[..., None, :])
            biggest = np.maximum(biggest, np.abs(step))
            if trace:
                nll_trace.append(per_ap_nll(gamma, phi, frames, sigma2))
        exact = np.linalg.inv(model_covariance(gamma, phi, sigma2))
        if check_inverse:
            err = np.linalg.norm(qinv - exact, axis=(-2, -1)) / np.linalg.norm(exact, axis=(-2, -1))
            worst_inverse_err = max(worst_inverse_err, float(np.max(err)))
        qinv = exact
        scale = np.maximum(1.0, gamma.max(axis=-1))
        if np.all(biggest <= tol * scale):
            break
    out = [gamma]
    if trace:
        out.append(nll_trace)
    if check_inverse:
        out.append(worst_inverse_err)
    return out[0] if len(out) == 1 else tuple(out)


def fuse_union(per_ap_gammas, threshold: float) -> np.ndarray:
    """User active iff any AP's estimate exceeds ``threshold``; input (..., M, K)."""
    g = np.asarray(per_ap_gammas)
    return (g > threshold).any(axis=-2).astype(np.int8)


def union_scores(per_ap_gammas) -> np.ndarray:
    """Max over APs; thresholding it is equivalent to union fusion."""
    return np.asarray(per_ap_gammas).max(axis=-2)


def baseline_scores(phi, frames, sigma2: float = 1.0, sweeps: int = 15,
                    chunk: int = 2048) -> np.ndarray:
    """Max-over-AP power estimates for frames of shape (S, M, tau, N) -> (S, K)."""
    frames = np.asarray(frames)
    s, m = frames.shape[:2]
    flat = frames.reshape(s * m, *frames.shape[2:])
    gammas = np.concatenate([coordinate_descent(phi, flat[i:i + chunk], sigma2, sweeps)
                             for i in range(0, len(flat), chunk)])
    return union_scores(gammas.reshape(s, m, -1))
