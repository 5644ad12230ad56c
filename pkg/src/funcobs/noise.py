"""Noise-robust estimation: bias-compensated pseudoinverse with known
variances, noise-aware rank/null-space estimation, and truncated-SVD
subspace denoising for the unknown-variance case."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .numkit import DEFAULT_POLICY, RankPolicy, left_null_basis, pinv, tolerant_rank
from .trajdata import PastFutureSplit


@dataclass(frozen=True)
class NoiseModel:
    """Known i.i.d. output / functional-state noise variances.

    ``eta`` separates signal singular values from noise-induced ones in
    the rank estimate; near one for large SNR.
    """

    sigma2_y: float = 0.0
    sigma2_z: float = 0.0
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma2_y < 0 or self.sigma2_z < 0:
            raise ValueError("variances must be nonnegative")
        if not np.isfinite(self.sigma2_y) or not np.isfinite(self.sigma2_z):
            raise ValueError("variances must be finite")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def omega_matrix(m: int, p: int, r: int, model: NoiseModel) -> np.ndarray:
    """Block-diagonal noise covariance of the stacked data rows."""
    diag = np.concatenate([
        np.zeros(m),
        np.full(p, model.sigma2_y),
        np.full(p, model.sigma2_y),
        np.full(r, model.sigma2_z),
    ])
    return np.diag(diag)


def _compensated_gram(split: PastFutureSplit, model: NoiseModel):
    D = split.data_matrix()
    T1 = D.shape[1]
    gram = (D @ D.T) / T1
    gram = 0.5 * (gram + gram.T)
    comp = gram - omega_matrix(split.m, split.p, split.r, model)
    comp = 0.5 * (comp + comp.T)
    return D, T1, comp


def compensated_particular(split: PastFutureSplit, model: NoiseModel) -> np.ndarray:
    """Asymptotically unbiased estimate of Z_f D^+ from noisy data.

    Computes ``(1/(T-1)) Zbar_f Dbar^T ((1/(T-1)) Dbar Dbar^T - Omega)^+``.
    Finite samples can push the compensated Gram matrix slightly
    indefinite; negative eigenvalues are clamped to zero (with a warning)
    before pseudoinversion.
    """
    D, T1, comp = _compensated_gram(split, model)
    eigvals, eigvecs = np.linalg.eigh(comp)
    if eigvals[0] < -1e-10 * max(abs(eigvals[-1]), 1.0):
        warnings.warn(
            "compensated Gram matrix indefinite; clamping negative eigenvalues",
            RuntimeWarning, stacklevel=2)
    clamped = np.clip(eigvals, 0.0, None)
    comp_psd = (eigvecs * clamped) @ eigvecs.T
    return (split.Zf @ D.T / T1) @ pinv(comp_psd)


def estimate_rank_and_nullspace(
    split: PastFutureSplit,
    model: NoiseModel,
    policy: RankPolicy = DEFAULT_POLICY,
) -> tuple[int, np.ndarray]:
    """Noise-aware rank of D and an estimate of its left null space.

    The rank counts eigenvalues of the raw scaled Gram matrix at or
    above ``eta * max(sigma2_y, sigma2_z)``; the null estimate is the
    trailing left-singular block of the compensated Gram matrix.
    """
    if model.sigma2_y == 0 and model.sigma2_z == 0:
        D = split.data_matrix()
        return tolerant_rank(D, policy), left_null_basis(D, policy)
    D, T1, comp = _compensated_gram(split, model)
    raw = (D @ D.T) / T1
    lam = np.linalg.svd(0.5 * (raw + raw.T), compute_uv=False)
    floor = model.eta * max(model.sigma2_y, model.sigma2_z)
    k_est = int(np.sum(lam >= floor))
    dim = D.shape[0]
    if k_est >= dim:
        warnings.warn("estimated rank is full; no stable-observer freedom",
                      RuntimeWarning, stacklevel=2)
        return k_est, np.zeros((0, dim))
    U, _, _ = np.linalg.svd(comp)
    return k_est, U[:, k_est:].T.copy()


def truncated_svd_denoise(M: np.ndarray, keep: Union[int, str] = "auto") -> np.ndarray:
    """Best rank-``keep`` Frobenius approximation of M.

    ``keep="auto"`` picks the index of the largest relative gap
    ``s_i / s_{i+1}`` in the singular spectrum.
    """
    A = np.asarray(M, dtype=float)
    if A.size == 0:
        raise ValueError("empty matrix")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if keep == "auto":
        nz = int(np.sum(s > 0))
        if nz == 0:
            warnings.warn("zero matrix; keep resolves to 0",
                          RuntimeWarning, stacklevel=2)
            return np.zeros_like(A)
        if nz == len(s):
            ratios = s[:-1] / s[1:]
            keep = int(np.argmax(ratios)) + 1 if len(ratios) else 1
        else:
            keep = nz
    keep = int(keep)
    if keep > min(A.shape):
        raise ValueError(f"keep={keep} exceeds min dimension {min(A.shape)}")
    if keep == 0:
        return np.zeros_like(A)
    return (U[:, :keep] * s[:keep]) @ Vt[:keep]


def denoise_split(split: PastFutureSplit, keep: Union[int, str] = "auto") -> PastFutureSplit:
    """Joint truncated-SVD denoising of the stacked data blocks.

    The past/future blocks and the functional-state future are denoised
    together so the one-step shift structure stays consistent; W rows,
    when present, join the stack.
    """
    blocks = [split.Up, split.Yp, split.Yf, split.Zp, split.Zf]
    sizes = [b.shape[0] for b in blocks]
    if split.has_w:
        blocks += [split.Wp, split.Wf]
        sizes += [split.Wp.shape[0], split.Wf.shape[0]]
    stacked = truncated_svd_denoise(np.vstack(blocks), keep)
    out = []
    at = 0
    for sz in sizes:
        out.append(stacked[at:at + sz])
        at += sz
    if split.has_w:
        return PastFutureSplit(*out[:5], Wp=out[5], Wf=out[6])
    return PastFutureSplit(*out[:5])
