"""SVD-backed numerical primitives with explicit tolerances.

All rank-sensitive decisions in this package funnel through the helpers
here so that the two tolerance tiers are applied consistently:

* ``svd_null_threshold`` (relative) decides numerical rank and null-space
  dimensions when extracting bases;
* ``frobenius_ratio_eps`` drives the row-space containment test
  ``||M2 (I - M1^+ M1)||_F / ||M2||_F < eps**2``.

Matrices are plain ``numpy.ndarray``s; ``check_matrix`` enforces the
finite-entries contract at public entry points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class AssignmentError(RuntimeError):
    """Eigenvalue assignment could not be completed for the given pair."""


@dataclass(frozen=True)
class RankPolicy:
    """Tolerances for rank decisions and containment tests.

    ``frobenius_ratio_eps`` enters the containment test squared; the
    default pair matches the numerical rules used throughout the method.
    """

    frobenius_ratio_eps: float = 5e-7
    svd_null_threshold: float = 1e-5

    def __post_init__(self) -> None:
        if not (0 < self.frobenius_ratio_eps < 1):
            raise ValueError("frobenius_ratio_eps must lie in (0, 1)")
        if self.svd_null_threshold <= 0:
            raise ValueError("svd_null_threshold must be positive")


DEFAULT_POLICY = RankPolicy()


def check_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a float 2-D array, rejecting non-finite entries."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if A.size and not np.isfinite(A).all():
        raise ValueError(f"{name} contains non-finite entries")
    return A


def tolerant_rank(M, policy: RankPolicy = DEFAULT_POLICY) -> int:
    """Number of singular values above ``svd_null_threshold * sigma_max``."""
    A = np.asarray(M)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > policy.svd_null_threshold * s[0]))


def pinv(M) -> np.ndarray:
    """Moore-Penrose pseudoinverse (SVD based, default cutoff)."""
    return np.linalg.pinv(np.asarray(M, dtype=float))


def _orth_rowbasis(M: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the row space of M (LAPACK-style cutoff)."""
    if M.size == 0:
        return np.zeros((0, M.shape[1]))
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((0, M.shape[1]))
    cut = max(M.shape) * np.finfo(float).eps * s[0]
    return Vt[: int(np.sum(s > cut))]


def containment_residual(M1, M2) -> float:
    """Relative Frobenius residual of M2 projected off the row space of M1.

    The projector is applied through an orthonormal basis of the row
    space rather than ``pinv(M1) @ M1``; the two agree analytically but
    the basis form loses less precision on ill-conditioned stacks.
    """
    A1 = np.asarray(M1, dtype=float)
    A2 = np.asarray(M2, dtype=float)
    n2 = np.linalg.norm(A2)
    if A2.size == 0 or n2 == 0:
        return 0.0
    if A1.size == 0:
        return 1.0
    V1 = _orth_rowbasis(A1)
    if V1.shape[0] == 0:
        return 1.0
    R = A2 - (A2 @ V1.T) @ V1
    return float(np.linalg.norm(R) / n2)


def rowspace_containment(M1, M2, policy: RankPolicy = DEFAULT_POLICY) -> bool:
    """True iff the row space of M2 lies inside the row space of M1.

    Implements ``||M2 (I - M1^+ M1)||_F / ||M2||_F < eps**2``; a zero M2
    is contained by convention.
    """
    A1 = np.asarray(M1, dtype=float)
    A2 = np.asarray(M2, dtype=float)
    if A1.shape[1] != A2.shape[1]:
        raise ValueError(
            f"column mismatch: {A1.shape[1]} vs {A2.shape[1]}")
    return containment_residual(A1, A2) < policy.frobenius_ratio_eps ** 2


def left_null_basis(M, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Orthonormal rows Q with Q @ M ~ 0.

    Row count is ``rows(M) - tolerant_rank(M)``; for a full-row-rank input
    the basis is empty (0 rows).
    """
    A = np.asarray(M, dtype=float)
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    if A.size == 0 or not np.any(A):
        return np.eye(A.shape[0])
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    r = int(np.sum(s > policy.svd_null_threshold * s[0]))
    return U[:, r:].T.copy()


def rowspace_perp(M, dim: int, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of R(M) in R^dim."""
    A = np.asarray(M, dtype=float)
    if A.shape[0] == 0 or not np.any(A):
        return np.eye(dim)
    if A.shape[1] != dim:
        raise ValueError(f"expected {dim} columns, got {A.shape[1]}")
    return left_null_basis(A.T, policy)


def rowspace_intersection(M1, M2, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Basis rows of the intersection of two row spaces.

    Two-stage SVD construction: decompose the stack [M1; M2], form
    ``G = U12^T U11 S11`` from the blocks of the left factor, and read the
    intersection off the dominant left singular directions of G applied
    to M1.  Row count equals rank(M1) + rank(M2) - rank([M1; M2]) when the
    rank decisions are well separated.
    """
    A1 = np.asarray(M1, dtype=float)
    A2 = np.asarray(M2, dtype=float)
    if A1.shape[1] != A2.shape[1]:
        raise ValueError(
            f"column mismatch: {A1.shape[1]} vs {A2.shape[1]}")
    ncols = A1.shape[1]
    if A1.shape[0] == 0 or A2.shape[0] == 0:
        return np.zeros((0, ncols))
    S = np.vstack([A1, A2])
    if not np.any(S):
        return np.zeros((0, ncols))
    U, s, _ = np.linalg.svd(S, full_matrices=True)
    k = int(np.sum(s > policy.svd_null_threshold * s[0]))
    q1 = A1.shape[0]
    U11 = U[:q1, :k]
    U12 = U[:q1, k:]
    if U12.shape[1] == 0:
        return np.zeros((0, ncols))
    G = U12.T @ U11 @ np.diag(s[:k])
    if G.size == 0 or not np.any(G):
        return np.zeros((0, ncols))
    Ug, sg, _ = np.linalg.svd(G, full_matrices=True)
    kq = int(np.sum(sg > policy.svd_null_threshold * sg[0]))
    if kq == 0:
        return np.zeros((0, ncols))
    return Ug[:, :kq].T @ U12.T @ A1


def schur_stable(M, margin: float = 1.0) -> bool:
    """True iff the spectral radius of M is strictly below ``margin``."""
    A = np.asarray(M, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError("schur_stable expects a square matrix")
    if not (0 < margin <= 1):
        raise ValueError("margin must lie in (0, 1]")
    if A.size == 0:
        return True
    return bool(np.max(np.abs(np.linalg.eigvals(A))) < margin)


def _complex_rank(M: np.ndarray, policy: RankPolicy) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > policy.svd_null_threshold * s[0]))


def detectable(M, N, policy: RankPolicy = DEFAULT_POLICY) -> bool:
    """PBH detectability of the output-injection pair (M, N).

    For every eigenvalue lambda of M with ``|lambda| >= 1`` the stacked
    matrix [lambda I - M; N] must have full column rank.  Complex
    eigenvalues are handled in complex arithmetic, which is equivalent to
    stacking real and imaginary parts.
    """
    A = np.asarray(M, dtype=float)
    B = np.asarray(N, dtype=float)
    r = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("M must be square")
    if B.size and B.shape[1] != r:
        raise ValueError("N must have as many columns as M")
    if r == 0:
        return True
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-12:
            continue
        stack = np.vstack([lam * np.eye(r) - A,
                           B.astype(complex) if B.size else np.zeros((0, r))])
        if _complex_rank(stack, policy) < r:
            return False
    return True


def _spread_conjugate_pairs(targets: Sequence[complex]) -> list[tuple[int, int | None]]:
    """Pair indices of conjugate-closed targets; real entries pair with None."""
    lam = np.array(list(targets), dtype=complex)
    used = np.zeros(len(lam), dtype=bool)
    pairs: list[tuple[int, int | None]] = []
    for i in range(len(lam)):
        if used[i]:
            continue
        used[i] = True
        if abs(lam[i].imag) <= 1e-14:
            pairs.append((i, None))
            continue
        partner = None
        for j in range(i + 1, len(lam)):
            if not used[j] and abs(lam[j] - lam[i].conjugate()) < 1e-12:
                partner = j
                used[j] = True
                break
        if partner is None:
            raise ValueError("complex targets must come in conjugate pairs")
        pairs.append((i, partner))
    return pairs


def assign_eigenvalues(
    M,
    N,
    targets: Sequence[complex],
    rng: np.random.Generator,
    policy: RankPolicy = DEFAULT_POLICY,
    cond_max: float = 1e10,
    attempts: int = 8,
) -> tuple[np.ndarray, bool]:
    """Gain K such that eig(M + K N) matches ``targets``.

    Sylvester-style construction: for each target lambda_i draw an
    injection direction g_i and solve ``(lambda_i I - M^T) x_i = N^T g_i``;
    with X = [x_i] invertible, ``K^T = G X^{-1}`` places the full
    spectrum.  Columns are normalized before inversion and conjugate
    pairs share their injection so K comes out real.  The achieved
    spectrum is verified; on ill conditioning a fresh G is drawn (up to
    ``attempts`` times).

    Falls back to placing only the controllable part when the pair is
    detectable but not observable; the second return value reports
    whether the full assignment succeeded.

    Raises ``AssignmentError`` when no stabilizing gain exists.
    """
    A = check_matrix(M, "M")
    B = check_matrix(N, "N") if np.asarray(N).size else np.zeros((0, A.shape[0]))
    r = A.shape[0]
    q = B.shape[0]
    lam = np.array(list(targets), dtype=complex)
    if len(lam) != r:
        raise ValueError(f"need {r} targets, got {len(lam)}")
    if r == 0:
        return np.zeros((0, q)), True
    # injection channels orthogonal to the target block at machine level
    # provide no usable freedom; treating them as absent avoids gains that
    # formally move eigenvalues while destroying the representation
    effective_q = q
    if q > 0 and np.linalg.svd(B, compute_uv=False)[0] < 1e-9:
        effective_q = 0
    if effective_q == 0:
        if schur_stable(A, 1.0):
            return np.zeros((r, q)), False
        raise AssignmentError("unstable M with no injection freedom")

    eig_m = np.linalg.eigvals(A)
    for i in range(r):
        # Sylvester solvability needs target disjoint from spec(M)
        while np.min(np.abs(eig_m - lam[i])) < 1e-8:
            lam[i] = lam[i] * (1 + 1e-6) if lam[i] != 0 else 1e-6

    pairs = _spread_conjugate_pairs(lam)
    K = _try_full_assignment(A, B, lam, pairs, rng, cond_max, attempts)
    if K is not None:
        return K, True

    K = _partial_assignment(A, B, lam, rng, policy, cond_max, attempts)
    if K is not None:
        return K, False
    raise AssignmentError("pair is not stabilizable to the requested spectrum")


def _try_full_assignment(A, B, lam, pairs, rng, cond_max, attempts):
    r = A.shape[0]
    q = B.shape[0]
    At = A.T
    Bt = B.T
    eye = np.eye(r)
    for _ in range(attempts):
        G = rng.standard_normal((q, r))
        cols = np.zeros((r, r), dtype=complex)
        gcols = np.zeros((q, r))
        ok = True
        for i, j in pairs:
            try:
                x = np.linalg.solve(lam[i] * eye - At, Bt @ G[:, i])
            except np.linalg.LinAlgError:
                ok = False
                break
            nx = np.linalg.norm(x)
            if nx == 0 or not np.isfinite(nx):
                ok = False
                break
            cols[:, i] = x / nx
            gcols[:, i] = G[:, i] / nx
            if j is not None:
                cols[:, j] = np.conj(cols[:, i])
                gcols[:, j] = gcols[:, i]
        if not ok:
            continue
        if np.linalg.cond(cols) > cond_max:
            continue
        try:
            F = np.linalg.solve(cols.T, gcols.T).T
        except np.linalg.LinAlgError:
            continue
        if np.abs(F.imag).max() > 1e-8:
            continue
        K = F.real.T
        got = np.sort_complex(np.linalg.eigvals(A + K @ B))
        if np.abs(got - np.sort_complex(lam)).max() < 1e-6:
            return K
    return None


def _controllable_staircase(At: np.ndarray, Bt: np.ndarray, policy: RankPolicy):
    """Orthogonal T with T^T At T block upper triangular, controllable part first."""
    r = At.shape[0]
    blocks = [Bt]
    P = Bt
    for _ in range(r - 1):
        P = At @ P
        blocks.append(P)
    ctrb = np.hstack(blocks)
    U, s, _ = np.linalg.svd(ctrb, full_matrices=True)
    if s.size == 0 or s[0] == 0:
        nc = 0
    else:
        nc = int(np.sum(s > policy.svd_null_threshold * s[0]))
    return U, nc


def _partial_assignment(A, B, lam, rng, policy, cond_max, attempts):
    """Stabilize via the controllable subspace of the dual pair."""
    At = A.T
    Bt = B.T
    T, nc = _controllable_staircase(At, Bt, policy)
    Auc = T[:, nc:].T @ At @ T[:, nc:]
    if Auc.size and np.max(np.abs(np.linalg.eigvals(Auc))) >= 1.0:
        return None
    if nc == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    Ac = T[:, :nc].T @ At @ T[:, :nc]
    Bc = T[:, :nc].T @ Bt
    # keep a conjugate-closed subset of the requested targets
    sub: list[complex] = []
    for v in sorted(lam, key=lambda z: (abs(z.imag) > 1e-14, abs(z))):
        if len(sub) == nc:
            break
        if abs(v.imag) <= 1e-14:
            sub.append(complex(v.real))
        elif len(sub) + 2 <= nc and not any(abs(s - v) < 1e-12 for s in sub):
            sub.extend([v, v.conjugate()])
    base = max(1e-3, min(abs(v) for v in lam))
    fill = 0
    while len(sub) < nc:
        sub.append(complex(base * (0.35 + 0.5 * fill / max(1, nc))))
        fill += 1
    lam_c = np.array(sub[:nc], dtype=complex)
    for i in range(nc):
        while np.min(np.abs(np.linalg.eigvals(Ac) - lam_c[i])) < 1e-8:
            lam_c[i] = lam_c[i] * (1 + 1e-6) if lam_c[i] != 0 else 1e-6
    pairs = _spread_conjugate_pairs(lam_c)
    Fc = _try_full_assignment(Ac.T, Bc.T, lam_c, pairs, rng, cond_max, attempts)
    if Fc is None:
        return None
    # Fc places Ac + Fc^T-style on the subblock; embed back into full space
    Ffull = np.hstack([Fc.T, np.zeros((Bt.shape[1], At.shape[0] - nc))]) @ T.T
    K = Ffull.T
    if np.max(np.abs(np.linalg.eigvals(A + K @ B))) >= 1.0:
        return None
    return K


def default_targets(order: int, max_modulus: float) -> tuple[float, ...]:
    """Distinct real pole targets spread inside a disc of given radius."""
    if order <= 0:
        return ()
    if not (0 < max_modulus < 1):
        raise ValueError("max_modulus must lie in (0, 1)")
    if order == 1:
        return (0.5 * max_modulus,)
    lo, hi = 0.15 * max_modulus, 0.85 * max_modulus
    return tuple(lo + (hi - lo) * i / (order - 1) for i in range(order))
