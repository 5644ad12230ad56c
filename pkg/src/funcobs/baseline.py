"""Two-step comparison pipeline: MOESP subspace identification followed by
model-based observer design, plus the model-based Darouach / Luenberger
designers used standalone as oracles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .numkit import (DEFAULT_POLICY, AssignmentError, RankPolicy,
                     _orth_rowbasis, assign_eigenvalues, pinv, schur_stable,
                     tolerant_rank)
from .obsv import LinearPlant
from .synth import PoleConfig, SynthesisError, as_pole_config, _as_rng
from .trajdata import (DataLengthError, SignalSequence, TrajectoryBundle,
                       hankel_matrix)


@dataclass(frozen=True)
class IdentifiedModel:
    """State-space realization identified from data (joint [y; z] output).

    Only defined up to similarity transform; ``p_split`` records how many
    of the joint output rows are sensor outputs.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    n_assumed: int
    p_split: int

    def as_plant(self) -> LinearPlant:
        return LinearPlant(self.A_hat, self.B_hat,
                           self.C_hat[:self.p_split],
                           self.C_hat[self.p_split:])


@dataclass(frozen=True)
class ModelObserver:
    """Darouach-form observer: state recursion plus static output read-out.

    ``z_hat(t) = output_map @ (state(t) + Dbar @ y(t))`` covers both the
    minimum-order/augmented functional observer (selector read-out) and
    the full-order Luenberger observer (functional matrix read-out).
    """

    Abar: np.ndarray
    Bbar_u: np.ndarray
    Bbar_y: np.ndarray
    Dbar: np.ndarray
    order: int
    output_map: np.ndarray
    kind: str = "darouach"

    def __post_init__(self) -> None:
        if not schur_stable(self.Abar, 1.0):
            raise ValueError("model observer recursion must be Schur stable")


def moesp_identify(
    bundle: TrajectoryBundle,
    s: Optional[int] = None,
    n_assumed: int = 0,
    policy: RankPolicy = DEFAULT_POLICY,
) -> IdentifiedModel:
    """MOESP identification treating [y; z] as the joint output.

    RQ-factorizes the stacked input/output Hankel matrices, reads the
    extended observability column space off the SVD of R22, solves the
    shift equation for A, and recovers B and the initial state by linear
    regression over the full input-output relation (no feedthrough).
    """
    if n_assumed < 1:
        raise ValueError("n_assumed is required (no automatic order selection)")
    yj = np.vstack([bundle.y.data, bundle.z.data])
    pj = yj.shape[0]
    m = bundle.u.dim
    T = bundle.horizon
    if s is None:
        from .synth import estimate_observability_index
        s = max(int(np.ceil(n_assumed / pj)) + 1,
                estimate_observability_index(bundle, policy,
                                             k_max=n_assumed) + 1)
    if (s - 1) * pj < n_assumed:
        raise ValueError(f"s={s} too small: need (s-1)*(p+r) >= {n_assumed}")
    N = T - s + 1
    if N < s * (m + pj):
        raise DataLengthError(
            f"horizon {T} too short for MOESP with s={s}")
    H = np.vstack([hankel_matrix(bundle.u.data, 0, s, N),
                   hankel_matrix(yj, 0, s, N)])
    # RQ factorization via QR of the transpose
    Q, Rt = np.linalg.qr(H.T)
    L = Rt.T
    R22 = L[s * m:, s * m:]
    U, sv, _ = np.linalg.svd(R22)
    if n_assumed < len(sv) and sv[n_assumed - 1] < 10 * sv[n_assumed]:
        warnings.warn(
            f"order ambiguous: singular-value gap at n={n_assumed} below 10x",
            RuntimeWarning, stacklevel=2)
    Un = U[:, :n_assumed]
    C_hat = Un[:pj, :]
    A_hat, *_ = np.linalg.lstsq(Un[:(s - 1) * pj, :], Un[pj:, :], rcond=None)
    B_hat, _ = _estimate_b(A_hat, C_hat, bundle.u.data, yj)
    return IdentifiedModel(A_hat, B_hat, C_hat, n_assumed, bundle.y.dim)


def _estimate_b(A: np.ndarray, C: np.ndarray, U: np.ndarray,
                Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares estimate of (B, x0) from y(t) = C A^t x0 + sum-term."""
    n = A.shape[0]
    pj, T = Y.shape
    m = U.shape[0]
    CA = C.copy()
    S = np.zeros((pj, m, n))
    rows = np.empty((T, pj, n + n * m))
    for t in range(T):
        rows[t, :, :n] = CA
        rows[t, :, n:] = S.reshape(pj, m * n)
        # S(t+1) = S(t) (I_m x A) + u(t)^T x C
        S = np.einsum("pjn,nk->pjk", S, A) + U[:, t][None, :, None] * C[:, None, :]
        CA = CA @ A
    lhs = rows.reshape(T * pj, n + n * m)
    rhs = Y.T.reshape(T * pj)
    theta, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    x0 = theta[:n]
    B = theta[n:].reshape(m, n).T  # column-major vec(B) layout
    return B, x0


def markov_parameters(A, B, C, count: int) -> np.ndarray:
    """Stacked [CB, CAB, ..., CA^(count-1)B]; similarity invariant."""
    blocks = []
    M = np.asarray(C, float)
    for _ in range(count):
        blocks.append(M @ B)
        M = M @ A
    return np.hstack(blocks)


def _closure_rows(plant: LinearPlant, policy: RankPolicy,
                  max_rows: int) -> np.ndarray:
    """Grow F with components of F A^j outside span([F; C; CA]) until the
    Darouach representability condition closes."""
    F = plant.F.copy()
    A, C = plant.A, plant.C
    scale = np.linalg.norm(plant.F @ A, 2) or 1.0
    # closure tolerance sits well below the constraint-residual gate so
    # the solved observer meets its postcondition
    tol = min(policy.svd_null_threshold, 1e-8)
    for _ in range(plant.n + 1):
        S = np.vstack([F, C, C @ A])
        FA = F @ A
        basis = _orth_rowbasis(S)
        res = FA - (FA @ basis.T) @ basis
        _, sv, Vt = np.linalg.svd(res, full_matrices=False)
        new = Vt[sv > tol * scale]
        if new.shape[0] == 0:
            return F
        if F.shape[0] + new.shape[0] > max_rows:
            raise SynthesisError(
                f"augmentation infeasible below order {max_rows}")
        F = np.vstack([F, new])
    raise SynthesisError("functional closure did not terminate")


def _solve_darouach_constraints(plant: LinearPlant, Faug: np.ndarray,
                                poles: PoleConfig, policy: RankPolicy, rng):
    """Gain blocks for the constraint set F A = Abar F + E C + Dbar C A."""
    d = Faug.shape[0]
    A, B, C = plant.A, plant.B, plant.C
    p = plant.p
    S = np.vstack([Faug, C, C @ A])
    FA = Faug @ A
    Sp = pinv(S)
    if np.linalg.norm(FA - (FA @ Sp) @ S) > 1e-8 * max(np.linalg.norm(FA), 1.0):
        raise SynthesisError("functional dynamics not representable at this order")
    particular = FA @ Sp
    free = np.eye(S.shape[0]) - S @ Sp
    A1 = particular[:, :d]
    N1 = free[:, :d]  # channel j of the free term acts on Abar through row j
    try:
        K, _ = assign_eigenvalues(A1, N1, poles.resolve(d), rng, policy)
    except AssignmentError as exc:
        raise SynthesisError(f"model-based design unstabilizable: {exc}") from exc
    sol = particular + K @ free
    Abar = sol[:, :d]
    E = sol[:, d:d + p]
    Dbar = sol[:, d + p:]
    resid = np.linalg.norm(FA - (Abar @ Faug + E @ C + Dbar @ (C @ A)))
    if resid > 1e-6 * max(np.linalg.norm(FA), 1.0):
        raise SynthesisError(f"constraint residual {resid:.2e} too large")
    if not schur_stable(Abar, 1.0):
        raise SynthesisError("stabilization failed")
    Bbar_u = Faug @ B - Dbar @ (C @ B)
    Bbar_y = E + Abar @ Dbar
    return Abar, Bbar_u, Bbar_y, Dbar


def _observable_complement(plant: LinearPlant, policy: RankPolicy) -> np.ndarray:
    """Rows completing [C; F] to a basis of the observable row space."""
    from .obsv import observability_matrix

    O = observability_matrix(plant.A, plant.C)
    Ob = _orth_rowbasis(O)
    CF = np.vstack([plant.C, plant.F])
    resid = Ob - (Ob @ pinv(CF)) @ CF
    _, sv, Vt = np.linalg.svd(resid, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.zeros((0, plant.n))
    return Vt[sv > policy.svd_null_threshold * sv[0]]


def model_darouach(
    plant: LinearPlant,
    poles: Union[PoleConfig, Sequence[complex], float] = PoleConfig(),
    policy: RankPolicy = DEFAULT_POLICY,
    rng=None,
) -> ModelObserver:
    """Model-based functional observer, minimum order when feasible.

    Solves the constraint set ``F A = Abar F + E C + Dbar C A`` in the
    unknown blocks, with the remaining freedom used for pole assignment
    of Abar.  When the minimum order is infeasible the functional matrix
    is augmented: first with the residual closure of its own dynamics,
    then (worst case) with rows completing [C; F] inside the observable
    row space, which always admits a stable design for functionally
    observable systems.  The read-out extracts the original functional
    rows.
    """
    poles = as_pole_config(poles)
    rng = _as_rng(rng)
    r = plant.r
    max_rows = max(plant.n - plant.p, r)
    attempts = []
    try:
        attempts.append((plant, _closure_rows(plant, policy, max_rows)))
    except SynthesisError:
        pass
    comp = _observable_complement(plant, policy)
    attempts.append((plant, np.vstack([plant.F, comp])))
    # identified models can carry spurious unobservable (possibly
    # unstable) modes; restricting to the observable subspace keeps the
    # functional read-out intact and makes the design well posed
    restricted = _observable_restriction(plant, policy)
    if restricted is not None:
        comp_r = _observable_complement(restricted, policy)
        attempts.append((restricted, np.vstack([restricted.F, comp_r])))
    last: Exception = SynthesisError("no augmentation candidates")
    for model, Faug in attempts:
        d = Faug.shape[0]
        try:
            Abar, Bbar_u, Bbar_y, Dbar = _solve_darouach_constraints(
                model, Faug, poles, policy, rng)
        except SynthesisError as exc:
            last = exc
            continue
        selector = np.hstack([np.eye(r), np.zeros((r, d - r))])
        return ModelObserver(Abar, Bbar_u, Bbar_y, Dbar, d, selector,
                             "darouach")
    raise SynthesisError(f"model-based design failed: {last}")


def _observable_restriction(plant: LinearPlant,
                            policy: RankPolicy) -> Optional[LinearPlant]:
    """Plant restricted to the row space of its observability matrix.

    Returns None when already observable or when the functional matrix
    leaves the observable subspace (no valid restriction exists).
    """
    from .obsv import observability_matrix

    O = observability_matrix(plant.A, plant.C)
    V = _orth_rowbasis(O)
    q = V.shape[0]
    if q == plant.n or q == 0:
        return None
    resid = plant.F - (plant.F @ V.T) @ V
    if np.linalg.norm(resid) > 1e-6 * max(np.linalg.norm(plant.F), 1.0):
        return None
    try:
        return LinearPlant(V @ plant.A @ V.T, V @ plant.B,
                           plant.C @ V.T, plant.F @ V.T)
    except ValueError:
        return None


def model_luenberger(
    plant: LinearPlant,
    poles: Union[PoleConfig, Sequence[complex], float] = PoleConfig(),
    policy: RankPolicy = DEFAULT_POLICY,
    rng=None,
) -> ModelObserver:
    """Full-order Luenberger observer with the functional read-out F."""
    from .obsv import observability_matrix

    poles = as_pole_config(poles)
    rng = _as_rng(rng)
    n = plant.n
    if tolerant_rank(observability_matrix(plant.A, plant.C), policy) < n:
        raise SynthesisError("(A, C) is not observable")
    try:
        K, _ = assign_eigenvalues(plant.A, plant.C, poles.resolve(n), rng,
                                  policy)
    except AssignmentError as exc:
        raise SynthesisError(f"luenberger gain failed: {exc}") from exc
    L = -K
    return ModelObserver(plant.A - L @ plant.C, plant.B, L,
                         np.zeros((n, plant.p)), n, plant.F, "luenberger")


def run_model_observer(mobs: ModelObserver, bundle: TrajectoryBundle,
                       init: Optional[np.ndarray] = None) -> SignalSequence:
    """Iterate a model observer over recorded inputs/outputs.

    Returns the functional estimate for times 0..T-1.
    """
    T = bundle.horizon
    state = np.zeros(mobs.order) if init is None else np.asarray(init, float)
    U, Y = bundle.u.data, bundle.y.data
    out = np.empty((mobs.output_map.shape[0], T))
    for t in range(T):
        out[:, t] = mobs.output_map @ (state + mobs.Dbar @ Y[:, t])
        state = mobs.Abar @ state + mobs.Bbar_u @ U[:, t] + mobs.Bbar_y @ Y[:, t]
    return SignalSequence("z", out)
