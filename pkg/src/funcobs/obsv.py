"""Functional-observability decision procedures.

``data_criterion`` decides functional observability of the generating
system purely from recorded trajectories via the Hankel rank condition;
``model_criterion`` is the classical matrix-rank test on a known plant
and serves as the ground-truth oracle in tests and benchmarks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numkit import (DEFAULT_POLICY, RankPolicy, check_matrix,
                     containment_residual, tolerant_rank)
from .trajdata import DataLengthError, TrajectoryBundle, hankel, pe_check


@dataclass(frozen=True)
class LinearPlant:
    """Ground-truth (A, B, C, F) quadruple for generators and oracles."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        A = check_matrix(self.A, "A")
        B = check_matrix(self.B, "B")
        C = check_matrix(self.C, "C")
        F = check_matrix(self.F, "F")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("A must be square")
        if B.shape[0] != n or C.shape[1] != n or F.shape[1] != n:
            raise ValueError("B, C, F dimensions inconsistent with A")
        for name, M in (("C", C), ("F", F)):
            if M.shape[0] and tolerant_rank(M) < M.shape[0]:
                raise ValueError(f"{name} must have full row rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "F", F)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True)
class ObservabilityVerdict:
    functionally_observable: bool
    k_used: int
    rank_lhs: int
    rank_rhs: int
    pe_reliable: bool = True

    def __post_init__(self) -> None:
        if self.rank_lhs < self.rank_rhs:
            raise ValueError("rank_lhs must be >= rank_rhs")


def observability_matrix(A: np.ndarray, C: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Stacked [C; CA; ...; CA^(k-1)]; k defaults to the state dimension."""
    n = A.shape[0]
    k = n if k is None else k
    blocks = []
    M = np.asarray(C, dtype=float)
    for _ in range(k):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def model_criterion(plant: LinearPlant, policy: RankPolicy = DEFAULT_POLICY) -> ObservabilityVerdict:
    """Rank test rank([O(A,C); F]) == rank(O(A,C)) on the known plant."""
    if plant.r == 0:
        return ObservabilityVerdict(True, plant.n, 0, 0)
    O = observability_matrix(plant.A, plant.C)
    rhs = tolerant_rank(O, policy)
    lhs = tolerant_rank(np.vstack([O, plant.F]), policy)
    return ObservabilityVerdict(lhs == rhs, plant.n, lhs, rhs)


def observability_index(plant: LinearPlant, policy: RankPolicy = DEFAULT_POLICY) -> int:
    """Smallest k at which rank(O_k) reaches rank(O_n)."""
    full = tolerant_rank(observability_matrix(plant.A, plant.C), policy)
    for k in range(1, plant.n + 1):
        if tolerant_rank(observability_matrix(plant.A, plant.C, k), policy) == full:
            return k
    return plant.n


def data_criterion(
    bundle: TrajectoryBundle,
    k: Optional[int] = None,
    policy: RankPolicy = DEFAULT_POLICY,
) -> ObservabilityVerdict:
    """Hankel-rank functional-observability criterion on recorded data.

    Stacks the depth-k input and output Hankel matrices and asks whether
    the flat functional-state block adds rank; the decision itself is
    taken with the Frobenius containment rule while both ranks are
    reported for diagnostics.  ``k`` defaults to ``n_hint`` (the upper
    bound on the observability index).  A failed or uncertifiable PE
    check downgrades the verdict to unreliable instead of rejecting.
    """
    k = bundle.n_hint if k is None else k
    if k < 1:
        raise ValueError("criterion depth k must be at least 1, "
                         "set n_hint or pass k explicitly")
    T = bundle.horizon
    if T < k + 1:
        raise DataLengthError(f"horizon {T} too short for depth k={k}")
    if bundle.z.dim == 0:
        return ObservabilityVerdict(True, k, 0, 0)
    try:
        reliable = pe_check(bundle.u, k, bundle.n_hint, policy,
                            x_oracle=bundle.x_oracle)
    except DataLengthError:
        reliable = False
    N = T - k + 1
    base = np.vstack([hankel(bundle.u, 0, k, N).matrix,
                      hankel(bundle.y, 0, k, N).matrix])
    zflat = bundle.z.data[:, :N]
    contained = containment_residual(base, zflat) < policy.frobenius_ratio_eps ** 2
    rank_rhs = tolerant_rank(base, policy)
    rank_lhs = rank_rhs if contained else tolerant_rank(
        np.vstack([base, zflat]), policy)
    if rank_lhs < rank_rhs:  # tolerant ranks can disagree with the residual rule
        rank_lhs = rank_rhs
    return ObservabilityVerdict(contained, k, rank_lhs, rank_rhs, reliable)
