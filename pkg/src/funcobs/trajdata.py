"""Trajectory containers, block-Hankel construction, past/future splits,
persistency-of-excitation checks, and bit-exact CSV round-tripping."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .numkit import DEFAULT_POLICY, RankPolicy, tolerant_rank

SIGNAL_NAMES = ("u", "y", "z", "w", "x")


class DataLengthError(ValueError):
    """Requested window does not fit the recorded horizon."""


@dataclass(frozen=True)
class SignalSequence:
    """A recorded vector signal, stored column-per-time as (dim, T)."""

    name: str
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.name not in SIGNAL_NAMES:
            raise ValueError(f"signal name must be one of {SIGNAL_NAMES}")
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2:
            raise ValueError("signal data must be 2-D (dim, T)")
        if arr.shape[1] < 2:
            raise ValueError("horizon must be at least 2")
        if not np.isfinite(arr).all():
            raise ValueError(f"signal {self.name} contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def horizon(self) -> int:
        return self.data.shape[1]

    def sample(self, t: int) -> np.ndarray:
        return self.data[:, t]


@dataclass(frozen=True)
class TrajectoryBundle:
    """Recorded input/output/functional-state sequences with one horizon.

    ``w`` carries extended functional-state data when available and
    ``x_oracle`` the hidden state (simulation ground truth only, used by
    oracles and the lifting front end, never by the observers themselves).
    """

    u: SignalSequence
    y: SignalSequence
    z: SignalSequence
    w: Optional[SignalSequence] = None
    x_oracle: Optional[SignalSequence] = None
    n_hint: int = 0

    def __post_init__(self) -> None:
        T = self.u.horizon
        for seq in (self.y, self.z, self.w, self.x_oracle):
            if seq is not None and seq.horizon != T:
                raise ValueError(
                    f"signal {seq.name} horizon {seq.horizon} != {T}")
        if self.n_hint <= 0:
            hint = self.x_oracle.dim if self.x_oracle is not None else 0
            object.__setattr__(self, "n_hint", hint)

    @property
    def horizon(self) -> int:
        return self.u.horizon

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.u.dim, self.y.dim, self.z.dim, self.n_hint)

    def with_window(self, start: int, length: int) -> "TrajectoryBundle":
        """Sub-bundle covering times [start, start + length)."""
        if start < 0 or start + length > self.horizon:
            raise DataLengthError("window exceeds recorded horizon")

        def cut(seq: Optional[SignalSequence]) -> Optional[SignalSequence]:
            if seq is None:
                return None
            return SignalSequence(seq.name, seq.data[:, start:start + length])

        return TrajectoryBundle(cut(self.u), cut(self.y), cut(self.z),
                                cut(self.w), cut(self.x_oracle), self.n_hint)


@dataclass(frozen=True)
class HankelView:
    """Materialized block-Hankel window of a signal."""

    name: str
    i: int
    k: int
    N: int
    matrix: np.ndarray


def hankel(seq: SignalSequence, i: int, k: int, N: int) -> HankelView:
    """Block-Hankel matrix with block (a, b) equal to sample v(i + a + b).

    Shape is (k * dim, N); the window must satisfy
    ``i + k + N - 2 <= T - 1``.
    """
    if k < 1 or N < 1 or i < 0:
        raise ValueError("hankel window parameters must be positive")
    if i + k + N - 2 > seq.horizon - 1:
        raise DataLengthError(
            f"hankel window (i={i}, k={k}, N={N}) exceeds horizon {seq.horizon}")
    d = seq.dim
    H = np.empty((k * d, N))
    for a in range(k):
        H[a * d:(a + 1) * d, :] = seq.data[:, i + a:i + a + N]
    return HankelView(seq.name, i, k, N, H)


def hankel_matrix(data: np.ndarray, i: int, k: int, N: int) -> np.ndarray:
    """Hankel of a raw (dim, T) array; same layout as :func:`hankel`."""
    d, T = data.shape
    if i + k + N - 2 > T - 1:
        raise DataLengthError("hankel window exceeds data length")
    H = np.empty((k * d, N))
    for a in range(k):
        H[a * d:(a + 1) * d, :] = data[:, i + a:i + a + N]
    return H


@dataclass(frozen=True)
class PastFutureSplit:
    """One-step-shifted partition V_p = V_{0,T-1}, V_f = V_{1,T-1}."""

    Up: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    Zp: np.ndarray
    Zf: np.ndarray
    Wp: Optional[np.ndarray] = None
    Wf: Optional[np.ndarray] = None

    @property
    def has_w(self) -> bool:
        return self.Wp is not None

    @property
    def m(self) -> int:
        return self.Up.shape[0]

    @property
    def p(self) -> int:
        return self.Yp.shape[0]

    @property
    def r(self) -> int:
        return self.Zp.shape[0]

    @property
    def columns(self) -> int:
        return self.Up.shape[1]

    def data_matrix(self) -> np.ndarray:
        """The stacked matrix D = [Up; Yp; Yf; Zp] (no W rows)."""
        return np.vstack([self.Up, self.Yp, self.Yf, self.Zp])


def past_future(bundle: TrajectoryBundle) -> PastFutureSplit:
    """Split every recorded signal into past/future flat data matrices."""
    T = bundle.horizon

    def pf(seq: Optional[SignalSequence]):
        if seq is None:
            return None, None
        return seq.data[:, : T - 1], seq.data[:, 1:]

    Up, _ = pf(bundle.u)
    Yp, Yf = pf(bundle.y)
    Zp, Zf = pf(bundle.z)
    Wp, Wf = pf(bundle.w)
    return PastFutureSplit(Up, Yp, Yf, Zp, Zf, Wp, Wf)


def pe_check(
    u: SignalSequence,
    depth: int,
    n_hint: int,
    policy: RankPolicy = DEFAULT_POLICY,
    x_oracle: Optional[SignalSequence] = None,
) -> bool:
    """Persistency-of-excitation check for the input sequence.

    Uses the order-(depth + n_hint) input-Hankel full-row-rank surrogate;
    when the hidden state is supplied, additionally requires
    ``rank([X_{0,N}; U_{0,depth,N}]) = n + depth * m``.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    order = depth + n_hint
    N = u.horizon - order + 1
    if N < order * u.dim:
        raise DataLengthError(
            f"insufficient data length: horizon {u.horizon} cannot certify "
            f"PE of order {order} for {u.dim} inputs")
    H = hankel(u, 0, order, N).matrix
    if tolerant_rank(H, policy) < order * u.dim:
        return False
    if x_oracle is not None:
        Nx = u.horizon - depth + 1
        stack = np.vstack([x_oracle.data[:, :Nx],
                           hankel(u, 0, depth, Nx).matrix])
        if tolerant_rank(stack, policy) < x_oracle.dim + depth * u.dim:
            return False
    return True


# ---------------------------------------------------------------------------
# file format: one CSV per bundle, rows are (signal, component, v(0), ...),
# plus a JSON sidecar with dims metadata.

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".meta.json")


def save_bundle(bundle: TrajectoryBundle, path) -> None:
    """Write the bundle as CSV (17 significant digits) with a dims sidecar."""
    path = Path(path)
    T = bundle.horizon
    lines = ["signal,component," + ",".join(f"t{t}" for t in range(T))]
    for seq in (bundle.u, bundle.y, bundle.z, bundle.w, bundle.x_oracle):
        if seq is None:
            continue
        for comp in range(seq.dim):
            vals = ",".join(f"{v:.17g}" for v in seq.data[comp])
            lines.append(f"{seq.name},{comp},{vals}")
    path.write_text("\n".join(lines) + "\n")
    m, p, r, n_hint = bundle.dims
    meta = {"m": m, "p": p, "r": r, "n_hint": n_hint, "T": T}
    _sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_bundle(path) -> TrajectoryBundle:
    """Load a bundle written by :func:`save_bundle`; values round-trip bit-exactly."""
    path = Path(path)
    text = path.read_text().strip().splitlines()
    if not text or not text[0].startswith("signal,component"):
        raise ValueError(f"{path}: malformed header")
    rows: dict[str, list[tuple[int, np.ndarray]]] = {}
    T = None
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) < 3:
            raise ValueError(f"{path}: malformed row {line[:40]!r}")
        name, comp = parts[0], int(parts[1])
        vals = np.array([float(v) for v in parts[2:]])
        if T is None:
            T = len(vals)
        elif len(vals) != T:
            raise ValueError(f"{path}: inconsistent horizons in signal {name}")
        rows.setdefault(name, []).append((comp, vals))

    def build(name: str) -> Optional[SignalSequence]:
        if name not in rows:
            return None
        comps = sorted(rows[name])
        data = np.vstack([v for _, v in comps])
        return SignalSequence(name, data)

    seqs = {name: build(name) for name in SIGNAL_NAMES}
    for required in ("u", "y", "z"):
        if seqs[required] is None:
            raise ValueError(f"{path}: missing signal {required}")
    n_hint = 0
    side = _sidecar_path(path)
    if side.exists():
        n_hint = int(json.loads(side.read_text()).get("n_hint", 0))
    return TrajectoryBundle(seqs["u"], seqs["y"], seqs["z"], seqs["w"],
                            seqs["x"], n_hint=n_hint)
