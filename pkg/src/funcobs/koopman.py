"""Koopman lifting front end: thin-plate-spline dictionaries, lifted-data
assembly, the lifted functional matrix, and a coupled Hindmarsh-Rose
neuron-network fixture for nonlinear target estimation."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .trajdata import SignalSequence, TrajectoryBundle


@dataclass(frozen=True)
class Dictionary:
    """Identity coordinates plus thin-plate-spline radial basis functions.

    Centers live in the unit box; ``offset``/``scale`` hold the affine
    map applied to states before RBF evaluation (identity until
    :func:`fit_normalization`).  The identity block is never normalized,
    so the lifted functional matrix [F, 0] reproduces F x exactly.
    """

    centers: np.ndarray
    offset: np.ndarray
    scale: np.ndarray
    kind: str = "thin-plate-spline"

    def __post_init__(self) -> None:
        c = np.asarray(self.centers, dtype=float)
        if c.ndim != 2 or not np.isfinite(c).all():
            raise ValueError("centers must be a finite (n_z, n) array")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "offset", np.asarray(self.offset, float))
        object.__setattr__(self, "scale", np.asarray(self.scale, float))

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    @property
    def n_z(self) -> int:
        return self.centers.shape[0]

    @property
    def lifted_dim(self) -> int:
        return self.n + self.n_z

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "centers": self.centers.tolist(),
                "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "Dictionary":
        return Dictionary(np.array(d["centers"], float),
                          np.array(d["offset"], float),
                          np.array(d["scale"], float), d.get("kind", "thin-plate-spline"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "Dictionary":
        return Dictionary.from_json_dict(json.loads(Path(path).read_text()))


def make_dictionary(n: int, n_z: int, seed: int = 0) -> Dictionary:
    """Dictionary with ``n_z`` centers drawn uniformly from the unit box."""
    rng = np.random.default_rng(seed)
    return Dictionary(rng.uniform(0.0, 1.0, size=(n_z, n)),
                      np.zeros(n), np.ones(n))


def fit_normalization(dictionary: Dictionary, states: np.ndarray) -> Dictionary:
    """Min-max map sending the training trajectory into the unit box."""
    X = np.asarray(states, dtype=float)
    lo = X.min(axis=1)
    hi = X.max(axis=1)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return replace(dictionary, offset=lo, scale=span)


def _tps(sq_dist: np.ndarray) -> np.ndarray:
    # removable singularity: r^2 log r^2 -> 0 as r -> 0
    out = np.zeros_like(sq_dist)
    mask = sq_dist > 0
    out[mask] = sq_dist[mask] * np.log(sq_dist[mask])
    return out


def lift(dictionary: Dictionary, x: np.ndarray) -> np.ndarray:
    """Lifted coordinates [x; phi_1(x); ...; phi_nz(x)]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (dictionary.n,):
        raise ValueError(f"expected state of dim {dictionary.n}")
    xn = (x - dictionary.offset) / dictionary.scale
    d2 = np.sum((dictionary.centers - xn) ** 2, axis=1)
    return np.concatenate([x, _tps(d2)])


def lift_trajectory(dictionary: Dictionary, states: np.ndarray) -> np.ndarray:
    """Columnwise lift of a (n, T) state trajectory to (n + n_z, T)."""
    X = np.asarray(states, dtype=float)
    Xn = (X - dictionary.offset[:, None]) / dictionary.scale[:, None]
    d2 = (np.sum(Xn ** 2, axis=0)[None, :]
          - 2.0 * dictionary.centers @ Xn
          + np.sum(dictionary.centers ** 2, axis=1)[:, None])
    d2 = np.maximum(d2, 0.0)
    return np.vstack([X, _tps(d2)])


def functional_lift_matrix(F: np.ndarray, n_z: int) -> np.ndarray:
    """F_x = F [I_n, 0]: the lifted read-out annihilates the RBF block."""
    F = np.asarray(F, dtype=float)
    return np.hstack([F, np.zeros((F.shape[0], n_z))])


def lift_bundle(dictionary: Dictionary, bundle: TrajectoryBundle,
                F: Optional[np.ndarray] = None) -> TrajectoryBundle:
    """Bundle whose W sequence is the lifted state trajectory.

    ``z`` is left untouched (it already equals ``F_x xi = F x``), so the
    downstream synthesis can treat the lifted system as linear with the
    lifted state as extended functional-state data.
    """
    if bundle.x_oracle is None:
        raise ValueError("lifting needs recorded states (x_oracle)")
    xi = lift_trajectory(dictionary, bundle.x_oracle.data)
    return TrajectoryBundle(
        u=bundle.u, y=bundle.y, z=bundle.z,
        w=SignalSequence("w", xi),
        x_oracle=bundle.x_oracle,
        n_hint=dictionary.lifted_dim,
    )


# ---------------------------------------------------------------------------
# Hindmarsh-Rose neuron network fixture

@dataclass(frozen=True)
class HRParams:
    """Coupled Hindmarsh-Rose parameters (forward-Euler discretization).

    ``current`` is the constant external drive per neuron; time-varying
    inputs add on top of it.  ``adjacency`` rows list the neurons each
    neuron receives diffusive coupling from.
    """

    adjacency: np.ndarray
    a: float = 1.0
    b: float = 3.0
    c: float = 1.0
    d: float = 5.0
    gamma: float = 0.001
    s: float = 1.0
    x_rest: float = -1.6
    eps: Optional[float] = None  # defaults to the neuron count
    current: float = 2.0
    dt: float = 0.01

    def __post_init__(self) -> None:
        adj = np.asarray(self.adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "adjacency", adj)
        if self.eps is None:
            object.__setattr__(self, "eps", float(adj.shape[0]))

    @property
    def n_neurons(self) -> int:
        return self.adjacency.shape[0]


def hr_er_adjacency(n_neurons: int, p_edge: float = 0.1, seed: int = 0) -> np.ndarray:
    """Directed ER coupling graph for the neuron network."""
    rng = np.random.default_rng(seed)
    adj = (rng.random((n_neurons, n_neurons)) < p_edge).astype(float)
    np.fill_diagonal(adj, 0.0)
    return adj


class HRDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


def simulate_hr(
    params: HRParams,
    horizon: int,
    input_policy: tuple = ("iid-uniform", -0.5, 0.5),
    seed: int = 0,
    sensors: Optional[Sequence[int]] = None,
    targets: Optional[Sequence[int]] = None,
    x0: Optional[np.ndarray] = None,
    guard: float = 1e6,
) -> TrajectoryBundle:
    """Forward-Euler trajectory of the coupled neuron network.

    The state is blocked as [membrane; fast; slow] (3N entries); sensors
    and targets are state-index lists turned into identity read-out
    rows.  Any state exceeding ``guard`` in magnitude aborts with the
    offending step index.
    """
    from .sim import _draw_inputs  # tagged-tuple input policies

    N = params.n_neurons
    rng = np.random.default_rng(seed)
    U = _draw_inputs(input_policy, N, horizon, rng)
    state = np.empty((3 * N, horizon))
    if x0 is None:
        x0 = np.concatenate([rng.uniform(-1.0, 1.0, N),
                             rng.uniform(-1.0, 1.0, N),
                             rng.uniform(0.0, 1.0, N)])
    state[:, 0] = x0
    adj = params.adjacency
    deg = adj.sum(axis=1)
    for t in range(horizon - 1):
        x = state[:N, t]
        y = state[N:2 * N, t]
        z = state[2 * N:, t]
        coupling = (params.eps / N) * (adj @ x - deg * x)
        dx = (y - params.a * x ** 3 + params.b * x ** 2 - z + coupling
              + params.current + U[:, t])
        dy = params.c - params.d * x ** 2 - y
        dz = params.gamma * (params.s * (x - params.x_rest) - z)
        nxt = state[:, t] + params.dt * np.concatenate([dx, dy, dz])
        if np.max(np.abs(nxt)) > guard:
            raise HRDivergence(t + 1)
        state[:, t + 1] = nxt

    n_states = 3 * N
    if sensors is None:
        sensors = list(range(0, n_states, 2))
    if targets is None:
        targets = [i for i in range(n_states) if i not in set(sensors)][:5]
    C = np.zeros((len(sensors), n_states))
    for j, idx in enumerate(sensors):
        C[j, idx] = 1.0
    F = np.zeros((len(targets), n_states))
    for j, idx in enumerate(targets):
        F[j, idx] = 1.0
    return TrajectoryBundle(
        u=SignalSequence("u", U),
        y=SignalSequence("y", C @ state),
        z=SignalSequence("z", F @ state),
        x_oracle=SignalSequence("x", state),
        n_hint=n_states,
    )


def rmse_curve(trials: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Per-time RMSE across trials: sqrt(mean_i ||true_t - est_t||^2)."""
    if not trials:
        raise ValueError("no trials")
    length = min(t.shape[1] for t, _ in trials)
    acc = np.zeros(length)
    for true, est in trials:
        if true.shape != est.shape:
            raise ValueError("trial sequences must share shapes")
        acc += np.sum((true[:, :length] - est[:, :length]) ** 2, axis=0)
    return np.sqrt(acc / len(trials))
