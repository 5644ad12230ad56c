"""Plant simulation, observer execution, RRMSE scoring, and the ensemble
experiment harness (including partial-information sweeps)."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .numkit import DEFAULT_POLICY, RankPolicy
from .obsv import LinearPlant, model_criterion, observability_index
from .netgen import NetworkRecipe, child_seed, generate
from .synth import (ObserverSpec, PoleConfig, SynthesisError, as_pole_config,
                    synth_pipeline)
from .trajdata import DataLengthError, SignalSequence, TrajectoryBundle

InputPolicy = tuple
X0Policy = tuple


@dataclass(frozen=True)
class SimConfig:
    """Simulation protocol: horizon, input and initial-state policies,
    observer initialization, scoring window.

    Policies are tagged tuples: ``("iid-uniform", lo, hi)``,
    ``("step", value)``, ``("zero",)`` or ``("custom", array)`` for
    inputs; ``("uniform", lo, hi)``, ``("zero",)`` or ``("given", vec)``
    for the initial state.  ``score_window`` defaults to the second half
    of the horizon.
    """

    horizon: int
    input_policy: InputPolicy = ("iid-uniform", -1.0, 1.0)
    x0_policy: X0Policy = ("uniform", -1.0, 1.0)
    observer_init: Optional[np.ndarray] = None
    score_window: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.score_window is not None:
            t1, t2 = self.score_window
            if not (0 <= t1 <= t2 <= self.horizon - 1):
                raise ValueError("score window must satisfy T1 <= T2 <= horizon-1")

    def window(self) -> tuple[int, int]:
        if self.score_window is not None:
            return self.score_window
        return (self.horizon // 2, self.horizon - 1)


@dataclass(frozen=True)
class ExperimentReport:
    rrmse: float
    order: int
    wall_time: float
    converged: bool
    seed: int
    pipeline: str = "data-driven"
    fraction: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.rrmse >= 0 or math.isnan(self.rrmse)):
            raise ValueError("rrmse must be nonnegative")


def _draw_inputs(policy: InputPolicy, m: int, T: int,
                 rng: np.random.Generator) -> np.ndarray:
    kind = policy[0]
    if kind == "iid-uniform":
        return rng.uniform(policy[1], policy[2], size=(m, T))
    if kind == "step":
        return np.full((m, T), float(policy[1]))
    if kind == "zero":
        return np.zeros((m, T))
    if kind == "custom":
        U = np.asarray(policy[1], dtype=float)
        if U.shape != (m, T):
            raise ValueError(f"custom input must have shape {(m, T)}")
        return U
    raise ValueError(f"unknown input policy {kind!r}")


def _draw_x0(policy: X0Policy, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = policy[0]
    if kind == "uniform":
        return rng.uniform(policy[1], policy[2], size=n)
    if kind == "zero":
        return np.zeros(n)
    if kind == "given":
        x0 = np.asarray(policy[1], dtype=float)
        if x0.shape != (n,):
            raise ValueError(f"given x0 must have shape ({n},)")
        return x0
    raise ValueError(f"unknown x0 policy {kind!r}")


def simulate_plant(plant: LinearPlant, cfg: SimConfig, seed: int = 0) -> TrajectoryBundle:
    """Exact forward iteration of the plant; returns u, y, z and the
    hidden state as ``x_oracle``."""
    rng = np.random.default_rng(seed)
    T = cfg.horizon
    U = _draw_inputs(cfg.input_policy, plant.m, T, rng)
    x0 = _draw_x0(cfg.x0_policy, plant.n, rng)
    X = np.empty((plant.n, T))
    X[:, 0] = x0
    for t in range(T - 1):
        X[:, t + 1] = plant.A @ X[:, t] + plant.B @ U[:, t]
    return TrajectoryBundle(
        u=SignalSequence("u", U),
        y=SignalSequence("y", plant.C @ X),
        z=SignalSequence("z", plant.F @ X),
        x_oracle=SignalSequence("x", X),
        n_hint=plant.n,
    )


def run_observer(spec: ObserverSpec, bundle: TrajectoryBundle,
                 init: Optional[np.ndarray] = None) -> SignalSequence:
    """Iterate the observer over the bundle's input/output streams.

    Returns the selector-applied estimate for times 1..T-1 (length T-1).
    """
    T = bundle.horizon
    if bundle.u.dim != spec.sigma_up.shape[1] or bundle.y.dim != spec.sigma_yp.shape[1]:
        raise ValueError("bundle dimensions do not match the observer spec")
    zhat = np.zeros(spec.order) if init is None else np.asarray(init, dtype=float)
    if zhat.shape != (spec.order,):
        raise ValueError(f"init must have shape ({spec.order},)")
    U, Y = bundle.u.data, bundle.y.data
    out = np.empty((spec.selector.shape[0], T - 1))
    for t in range(T - 1):
        zhat = (spec.sigma_up @ U[:, t] + spec.sigma_yp @ Y[:, t]
                + spec.sigma_yf @ Y[:, t + 1] + spec.sigma_zp @ zhat)
        out[:, t] = spec.selector @ zhat
    return SignalSequence("z", out)


def rrmse(z_est: SignalSequence, z_true: SignalSequence,
          window: tuple[int, int]) -> float:
    """Relative root-mean-square error over an aligned window [T1, T2]."""
    t1, t2 = window
    if z_est.dim != z_true.dim:
        raise ValueError("sequences have different dimensions")
    if t1 < 0 or t2 >= min(z_est.horizon, z_true.horizon) or t1 > t2:
        raise ValueError("window out of range")
    err = z_est.data[:, t1:t2 + 1] - z_true.data[:, t1:t2 + 1]
    den = np.linalg.norm(z_true.data[:, t1:t2 + 1])
    if den == 0:
        raise ValueError("true sequence is identically zero on the window")
    return float(np.linalg.norm(err) / den)


def evaluate_observer(spec: ObserverSpec, bundle: TrajectoryBundle,
                      window: Optional[tuple[int, int]] = None,
                      init: Optional[np.ndarray] = None) -> float:
    """RRMSE of the observer on a bundle over an absolute-time window.

    The estimate sequence starts at time 1, so window indices are shifted
    accordingly before scoring.
    """
    T = bundle.horizon
    t1, t2 = window if window is not None else (T // 2, T - 1)
    t1 = max(t1, 1)
    est = run_observer(spec, bundle, init)
    est_w = SignalSequence("z", est.data[:, t1 - 1:t2])
    true_w = SignalSequence("z", bundle.z.data[:, t1:t2 + 1])
    return rrmse(est_w, true_w, (0, t2 - t1))


# ---------------------------------------------------------------------------
# ensemble harness

def _training_length(plant: LinearPlant, margin: int,
                     policy: RankPolicy) -> int:
    l = observability_index(plant, policy)
    return plant.n + 2 * (plant.m + 1) * l + margin


def _partial_w(bundle: TrajectoryBundle, plant: LinearPlant, fraction: float,
               rng: np.random.Generator) -> TrajectoryBundle:
    """Attach W = P X with uniformly sampled state rows so that
    (row(W) + row(Z)) / n equals the requested fraction.

    Rows are drawn from the sensor-connected component so the supplied
    partial information corresponds to recoverable state directions.
    """
    from .netgen import sensor_connected_states

    n = plant.n
    want = int(round(fraction * n)) - plant.r
    want = max(want, 0)
    target_states = {int(np.argmax(np.abs(row))) for row in plant.F}
    sensors = {int(np.argmax(np.abs(row))) for row in plant.C}
    connected = set(sensor_connected_states(plant.A, sensors))
    pool = [i for i in range(n) if i not in target_states and i in connected]
    if len(pool) < want:
        pool = [i for i in range(n) if i not in target_states]
    want = min(want, len(pool))
    rows = rng.choice(len(pool), size=want, replace=False) if want else []
    X = bundle.x_oracle.data
    W = X[[pool[i] for i in rows], :] if want else np.zeros((0, bundle.horizon))
    if want == 0:
        return bundle
    return TrajectoryBundle(bundle.u, bundle.y, bundle.z,
                            w=SignalSequence("w", W),
                            x_oracle=bundle.x_oracle, n_hint=bundle.n_hint)


def _run_data_driven(plant, bundle_train, bundle_test, window, poles, policy,
                     rng, route):
    t0 = time.perf_counter()
    spec, info = synth_pipeline(bundle_train, poles, policy, rng, route=route)
    wall = time.perf_counter() - t0
    score = evaluate_observer(spec, bundle_test, window)
    return score, spec.order, wall


def _run_two_step(plant, bundle_train, bundle_test, window, poles, policy, rng):
    from .baseline import model_darouach, moesp_identify, run_model_observer
    t0 = time.perf_counter()
    ident = moesp_identify(bundle_train, s=None, n_assumed=plant.n,
                           policy=policy)
    mobs = model_darouach(ident.as_plant(), poles, policy, rng)
    wall = time.perf_counter() - t0
    est = run_model_observer(mobs, bundle_test)
    t1, t2 = window
    score = rrmse(SignalSequence("z", est.data[:, t1:t2 + 1]),
                  SignalSequence("z", bundle_test.z.data[:, t1:t2 + 1]),
                  (0, t2 - t1))
    return score, mobs.order, wall


def run_trial(
    recipe: NetworkRecipe,
    pipeline: str,
    trial: int,
    cfg: SimConfig,
    master_seed: int = 0,
    poles: PoleConfig = PoleConfig(max_modulus=0.9),
    policy: RankPolicy = DEFAULT_POLICY,
    route: str = "io",
    train_margin: int = 100,
    fraction: Optional[float] = None,
    threshold: float = 0.08,
    require_observable: bool = False,
    require_functional: bool = True,
) -> list[ExperimentReport]:
    """One generation -> data -> synthesis -> simulation -> scoring pass."""
    from .obsv import observability_matrix
    from .numkit import tolerant_rank

    seed = child_seed(master_seed, trial)
    rng = np.random.default_rng(child_seed(master_seed, trial, 1))
    plant = None
    for attempt in range(200):
        cand = generate(replace(recipe, seed=child_seed(master_seed, trial, 2, attempt)))
        if require_observable:
            O = observability_matrix(cand.A, cand.C)
            if tolerant_rank(O, policy) < cand.n:
                continue
        if require_functional and not model_criterion(cand, policy).functionally_observable:
            continue
        plant = cand
        break
    if plant is None:
        return [ExperimentReport(math.inf, 0, 0.0, False, seed, pl, fraction)
                for pl in _pipelines(pipeline)]

    T_train = _training_length(plant, train_margin, policy)
    train_cfg = SimConfig(horizon=T_train,
                          input_policy=("iid-uniform", -1.0, 1.0),
                          x0_policy=("uniform", -1.0, 1.0))
    bundle_train = simulate_plant(plant, train_cfg, seed=child_seed(master_seed, trial, 3))
    if fraction is not None:
        bundle_train = _partial_w(bundle_train, plant, fraction, rng)
    bundle_test = simulate_plant(plant, cfg, seed=child_seed(master_seed, trial, 4))
    window = cfg.window()

    reports = []
    for pl in _pipelines(pipeline):
        t0 = time.perf_counter()
        try:
            if pl == "data-driven":
                score, order, wall = _run_data_driven(
                    plant, bundle_train, bundle_test, window, poles, policy,
                    rng, route)
            else:
                score, order, wall = _run_two_step(
                    plant, bundle_train, bundle_test, window, poles, policy, rng)
            reports.append(ExperimentReport(score, order, wall,
                                            bool(score < threshold), seed, pl,
                                            fraction))
        except (SynthesisError, DataLengthError, ValueError) as exc:
            reports.append(ExperimentReport(math.inf, 0,
                                            time.perf_counter() - t0, False,
                                            seed, pl, fraction))
    return reports


def _pipelines(pipeline: str) -> tuple[str, ...]:
    if pipeline == "both":
        return ("data-driven", "two-step")
    if pipeline in ("data-driven", "two-step"):
        return (pipeline,)
    raise ValueError(f"unknown pipeline {pipeline!r}")


def ensemble(
    recipe: NetworkRecipe,
    pipeline: str,
    trials: int,
    cfg: SimConfig,
    master_seed: int = 0,
    poles: PoleConfig = PoleConfig(max_modulus=0.9),
    policy: RankPolicy = DEFAULT_POLICY,
    route: str = "io",
    train_margin: int = 100,
    fractions: Optional[Sequence[float]] = None,
    threshold: float = 0.08,
    require_observable: bool = False,
    workers: int = 1,
) -> list[ExperimentReport]:
    """Independent trials over network realizations; per-trial failures are
    recorded as non-converged reports and never abort the run."""
    jobs = []
    for trial in range(trials):
        if fractions is None:
            jobs.append((trial, None))
        else:
            jobs.extend((trial, f) for f in fractions)
    args = [
        (recipe, pipeline, trial, cfg, master_seed, poles, policy, route,
         train_margin, frac, threshold, require_observable)
        for trial, frac in jobs
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial_star, args))
    else:
        chunks = [_trial_star(a) for a in args]
    return [rep for chunk in chunks for rep in chunk]


def _trial_star(args) -> list[ExperimentReport]:
    (recipe, pipeline, trial, cfg, master_seed, poles, policy, route,
     train_margin, fraction, threshold, require_observable) = args
    return run_trial(recipe, pipeline, trial, cfg, master_seed, poles, policy,
                     route, train_margin, fraction, threshold,
                     require_observable=require_observable,
                     require_functional=not require_observable)


def summarize(reports: Sequence[ExperimentReport]) -> dict:
    """Aggregate statistics per (pipeline, fraction) group."""
    groups: dict = {}
    for rep in reports:
        key = (rep.pipeline, rep.fraction)
        groups.setdefault(key, []).append(rep)
    out = {}
    for (pl, frac), reps in sorted(groups.items(),
                                   key=lambda kv: (kv[0][0], kv[0][1] or 0.0)):
        finite = [r.rrmse for r in reps if math.isfinite(r.rrmse)]
        label = pl if frac is None else f"{pl}@{frac:g}"
        out[label] = {
            "trials": len(reps),
            "rrmse_median": float(np.median(finite)) if finite else math.inf,
            "rrmse_mean": float(np.mean(finite)) if finite else math.inf,
            "order_mean": float(np.mean([r.order for r in reps])),
            "wall_time_mean": float(np.mean([r.wall_time for r in reps])),
            "convergence_rate": float(np.mean([r.converged for r in reps])),
        }
    return out


def write_reports_csv(reports: Sequence[ExperimentReport], path) -> None:
    lines = ["pipeline,fraction,rrmse,order,wall_time,converged,seed"]
    for r in reports:
        frac = "" if r.fraction is None else f"{r.fraction:.17g}"
        lines.append(f"{r.pipeline},{frac},{r.rrmse:.17g},{r.order},"
                     f"{r.wall_time:.17g},{int(r.converged)},{r.seed}")
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n")
