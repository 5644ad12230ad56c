"""Command-line entry point: generate -> collect -> check -> synthesize ->
simulate -> report, with presets, config manifests, and deterministic seeds.

Exit codes: 0 success (or positive verdict), 2 negative verdict, 1 input
or validation error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .numkit import RankPolicy
from .noise import NoiseModel
from .netgen import NetworkRecipe, child_seed, fig1_example, generate, scalar_network
from .obsv import LinearPlant, data_criterion, model_criterion
from .koopman import Dictionary, fit_normalization, hr_er_adjacency, \
    HRParams, lift_bundle, make_dictionary, simulate_hr
from .sim import SimConfig, ensemble, evaluate_observer, simulate_plant, \
    summarize, write_reports_csv
from .synth import ObserverSpec, PoleConfig, SynthesisError, synth_pipeline
from .trajdata import DataLengthError, load_bundle, save_bundle
from .baseline import model_darouach, moesp_identify


def _policy_from_args(args) -> RankPolicy:
    return RankPolicy(frobenius_ratio_eps=args.frobenius_eps,
                      svd_null_threshold=args.svd_threshold)


def _poles_from_args(args) -> PoleConfig:
    if args.poles:
        vals = tuple(complex(v) for v in args.poles.split(","))
        return PoleConfig(explicit=vals)
    return PoleConfig(max_modulus=args.pole_radius)


def _write_manifest(outdir: Path, command: str, config: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "version": __version__, "config": config}
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1, default=_jsonify) + "\n")


def _jsonify(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj)}")


def _save_plant(plant: LinearPlant, path: Path) -> None:
    payload = {"A": plant.A.tolist(), "B": plant.B.tolist(),
               "C": plant.C.tolist(), "F": plant.F.tolist()}
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")


def _load_plant(path: Path) -> LinearPlant:
    d = json.loads(path.read_text())
    return LinearPlant(np.array(d["A"]), np.array(d["B"]),
                       np.array(d["C"]), np.array(d["F"]))


def cmd_gen(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.preset == "fig1":
        plant, used_seed = fig1_example(args.seed)
        config = {"preset": "fig1", "seed": args.seed, "child_seed": used_seed}
    elif args.preset in ("fig2-desk", "fig3-desk"):
        recipe = _preset_recipe(args.preset, args.full)
        recipe = dataclasses.replace(recipe, seed=args.seed)
        plant = generate(recipe)
        config = {"preset": args.preset, "recipe": recipe, "seed": args.seed}
    else:
        recipe = NetworkRecipe(
            n_nodes=args.nodes, m=args.inputs, p=args.outputs, r=args.targets,
            topology=args.topology, p_edge=args.p_edge, k_avg=args.k_avg,
            seed=args.seed)
        plant = generate(recipe)
        config = {"recipe": recipe, "seed": args.seed}
    _save_plant(plant, outdir / "plant.json")
    np.savetxt(outdir / "adjacency.csv", plant.A, delimiter=",", fmt="%.17g")
    _write_manifest(outdir, "gen-network", config)
    print(f"plant with n={plant.n}, m={plant.m}, p={plant.p}, r={plant.r} "
          f"written to {outdir}")
    return 0


def cmd_check(args) -> int:
    bundle = load_bundle(args.bundle)
    policy = _policy_from_args(args)
    verdict = data_criterion(bundle, k=args.k, policy=policy)
    payload = {
        "functionally_observable": verdict.functionally_observable,
        "k_used": verdict.k_used,
        "rank_lhs": verdict.rank_lhs,
        "rank_rhs": verdict.rank_rhs,
        "pe_reliable": verdict.pe_reliable,
    }
    out = json.dumps(payload, sort_keys=True, indent=1)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "verdict.json").write_text(out + "\n")
        _write_manifest(outdir, "check",
                        {"bundle": str(args.bundle), "k": args.k,
                         "policy": policy})
    print(out)
    return 0 if verdict.functionally_observable else 2


def cmd_synth(args) -> int:
    bundle = load_bundle(args.bundle)
    policy = _policy_from_args(args)
    poles = _poles_from_args(args)
    rng = np.random.default_rng(args.seed)
    spec, info = synth_pipeline(bundle, poles, policy, rng, route=args.route)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec.save(outdir / "observer.json")
    config = {"bundle": str(args.bundle), "route_requested": args.route,
              "route_used": info["route"], "fallbacks": info["fallbacks"],
              "poles": poles, "policy": policy, "seed": args.seed,
              "order": spec.order}
    _write_manifest(outdir, "synth", config)
    print(f"route {info['route']}: order-{spec.order} observer written to "
          f"{outdir / 'observer.json'}")
    return 0


def cmd_simulate(args) -> int:
    plant = _load_plant(Path(args.plant))
    spec = ObserverSpec.load(args.spec)
    cfg = SimConfig(
        horizon=args.horizon,
        input_policy=("step", 1.0) if args.input == "step"
        else ("iid-uniform", -1.0, 1.0),
        x0_policy=("uniform", -1.0, 1.0),
        score_window=(args.window_start, args.window_end)
        if args.window_start is not None else None,
    )
    bundle = simulate_plant(plant, cfg, seed=args.seed)
    score = evaluate_observer(spec, bundle, cfg.window())
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "rrmse.json").write_text(
        json.dumps({"rrmse": score, "window": list(cfg.window())}) + "\n")
    _write_manifest(outdir, "simulate",
                    {"plant": str(args.plant), "spec": str(args.spec),
                     "cfg": cfg, "seed": args.seed})
    print(f"RRMSE over {cfg.window()}: {score:.6e}")
    return 0


def _preset_recipe(preset: str, full: bool) -> NetworkRecipe:
    if preset.startswith("fig2"):
        if full:
            return NetworkRecipe(n_nodes=100, m=40, p=50, r=10,
                                 topology="ba" if preset.endswith("ba") else "er",
                                 k_avg=10.0, m0=20)
        return NetworkRecipe(n_nodes=50, m=20, p=25, r=5,
                             topology="ba" if preset.endswith("ba") else "er",
                             k_avg=10.0, m0=20)
    if preset.startswith("fig3"):
        if full:
            return NetworkRecipe(n_nodes=250, m=80, p=100, r=10,
                                 topology="er", p_edge=0.2)
        return NetworkRecipe(n_nodes=50, m=16, p=20, r=4,
                             topology="er", p_edge=0.2)
    raise ValueError(f"unknown preset {preset}")


def cmd_ensemble(args) -> int:
    policy = _policy_from_args(args)
    poles = _poles_from_args(args)
    outdir = Path(args.out)
    fractions = None
    require_observable = False
    route = "io"
    if args.preset:
        recipe = _preset_recipe(args.preset, args.full)
        if args.preset.startswith("fig3"):
            fractions = [float(f) for f in args.fraction_sweep.split(",")] \
                if args.fraction_sweep else [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
            require_observable = True
            route = "extended"
    else:
        recipe = NetworkRecipe(n_nodes=args.nodes, m=args.inputs,
                               p=args.outputs, r=args.targets,
                               topology=args.topology, p_edge=args.p_edge,
                               k_avg=args.k_avg)
        if args.fraction_sweep:
            fractions = [float(f) for f in args.fraction_sweep.split(",")]
            route = "extended"

    probe = generate(dataclasses.replace(recipe, seed=child_seed(args.seed, 0, 2, 0)))
    from .obsv import observability_index
    l_probe = observability_index(probe, policy)
    T_train = probe.n + 2 * (probe.m + 1) * l_probe + args.train_margin
    horizon = 2 * T_train + 1
    cfg = SimConfig(horizon=horizon, input_policy=("step", 1.0),
                    x0_policy=("uniform", -1.0, 1.0),
                    score_window=(T_train, 2 * T_train))
    reports = ensemble(recipe, args.pipeline, args.trials, cfg,
                       master_seed=args.seed, poles=poles, policy=policy,
                       route=route, train_margin=args.train_margin,
                       fractions=fractions,
                       require_observable=require_observable,
                       workers=args.workers)
    outdir.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, outdir / "reports.csv")
    (outdir / "summary.json").write_text(
        json.dumps(summarize(reports), sort_keys=True, indent=1) + "\n")
    _write_manifest(outdir, "ensemble",
                    {"recipe": recipe, "pipeline": args.pipeline,
                     "trials": args.trials, "seed": args.seed, "poles": poles,
                     "policy": policy, "route": route,
                     "fractions": fractions, "cfg": cfg,
                     "preset": args.preset, "full": args.full})
    print(json.dumps(summarize(reports), sort_keys=True, indent=1))
    return 0


def cmd_ident(args) -> int:
    bundle = load_bundle(args.bundle)
    policy = _policy_from_args(args)
    ident = moesp_identify(bundle, s=args.s, n_assumed=args.n_assumed,
                           policy=policy)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "identified.json").write_text(json.dumps({
        "A_hat": ident.A_hat.tolist(), "B_hat": ident.B_hat.tolist(),
        "C_hat": ident.C_hat.tolist(), "n_assumed": ident.n_assumed,
        "p_split": ident.p_split}, sort_keys=True) + "\n")
    mobs = model_darouach(ident.as_plant(), _poles_from_args(args), policy,
                          np.random.default_rng(args.seed))
    (outdir / "model_observer.json").write_text(json.dumps({
        "Abar": mobs.Abar.tolist(), "Bbar_u": mobs.Bbar_u.tolist(),
        "Bbar_y": mobs.Bbar_y.tolist(), "Dbar": mobs.Dbar.tolist(),
        "order": mobs.order, "output_map": mobs.output_map.tolist()},
        sort_keys=True) + "\n")
    _write_manifest(outdir, "ident-baseline",
                    {"bundle": str(args.bundle), "s": args.s,
                     "n_assumed": args.n_assumed, "seed": args.seed})
    print(f"identified order-{ident.n_assumed} model; "
          f"model observer order {mobs.order}")
    return 0


def cmd_lift(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.x_oracle is None:
        print("bundle has no state data to lift", file=sys.stderr)
        return 1
    n = bundle.x_oracle.dim
    dictionary = make_dictionary(n, args.nz, seed=args.seed)
    dictionary = fit_normalization(dictionary, bundle.x_oracle.data)
    lifted = lift_bundle(dictionary, bundle)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_bundle(lifted, outdir / "lifted_bundle.csv")
    dictionary.save(outdir / "dictionary.json")
    _write_manifest(outdir, "koopman-lift",
                    {"bundle": str(args.bundle), "nz": args.nz,
                     "seed": args.seed})
    print(f"lifted bundle (dim {dictionary.lifted_dim}) written to {outdir}")
    return 0


def cmd_hr_sim(args) -> int:
    adj = hr_er_adjacency(args.neurons, args.p_edge, seed=args.seed)
    params = HRParams(adjacency=adj, dt=args.dt)
    rng = np.random.default_rng(child_seed(args.seed, 1))
    n_states = 3 * args.neurons
    sensors = sorted(rng.choice(n_states, size=args.sensors, replace=False).tolist())
    pool = [i for i in range(n_states) if i not in set(sensors)]
    targets = sorted(rng.choice(len(pool), size=args.targets, replace=False).tolist())
    targets = [pool[i] for i in targets]
    bundle = simulate_hr(params, args.horizon, seed=child_seed(args.seed, 2),
                         sensors=sensors, targets=targets)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, outdir / "hr_bundle.csv")
    _write_manifest(outdir, "hr-sim",
                    {"neurons": args.neurons, "horizon": args.horizon,
                     "dt": args.dt, "p_edge": args.p_edge,
                     "sensors": sensors, "targets": targets,
                     "seed": args.seed})
    print(f"HR bundle ({args.neurons} neurons, T={args.horizon}) written to {outdir}")
    return 0


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frobenius-eps", type=float, default=5e-7,
                   dest="frobenius_eps")
    p.add_argument("--svd-threshold", type=float, default=1e-5,
                   dest="svd_threshold")


def _add_pole_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--poles", type=str, default="",
                   help="comma-separated explicit pole targets")
    p.add_argument("--pole-radius", type=float, default=0.4,
                   dest="pole_radius")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="funcobs",
        description="data-driven functional observability and observer synthesis")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-network", help="generate a random network plant")
    g.add_argument("--preset", choices=["fig1", "fig2-desk", "fig3-desk"],
                   default=None)
    g.add_argument("--full", action="store_true")
    g.add_argument("--topology", choices=["er", "ba"], default="er")
    g.add_argument("--nodes", type=int, default=50)
    g.add_argument("--inputs", type=int, default=20)
    g.add_argument("--outputs", type=int, default=25)
    g.add_argument("--targets", type=int, default=5)
    g.add_argument("--p-edge", type=float, default=None, dest="p_edge")
    g.add_argument("--k-avg", type=float, default=10.0, dest="k_avg")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=str, required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("check", help="data-driven functional observability check")
    c.add_argument("--bundle", type=str, required=True)
    c.add_argument("--k", type=int, default=None)
    c.add_argument("--out", type=str, default="")
    _add_policy_flags(c)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("synth", help="synthesize a functional observer from data")
    s.add_argument("--bundle", type=str, required=True)
    s.add_argument("--route", choices=["auto", "darouach", "extended", "io"],
                   default="auto")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=str, required=True)
    _add_policy_flags(s)
    _add_pole_flags(s)
    s.set_defaults(func=cmd_synth)

    si = sub.add_parser("simulate", help="run an observer against a fresh simulation")
    si.add_argument("--plant", type=str, required=True)
    si.add_argument("--spec", type=str, required=True)
    si.add_argument("--horizon", type=int, default=101)
    si.add_argument("--input", choices=["step", "iid"], default="step")
    si.add_argument("--window-start", type=int, default=None)
    si.add_argument("--window-end", type=int, default=None)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--out", type=str, required=True)
    si.set_defaults(func=cmd_simulate)

    e = sub.add_parser("ensemble", help="multi-trial benchmark harness")
    e.add_argument("--preset", choices=["fig2-desk", "fig2-desk-ba", "fig3-desk"],
                   default=None)
    e.add_argument("--full", action="store_true")
    e.add_argument("--pipeline", choices=["data-driven", "two-step", "both"],
                   default="both")
    e.add_argument("--trials", type=int, default=30)
    e.add_argument("--topology", choices=["er", "ba"], default="er")
    e.add_argument("--nodes", type=int, default=50)
    e.add_argument("--inputs", type=int, default=20)
    e.add_argument("--outputs", type=int, default=25)
    e.add_argument("--targets", type=int, default=5)
    e.add_argument("--p-edge", type=float, default=None, dest="p_edge")
    e.add_argument("--k-avg", type=float, default=10.0, dest="k_avg")
    e.add_argument("--train-margin", type=int, default=100, dest="train_margin")
    e.add_argument("--fraction-sweep", type=str, default="",
                   dest="fraction_sweep")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=str, required=True)
    _add_policy_flags(e)
    _add_pole_flags(e)
    e.set_defaults(func=cmd_ensemble, pole_radius=0.9)

    i = sub.add_parser("ident-baseline", help="MOESP identification + model-based design")
    i.add_argument("--bundle", type=str, required=True)
    i.add_argument("--s", type=int, default=None)
    i.add_argument("--n-assumed", type=int, required=True, dest="n_assumed")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", type=str, required=True)
    _add_policy_flags(i)
    _add_pole_flags(i)
    i.set_defaults(func=cmd_ident)

    k = sub.add_parser("koopman-lift", help="lift a recorded bundle with TPS RBFs")
    k.add_argument("--bundle", type=str, required=True)
    k.add_argument("--nz", type=int, default=50)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", type=str, required=True)
    k.set_defaults(func=cmd_lift)

    h = sub.add_parser("hr-sim", help="simulate the coupled neuron network")
    h.add_argument("--neurons", type=int, default=10)
    h.add_argument("--horizon", type=int, default=1500)
    h.add_argument("--dt", type=float, default=0.01)
    h.add_argument("--p-edge", type=float, default=0.1, dest="p_edge")
    h.add_argument("--sensors", type=int, default=16)
    h.add_argument("--targets", type=int, default=5)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", type=str, required=True)
    h.set_defaults(func=cmd_hr_sim)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (SynthesisError, DataLengthError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
