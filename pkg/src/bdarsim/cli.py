"""Command-line front end.

Subcommands: simulate | couple | fixedpoint | ode | oracle | concentration.
Every run writes a JSON manifest echoing the full effective configuration
(including defaulted settings and the seed) plus CSV artifacts with header
rows. Exit codes: 0 success, 1 experiment-level failure, 2 usage error,
3 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import ModelParams, NetworkState
from .coupling import DistanceOnePairs, contraction_estimate
from .meanfield import (
    IntegrationError,
    fixed_point,
    ode_integrate,
    validate_simplex,
)
from .oracle import (
    OracleError,
    StateSpaceTooLarge,
    build_transition_matrix,
    empirical_visit_distribution,
    enumerate_states,
    exact_expectations,
    fixed_point_identity_defect,
    q_matrix_check,
    stationary,
)
from .rng import Xoshiro256, spawn_seeds
from .stats import (
    concentration_from_samples,
    default_burn_in,
    default_thinning,
    equilibrium_average,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_EXPERIMENT = 1
EXIT_USAGE = 2
EXIT_GUARD = 3


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    settings: dict
    out: Path


def _write_manifest(cfg: RunConfig) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": cfg.command,
        "params": cfg.params.to_dict(),
        "settings": cfg.settings,
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_json(cfg: RunConfig, name: str, payload: dict) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "params": cfg.params.to_dict(),
        "settings": cfg.settings,
    }
    doc.update(payload)
    (cfg.out / name).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_csv(cfg: RunConfig, name: str, header, rows) -> None:
    with open(cfg.out / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_simulate(cfg: RunConfig) -> int:
    s = cfg.settings
    if s["burn_in"] is None:
        s["burn_in"] = default_burn_in(cfg.params)
    if s["thin"] is None:
        s["thin"] = default_thinning(cfg.params)
    est = equilibrium_average(
        cfg.params,
        total_steps=s["steps"],
        burn_in_steps=s["burn_in"],
        thinning=s["thin"],
        rng=s["seed"],
        variant=s["variant"],
        collect_phi=s["phi"],
    )
    _write_manifest(cfg)
    _write_csv(
        cfg,
        "zeta.csv",
        ["j", "zeta_hat", "stderr"],
        [
            [j, repr(float(est.zeta_hat[j])), repr(float(est.zeta_stderr[j]))]
            for j in range(cfg.params.C + 1)
        ],
    )
    if est.phi_series is not None:
        _write_csv(
            cfg,
            "phi.csv",
            ["snapshot", "phi_tilde"],
            [[i, repr(float(v))] for i, v in enumerate(est.phi_series)],
        )
    _write_json(cfg, "summary.json", {"estimate": est.to_dict()})
    return EXIT_OK


def cmd_fixedpoint(cfg: RunConfig) -> int:
    s = cfg.settings
    C = cfg.params.C
    rows = []
    any_failed = False
    results = {}
    for lam in s["lambdas"]:
        p = ModelParams(n=cfg.params.n, C=C, d=cfg.params.d, lam=lam)
        r = fixed_point(p, tolerance=s["tolerance"], max_iters=s["max_iters"])
        ok = r.converged
        any_failed = any_failed or not ok
        results[str(lam)] = {
            "eta": r.eta.tolist(),
            "residual": r.residual,
            "diameter": r.diameter,
            "converged": ok,
        }
        rows.append(
            [
                repr(lam),
                C,
                cfg.params.d,
                int(ok),
                repr(r.residual),
                repr(r.diameter),
                int(r.diameter <= 1e-9),
                r.iterations,
            ]
            + [repr(float(v)) for v in r.eta]
        )
    _write_manifest(cfg)
    _write_csv(
        cfg,
        "fixedpoint.csv",
        [
            "lambda",
            "C",
            "d",
            "converged",
            "residual",
            "diameter",
            "starts_agree",
            "iterations",
        ]
        + [f"eta_{j}" for j in range(C + 1)],
        rows,
    )
    _write_json(cfg, "summary.json", {"points": results, "any_failed": any_failed})
    return EXIT_EXPERIMENT if any_failed else EXIT_OK


def _couple_worker(args) -> int:
    pd, seed, max_steps, variant = args
    from .kernels import CoupledKernel

    p = ModelParams.from_dict(pd)
    full = NetworkState.fully_loaded(p.n, p.C).counts_vector()
    empty = NetworkState.empty(p.n, p.C).counts_vector()
    ker = CoupledKernel(
        p.n,
        p.C,
        p.d,
        p.lam,
        fdar=1 if variant == "fdar" else 0,
        seed=seed,
        counts_x=full,
        counts_y=empty,
    )
    return ker.run_until_coalesced(max_steps)


def cmd_couple(cfg: RunConfig) -> int:
    s = cfg.settings
    if s["mode"] == "contract":
        gen = DistanceOnePairs(cfg.params, seed=s["seed"], variant=s["variant"])
        rng = Xoshiro256(spawn_seeds(s["seed"], 3)[2])
        res = contraction_estimate(
            cfg.params, gen, replicas=s["replicas"], rng=rng, variant=s["variant"]
        )
        _write_manifest(cfg)
        _write_csv(
            cfg,
            "contraction.csv",
            ["replica", "pre_distance", "post_distance"],
            [
                [i, int(res.records[i, 0]), int(res.records[i, 1])]
                for i in range(res.replicas)
            ],
        )
        lo, hi = res.ci95
        _write_json(
            cfg,
            "summary.json",
            {
                "estimate": res.estimate,
                "stderr": res.stderr,
                "ci95": [lo, hi],
                "theoretical_factor": res.theoretical,
            },
        )
        return EXIT_OK
    seeds = [int(x) for x in spawn_seeds(s["seed"], s["replicas"])]
    if s["threads"] > 1:
        work = [(cfg.params.to_dict(), sd, s["max_steps"], s["variant"]) for sd in seeds]
        with ProcessPoolExecutor(max_workers=s["threads"]) as pool:
            raw = list(pool.map(_couple_worker, work))
    else:
        raw = [
            _couple_worker((cfg.params.to_dict(), sd, s["max_steps"], s["variant"]))
            for sd in seeds
        ]
    times = [None if r < 0 else r for r in raw]
    done = [t for t in times if t is not None]
    frac = len(done) / len(times)
    median = float(np.median(done)) if frac >= 0.9 and done else None
    _write_manifest(cfg)
    _write_csv(
        cfg,
        "coalescence.csv",
        ["replica", "seed", "coalesced", "steps"],
        [
            [i, seeds[i], int(times[i] is not None), "" if times[i] is None else times[i]]
            for i in range(len(times))
        ],
    )
    _write_json(
        cfg,
        "summary.json",
        {
            "fraction_coalesced": frac,
            "median_steps": median,
            "censored": len(times) - len(done),
            "max_steps": s["max_steps"],
        },
    )
    if not done:
        print(
            f"all {len(times)} replicas censored at {s['max_steps']} steps",
            file=sys.stderr,
        )
        return EXIT_EXPERIMENT
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    s = cfg.settings
    index = enumerate_states(cfg.params)
    tm = build_transition_matrix(cfg.params, index, variant=s["variant"])
    problems = tm.validate()
    if problems:
        print("; ".join(problems), file=sys.stderr)
        return EXIT_EXPERIMENT
    pi = stationary(tm.P)
    defect = q_matrix_check(cfg.params, index, variant=s["variant"])
    ex = exact_expectations(pi, index)
    payload = {
        "states": index.size,
        "pi": pi.tolist(),
        "state_keys": index.keys.tolist(),
        "exact": ex.to_dict(),
        "q_defect": defect,
        "balance_identity_defect": fixed_point_identity_defect(pi, index),
    }
    if s["compare_sim"]:
        freq = empirical_visit_distribution(
            cfg.params, index, steps=s["steps"], rng=s["seed"]
        )
        gap = float(np.abs(freq - pi).max())
        payload["visit_linf_gap"] = gap
        payload["visit_steps"] = s["steps"]
    _write_manifest(cfg)
    if s["dump_p"]:
        nz = np.argwhere(tm.P > 0)
        _write_csv(
            cfg,
            "p_matrix.csv",
            ["row", "col", "prob"],
            [[int(i), int(j), repr(float(tm.P[i, j]))] for i, j in nz],
        )
    _write_json(cfg, "oracle.json", payload)
    return EXIT_OK


def cmd_ode(cfg: RunConfig) -> int:
    s = cfg.settings
    xi0 = np.asarray(s["init"], dtype=float)
    try:
        traj = ode_integrate(xi0, cfg.params, t_end=s["t_end"], step=s["step"])
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    fp = fixed_point(cfg.params)
    dist = float(np.abs(traj.final - fp.eta).max())
    _write_manifest(cfg)
    stride = max(1, len(traj.times) // s["max_rows"])
    picks = list(range(0, len(traj.times), stride))
    if picks[-1] != len(traj.times) - 1:
        picks.append(len(traj.times) - 1)
    rows = [
        [repr(float(traj.times[i]))] + [repr(float(v)) for v in traj.points[i]]
        for i in picks
    ]
    _write_csv(
        cfg, "trajectory.csv", ["t"] + [f"xi_{j}" for j in range(cfg.params.C + 1)], rows
    )
    _write_json(
        cfg,
        "summary.json",
        {
            "final": traj.final.tolist(),
            "fixed_point": fp.eta.tolist(),
            "final_gap_linf": dist,
            "max_step_deviation": traj.max_step_deviation,
        },
    )
    return EXIT_OK


def _conc_worker(args) -> int:
    pd, seed, steps, v, j = args
    from .core import pair_arrays
    from .kernels import ChainKernel

    p = ModelParams.from_dict(pd)
    ker = ChainKernel(p.n, p.C, p.d, p.lam, seed=seed)
    ker.run(steps)
    pu, pv, _ = pair_arrays(p.n)
    incident = np.flatnonzero((pu == v - 1) | (pv == v - 1))
    return int((ker.loads_array()[incident] == j).sum())


def cmd_concentration(cfg: RunConfig) -> int:
    s = cfg.settings
    if s["replicas"] < 100:
        print("concentration needs --replicas >= 100", file=sys.stderr)
        return EXIT_USAGE
    results = []
    for n in s["ns"]:
        p = ModelParams(n=n, C=cfg.params.C, d=cfg.params.d, lam=cfg.params.lam)
        seeds = [int(x) for x in spawn_seeds(s["seed"] + n, s["replicas"])]
        steps = p.steps_for_time(s["t_eval"])
        work = [(p.to_dict(), sd, steps, s["v"], s["j"]) for sd in seeds]
        if s["threads"] > 1:
            with ProcessPoolExecutor(max_workers=s["threads"]) as pool:
                samples = np.asarray(list(pool.map(_conc_worker, work)), dtype=np.int64)
        else:
            samples = np.asarray([_conc_worker(w) for w in work], dtype=np.int64)
        results.append(
            concentration_from_samples(p, s["v"], s["j"], s["t_eval"], samples)
        )
    _write_manifest(cfg)
    rows = []
    for r in results:
        rows.append(
            [r.params.n, r.replicas, repr(r.mean), repr(r.variance)]
            + [repr(r.tail[m]) for m in sorted(r.tail)]
        )
    _write_csv(
        cfg,
        "concentration.csv",
        ["n", "replicas", "mean", "variance"]
        + [f"tail_{m:g}_sqrt_n" for m in sorted(results[0].tail)],
        rows,
    )
    ratios = {}
    for a, b in zip(results, results[1:]):
        if a.variance > 0:
            ratios[f"{b.params.n}/{a.params.n}"] = b.variance / a.variance
    _write_json(
        cfg,
        "summary.json",
        {
            "tables": [r.to_dict() for r in results],
            "variance_ratios": ratios,
        },
    )
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bdarsim",
        description="Simulator and numerical toolkit for balanced dynamic "
        "alternative routing on the complete graph.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, skip=()):
        if "n" not in skip:
            p.add_argument("--n", type=int, help="number of nodes")
        p.add_argument("--C", type=int, help="link capacity")
        p.add_argument("--d", type=int, help="alternatives sampled per arrival")
        if "lam" not in skip:
            p.add_argument(
                "--lambda", dest="lam", type=float, help="arrival rate per pair"
            )
        p.add_argument("--seed", type=int, help="master RNG seed (default 0)")
        p.add_argument("--variant", choices=["bdar", "fdar"], help="routing rule")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--config", type=str, help="JSON config file (flags override)")
        p.add_argument("--threads", type=int, help="replica-level parallelism")

    p = sub.add_parser("simulate", help="single-chain equilibrium averaging")
    common(p)
    p.add_argument("--steps", type=int, help="total jump-chain steps (required)")
    p.add_argument("--burn-in", dest="burn_in", type=int, help="burn-in steps")
    p.add_argument("--thin", type=int, help="steps between snapshots")
    p.add_argument("--phi", action="store_true", default=None,
                   help="also record the uniformity functional per snapshot")

    p = sub.add_parser("couple", help="coalescence or contraction experiments")
    common(p)
    p.add_argument("--replicas", type=int, help="replica count (required, > 0)")
    p.add_argument("--max-steps", dest="max_steps", type=int, help="censoring horizon")
    p.add_argument("--mode", choices=["coalesce", "contract"], help="experiment type")

    p = sub.add_parser("fixedpoint", help="equilibrium fixed-point solves")
    common(p, skip=("lam",))
    p.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        action="append",
        help="arrival rate; repeat the flag to sweep",
    )
    p.add_argument("--tolerance", type=float, help="residual tolerance")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap")

    p = sub.add_parser("ode", help="integrate the mean-field drift")
    common(p)
    p.add_argument("--t-end", dest="t_end", type=float, help="integration horizon")
    p.add_argument("--step", type=float, help="integrator step size")
    p.add_argument("--init", type=str, help="comma-separated simplex point, or 'bary'")
    p.add_argument("--max-rows", dest="max_rows", type=int, help="CSV row cap")

    p = sub.add_parser("oracle", help="exact tiny-instance ground truth")
    common(p)
    p.add_argument("--compare-sim", dest="compare_sim", action="store_true",
                   default=None, help="compare simulator visit frequencies with pi")
    p.add_argument("--steps", type=int, help="simulation steps for --compare-sim")
    p.add_argument("--dump-p", dest="dump_p", action="store_true", default=None,
                   help="dump the transition matrix as CSV triplets")

    p = sub.add_parser("concentration", help="replica spread of a node count")
    common(p, skip=("n",))
    p.add_argument("--n", type=int, action="append", dest="ns",
                   help="node count; repeat to compare variances across n")
    p.add_argument("--replicas", type=int, help="independent chains (>= 100)")
    p.add_argument("--t-eval", dest="t_eval", type=float, help="evaluation time")
    p.add_argument("--v", type=int, help="observed node (1-based)")
    p.add_argument("--j", type=int, help="observed load level")
    return ap


DEFAULTS = {
    "simulate": {
        "n": 50, "C": 1, "d": 1, "lam": 0.05, "seed": 0, "variant": "bdar",
        "out": "runs/simulate", "threads": 1, "steps": None, "burn_in": None,
        "thin": None, "phi": False,
    },
    "couple": {
        "n": 10, "C": 1, "d": 1, "lam": 0.05, "seed": 0, "variant": "bdar",
        "out": "runs/couple", "threads": 1, "replicas": None, "max_steps": 2000000,
        "mode": "coalesce",
    },
    "fixedpoint": {
        "n": 3, "C": 1, "d": 1, "lam": None, "seed": 0, "variant": "bdar",
        "out": "runs/fixedpoint", "threads": 1, "tolerance": 1e-12,
        "max_iters": 100000,
    },
    "ode": {
        "n": 3, "C": 1, "d": 1, "lam": 0.05, "seed": 0, "variant": "bdar",
        "out": "runs/ode", "threads": 1, "t_end": 100.0, "step": 1e-3,
        "init": "bary", "max_rows": 2000,
    },
    "oracle": {
        "n": 3, "C": 1, "d": 1, "lam": 0.05, "seed": 0, "variant": "bdar",
        "out": "runs/oracle", "threads": 1, "compare_sim": False,
        "steps": 1000000, "dump_p": False,
    },
    "concentration": {
        "C": 1, "d": 1, "lam": 0.05, "seed": 0, "variant": "bdar",
        "out": "runs/concentration", "threads": 1, "ns": None, "replicas": None,
        "t_eval": 20.0, "v": 1, "j": 0,
    },
}


def _merge_settings(command: str, args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS[command])
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    merged["config_file"] = cfg_path
    return merged


def _parse_init(text, C: int):
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    elif text == "bary":
        vals = [1.0 / (C + 1)] * (C + 1)
    else:
        vals = [float(tok) for tok in text.split(",")]
    return validate_simplex(vals, C).tolist()


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    command = args.command
    try:
        s = _merge_settings(command, args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if command == "simulate":
            if not s["steps"] or s["steps"] <= 0:
                print("simulate requires --steps > 0", file=sys.stderr)
                return EXIT_USAGE
            params = ModelParams(n=s["n"], C=s["C"], d=s["d"], lam=s["lam"])
        elif command == "couple":
            if not s["replicas"] or s["replicas"] <= 0:
                print("couple requires --replicas > 0", file=sys.stderr)
                return EXIT_USAGE
            params = ModelParams(n=s["n"], C=s["C"], d=s["d"], lam=s["lam"])
        elif command == "fixedpoint":
            lams = s["lam"] if isinstance(s["lam"], list) else [s["lam"]]
            if not lams or lams[0] is None:
                print("fixedpoint requires --lambda", file=sys.stderr)
                return EXIT_USAGE
            s["lambdas"] = [float(x) for x in lams]
            del s["lam"]
            params = ModelParams(n=s["n"], C=s["C"], d=s["d"], lam=s["lambdas"][0])
        elif command == "ode":
            if s["step"] is not None and s["step"] <= 0:
                print("ode requires --step > 0", file=sys.stderr)
                return EXIT_USAGE
            params = ModelParams(n=s["n"], C=s["C"], d=s["d"], lam=s["lam"])
            try:
                s["init"] = _parse_init(s["init"], s["C"])
            except ValueError as exc:
                print(f"bad --init: {exc}", file=sys.stderr)
                return EXIT_USAGE
        elif command == "oracle":
            params = ModelParams(n=s["n"], C=s["C"], d=s["d"], lam=s["lam"])
        elif command == "concentration":
            if not s["ns"]:
                print("concentration requires --n", file=sys.stderr)
                return EXIT_USAGE
            if not s["replicas"]:
                print("concentration requires --replicas", file=sys.stderr)
                return EXIT_USAGE
            params = ModelParams(
                n=max(s["ns"]), C=s["C"], d=s["d"], lam=s["lam"]
            )
        else:
            return EXIT_USAGE
    except ValueError as exc:
        print(f"bad parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE

    cfg = RunConfig(command=command, params=params, settings=s, out=Path(s["out"]))
    cfg.out.mkdir(parents=True, exist_ok=True)
    handlers = {
        "simulate": cmd_simulate,
        "couple": cmd_couple,
        "fixedpoint": cmd_fixedpoint,
        "ode": cmd_ode,
        "oracle": cmd_oracle,
        "concentration": cmd_concentration,
    }
    try:
        return handlers[command](cfg)
    except StateSpaceTooLarge as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OracleError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    except ValueError as exc:
        print(f"invalid run: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
