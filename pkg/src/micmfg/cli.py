"""Experiment runner: scenario training runs, solvability checks, scaling studies.

Subcommands:
  run-case <id>     train the neural solver on a built-in scenario and write
                    oracle.csv, nn_curves.csv, metrics.json, loss_history.csv
  check <config>    evaluate every solvability condition of a JSON scenario
  nplayer-scaling   estimate the finite-pool gap decay across class sizes

Outputs are UTF-8, floats carry 9 significant digits, and every metrics file
embeds the seed, a scenario hash, and the grid sizes needed for replay.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys


def _cap_threads():
    cap = os.environ.get("MFG_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _fmt(x) -> str:
    return f"{float(x):.9g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _scenario_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _cmd_run_case(args) -> int:
    import numpy as np

    from . import cases, deepbsde, riccati

    constrained = not args.unconstrained
    params, reward, lam_default = cases.make_case(args.case, constrained=constrained)
    lam = args.penalty if args.penalty is not None else lam_default
    config = cases.training_profile(args.profile, seed=args.seed, penalty=lam)
    os.makedirs(args.out, exist_ok=True)

    oracle = None
    if reward.kind == "quadratic":
        params_free, reward_free, _ = cases.make_case(args.case, constrained=False)
        oracle = riccati.solve(params_free, reward_free, n_grid=args.ode_grid)
        oracle.to_csv(os.path.join(args.out, "oracle.csv"))

    solver = deepbsde.train(
        params, reward, config,
        oracle=oracle if (not constrained and reward.kind == "quadratic") else None,
    )

    H = params.H
    header = ["t"] + [f"vbar{h + 1}" for h in range(H)] + [f"z{h + 1}" for h in range(H)]
    rows = []
    M = config.n_steps
    for i in range(M + 1):
        vb = solver.vbar[:, min(i, M - 1)]
        rows.append([solver.t[i], *vb, *solver.z[:, i]])
    _write_csv(os.path.join(args.out, "nn_curves.csv"), header, rows)

    _write_csv(
        os.path.join(args.out, "loss_history.csv"),
        ["iteration", "loss", "terminal_error", "meanfield_error"],
        [[str(i), *solver.loss_history[i]] for i in range(solver.loss_history.shape[0])],
    )

    metrics = {
        "case": args.case,
        "constrained": constrained,
        "penalty": lam,
        "profile": args.profile,
        "seed": args.seed,
        "scenario_hash": _scenario_hash(
            {"market": params.as_record(), "penalty": lam,
             "profile": args.profile, "seed": args.seed}
        ),
        "grid": {
            "n_paths": config.n_paths,
            "n_steps": config.n_steps,
            "iterations": config.iterations,
            "ode_grid": args.ode_grid,
        },
    }
    metrics.update(solver.metrics())
    for h in range(H):
        metrics[f"vbar{h + 1}_0"] = float(solver.vbar[h, 0])
        metrics[f"vbar{h + 1}_penultimate"] = float(solver.vbar[h, -1])
        if oracle is not None:
            metrics[f"oracle_vbar{h + 1}_0"] = float(oracle.vbar[0, h])
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, default=float)
        fh.write("\n")

    line = (
        f"case {args.case} ({'constrained' if constrained else 'unconstrained'}, "
        f"{args.profile}): terminal_error={solver.terminal_error:.9g} "
        f"meanfield_error={solver.meanfield_error:.9g}"
    )
    if solver.relative_error_pct is not None:
        line += f" relative_error={solver.relative_error_pct:.9g}%"
    print(line)
    return 0


def _cmd_check(args) -> int:
    from .model import check_wellposedness, load_config

    params, reward, survival = load_config(args.config)
    report = check_wellposedness(params, reward)
    print(report.as_json())
    ok = report.all_hold if args.strict else report.all_required_hold
    return 0 if ok else 1


def _cmd_nplayer_scaling(args) -> int:
    from . import nplayer, riccati
    from .model import load_config

    params, reward, _ = load_config(args.config)
    if reward.kind != "quadratic":
        print("scaling study needs a quadratic scenario (exact route required)",
              file=sys.stderr)
        return 2
    schedule = [int(tok) for tok in args.schedule.split(",") if tok]
    solution = riccati.solve(params, reward, n_grid=args.ode_grid)
    stats = nplayer.mean_field_gap(
        params, reward, solution, schedule, n_mc=args.mc, seed=args.seed,
        n_steps=args.steps,
    )
    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "gap.csv"),
        ["N", "gap", "stderr"],
        [[str(int(stats.sizes[i])), stats.gaps[i], stats.stderrs[i]]
         for i in range(stats.sizes.shape[0])],
    )
    summary = {
        "seed": args.seed,
        "n_mc": args.mc,
        "schedule": schedule,
        "slope": stats.slope,
        "intercept": stats.intercept,
        "r_squared": stats.r_squared,
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if stats.slope is not None:
        print(f"gap decay slope={stats.slope:.9g} r2={stats.r_squared:.9g}")
    else:
        print(f"single size: gap={stats.gaps[0]:.9g}")
    return 0


def main(argv=None) -> int:
    _cap_threads()
    parser = argparse.ArgumentParser(prog="micmfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run-case", help="train the neural solver on a scenario")
    run.add_argument("case")
    group = run.add_mutually_exclusive_group()
    group.add_argument("--constrained", action="store_true", default=True)
    group.add_argument("--unconstrained", action="store_true", default=False)
    run.add_argument("--lambda", dest="penalty", type=float, default=None,
                     help="penalty weight (defaults to the per-case table)")
    run.add_argument("--profile", choices=("desk", "paper"), default="desk")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None)
    run.add_argument("--ode-grid", type=int, default=1000)
    run.set_defaults(func=_cmd_run_case)

    chk = sub.add_parser("check", help="evaluate solvability conditions")
    chk.add_argument("config")
    chk.add_argument("--strict", action="store_true",
                     help="also require the informational conditions")
    chk.set_defaults(func=_cmd_check)

    sca = sub.add_parser("nplayer-scaling", help="finite-pool gap decay study")
    sca.add_argument("config")
    sca.add_argument("--schedule", default="10,40,160,640")
    sca.add_argument("--mc", type=int, default=500)
    sca.add_argument("--seed", type=int, default=0)
    sca.add_argument("--steps", type=int, default=100)
    sca.add_argument("--ode-grid", type=int, default=1000)
    sca.add_argument("--out", default="scaling_out")
    sca.set_defaults(func=_cmd_nplayer_scaling)

    args = parser.parse_args(argv)
    if getattr(args, "out", "") is None:
        args.out = f"case_{args.case}_out"
    try:
        return args.func(args)
    except Exception as exc:  # surface a one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
