"""Command-line entry points.

Subcommands: gen (instances), solve (exact solver), ed (dense oracle),
run (SSE + exchange ensemble), aggregate, fit (solver scaling), figures.
Exit codes: 0 success, 2 validation error, 3 runtime error, 4 budget
exhaustion.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, ed, solver
from .estimators import CSV_COLUMNS
from .experiment import (AnalysisParams, EnsembleParams, ExperimentConfig,
                         FitDiverged, InsufficientSamples, SSEParams,
                         aggregate, emit_figures, fit_scaling, format_float,
                         instance_seed_for, run_ensemble, scaling_steps,
                         write_dict_csv)
from .graphs import (Discarded, Graph, MISInstance, generate_unique_instance)
from .hamiltonian import build_problem
from .solver import BudgetExceeded, RecursionBudgetExceeded

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_BUDGET = 4


def _add_common(p):
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=str, default="out")


def cmd_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    reasons = {}
    for idx in range(args.count):
        seed = instance_seed_for(args.seed, args.n, idx)
        inst, discards = generate_unique_instance(
            args.n, args.degree, seed, solution_cap=args.cap)
        for r in discards:
            reasons[r] = reasons.get(r, 0) + 1
        path = os.path.join(args.out, f"inst_N{args.n:03d}_s{idx:05d}.json")
        with open(path, "w") as fh:
            fh.write(inst.to_json())
    total_discards = sum(reasons.values())
    print(f"generated {args.count} instances (n={args.n}, degree={args.degree}) "
          f"with {total_discards} discarded attempts")
    for r, c in sorted(reasons.items()):
        print(f"  discard[{r}] = {c}")
    return EXIT_OK


def _load_graph(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    g = Graph.from_edges(doc["n"], [tuple(e) for e in doc["edges"]])
    inst = MISInstance.from_json(json.dumps(doc)) if "answer" in doc else None
    return g, inst


def cmd_solve(args) -> int:
    g, _ = _load_graph(args.infile)
    if args.enumerate:
        size, sols = solver.enumerate_solutions(g, solution_cap=args.cap)
        doc = {"mis_size": size, "count": len(sols),
               "solutions": [[int(b) for b in s] for s in sols]}
    else:
        res = solver.solve_mis(g, branch=args.branch, seed=args.seed,
                               budget=args.budget)
        doc = {"mis_size": res.mis_size, "steps": res.steps,
               "config": [int(b) for b in res.config]}
    json.dump(doc, sys.stdout)
    print()
    return EXIT_OK


def _parse_lambdas(spec: str):
    if spec.startswith("grid:"):
        _, lo, hi, cnt = spec.split(":")
        return np.linspace(float(lo), float(hi), int(cnt))
    return np.array([float(t) for t in spec.split(",")])


def cmd_ed(args) -> int:
    g, inst = _load_graph(args.infile)
    if inst is None:
        raise ValueError("ed needs an instance file with an answer")
    ham = build_problem(g, c=args.penalty)
    beta = args.beta if args.beta > 0 else 3.5 * g.n
    lams = _parse_lambdas(args.lambdas)
    if args.dump_matrix:
        if g.n > 12:
            raise ValueError("matrix dump capped at n=12")
        mats = {f"lam_{lam:.6f}": ed.build_dense(ham, float(lam)) for lam in lams}
        np.savez(args.dump_matrix, **mats)
    name = os.path.splitext(os.path.basename(args.infile))[0]
    cols = list(CSV_COLUMNS) + ["E0", "gap"]
    w = csv.writer(sys.stdout)
    w.writerow(cols)
    for lam in lams:
        lam = float(lam)
        energy, q, p_ans = ed.thermal_observables(ham, inst.answer, lam, beta)
        chif = ed.chi_f_exact(ham, lam, beta) if args.chif else float("nan")
        if args.gap:
            evals = np.linalg.eigvalsh(ed.build_dense(ham, lam))
            e0, gap = float(evals[0]), float(evals[1] - evals[0])
        else:
            e0, gap = float("nan"), float("nan")
        from .hamiltonian import build_operator_table
        table = build_operator_table(ham, lam)
        n_mean = beta * (table.constant - energy)
        row = {"instance_id": name, "lambda": lam, "q": q, "q_err": 0.0,
               "chiF": chif, "chiF_err": 0.0, "p_ans": p_ans, "p_ans_err": 0.0,
               "energy": energy, "energy_err": 0.0, "n_mean": n_mean,
               "samples": 0, "E0": e0, "gap": gap}
        w.writerow([format_float(row[c]) for c in cols])
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_ini(args.config)
    else:
        cfg = ExperimentConfig()
    ens = cfg.ensemble
    sse = cfg.sse
    if args.sizes:
        ens = EnsembleParams(sizes=tuple(int(t) for t in args.sizes.split(",")),
                             samples=args.samples, degree=args.degree,
                             seed=args.seed, solution_cap=ens.solution_cap,
                             max_attempts=ens.max_attempts)
    overrides = {}
    for key in ("mcs", "therm", "bins", "replicas", "exchange_every"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    for key, attr in (("beta_mult", "beta_mult"), ("grid_low", "grid_low"),
                      ("grid_high", "grid_high")):
        v = getattr(args, attr)
        if v is not None:
            overrides[key] = v
    if overrides:
        from dataclasses import replace
        sse = replace(sse, **overrides)
    return ExperimentConfig(ensemble=ens, sse=sse, analysis=cfg.analysis)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    manifest = run_ensemble(cfg, args.out, workers=args.workers,
                            checkpoint_every=args.checkpoint_every)
    done = sum(1 for f in manifest["samples"] if not f.get("skipped"))
    skipped = len(manifest["samples"]) - done
    print(f"run complete: {done} samples simulated, {skipped} already present, "
          f"store digest {manifest['config_digest']}")
    for frag in manifest["samples"]:
        for stack in frag.get("low_acceptance") or []:
            for pair, rate in stack:
                print(f"  warning: {frag['instance_id']} exchange pair {pair} "
                      f"acceptance {rate:.3f} below threshold")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    agg_rows, peaks = aggregate(args.store, bootstrap_b=args.bootstrap,
                                seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    cols = ("n", "lambda", "samples", "q_mean", "q_err", "chiF_mean", "chiF_err",
            "chiF_over_n_mean", "chiF_over_n_err", "p_ans_mean", "p_ans_err",
            "energy_mean", "energy_err", "s_ans_over_n_mean", "s_ans_zero_hits")
    write_dict_csv(os.path.join(args.out, "aggregated.csv"), agg_rows, cols)
    write_dict_csv(os.path.join(args.out, "chif_peaks.csv"), peaks,
                   ("n", "lambda_peak", "peak_chiF_over_n", "peak_err",
                    "lambda_peak_err"))
    print(f"aggregated {len(agg_rows)} (n, lambda) points; "
          f"peaks for {len(peaks)} sizes")
    return EXIT_OK


def cmd_fit(args) -> int:
    sizes = tuple(int(t) for t in args.sizes.split(","))
    steps = scaling_steps(sizes, args.samples, args.degree, args.seed,
                          args.ensemble, branch=args.branch,
                          budget=args.budget)
    os.makedirs(args.out, exist_ok=True)
    rows = [{"n": n, "sample": i, "steps": int(s)}
            for n in sizes for i, s in enumerate(steps[n])]
    write_dict_csv(os.path.join(args.out, f"steps_{args.ensemble}.csv"), rows,
                   ("n", "sample", "steps"))
    stretched, logfit = fit_scaling(steps, bootstrap_b=args.bootstrap,
                                    seed=args.seed)
    doc = {
        "ensemble": args.ensemble,
        "sizes": list(sizes),
        "samples": args.samples,
        "branch": args.branch,
        "log_medians": {str(n): float(np.log(np.median(steps[n]))) for n in sizes},
        "stretched": {"params": stretched.params, "errors": stretched.errors,
                      "residual_sum": stretched.residual_sum},
        "logarithmic": {"params": logfit.params, "errors": logfit.errors,
                        "residual_sum": logfit.residual_sum},
    }
    with open(os.path.join(args.out, f"fits_{args.ensemble}.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    a, b, c = stretched.params
    print(f"{args.ensemble}: stretched exponent b = {b:.3f} +- {stretched.errors[1]:.3f} "
          f"(residual {stretched.residual_sum:.4f} vs logarithmic "
          f"{logfit.residual_sum:.4f})")
    if stretched.residual_sum >= logfit.residual_sum:
        print("  note: logarithmic model fits at least as well on this data")
    return EXIT_OK


def cmd_figures(args) -> int:
    agg_rows, peaks = emit_figures(args.store, args.out,
                                   bootstrap_b=args.bootstrap, seed=args.seed)
    print(f"figure data written to {args.out} ({len(agg_rows)} aggregated points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qamis",
                                 description="Quantum-annealing equilibrium "
                                             "lab for unique-solution MIS")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate unique-solution instances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--degree", type=float, default=3.0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--cap", type=int, default=solver.DEFAULT_SOLUTION_CAP)
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="exact solver on one graph/instance file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--enumerate", action="store_true")
    p.add_argument("--branch", choices=("max-degree", "random"),
                   default="max-degree")
    p.add_argument("--budget", type=int, default=solver.DEFAULT_STEP_BUDGET)
    p.add_argument("--cap", type=int, default=solver.DEFAULT_SOLUTION_CAP)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ed", help="dense oracle observables for one instance")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lambdas", type=str, default="grid:0.05:0.95:8")
    p.add_argument("--beta", type=float, default=-1.0)
    p.add_argument("--penalty", type=float, default=2.0)
    p.add_argument("--gap", action="store_true")
    p.add_argument("--chif", action="store_true")
    p.add_argument("--dump-matrix", type=str, default="")
    p.set_defaults(func=cmd_ed)

    p = sub.add_parser("run", help="SSE + exchange runs over an ensemble")
    p.add_argument("--config", type=str, default="")
    p.add_argument("--sizes", type=str, default="")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--degree", type=float, default=3.0)
    p.add_argument("--mcs", type=int, default=None)
    p.add_argument("--therm", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--beta-mult", dest="beta_mult", type=float, default=None)
    p.add_argument("--grid-low", dest="grid_low", type=float, default=None)
    p.add_argument("--grid-high", dest="grid_high", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--exchange-every", dest="exchange_every", type=int,
                   default=None)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   default=0)
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="sample means with bootstrap errors")
    p.add_argument("--store", type=str, required=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit", help="solver-scaling study and model fits")
    p.add_argument("--ensemble", choices=("er", "unique"), required=True)
    p.add_argument("--sizes", type=str, default="20,40,60,80,100,120")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--degree", type=float, default=3.0)
    p.add_argument("--branch", choices=("max-degree", "random"),
                   default="random")
    p.add_argument("--budget", type=int, default=solver.DEFAULT_STEP_BUDGET)
    p.add_argument("--bootstrap", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("figures", help="plot-ready CSVs from a result store")
    p.add_argument("--store", type=str, required=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_figures)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, InsufficientSamples) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BudgetExceeded, RecursionBudgetExceeded, Discarded) as exc:
        print(f"budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except FitDiverged as exc:
        print(f"fit diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
