"""Command line entry point.

    ebrpca run --preset fig1-desk --out-dir results/fig1
    ebrpca run --config sweep.ini --trials 3 --solvers EB,PCP
    ebrpca decompose Y.csv --solver eb --out-dir out/
    ebrpca presets

Exit status: 0 on success, 1 on configuration errors, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import eb, harness, pcp
from .model import Mode, RpcaError, RpcaProblem, SolverOptions, read_matrix, write_matrix

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ebrpca", description="Empirical Bayesian robust PCA experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a solver sweep")
    run.add_argument("--config", help="INI file with [experiment], [eb], [pcp] sections")
    run.add_argument("--preset", help="named preset, see `ebrpca presets`")
    run.add_argument("--experiment", choices=harness.KINDS, help="experiment kind")
    run.add_argument("--out-dir")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--solvers", help="comma separated subset of EB,MAP,PCP")
    run.add_argument("--max-iters", type=int, help="EB/MAP iteration cap")
    run.add_argument("--lambda", dest="lam", type=float, help="noise variance")
    run.add_argument("--workers", type=int, help="worker processes (capped by RPCA_THREADS)")

    dec = sub.add_parser("decompose", help="decompose one CSV matrix")
    dec.add_argument("input")
    dec.add_argument("--solver", choices=["eb", "map", "pcp"], default="eb")
    dec.add_argument("--lambda", dest="lam", type=float, default=1e-6)
    dec.add_argument("--max-iters", type=int, default=100)
    dec.add_argument("--mask", help="CSV of 0/1 known-corruption flags (completion mode)")
    dec.add_argument("--out-dir", default=".")

    sub.add_parser("presets", help="list presets")
    return ap


def _spec_from_args(args) -> harness.ExperimentSpec:
    cfg, eb_cfg, pcp_cfg = {}, {}, {}
    if args.preset:
        cfg.update(harness.preset(args.preset))
    if args.config:
        c, e, p = harness.read_config(args.config)
        cfg.update(c)
        eb_cfg.update(e)
        pcp_cfg.update(p)
    if args.experiment:
        cfg["kind"] = args.experiment
    if "kind" not in cfg:
        raise harness.ConfigError("need --preset, --config or --experiment")
    for key, val in (("seed", args.seed), ("trials", args.trials), ("solvers", args.solvers),
                     ("lambda", args.lam), ("out_dir", args.out_dir)):
        if val is not None:
            cfg[key] = val
    if args.max_iters is not None:
        eb_cfg["max_iterations"] = args.max_iters
    return harness.build_spec(cfg, eb_cfg, pcp_cfg)


def _cmd_run(args) -> int:
    try:
        spec = _spec_from_args(args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (harness.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = spec.out_dir or f"results/{spec.name}"
    workers = harness.default_workers() if args.workers is None else min(args.workers, harness.default_workers())
    results = harness.run_experiment(spec, workers)
    summary = harness.aggregate(results)
    meta = {"name": spec.name, "kind": spec.kind, "trials": spec.trials, "seed_base": spec.seed_base,
            "solvers": list(spec.solvers), "lambda": spec.lam,
            "points": [asdict(p) for p in spec.points]}
    try:
        paths = harness.emit(results, summary, out_dir, spec.x_axis, meta)
    except harness.EmitError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for s in summary:
        print(f"{s.solver:>3}  m={s.m} n={s.n} r={s.rank} rho={s.rho:g}  "
              f"mse={s.mse_mean:.4g}  angle={s.angle_mean:.3f}  success={s.success_rate:.2f}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _cmd_decompose(args) -> int:
    try:
        Y = read_matrix(args.input)
        mask = read_matrix(args.mask).astype(bool) if args.mask else None
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RpcaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        problem = RpcaProblem(Y, args.lam, mask)
        transposed = problem.shape[0] > problem.shape[1]
        if args.solver == "pcp":
            dec = pcp.solve_pcp(problem)
        else:
            mode = Mode.MAP if args.solver == "map" else Mode.COMPLETION if mask is not None else Mode.EMPIRICAL_BAYES
            opts = SolverOptions(max_iterations=args.max_iters, mode=mode)
            dec = eb.solve(problem.transpose() if transposed else problem, opts)
            if transposed:
                dec = dec.transpose()
    except (RpcaError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        src = {"input": str(args.input), "solver": args.solver}
        write_matrix(out / "X_hat.csv", dec.X_hat, src)
        write_matrix(out / "S_hat.csv", dec.S_hat, src)
        (out / "diagnostics.json").write_text(dec.diagnostics_json())
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{args.solver}: {dec.iterations} iterations, converged={dec.converged}; wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name, cfg in harness.PRESETS.items():
            print(f"{name:12s} {cfg}")
        return EXIT_OK
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_decompose(args)


if __name__ == "__main__":
    sys.exit(main())
