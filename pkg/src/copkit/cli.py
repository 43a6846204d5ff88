"""``copkit`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import List, Optional

from . import datagen, genopt, surrogate
from .pipeline import ConfigError, PipelineConfig, PipelineError, run_pipeline
from .scenario import KpiEvaluator, LayoutParams, MobilityConfig, generate_scenario
from .scenario_file import read_scenario, write_scenario


def _triple(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _add_scenario_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="scenario file")
    g.add_argument("--scenario-seed", type=int, help="generate the canonical scenario from this seed")


def _load_scenario(args):
    if args.scenario is not None:
        return read_scenario(args.scenario)
    return generate_scenario(args.scenario_seed)


def _add_grid_args(p, default_step=2.0):
    p.add_argument("--cio-step", type=float, default=default_step)
    p.add_argument("--hom-step", type=float, default=default_step)


def _add_ga_args(p):
    p.add_argument("--pop", type=int, default=100, help="population size")
    p.add_argument("--gens", type=int, default=50, help="maximum generations")
    p.add_argument("--elite", type=int, default=10, help="elite count (even)")
    p.add_argument("--sbx-eta", type=float, default=15.0)
    p.add_argument("--mutation-eta", type=float, default=20.0)
    p.add_argument("--mutation-prob", type=float, default=1.0 / 6.0)
    p.add_argument("--patience", type=int, default=20, help="stagnation patience in generations")
    p.add_argument("--seed", type=int, default=42)


def _ga_config(args) -> genopt.GaConfig:
    return genopt.GaConfig(
        population_size=args.pop,
        max_generations=args.gens,
        elite_count=args.elite,
        sbx_eta=args.sbx_eta,
        mutation_eta=args.mutation_eta,
        mutation_prob=args.mutation_prob,
        seed=args.seed,
        stagnation_patience=args.patience,
    )


def cmd_generate(args) -> int:
    layout = LayoutParams(n_users=args.users, inter_site_distance_m=args.isd)
    write_scenario(generate_scenario(args.seed, layout=layout), args.out)
    return 0


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    report = KpiEvaluator(scenario).evaluate(MobilityConfig(args.cio, args.hom))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ue_id", "serving_sector_id", "sinr_db"])
        for uid, serving in sorted(report.serving_by_user.items()):
            sinr = report.per_user_sinr_db.get(uid)
            w.writerow([uid, "" if serving is None else serving, "" if sinr is None else f"{sinr:.6f}"])
    print(f"mean_sinr_db={report.mean_sinr_db:.6f} capacity={report.capacity:.6f} outage_count={report.outage_count}")
    return 0


def cmd_sweep(args) -> int:
    grid = datagen.ParameterGrid.with_steps(args.cio_step, args.hom_step)
    ds = datagen.run_sweep(_load_scenario(args), grid, jobs=args.jobs)
    if args.fraction < 1.0:
        ds = datagen.subsample(ds, args.fraction, args.seed)
    datagen.write_csv(ds, args.out)
    return 0


def cmd_train(args) -> int:
    ds = datagen.read_csv(args.data)
    table = None
    if args.model == "external":
        if not args.predictions:
            raise ValueError("--model external needs --predictions")
        table = surrogate.read_external_table(args.predictions)
    gbrt = dict(
        n_trees=args.n_trees, max_depth=args.max_depth, learning_rate=args.learning_rate, l2_lambda=args.l2_lambda
    )
    trained = surrogate.train_model(
        ds, args.model, args.fraction, args.seed, args.test_fraction, args.k, gbrt, table
    )
    surrogate.save_model(trained, args.out)
    if args.report:
        surrogate.write_reports([trained.report], args.report)
    r = trained.report
    print(f"{r.model_name}: rmse_train={r.rmse_train:.6f} rmse_test={r.rmse_test:.6f} n_train={r.n_train}")
    return 0


def cmd_optimize(args) -> int:
    trained = surrogate.load_model(args.model)
    grid = None
    if args.lattice_cio_step is not None or args.lattice_hom_step is not None:
        grid = datagen.ParameterGrid.with_steps(args.lattice_cio_step or 2.0, args.lattice_hom_step or 2.0)
    run = genopt.run_ga(genopt.surrogate_fitness(trained), _ga_config(args), grid=grid)
    genopt.write_best(run.best.genes, run.best.fitness, run.total_evaluations, args.out)
    if args.trace:
        genopt.write_trace(run, args.trace)
    print(f"best_fitness={run.best.fitness:.6f} evaluations={run.total_evaluations} stopped_by={run.stopped_by}")
    return 0


def cmd_bruteforce(args) -> int:
    trained = surrogate.load_model(args.model)
    grid = datagen.ParameterGrid.with_steps(args.cio_step, args.hom_step)
    res = genopt.brute_force(genopt.surrogate_fitness(trained), grid)
    genopt.write_best(res.best_config.as_vector(), res.best_fitness, res.evaluations, args.out)
    if args.trace:
        genopt.write_convergence(res.trace, args.trace)
    print(f"best_fitness={res.best_fitness:.6f} evaluations={res.evaluations}")
    return 0


def cmd_compare(args) -> int:
    trained = surrogate.load_model(args.model)
    grid = datagen.ParameterGrid.with_steps(args.cio_step, args.hom_step)
    cmp = genopt.compare(genopt.surrogate_fitness(trained), grid, _ga_config(args), on_lattice=not args.continuous)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "best_fitness", "evaluations"] + genopt.GENE_HEADER)
        w.writerow(["brute_force", f"{cmp.brute.best_fitness:.6f}", cmp.brute.evaluations]
                   + [f"{g:.6f}" for g in cmp.brute.best_config.as_vector()])
        w.writerow(["ga", f"{cmp.ga_best_raw:.6f}", cmp.ga.total_evaluations]
                   + [f"{g:.6f}" for g in cmp.ga.best.genes])
        w.writerow(["ga_projected", f"{cmp.ga_best_projected:.6f}", cmp.ga.total_evaluations]
                   + [f"{g:.6f}" for g in cmp.ga_projected_genes])
    if args.ga_trace:
        genopt.write_convergence([(t.evaluations, t.best_fitness) for t in cmp.ga.trace], args.ga_trace)
    if args.bf_trace:
        genopt.write_convergence(cmp.brute.trace, args.bf_trace)
    print(f"gap={cmp.gap:.6f} speedup={cmp.speedup:.1f}x")
    return 0


def cmd_pipeline(args) -> int:
    if args.config:
        cfg = PipelineConfig.from_json(args.config)
        if args.out_dir:
            cfg.out_dir = args.out_dir
    else:
        if not args.out_dir:
            raise ConfigError("--out-dir is required without --config")
        cfg = PipelineConfig(
            out_dir=args.out_dir,
            scenario_file=args.scenario,
            scenario_seed=args.scenario_seed,
            cio_step=args.cio_step,
            hom_step=args.hom_step,
            model=args.model,
            fraction=args.fraction,
            population=args.pop,
            generations=args.gens,
            elite_count=args.elite,
            patience=args.patience,
            on_lattice=args.on_lattice,
            seed=args.seed,
            jobs=args.jobs,
        )
    paths = run_pipeline(cfg)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copkit", description="CIO/HOM mobility parameter optimisation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    jobs_default = datagen.default_jobs()

    p = sub.add_parser("generate", help="write a generated scenario file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--users", type=int, default=356)
    p.add_argument("--isd", type=float, default=500.0, help="inter-site distance, m")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="KPI of one CIO/HOM setting")
    _add_scenario_args(p)
    p.add_argument("--cio", type=_triple, required=True, help="a,b,c (dB); write --cio=-10,0,5 when the first value is negative")
    p.add_argument("--hom", type=_triple, required=True, help="d,e,f (dB)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="evaluate the KPI over a CIO x HOM grid")
    _add_scenario_args(p)
    _add_grid_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="subsample seed")
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="fit a surrogate model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=surrogate.FAMILIES, required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2-lambda", type=float, default=1.0)
    p.add_argument("--predictions", help="external prediction table (CSV) for --model external")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="GA over a trained surrogate")
    p.add_argument("--model", required=True)
    _add_ga_args(p)
    p.add_argument("--lattice-cio-step", type=float)
    p.add_argument("--lattice-hom-step", type=float)
    p.add_argument("--trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bruteforce", help="exhaustive grid search over a trained surrogate")
    p.add_argument("--model", required=True)
    _add_grid_args(p)
    p.add_argument("--trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bruteforce)

    p = sub.add_parser("compare", help="GA versus brute force on the same surrogate")
    p.add_argument("--model", required=True)
    _add_grid_args(p)
    _add_ga_args(p)
    p.add_argument("--continuous", action="store_true", help="GA searches the continuous box")
    p.add_argument("--ga-trace")
    p.add_argument("--bf-trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="scenario -> sweep -> train -> optimize")
    p.add_argument("--config", help="JSON pipeline config")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scenario")
    g.add_argument("--scenario-seed", type=int)
    p.add_argument("--out-dir")
    _add_grid_args(p)
    p.add_argument("--model", choices=("linear", "knn", "gbrt"), default="gbrt")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--pop", type=int, default=100)
    p.add_argument("--gens", type=int, default=50)
    p.add_argument("--elite", type=int, default=10)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--on-lattice", action="store_true", help="GA searches the sweep lattice")
    p.add_argument("--seed", type=int, default=42, help="global seed")
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"copkit: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError) as exc:
        print(f"copkit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
