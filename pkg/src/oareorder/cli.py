"""Command-line entry point: ``oareorder <command> --scenario case2 --seed 42 --out results/``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .digital_twin import Dataset, MlpModel, build_dataset, train
from .ga import optimize
from .harness import (ScenarioError, StageError, export_report, load_scenario, percentile_rank, run_baseline,
                      run_experiment, select_endpoints, stage, train_surrogate)
from .link_model import OAConfig, Oracle
from .reconfig import TrajectoryFitness, TransitionScenario, fitness, trajectory

log = logging.getLogger("oareorder")


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n")
    print(text)


def _model(sc, out: Path) -> MlpModel:
    path = out / "model.json"
    if path.exists():
        return MlpModel.load(path)
    _, model, _ = train_surrogate(sc)
    model.save(path)
    return model


def cmd_simulate(args) -> None:
    sc = _scenario(args)
    n = sc.link.n_oa
    gains = args.gains if args.gains else [sc.link.span_loss_db[0]] * n
    tilts = args.tilts if args.tilts else [0.0] * n
    cfg = OAConfig(tuple(gains), tuple(tilts))
    with stage("simulate"):
        cfg.check(sc.link)
        q = Oracle(sc.link, sc.current_plan)(cfg)
    _dump({"gains_db": list(cfg.gains_db), "tilts_db": list(cfg.tilts_db),
           "q_db": {str(b): v for b, v in q.loaded().items()}})


def cmd_sample(args) -> None:
    sc = _scenario(args)
    out = _out(args)
    with stage("sampling"):
        ds = build_dataset(sc.link, sc.current_plan, sc.dataset_size, np.random.default_rng(sc.seeds["sampling"]))
        ds.to_csv(out / "dataset.csv")
    print(f"wrote {ds.features.shape[0]} samples to {out / 'dataset.csv'}")


def cmd_train(args) -> None:
    sc = _scenario(args)
    out = _out(args)
    with stage("training"):
        path = out / "dataset.csv"
        if path.exists():
            ds = Dataset.from_csv(path, sc.link.bounds_matrix(), n_train=int(round(0.7 * sc.dataset_size)))
        else:
            ds = build_dataset(sc.link, sc.current_plan, sc.dataset_size, np.random.default_rng(sc.seeds["sampling"]))

        model, report = train(ds, replace(sc.train, seed=sc.seeds["training"]), n_batches=sc.plan.n_batches)
        model.save(out / "model.json")
    _dump(report.to_dict(), out / "validation.json")


def cmd_optimize(args) -> None:
    sc = _scenario(args)
    out = _out(args)
    initial, target = select_endpoints(sc)
    with stage("training"):
        model = _model(sc, out)
    with stage("ga"):

        transition = TransitionScenario(initial, target, sc.initial_loading, sc.current_plan)
        with open(out / "ga_progress.csv", "w") as fh:
            res = optimize(TrajectoryFitness(model, transition), replace(sc.ga, seed=sc.seeds["ga"]),
                           transition.n_steps, progress=fh)
        traj = trajectory(model, transition, res.best.order)
        traj.to_csv(out / "ga_dt_trajectory.csv")
    _dump({"order": list(res.best.order), "dt_fitness": asdict(res.best.fitness),
           "generations": res.generations_run, "evaluations": res.evaluations}, out / "ga_result.json")


def cmd_baseline(args) -> None:
    sc = _scenario(args)
    out = _out(args)
    initial, target = select_endpoints(sc)
    with stage("baseline"):
        oracle = Oracle(sc.link, sc.current_plan)
        stats = run_baseline(sc, oracle, initial, target, np.random.default_rng(sc.seeds["baseline"]))
        rows = []
        for metric in ("min", "mean"):
            x, c = stats.cdf(metric)
            rows += [f"{metric}_q_db,{v!r},{p!r}" for v, p in zip(x.tolist(), c.tolist())]
        (out / "baseline_cdf.csv").write_text("metric,value_db,cdf\n" + "\n".join(rows) + "\n")
        result = {"count": int(stats.min_q_db.size),
                  "worst_dip_db": float(np.max(stats.scalars[:, 0] - stats.scalars.min(axis=1)))}
        ga_file = out / "ga_result.json"
        if ga_file.exists():
            order = json.loads(ga_file.read_text())["order"]
            transition = TransitionScenario(initial, target, sc.initial_loading, sc.current_plan)
            fv = fitness(trajectory(oracle, transition, order))
            result.update(ga_order=order, min_q_percentile=percentile_rank(fv.min_q, stats.min_q_db),
                          mean_q_percentile=percentile_rank(fv.mean_q, stats.mean_q_db))
    _dump(result, out / "baseline.json")


def cmd_run(args) -> None:
    sc = _scenario(args)
    report = run_experiment(sc)
    with stage("report"):
        export_report(report, _out(args))
    s = report.summary()
    print(f"case {sc.case_id}: GA order {' '.join(map(str, report.ga_order))}")
    print(f"  min-q percentile {s['min_q_percentile']:.3f}, mean-q percentile {s['mean_q_percentile']:.3f}, "
          f"degradation prevented: {s['degradation_prevented']}")
    print(f"  surrogate validation RMSE {report.validation.val_rmse_db:.4f} dB")


def cmd_report(args) -> None:
    path = Path(args.out) / "summary.json"
    with stage("report"):
        s = json.loads(path.read_text())
    m = s["main"]
    lines = [
        f"case: {s['scenario']['case_id']}  seeds: {s['scenario']['seeds']}",
        f"GA order: {' '.join(map(str, m['ga_order']))}",
        f"replay: step0 {m['replay_step0_q_db']:.3f} dB, final {m['replay_final_q_db']:.3f} dB, "
        f"min {m['replay_min_q_db']:.3f} dB",
        f"percentiles vs {s['baseline']['count']} random orders: min {s['min_q_percentile']:.3f}, "
        f"mean {s['mean_q_percentile']:.3f}",
        f"degradation prevented: {s['degradation_prevented']}",
        f"baseline worst dip: {s['baseline']['worst_dip_db']:.3f} dB",
    ]
    for i, e in enumerate(s["extra_scenarios"], 1):
        lines.append(f"extra scenario {i}: prevented {e['degradation_prevented']}, dip {e['degradation_db']:.3f} dB")
    print("\n".join(lines))


COMMANDS = {
    "simulate": (cmd_simulate, "oracle Q-factors for one amplifier configuration"),
    "sample": (cmd_sample, "sample and label the surrogate training set"),
    "train": (cmd_train, "train the surrogate"),
    "optimize": (cmd_optimize, "GA search for the reconfiguration order"),
    "baseline": (cmd_baseline, "random-order baseline on the oracle"),
    "report": (cmd_report, "print the summary of an exported run"),
    "run": (cmd_run, "full pipeline with report export"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oareorder", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", default="case2", help="scenario YAML path or bundled name (case1, case2)")
        p.add_argument("--seed", type=int, default=None, help="master seed; overrides the scenario's seeds")
        p.add_argument("--out", default="results", help="output directory")
        if name == "simulate":
            p.add_argument("--gains", type=float, nargs="+", help="gain per amplifier, dB")
            p.add_argument("--tilts", type=float, nargs="+", help="tilt per amplifier, dB")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command][0](args)
    except ScenarioError as exc:
        print(f"oareorder: invalid scenario: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"oareorder: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"oareorder: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
