"""Scenario files, end-to-end pipeline, random-order baseline and report export."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .digital_twin import Dataset, MlpModel, TrainConfig, ValidationReport, build_dataset, train
from .ga import GaParams, GaResult, optimize
from .link_model import Q_OFFSET_16QAM_DB, ChannelPlan, FiberSpan, LinkSpec, OAConfig, Oracle
from .reconfig import (FitnessValue, TrajectoryFitness, Trajectory, TransitionScenario, fitness,
                       select_best_config, trajectory)

log = logging.getLogger(__name__)

DEGRADATION_TOL_DB = 0.1
STAGES = ("select_initial", "select_target", "sampling", "training", "ga", "baseline", "extra_initial")
BUNDLED = ("case1", "case2")


class ScenarioError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def derive_seeds(master: int) -> dict[str, int]:
    """One independent integer seed per pipeline stage."""
    children = np.random.SeedSequence(master).spawn(len(STAGES))
    return {name: int(c.generate_state(1, dtype=np.uint32)[0]) for name, c in zip(STAGES, children)}


@dataclass(frozen=True)
class ScenarioFile:
    case_id: str
    link: LinkSpec
    plan: ChannelPlan  # grid and launch settings; loading is set per stage
    initial_loading: frozenset
    current_loading: frozenset
    candidate_count: int = 500
    baseline_count: int = 100
    dataset_size: int = 1000
    extra_initial_scenarios: int = 3
    seeds: dict = field(default_factory=lambda: derive_seeds(0))
    train: TrainConfig = TrainConfig()
    ga: GaParams = GaParams()

    @property
    def initial_plan(self) -> ChannelPlan:
        return self.plan.with_loading(self.initial_loading, self.initial_loading)

    @property
    def current_plan(self) -> ChannelPlan:
        return self.plan.with_loading(self.current_loading, self.initial_loading)

    def with_seed(self, master: int) -> "ScenarioFile":
        return replace(self, seeds=derive_seeds(master))

    def to_dict(self) -> dict[str, Any]:
        link = self.link
        return {
            "case_id": self.case_id,
            "link": {
                "spans": [{"length_km": s.length_km, "loss_db_per_km": s.loss_db_per_km,
                           "nli_coeff_per_w2": s.nli_coeff} for s in link.spans],
                "oa_roles": list(link.oa_roles),
                "nf_db": link.nf_db,
                "center_freq_thz": link.center_freq_thz,
                "input_loss_db": link.input_loss_db,
                "gain_bounds_db": [list(b) for b in link.gain_bounds_db],
                "tilt_bounds_db": [list(b) for b in link.tilt_bounds_db],
            },
            "channels": {
                "n_batches": self.plan.n_batches,
                "channels_per_batch": self.plan.channels_per_batch,
                "spacing_ghz": self.plan.spacing_ghz,
                "symbol_rate_gbaud": self.plan.symbol_rate_gbaud,
                "launch_power_dbm": self.plan.launch_power_dbm,
            },
            "initial_loading": sorted(self.initial_loading),
            "current_loading": sorted(self.current_loading),
            "candidate_count": self.candidate_count,
            "baseline_count": self.baseline_count,
            "dataset_size": self.dataset_size,
            "extra_initial_scenarios": self.extra_initial_scenarios,
            "seeds": dict(self.seeds),
            "train": asdict(self.train),
            "ga": asdict(self.ga),
        }


def _get(d: dict, key: str, default=None, required: bool = False, where: str = ""):
    name = f"{where}{key}"
    if not isinstance(d, dict):
        raise ScenarioError(where.rstrip(".") or "<root>", "expected a mapping")
    if key not in d:
        if required:
            raise ScenarioError(name, "missing required field")
        return default
    return d[key]


def _build(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(name, str(exc)) from exc


def parse_scenario(doc: dict) -> ScenarioFile:
    link_doc = _get(doc, "link", required=True)
    spans_doc = _get(link_doc, "spans", required=True, where="link.")
    if not isinstance(spans_doc, list) or not spans_doc:
        raise ScenarioError("spans", "must be a nonempty list")
    spans = []
    for i, s in enumerate(spans_doc):
        where = f"link.spans[{i}]."
        spans.append(_build(f"spans[{i}]", FiberSpan,
                            length_km=float(_get(s, "length_km", 80.0, where=where)),
                            loss_db_per_km=float(_get(s, "loss_db_per_km", 0.2, where=where)),
                            nli_coeff=float(_get(s, "nli_coeff_per_w2", 1000.0, where=where))))
    link = _build("link", LinkSpec, spans=tuple(spans),
                  nf_db=float(_get(link_doc, "nf_db", 5.0)),
                  center_freq_thz=float(_get(link_doc, "center_freq_thz", 193.4)),
                  input_loss_db=float(_get(link_doc, "input_loss_db", 16.0)),
                  gain_bounds_db=_get(link_doc, "gain_bounds_db", [14.5, 17.5]),
                  tilt_bounds_db=_get(link_doc, "tilt_bounds_db", [-1.0, 1.0]))

    ch = _get(doc, "channels", {}) or {}
    n_batches = int(_get(ch, "n_batches", 6))
    current = frozenset(_get(doc, "current_loading", list(range(n_batches))))
    initial = frozenset(_get(doc, "initial_loading", required=True))
    plan = _build("channels", ChannelPlan,
                  n_batches=n_batches,
                  channels_per_batch=int(_get(ch, "channels_per_batch", 7)),
                  spacing_ghz=float(_get(ch, "spacing_ghz", 75.0)),
                  symbol_rate_gbaud=float(_get(ch, "symbol_rate_gbaud", 63.9)),
                  launch_power_dbm=float(_get(ch, "launch_power_dbm", 0.0)),
                  loaded_batches=current)
    if not initial:
        raise ScenarioError("initial_loading", "must be nonempty")
    if not initial < current:
        raise ScenarioError("initial_loading", "must be a proper subset of current_loading")

    counts = {}
    for key, default in (("candidate_count", 500), ("baseline_count", 100), ("dataset_size", 1000),
                         ("extra_initial_scenarios", 3)):
        counts[key] = int(_get(doc, key, default))
        if counts[key] < (0 if key == "extra_initial_scenarios" else 1):
            raise ScenarioError(key, "count out of range")
    if counts["dataset_size"] < 2:
        raise ScenarioError("dataset_size", "need at least 2 samples for a train/validation split")

    seeds = derive_seeds(int(_get(doc, "seed", 0)))
    explicit = _get(doc, "seeds", {}) or {}
    unknown = set(explicit) - set(STAGES)
    if unknown:
        raise ScenarioError("seeds", f"unknown stage(s) {sorted(unknown)}")
    seeds.update({k: int(v) for k, v in explicit.items()})

    train_cfg = _build("train", TrainConfig, **(_get(doc, "train", {}) or {}))
    ga_params = _build("ga", GaParams, **(_get(doc, "ga", {}) or {}))
    return ScenarioFile(case_id=str(_get(doc, "case_id", "custom")), link=link, plan=plan,
                        initial_loading=initial, current_loading=current, seeds=seeds,
                        train=train_cfg, ga=ga_params, **counts)


def load_scenario(path) -> ScenarioFile:
    """Load a scenario from a YAML file, or a bundled one by name ('case1', 'case2')."""
    if str(path) in BUNDLED:
        text = resources.files("oareorder.scenarios").joinpath(f"{path}.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario must be a mapping")
    return parse_scenario(doc)


def percentile_rank(value: float, samples) -> float:
    """Fraction of samples strictly below ``value``."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    return float(np.count_nonzero(samples < value) / samples.size)


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


@dataclass
class BaselineStats:
    orders: np.ndarray  # (count, 2N)
    scalars: np.ndarray  # (count, 2N+1)
    min_q_db: np.ndarray
    mean_q_db: np.ndarray

    def cdf(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        return empirical_cdf(self.min_q_db if metric == "min" else self.mean_q_db)


def run_baseline(scenario: ScenarioFile, oracle, initial: OAConfig, target: OAConfig,
                 rng: np.random.Generator) -> BaselineStats:
    """Replay ``baseline_count`` uniformly random orders on the oracle."""
    transition = TransitionScenario(initial, target, scenario.initial_loading, scenario.current_plan)
    n_steps = transition.n_steps
    orders = np.array([rng.permutation(n_steps) + 1 for _ in range(scenario.baseline_count)])
    scalars = TrajectoryFitness(oracle, transition).scalars(orders)
    values = [FitnessValue.from_scalars(row) for row in scalars]
    return BaselineStats(orders, scalars, np.array([v.min_q for v in values]), np.array([v.mean_q for v in values]))


@dataclass
class TransitionResult:
    initial: OAConfig
    ga: GaResult
    dt_trajectory: Trajectory
    replay: Trajectory
    replay_fitness: FitnessValue

    @property
    def degradation_db(self) -> float:
        """Depth of the worst replayed dip below the step-0 value (>= 0)."""
        s = self.replay.scalar_per_state
        return float(max(0.0, s[0] - s.min()))

    @property
    def degradation_prevented(self) -> bool:
        s = self.replay.scalar_per_state
        return bool(s.min() >= s[0] - DEGRADATION_TOL_DB)


@dataclass
class ExperimentReport:
    scenario: ScenarioFile
    initial: OAConfig
    target: OAConfig
    validation: ValidationReport
    main: TransitionResult
    baseline: BaselineStats
    min_percentile: float
    mean_percentile: float
    extra: list[TransitionResult] = field(default_factory=list)

    @property
    def degradation_prevented(self) -> bool:
        return self.main.degradation_prevented

    @property
    def ga_order(self) -> tuple[int, ...]:
        return self.main.ga.best.order

    def summary(self) -> dict[str, Any]:
        def cfg(c: OAConfig):
            return {"gains_db": list(c.gains_db), "tilts_db": list(c.tilts_db)}

        def transition(t: TransitionResult):
            s = t.replay.scalar_per_state
            return {
                "initial_config": cfg(t.initial),
                "ga_order": list(t.ga.best.order),
                "ga_generations": t.ga.generations_run,
                "ga_evaluations": t.ga.evaluations,
                "dt_fitness": asdict(t.ga.best.fitness),
                "replay_fitness": asdict(t.replay_fitness),
                "replay_step0_q_db": float(s[0]),
                "replay_final_q_db": float(s[-1]),
                "replay_min_q_db": float(s.min()),
                "degradation_db": t.degradation_db,
                "degradation_prevented": t.degradation_prevented,
            }

        b = self.baseline
        return {
            "scenario": self.scenario.to_dict(),
            "decisions": {
                "q_mapping": f"GSNR_dB - {Q_OFFSET_16QAM_DB}",
                "config_selection": "max over candidates of min oracle q over loaded batches",
                "fitness": "mean over all 2N+1 states + min over intermediate states of the min-over-monitored-batches q",
                "monitored_batches": sorted(self.scenario.initial_loading),
                "degradation_tolerance_db": DEGRADATION_TOL_DB,
                "percentile_rank": "fraction of baseline samples strictly below",
                "baseline_truth": "oracle replay",
            },
            "target_config": cfg(self.target),
            "surrogate_validation": self.validation.to_dict(),
            "main": transition(self.main),
            "baseline": {
                "count": int(b.min_q_db.size),
                "min_q_db": {"min": float(b.min_q_db.min()), "median": float(np.median(b.min_q_db)),
                             "max": float(b.min_q_db.max())},
                "mean_q_db": {"min": float(b.mean_q_db.min()), "median": float(np.median(b.mean_q_db)),
                              "max": float(b.mean_q_db.max())},
                "worst_dip_db": float(np.max(b.scalars[:, 0] - b.min_q_db)),
            },
            "min_q_percentile": self.min_percentile,
            "mean_q_percentile": self.mean_percentile,
            "degradation_prevented": self.degradation_prevented,
            "extra_scenarios": [transition(t) for t in self.extra],
        }


def _solve_transition(scenario: ScenarioFile, model: MlpModel, oracle: Oracle, initial: OAConfig,
                      target: OAConfig, ga_seed: int) -> TransitionResult:
    transition = TransitionScenario(initial, target, scenario.initial_loading, scenario.current_plan)
    ga = optimize(TrajectoryFitness(model, transition), replace(scenario.ga, seed=ga_seed), transition.n_steps)
    order = ga.best.order
    replay = trajectory(oracle, transition, order)
    return TransitionResult(initial, ga, trajectory(model, transition, order), replay, fitness(replay))


def train_surrogate(scenario: ScenarioFile) -> tuple[Dataset, MlpModel, ValidationReport]:
    with stage("sampling"):
        dataset = build_dataset(scenario.link, scenario.current_plan, scenario.dataset_size,
                                np.random.default_rng(scenario.seeds["sampling"]))
    with stage("training"):
        model, report = train(dataset, replace(scenario.train, seed=scenario.seeds["training"]),
                              n_batches=scenario.plan.n_batches)
    return dataset, model, report


def select_endpoints(scenario: ScenarioFile) -> tuple[OAConfig, OAConfig]:
    link = scenario.link
    with stage("select_initial"):
        init_plan = scenario.initial_plan
        initial = select_best_config(Oracle(link, init_plan), link, init_plan, scenario.candidate_count,
                                     np.random.default_rng(scenario.seeds["select_initial"]))
    with stage("select_target"):
        cur_plan = scenario.current_plan
        target = select_best_config(Oracle(link, cur_plan), link, cur_plan, scenario.candidate_count,
                                    np.random.default_rng(scenario.seeds["select_target"]))
    return initial, target


def run_experiment(scenario: ScenarioFile, model: MlpModel | None = None,
                   validation: ValidationReport | None = None) -> ExperimentReport:
    """Select endpoints, train the surrogate, search with the GA, replay and benchmark."""
    initial, target = select_endpoints(scenario)
    if model is None:
        _, model, validation = train_surrogate(scenario)
    oracle = Oracle(scenario.link, scenario.current_plan)
    with stage("ga"):
        main = _solve_transition(scenario, model, oracle, initial, target, scenario.seeds["ga"])
    with stage("baseline"):
        baseline = run_baseline(scenario, oracle, initial, target, np.random.default_rng(scenario.seeds["baseline"]))
        min_pct = percentile_rank(main.replay_fitness.min_q, baseline.min_q_db)
        mean_pct = percentile_rank(main.replay_fitness.mean_q, baseline.mean_q_db)
    extra = []
    with stage("extra_initial"):
        rng = np.random.default_rng(scenario.seeds["extra_initial"])
        init_plan = scenario.initial_plan
        seen = {initial}
        while len(extra) < scenario.extra_initial_scenarios:
            alt = select_best_config(Oracle(scenario.link, init_plan), scenario.link, init_plan,
                                     scenario.candidate_count, rng)
            if alt in seen:
                continue
            seen.add(alt)
            extra.append(_solve_transition(scenario, model, oracle, alt, target,
                                           scenario.seeds["ga"] + len(extra) + 1))
    return ExperimentReport(scenario, initial, target, validation, main, baseline, min_pct, mean_pct, extra)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_report(report: ExperimentReport, out_dir) -> list[Path]:
    """Write trajectory CSVs, baseline distribution CSVs and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    main = report.main
    mon = main.replay.monitored
    path = out / "trajectory.csv"
    rows = []
    for k in range(len(main.replay.scalar_per_state)):
        rows.append([k, repr(float(main.replay.scalar_per_state[k]))]
                    + [repr(main.replay.q_per_state[k][b]) for b in mon]
                    + [repr(float(main.dt_trajectory.scalar_per_state[k]))])
    _write_csv(path, ["step", "scalar_q_db"] + [f"q_batch{b}_db" for b in mon] + ["dt_scalar_q_db"], rows)
    written.append(path)

    b = report.baseline
    path = out / "baseline_trajectories.csv"
    _write_csv(path, ["step"] + [f"order{i}" for i in range(b.scalars.shape[0])],
               [[k] + [repr(float(v)) for v in b.scalars[:, k]] for k in range(b.scalars.shape[1])])
    written.append(path)

    path = out / "baseline_cdf.csv"
    rows = []
    for metric in ("min", "mean"):
        x, c = b.cdf(metric)
        rows += [[f"{metric}_q_db", repr(float(v)), repr(float(p))] for v, p in zip(x, c)]
    _write_csv(path, ["metric", "value_db", "cdf"], rows)
    written.append(path)

    path = out / "baseline_histogram.csv"
    rows = []
    for metric, values in (("min_q_db", b.min_q_db), ("mean_q_db", b.mean_q_db)):
        counts, edges = np.histogram(values, bins=20)
        rows += [[metric, repr(float(lo)), repr(float(hi)), int(n)] for lo, hi, n in zip(edges[:-1], edges[1:], counts)]
    _write_csv(path, ["metric", "bin_low_db", "bin_high_db", "count"], rows)
    written.append(path)

    for i, t in enumerate(report.extra):
        path = out / f"extra{i + 1}_trajectory.csv"
        t.replay.to_csv(path)
        written.append(path)

    path = out / "orders.csv"
    _write_csv(path, ["source", "order", "min_q_db", "mean_q_db"],
               [["ga", " ".join(map(str, main.ga.best.order)), repr(main.replay_fitness.min_q),
                 repr(main.replay_fitness.mean_q)]]
               + [[f"random{i}", " ".join(map(str, o)), repr(float(mn)), repr(float(me))]
                  for i, (o, mn, me) in enumerate(zip(b.orders, b.min_q_db, b.mean_q_db))])
    written.append(path)

    path = out / "summary.json"
    path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written
