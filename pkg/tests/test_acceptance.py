"""End-to-end acceptance criteria, one test per criterion.

Each test records a one-line verdict that the terminal summary prints after
the run, whether or not the assertion itself passes.
"""

import filecmp
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import record, small_link
from oareorder.digital_twin import TrainConfig, build_dataset, grad_check, init_model, sample_vectors, train
from oareorder.ga import GaParams, brute_force_best, is_permutation, mutate, optimize, pmx, random_cuts
from oareorder.harness import load_scenario, run_baseline, run_experiment, select_endpoints, train_surrogate
from oareorder.link_model import ChannelPlan, FiberSpan, LinkSpec, OAConfig, Oracle, q_matrix, single_amp_ase_w
from oareorder.reconfig import (FitnessValue, TrajectoryFitness, TransitionScenario, intermediate_config,
                                trajectory)

PIPELINE_SEEDS = range(10)


@pytest.fixture(scope="module")
def pipeline_runs():
    base = load_scenario("case2")
    t0 = time.perf_counter()
    reports = [run_experiment(base.with_seed(s)) for s in PIPELINE_SEEDS]
    return reports, time.perf_counter() - t0


@pytest.mark.slow
def test_1_baseline_dominance(pipeline_runs):
    reports, elapsed = pipeline_runs
    n_min = sum(r.min_percentile >= 0.98 for r in reports)
    n_mean = sum(r.mean_percentile >= 0.98 for r in reports)
    ok = n_min >= 8 and n_mean >= 8 and elapsed < 300
    pcts = " ".join(f"{r.min_percentile:.2f}/{r.mean_percentile:.2f}" for r in reports)
    record("1 baseline dominance", ok,
           f"min-q pct >= 0.98 in {n_min}/10, mean-q pct >= 0.98 in {n_mean}/10, {elapsed:.0f} s [{pcts}]")
    assert ok


@pytest.mark.slow
def test_2_degradation_prevention(pipeline_runs):
    reports, _ = pipeline_runs
    n = sum(r.degradation_prevented for r in reports)
    worst = max(r.main.degradation_db for r in reports)
    record("2 degradation prevention", n >= 9, f"prevented in {n}/10 runs, deepest replayed dip {worst:.3f} dB")
    assert n >= 9


def test_3_dip_existence():
    dips = {}
    for name in ("case1", "case2"):
        sc = load_scenario(name)
        initial, target = select_endpoints(sc)
        stats = run_baseline(sc, Oracle(sc.link, sc.current_plan), initial, target,
                             np.random.default_rng(sc.seeds["baseline"]))
        dips[name] = float(np.max(stats.scalars[:, 0] - stats.scalars.min(axis=1)))
    ok = all(d >= 0.3 for d in dips.values())
    record("3 dip existence", ok, ", ".join(f"{k} worst random dip {v:.3f} dB" for k, v in dips.items()))
    assert ok


def test_4_small_instance_optimality():
    t0 = time.perf_counter()
    hits, total = {}, 0
    for n_spans in (1, 2):
        link = small_link(n_spans)
        plan = ChannelPlan(existing_batches={2, 3})
        ds = build_dataset(link, plan, 300, np.random.default_rng(n_spans))
        model, _ = train(ds, TrainConfig(hidden=16, max_epochs=60, seed=n_spans), n_batches=plan.n_batches)
        hits[link.n_oa] = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            a, b = sample_vectors(link, 2, rng)
            sc = TransitionScenario(OAConfig.from_vector(a), OAConfig.from_vector(b), frozenset({2, 3}), plan)
            fit = TrajectoryFitness(model, sc)
            res = optimize(fit, GaParams(seed=seed), sc.n_steps)
            _, best = brute_force_best(fit, sc.n_steps)
            hits[link.n_oa] += abs(res.best.fitness.value - best.value) <= 1e-9
            total += 1
    elapsed = time.perf_counter() - t0
    ok = all(h >= 9 for h in hits.values()) and elapsed < 30
    record("4 small-instance optimality", ok,
           ", ".join(f"N={n}: {h}/10" for n, h in hits.items()) + f", {elapsed:.1f} s")
    assert ok


def test_5_surrogate_fidelity():
    sc = load_scenario("case2")
    t0 = time.perf_counter()
    ds, model, rep = train_surrogate(sc)
    elapsed = time.perf_counter() - t0
    xv, yv = ds.validation
    pred = model.forward(xv)
    rmse = float(np.sqrt(np.mean((pred - yv) ** 2)))
    rhos = [spearmanr(pred[:, j], yv[:, j])[0] for j in range(yv.shape[1])]
    ok = xv.shape[0] == 300 and rmse <= 0.1 and min(rhos) >= 0.98 and elapsed < 120
    record("5 surrogate fidelity", ok,
           f"held-out {xv.shape[0]}, RMSE {rmse:.4f} dB, min Spearman {min(rhos):.4f}, "
           f"trained in {elapsed:.1f} s ({rep.epochs_run} epochs)")
    assert ok


def test_6_gradient_correctness():
    link = LinkSpec()
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = init_model(14, 64, 6, link.bounds_matrix(), range(6), rng)
        m.b1[...] = rng.normal(0, 0.1, m.b1.shape)
        m.b2[...] = rng.normal(15, 1, m.b2.shape)
        x = rng.uniform(0, 1, (8, 14))
        y = rng.normal(15, 1, (8, 6))
        errs.append(grad_check(m, x, y))
    ok = max(errs) < 1e-4
    record("6 gradient correctness", ok, f"max relative error {max(errs):.2e} over 10 models")
    assert ok


def test_7_permutation_closure():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(10_000):
        n = 14
        a, b = tuple(rng.permutation(n) + 1), tuple(rng.permutation(n) + 1)
        ca, cb = pmx(a, b, *random_cuts(n, rng))
        for child in (ca, cb):
            bad += not is_permutation(mutate(child, rng, 0.1), n)
    same = all(pmx(a, a, *random_cuts(14, rng)) == (a, a) for a in (tuple(rng.permutation(14) + 1) for _ in range(1000)))
    ok = bad == 0 and same
    record("7 permutation closure", ok, f"{bad} invalid children in 10^4 PMX+mutation draws, identity on equal parents: {same}")
    assert ok


def test_8_structural_invariants():
    rng = np.random.default_rng(8)
    plan = ChannelPlan(existing_batches={2, 3})
    links = [small_link(n) for n in (1, 2, 6)]
    oracles = [Oracle(link, plan) for link in links]
    endpoint_ok = prefix_ok = fitness_ok = True
    for _ in range(1000):
        i = int(rng.integers(len(links)))
        link = links[i]
        a, b = sample_vectors(link, 2, rng)
        sc = TransitionScenario(OAConfig.from_vector(a), OAConfig.from_vector(b), frozenset({2, 3}), plan)
        n = sc.n_steps
        o1, o2 = tuple(rng.permutation(n) + 1), tuple(rng.permutation(n) + 1)
        k = int(rng.integers(0, n + 1))
        t1, t2 = trajectory(oracles[i], sc, o1), trajectory(oracles[i], sc, o2)
        endpoint_ok &= t1.scalar_per_state[0] == t2.scalar_per_state[0]
        endpoint_ok &= t1.scalar_per_state[-1] == t2.scalar_per_state[-1]
        prefix = list(o1[:k])
        rng.shuffle(prefix)
        prefix_ok &= intermediate_config(sc, o1, k) == intermediate_config(sc, tuple(prefix) + o1[k:], k)
        s = t1.scalar_per_state
        fv = FitnessValue.from_scalars(s)
        fitness_ok &= fv.value == float(np.mean(s)) + float(np.min(s[1:-1]))
    ok = bool(endpoint_ok and prefix_ok and fitness_ok)
    record("8 structural invariants", ok,
           f"endpoint {bool(endpoint_ok)}, prefix-set {bool(prefix_ok)}, fitness = mean + min {bool(fitness_ok)} over 10^3 probes")
    assert ok


def test_9_oracle_desk_checks():
    ase_dbm = 10 * math.log10(single_amp_ase_w(5.0, 16.0, 193.4e12, 63.9e9) / 1e-3)
    quiet = LinkSpec(spans=tuple(FiberSpan(nli_coeff=0.0) for _ in range(6)))
    plan = ChannelPlan()
    q = q_matrix(quiet, plan, OAConfig.uniform(7, 16.0).vector()[None, :])[0]
    snr = q + 3.0
    link = LinkSpec()
    offsets = np.round(np.arange(-1.5, 1.5001, 0.1), 1)
    vecs = np.array([np.r_[np.full(7, 16.0 + d), np.zeros(7)] for d in offsets])
    sweep = q_matrix(link, plan, vecs)
    unimodal = True
    for j in range(sweep.shape[1]):
        peak = int(np.argmax(sweep[:, j]))
        unimodal &= bool(np.all(np.diff(sweep[: peak + 1, j]) > 0) and np.all(np.diff(sweep[peak:, j]) < 0))
        unimodal &= 0 < peak < len(offsets) - 1
    ok = abs(ase_dbm + 30.0) <= 0.1 and np.all(np.abs(snr - 21.55) <= 0.1) and unimodal
    record("9 oracle desk checks", bool(ok),
           f"single-amp ASE {ase_dbm:.3f} dBm, ASE-only SNR {snr.min():.3f}..{snr.max():.3f} dB, unimodal sweep {unimodal}")
    assert ok


@pytest.mark.slow
def test_10_reproducibility(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        subprocess.run([sys.executable, "-m", "oareorder.cli", "run", "--scenario", "case2", "--seed", "42",
                        "--out", str(d)], check=True, capture_output=True)
    names = sorted(p.name for p in dirs[0].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    ok = bool(names) and not mismatch and not errors
    record("10 reproducibility", ok, f"{len(match)} report files byte-identical, {len(mismatch)} differ")
    assert ok
