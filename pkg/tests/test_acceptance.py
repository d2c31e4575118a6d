"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed in
the terminal summary (and immediately with ``-s``).
"""
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import ACCEPTANCE_LINES, qp_dual_value, qp_svm_dual
from stnmkl.cli import main
from stnmkl.experiment import (
    ExperimentConfig,
    evaluate,
    experiment_recording,
    extract_features,
    result_cell,
    strip_timing,
)
from stnmkl.features import design_butterworth, fit_pca, zero_phase
from stnmkl.kernel_svm import LINEAR, RBF, KernelSpec, gram, kernel, solve_svm_dual
from stnmkl.mkl import MklConfig, train_mkl, weight_constraint
from stnmkl.spectrogram import MorletParams, cwt_cmorlet, cwt_complex


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1 ---------------------------------------------------------------------------------


def test_criterion_01_mkl_reduces_to_svm():
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    X = r.standard_normal((40, 5))
    y = np.where(r.random(40) < 0.5, 1.0, -1.0)
    y[:2] = (1.0, -1.0)
    spec = KernelSpec(RBF, gamma=0.2)
    K = gram(X, spec).values
    ref = solve_svm_dual(K, y, 1.0)
    probe = kernel(r.standard_normal((40, 5)), X, spec)
    worst = 0.0
    for p in (1.0, 1.8, 4.0):
        m = train_mkl([K], y, MklConfig(p=p, C=1.0))
        for rows in (K, probe):
            worst = max(worst, np.abs(m.decision([rows]) - ref.decision(rows)).max())
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-6 and dt < 5, f"max |f_MKL - f_SVM| = {worst:.2e} (<= 1e-6), {dt:.2f} s (< 5 s)")


# -- 2 ---------------------------------------------------------------------------------


def test_criterion_02_small_instance_grid_oracle():
    t0 = time.perf_counter()
    r = np.random.default_rng(21)
    n, p, C = 8, 1.8, 1.0
    y = np.tile([1.0, -1.0], 4)
    K1 = gram(r.standard_normal((n, 2)) + 0.4 * y[:, None], KernelSpec(RBF, gamma=0.5)).values
    K2 = gram(r.standard_normal((n, 3)), KernelSpec(LINEAR, offset=1.0)).values
    m = train_mkl([K1, K2], y, MklConfig(p=p, C=C))
    # the optimal d lies on the constraint boundary (J is non-increasing in d)
    rr = p / (2 - p)
    d1 = np.round(np.arange(0, 1 + 1e-12, 1e-3), 12)
    d2 = np.clip(1 - d1**rr, 0, None) ** (1 / rr)
    best = min(qp_dual_value(a * K1 + b * K2, y, C) for a, b in zip(d1, d2))
    got = m.trace[-1]["objective"]
    rel = abs(got - best) / abs(best)
    dt = time.perf_counter() - t0
    record(2, rel <= 1e-4 and dt < 60, f"objective {got:.8f} vs grid {best:.8f}, rel {rel:.1e} (<= 1e-4), {dt:.1f} s (< 60 s)")


# -- 3 ---------------------------------------------------------------------------------


def test_criterion_03_svm_qp_correctness():
    X = np.array([[1.0], [-1.0]])
    m = solve_svm_dual(kernel(X, X, KernelSpec(LINEAR, offset=0.0)), [1.0, -1.0], C=10.0)
    hand = max(np.abs(m.alpha - 0.5).max(), abs(m.bias))
    worst = 0.0
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        y = np.tile([1.0, -1.0], 10)
        Xr = r.standard_normal((20, 2)) + 1.5 * y[:, None]
        spec = KernelSpec(RBF, gamma=0.5) if seed % 2 else KernelSpec(LINEAR)
        K = gram(Xr, spec).values
        C = (0.5, 1.0, 10.0)[seed % 3]
        s = solve_svm_dual(K, y, C)
        a, b = qp_svm_dual(K, y, C)
        rows = np.vstack([K, kernel(r.standard_normal((30, 2)) * 2, Xr, spec)])
        worst = max(worst, np.abs(s.decision(rows) - (rows @ (a * y) + b)).max())
    ok = hand <= 1e-8 and worst <= 1e-5
    record(3, ok, f"2-point |alpha-0.5|,|b| = {hand:.1e} (<= 1e-8); 20-point vs QP oracle {worst:.1e} (<= 1e-5)")


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_04_feasibility_and_monotonicity():
    worst_c, worst_inc = 0.0, -np.inf
    for seed in range(5):
        r = np.random.default_rng(seed)
        y = np.tile([1.0, -1.0], 20)
        bank = [
            gram(r.standard_normal((40, 3)) + 0.5 * y[:, None], KernelSpec(RBF, gamma=0.5)).values,
            gram(r.standard_normal((40, 4)), KernelSpec(RBF, gamma=0.5)).values,
            gram(r.standard_normal((40, 2)) + 0.3 * y[:, None], KernelSpec(LINEAR)).values,
        ]
        m = train_mkl(bank, y, MklConfig(p=1.8, C=1.0))
        for row in m.trace:
            d = np.asarray(row["d"])
            worst_c = max(worst_c, weight_constraint(d, 1.8) - 1) if np.all(d >= 0) else np.inf
        obj = np.array([row["objective"] for row in m.trace])
        inc = np.diff(obj) / np.maximum(1.0, np.abs(obj[:-1]))
        worst_inc = max(worst_inc, inc.max() if inc.size else -np.inf)
    ok = worst_c <= 1e-8 and worst_inc <= 1e-9
    record(4, ok, f"max(sum d^r - 1) = {worst_c:.1e} (<= 1e-8), d >= 0; max objective increase {worst_inc:.1e} (<= 1e-9)")


# -- 5 ---------------------------------------------------------------------------------


def test_criterion_05_cwt_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    params = MorletParams(1.0)
    for seed, fs in [(0, 100.0), (1, 1000.0), (2, 5000.0)]:
        x = np.random.default_rng(seed).standard_normal(100)
        got = cwt_complex(x, fs, params)
        t = np.arange(100) / fs
        ref = np.empty_like(got)
        for i, fc in enumerate(params.freqs):
            for b in range(100):
                tau = t - t[b]
                psi = (np.pi * 1.0) ** -0.5 * np.exp(-(tau**2)) * np.exp(2j * np.pi * fc * tau)
                ref[i, b] = np.sum(x * np.conj(psi)) / fs
        worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    tt = np.arange(10000) / 5000.0
    s = cwt_cmorlet(np.sin(2 * np.pi * 20 * tt), 5000.0)
    peak = s.freqs[int(np.argmax(s.values[:, 5000]))]
    dt = time.perf_counter() - t0
    record(5, worst <= 1e-6 and peak == 20.0 and dt < 10,
           f"rel. error vs quadrature {worst:.1e} (<= 1e-6); 20 Hz tone peaks at {peak:g} Hz; {dt:.2f} s (< 10 s)")


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_06_butterworth():
    worst_cut, worst_stop, worst_formula = 0.0, -np.inf, 0.0
    for fc, fs in [(4.5, 5000.0), (225.0, 5000.0), (0.9, 5000.0), (11.25, 500.0)]:
        f = design_butterworth(fc, fs)
        g_cut = f.gain_db(fc)[0]
        g_stop = f.gain_db(2 * fc)[0]
        w = np.tan(np.pi * np.array([fc, 2 * fc]) / fs) / np.tan(np.pi * fc / fs)
        analytic = 20 * np.log10((1 + w**20) ** -0.5)
        worst_formula = max(worst_formula, np.abs(np.array([g_cut, g_stop]) - analytic).max())
        worst_cut = max(worst_cut, abs(g_cut + 3.0103))
        worst_stop = max(worst_stop, g_stop)
    r = np.random.default_rng(0)
    half = r.standard_normal(2500)
    x = np.concatenate([half, half[::-1]])
    y = zero_phase(design_butterworth(4.5, 5000.0), x)
    sym = np.abs(y - y[::-1]).max() / np.abs(y).max()
    ok = worst_cut <= 0.1 and worst_stop <= -60 and worst_formula <= 1e-6 and sym <= 1e-6
    record(6, ok, f"|gain(fc) + 3.01| = {worst_cut:.1e} dB (<= 0.1); gain(2fc) <= {worst_stop:.1f} dB (<= -60); "
                  f"vs analytic {worst_formula:.1e} dB; symmetry {sym:.1e} (<= 1e-6)")


# -- 8 (shared run, also feeds 7 and 11) ----------------------------------------------------


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(tasks=3, events_per_class=40, rates=(5000.0, 10.0), classifiers=("SVM-Linear", "MKL"), seed=0)
    fs = extract_features(experiment_recording(cfg), cfg)
    rep = evaluate(fs, cfg)
    return rep, time.perf_counter() - t0


def test_criterion_07_pca(sweep):
    rep, _ = sweep
    retained = [f for r in rep["results"] for v in r["pca"].values() for f in v["retained"]]
    X = np.random.default_rng(7).standard_normal((50, 20)) @ np.diag(np.linspace(3, 0.1, 20))
    b = fit_pca(X, 0.95)
    ev = np.linalg.eigvalsh(np.cov(X, rowvar=False))[::-1]
    R = b.inverse_transform(b.transform(X))
    err = abs(np.sum((X - R) ** 2) / 49 - ev[b.n_components:].sum())
    ok = min(retained) >= 0.95 and err <= 1e-8
    record(7, ok, f"min retained fraction over {len(retained)} fold fits {min(retained):.4f} (>= 0.95); "
                  f"|recon. error - discarded eigenvalues| {err:.1e} (<= 1e-8)")


def test_criterion_08_end_to_end(sweep):
    rep, dt = sweep
    hi = result_cell(rep, "MKL", 5000.0)["mean_accuracy"]
    lo = result_cell(rep, "MKL", 10.0)["mean_accuracy"]
    svm = result_cell(rep, "SVM-Linear", 10.0)["mean_accuracy"]
    ok = hi >= 90 and lo >= 90 and abs(hi - lo) <= 5 and svm <= lo and dt < 600
    record(8, ok, f"MKL {hi:.2f}% @5000 Hz, {lo:.2f}% @10 Hz (>= 90, gap {abs(hi - lo):.2f} <= 5); "
                  f"SVM-Linear @10 Hz {svm:.2f}% (<= MKL); {dt:.0f} s (< 600 s)")


# -- 9 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def shuffle_runs():
    base = ExperimentConfig(tasks=5, events_per_class=40, rates=(10.0,), classifiers=("MKL",), seed=0)
    # one feature extraction at 5 kHz, reused for every permutation seed
    fs = extract_features(experiment_recording(base), base)
    from dataclasses import replace

    reports = [evaluate(fs, replace(base, seed=s, shuffle_labels=True)) for s in range(20)]
    return reports


def test_criterion_09_chance_control(shuffle_runs):
    accs = [result_cell(r, "MKL", 10.0)["mean_accuracy"] for r in shuffle_runs]
    mean = float(np.mean(accs))
    record(9, abs(mean - 20.0) <= 10, f"label-shuffled 5-class MKL @10 Hz, mean over 20 seeds {mean:.2f}% (20 +/- 10)")


# -- 10 --------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"events_per_class": 20, "rates": [5000, 10], "classifiers": ["SVM-Linear", "MKL"]}))
    outs = []
    for k in range(2):
        res = CliRunner().invoke(main, ["run", "--config", str(cfg), "--seed", "42", "--out", str(tmp_path / f"o{k}"), "--no-figures"])
        assert res.exit_code == 0, res.output
        rep = json.loads((tmp_path / f"o{k}" / "report.json").read_text())
        outs.append(json.dumps(strip_timing(rep), indent=1, sort_keys=True).encode())
    record(10, outs[0] == outs[1], f"two runs, seed 42: reports excluding timing are byte-identical ({len(outs[0])} bytes)")


# -- 11 --------------------------------------------------------------------------------


def test_criterion_11_confusion_rows(sweep, shuffle_runs):
    rows = []
    for rep in [sweep[0], *shuffle_runs]:
        for r in rep["results"]:
            rows.extend(np.asarray(r["confusion"]).sum(axis=1))
    worst = float(np.abs(np.asarray(rows) - 100).max())
    record(11, worst <= 0.01, f"{len(rows)} confusion rows, max |row sum - 100| = {worst:.1e} (<= 0.01)")
