"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import csv
import filecmp
import json
import os
import sys
import time

import numpy as np
import pytest

from fedscore_surv import cox
from fedscore_surv.cli import main as cli_main
from fedscore_surv.evaluation import auc_at_time
from fedscore_surv.federation import GeneratorConfig, generate_sites, make_handles, run_experiment
from fedscore_surv.odach import (LocalFitMessage, PrivacyViolation, Surrogate, decode_transcript,
                                 global_derivatives, inverse_variance_combine, run_odach,
                                 validate_message)
from fedscore_surv.pipeline import PipelineConfig
from fedscore_surv.scoring import derive_scores
from fedscore_surv.survival import SurvivalDataset, kaplan_meier, logrank_test
from fedscore_surv.transform import CutoffScheme, unify_cutoffs

TRUE_BETA = np.array([0.5, -0.5, 0.3, 0.0, 0.8])


def report(capsys, number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def weibull_sites(n, K, p, seed):
    """Shared true beta, site-specific Weibull baselines, exponential censoring."""
    rng = np.random.default_rng(seed)
    shapes = (0.7, 1.0, 1.5, 2.0)
    scales = (1.0, 2.0, 0.5, 3.0)
    out = []
    for j in range(K):
        X = rng.standard_normal((n, p))
        T = scales[j % 4] * (-np.log(rng.random(n)) * np.exp(-X @ TRUE_BETA[:p])) ** (1 / shapes[j % 4])
        C = rng.exponential(scales[j % 4] / 0.3, n)
        out.append(SurvivalDataset(np.minimum(T, C), (T <= C).astype(int), X,
                                   [f"x{k + 1}" for k in range(p)], site_id=j + 1))
    return out


def fd(f, b, h):
    return np.array([(f(b + h * e) - f(b - h * e)) / (2 * h) for e in np.eye(b.size)])


# criterion 1 ---------------------------------------------------------------------

def test_c1_derivatives_match_finite_differences(capsys):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 51))
        p = int(rng.integers(1, 6))
        X = rng.normal(size=(n, p))
        t = rng.integers(1, 30, n).astype(float)
        e = (rng.random(n) < rng.uniform(0.2, 1.0)).astype(int)
        e[0] = 1
        d = SurvivalDataset(t, e, X, [f"x{k}" for k in range(p)])
        b = rng.normal(scale=0.5, size=p)
        g, H = cox.gradient(d, b), cox.hessian(d, b)
        g_fd = fd(lambda x: cox.local_log_partial_likelihood(d, x), b, 1e-5)
        H_fd = fd(lambda x: cox.gradient(d, x), b, 1e-5).T
        worst = max(worst, np.max(np.abs(g - g_fd)) / max(1.0, np.max(np.abs(g_fd))),
                    np.max(np.abs(H - H_fd)) / max(1.0, np.max(np.abs(H_fd))))
    elapsed = time.perf_counter() - t0
    report(capsys, 1, "derivative correctness", worst < 1e-6 and elapsed < 10,
           f"max relative error {worst:.1e}, {elapsed:.2f} s")


# criterion 2 ---------------------------------------------------------------------

def test_c2_surrogate_matches_global_derivatives(capsys):
    sites = weibull_sites(300, 4, 5, seed=7)
    fit = run_odach(sites)
    derivs = [m for m in fit.transcript if m.msg_type == 2]
    g, H = global_derivatives(derivs)
    bar = fit.beta_bar
    worst = 0.0
    for d in sites:
        sur = Surrogate(d, bar, g, H)
        g_fd = fd(sur.value, bar, 1e-5)
        H_fd = fd(lambda x: sur(x)[1], bar, 1e-5).T
        worst = max(worst, np.max(np.abs(g_fd - g)), np.max(np.abs(H_fd - H)))
    report(capsys, 2, "surrogate gradient and Hessian equal the global ones at beta_bar",
           worst <= 1e-8, f"max abs deviation {worst:.1e} over 4 sites")


# criterion 3 ---------------------------------------------------------------------

def test_c3_odach_matches_pooled_stratified_fit(capsys):
    sites = weibull_sites(500, 4, 5, seed=42)
    t0 = time.perf_counter()
    fit = run_odach(sites)
    pooled = cox.fit_stratified_cox(sites)
    elapsed = time.perf_counter() - t0
    gap = float(np.max(np.abs(fit.beta_final - pooled.beta_hat)))
    se_fed = np.sqrt(np.diag(fit.covariance_final))
    se_pool = np.sqrt(np.diag(pooled.sampling_covariance(sum(d.n for d in sites))))
    z_fed = float(np.max(np.abs(fit.beta_final - TRUE_BETA) / se_fed))
    z_pool = float(np.max(np.abs(pooled.beta_hat - TRUE_BETA) / se_pool))
    ok = gap <= 0.05 and z_fed <= 3 and z_pool <= 3 and elapsed < 60
    report(capsys, 3, "federated vs pooled stratified Cox", ok,
           f"sup gap {gap:.1e}, max |z| federated {z_fed:.2f} pooled {z_pool:.2f}, "
           f"{elapsed:.2f} s")


# criterion 4 ---------------------------------------------------------------------

def test_c4_single_site_collapse(capsys):
    # one site shaped like the default benchmark's first site
    cfg = GeneratorConfig(n=(1500,), shape=(1.2,), scale=(200.0,), censoring=(0.86,), seed=31)
    handles = make_handles(generate_sites(cfg), 0.4, 31)
    res = run_experiment(handles, PipelineConfig(seed=31, n_bootstrap=50))
    fed, loc = res.federated, res.local[1]
    same = (fed.table == loc.table and fed.selected == loc.selected
            and [(v.name, v.labels, v.points) for v in fed.table.variables]
            == [(v.name, v.labels, v.points) for v in loc.table.variables]
            and fed.table.scale == loc.table.scale)
    report(capsys, 4, "K = 1 pipeline reproduces the local pipeline field for field", same,
           f"{len(fed.selected)} variables, max total {fed.table.max_total}")


# criterion 5 ---------------------------------------------------------------------

def test_c5_hand_oracles(capsys):
    checks = {}
    km = kaplan_meier(([1, 2, 3], [1, 1, 0]))
    checks["KM"] = abs(km(1.5) - 2 / 3) <= 1e-12 and abs(km(2.5) - 1 / 3) <= 1e-12 and km(0.5) == 1
    lr = logrank_test([([1, 2, 3], [1, 1, 1]), ([4, 5, 6], [1, 1, 1])])
    checks["log-rank"] = abs(lr["chi_square"] - (3 - 1.15) ** 2 / 0.6775) <= 1e-12
    b, V = inverse_variance_combine([{"beta": [1.0], "covariance": [[0.5]]},
                                     {"beta": [2.0], "covariance": [[1.0]]}])
    checks["meta"] = abs(b[0] - 4 / 3) <= 1e-12 and abs(V[0, 0] - 1 / 3) <= 1e-12
    checks["cutoff"] = abs(unify_cutoffs([(10.0,), (20.0,)], [0.25, 0.75])[0] - 17.5) <= 1e-12
    d = SurvivalDataset([1, 1, 5], [1, 1, 1], np.zeros((3, 0)), [])
    checks["AUC"] = auc_at_time([3, 1, 2], d, 2.0) == 0.5
    t = derive_scores([0.5, 1.0, 1.0], CutoffScheme(("A", "B"), {"A": (1.0, 2.0), "B": (1.0,)}))
    checks["table"] = t.points_of("A") == (0, 25, 50) and t.points_of("B") == (0, 50)
    failed = [k for k, v in checks.items() if not v]
    report(capsys, 5, "hand-oracle suite", not failed,
           f"chi2 {lr['chi_square']:.5f}; " + ("all exact" if not failed else f"failed {failed}"))


# criterion 6 ---------------------------------------------------------------------

def test_c6_privacy_audit(capsys):
    small = run_odach(weibull_sites(100, 3, 5, seed=3))
    large = run_odach(weibull_sites(10000, 3, 5, seed=3))
    a, b = small.transcript_bytes(), large.transcript_bytes()
    layout_same = len(a) == len(b) and [
        (type(m), m.vector.shape, m.matrix.shape) for m in decode_transcript(a)] == [
        (type(m), m.vector.shape, m.matrix.shape) for m in decode_transcript(b)]
    rejected = 0
    attempts = [
        LocalFitMessage(1, 100, np.arange(100.0), np.eye(5)),
        LocalFitMessage(1, 100, np.zeros(5), np.zeros((100, 5))),
        weibull_sites(20, 1, 5, seed=0)[0],
    ]
    for m in attempts:
        try:
            validate_message(m, p=5)
        except PrivacyViolation:
            rejected += 1
    counts = {K: len(run_odach(weibull_sites(80, K, 2, seed=K)).transcript) for K in (1, 2, 3, 4)}
    ok = layout_same and rejected == len(attempts) and all(c == 3 * K for K, c in counts.items())
    report(capsys, 6, "privacy audit", ok,
           f"{len(a)} bytes at n_j = 100 and 10000, {rejected}/{len(attempts)} record payloads "
           f"rejected, messages per K {counts}")


# criteria 7 to 9 share two default run-all invocations -------------------------

@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    dirs, times = [], []
    for k in range(2):
        d = tmp_path_factory.mktemp(f"run{k}")
        t0 = time.perf_counter()
        code = cli_main(["run-all", "--run-dir", str(d)])
        times.append(time.perf_counter() - t0)
        assert code == 0
        dirs.append(d)
    return dirs, times


def test_c7_federated_beats_local(capsys, default_runs):
    (run, _), times = default_runs
    with open(run / "evaluation.csv", newline="") as fh:
        rows = {int(r["site"]): r for r in csv.DictReader(fh)}
    small = [1, 2, 3]
    better = all(float(rows[s]["federated_iauc"]) >= float(rows[s]["local_iauc"]) for s in small)
    narrower = sum(float(r["federated_mean_ci_width"]) <= float(r["local_mean_ci_width"])
                   for r in rows.values())
    ok = better and narrower >= 4 and times[0] < 300
    detail = ", ".join(f"site {s} {float(rows[s]['federated_iauc']):.3f} vs "
                       f"{float(rows[s]['local_iauc']):.3f}" for s in small)
    report(capsys, 7, "federated iAUC and CI width on the 6-site benchmark", ok,
           f"{detail}; narrower CI at {narrower}/6 sites; {times[0]:.1f} s")


def test_c8_heterogeneity(capsys, default_runs):
    (run, _), _ = default_runs
    het = json.loads((run / "heterogeneity.json").read_text())
    report(capsys, 8, "cross-site log-rank rejects homogeneity", het["p_value"] < 0.05,
           f"chi2 {het['chi_square']:.2f} on {het['df']} df, p = {het['p_value']:.2e}")


def test_c9_determinism(capsys, default_runs):
    (a, b), _ = default_runs
    files = sorted(os.path.relpath(os.path.join(dp, f), a)
                   for dp, _, fs in os.walk(a) for f in fs)
    other = sorted(os.path.relpath(os.path.join(dp, f), b)
                   for dp, _, fs in os.walk(b) for f in fs)
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    ok = files == other and not mismatch and not errors and "transcript.bin" in files
    report(capsys, 9, "two run-all invocations are bit-identical", ok,
           f"{len(files)} files compared, {len(mismatch)} differ")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
