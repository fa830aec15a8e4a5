"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are printed as each check finishes and repeated in the pytest terminal
summary. Run directly with ``python3 tests/test_acceptance.py`` to skip pytest.
"""

import json
import os
import time

import numpy as np
import pytest

from oracles import brute_robust_backup
from robust_crl import (
    ContaminationSet,
    evaluate,
    finite_diff_gradient,
    garnet,
    lse,
    policy_probs,
    robust_bellman_apply,
    robust_td,
    robust_value,
    rpd_run,
    run_counterexample,
    smoothed_gradient,
    smoothed_robust_value,
    TDConfig,
    worst_case_kernel,
)
from robust_crl.cli import evaluate_run, load_preset, resolve_config, train
from robust_crl.robust import smoothing_gap_bound
from robust_crl.rpd import check_feasibility, setup_schedule

RESULTS = []


def report(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def _random_mdp(rng, n_s, n_a):
    from robust_crl import TabularCMDP
    kernel = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
    return TabularCMDP(kernel, rng.uniform(size=(n_s, n_a)), (rng.uniform(size=(n_s, n_a)),),
                       float(rng.uniform(0.5, 0.99)), rng.dirichlet(np.ones(n_s)), (0.0,))


def test_criterion_1_oracle_equivalence():
    start = time.time()
    worst_backup, worst_value = 0.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        mdp = _random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(1, 5)))
        delta = float(rng.uniform(0, 1))
        cset = ContaminationSet.around(mdp, delta)
        probs = policy_probs(rng.normal(size=(mdp.n_states, mdp.n_actions)))
        v = rng.uniform(0, 1 / (1 - mdp.gamma), mdp.n_states)
        brute = brute_robust_backup(np.array(mdp.kernel), np.array(mdp.reward), mdp.gamma, delta, probs, v)
        worst_backup = max(worst_backup, np.abs(robust_bellman_apply(cset, mdp, probs, v) - brute).max())
        rob = robust_value(cset, mdp, probs).v
        wc = worst_case_kernel(cset, mdp, probs, rob)
        worst_value = max(worst_value, np.abs(evaluate(mdp, wc, probs) - rob).max())
    elapsed = time.time() - start
    ok = worst_backup <= 1e-10 and worst_value <= 1e-6 and elapsed < 10
    assert report(1, ok, f"max backup err {worst_backup:.2e} (<=1e-10), max value err {worst_value:.2e} "
                         f"(<=1e-6), {elapsed:.1f}s (<10s)")


def test_criterion_2_lse_sandwich_and_smoothing_gap():
    rng = np.random.default_rng(0)
    sandwich_ok = True
    for _ in range(2000):
        n = int(rng.integers(1, 30))
        sigma = -float(10 ** rng.uniform(-2, 3))
        v = rng.normal(scale=10 ** rng.uniform(-1, 3), size=n)
        val = lse(sigma, v)
        sandwich_ok &= v.min() - np.log(n) / abs(sigma) - 1e-9 <= val <= v.min() + 1e-9
    bound_ok = True
    for seed in range(10):
        mdp = garnet(6, 4, seed)
        for delta in (0.1, 0.2, 0.5):
            cset = ContaminationSet.around(mdp, delta)
            probs = policy_probs(np.random.default_rng(seed).normal(size=(6, 4)))
            exact = robust_value(cset, mdp, probs).v
            for sigma in (-1.0, -5.0, -20.0, -100.0):
                gap = np.abs(smoothed_robust_value(cset, mdp, probs, sigma).v - exact).max()
                bound_ok &= gap <= smoothing_gap_bound(mdp.gamma, delta, sigma, 6) + 1e-9
    mdp = garnet(6, 4, 0)
    cset = ContaminationSet.around(mdp, 0.2)
    probs = np.full((6, 4), 0.25)
    exact = robust_value(cset, mdp, probs).v
    gaps = [float(np.abs(smoothed_robust_value(cset, mdp, probs, s).v - exact).max()) for s in (-5.0, -20.0, -100.0)]
    mono = gaps[0] > gaps[1] > gaps[2]
    ok = sandwich_ok and bound_ok and mono
    assert report(2, ok, f"sandwich {'held' if sandwich_ok else 'broken'} on 2000 draws, gap bound "
                         f"{'held' if bound_ok else 'broken'}, gaps over sigma -5/-20/-100: "
                         + " > ".join(f"{g:.3e}" for g in gaps))


def test_criterion_3_gradient_correctness():
    start = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        mdp = _random_mdp(rng, int(rng.integers(2, 6)), int(rng.integers(2, 4)))
        cset = ContaminationSet.around(mdp, float(rng.uniform(0, 0.5)))
        theta = rng.normal(size=(mdp.n_states, mdp.n_actions))
        g = smoothed_gradient(mdp, cset, policy_probs(theta), -10.0).grad_theta
        fd = finite_diff_gradient(mdp, cset, theta, -10.0)
        worst = max(worst, np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12))
    elapsed = time.time() - start
    ok = worst <= 1e-3 and elapsed < 60
    assert report(3, ok, f"max relative error {worst:.2e} (<=1e-3) on 20 triples, {elapsed:.1f}s (<60s)")


@pytest.fixture(scope="module")
def theory_sweep():
    """Exact-gradient RPD, theoretical schedule, G(6,4), delta = 0.2, ten seeds."""
    start = time.time()
    runs = []
    for seed in range(10):
        mdp = garnet(6, 4, seed)
        cset = ContaminationSet.around(mdp, 0.2)
        sched, info = setup_schedule(mdp, cset, -10.0, kind="theoretical", seed=seed)
        best, trace = rpd_run(mdp, cset, -10.0, sched, 4000)
        runs.append((mdp, cset, sched, info, best, trace))
    return runs, time.time() - start


def test_criterion_4_stationarity_trend(theory_sweep):
    runs, elapsed = theory_sweep
    ratios, in_box = [], True
    for _, _, sched, _, _, trace in runs:
        norms = np.array([r.grad_norm for r in trace])
        ratios.append(norms[1:4001].min() / norms[1:251].min())
        in_box &= all(0.0 <= r.lam <= sched.lambda_max for r in trace)
    ratios = np.array(ratios)
    ok = bool(np.all(ratios <= 0.5)) and in_box and elapsed < 300
    assert report(4, ok, f"min||G|| ratio T=4000 vs T=250 per seed in [{ratios.min():.3f}, {ratios.max():.3f}] "
                         f"(need <=0.5), lambda in [0, Lambda*]: {in_box}, {elapsed:.0f}s (<300s)")


def test_criterion_5_feasibility(theory_sweep):
    runs, _ = theory_sweep
    slacks = []
    for mdp, cset, sched, _, best, trace in runs:
        eps = trace[best.t].grad_norm
        rep = check_feasibility(best, sched, mdp, cset, -10.0, eps)
        slacks.append(rep.slack + 2 * eps)
    ok = min(slacks) >= 0
    assert report(5, ok, f"min over 10 runs of V_c - b + 2||G_W|| = {min(slacks):.4f} (need >=0)")


def test_criterion_6_td_convergence():
    start = time.time()
    mdp = garnet(4, 3, 0)
    cset = ContaminationSet.around(mdp, 0.2)
    probs = np.full((4, 3), 1 / 3)
    exact = smoothed_robust_value(cset, mdp, probs, -10.0).q
    sizes = (25_000, 100_000, 400_000)
    errs = [np.mean([np.abs(robust_td(mdp, probs, TDConfig(n, -10.0, 0.2, seed=s)) - exact).max()
                     for s in range(10)]) for n in sizes]
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    budget = 0.05 / (1 - mdp.gamma)
    elapsed = time.time() - start
    ok = errs[-1] <= budget and slope <= -0.33 and elapsed < 180
    assert report(6, ok, f"mean sup-norm Q error {errs[0]:.3f}/{errs[1]:.4f}/{errs[2]:.4f} at 25k/100k/400k, "
                         f"budget {budget:.2f}, slope {slope:.2f} (<=-0.33), {elapsed:.0f}s")


def test_criterion_7_benchmark_ordering(tmp_path):
    start = time.time()
    jobs = os.cpu_count() or 1
    finals = {}
    for delta in (0.2, 0.3):
        cfg = resolve_config(load_preset("garnet_benchmark"), {"run.delta": delta})
        out = tmp_path / f"delta_{delta}"
        train(cfg, out, jobs=jobs)
        _, summary = evaluate_run(out, jobs=jobs)
        finals[delta] = summary
    lines, a_ok, b_hits, c_ok = [], True, 0, True
    for delta, s in finals.items():
        b = s["threshold"]
        m = {k: (v["mean_final_exact_Vr"], v["mean_final_exact_Vc"]) for k, v in s["methods"].items()}
        a_ok &= m["robust_rpd"][1] >= b and m["heuristic_pd"][1] >= b
        b_hits += m["nonrobust_pd"][1] < b
        c_ok &= m["robust_rpd"][0] >= m["heuristic_pd"][0]
        lines.append(f"delta={delta} b={b:.3f} " + ", ".join(f"{k} Vr={vr:.3f} Vc={vc:.3f}"
                                                             for k, (vr, vc) in m.items()))
    elapsed = time.time() - start
    ok = a_ok and b_hits >= 1 and c_ok and elapsed < 1800
    assert report(7, ok, f"(a) {a_ok} (b) non-robust below b in {b_hits}/2 (c) {c_ok}, {elapsed / 60:.1f} min "
                         f"on {jobs} worker(s); " + "; ".join(lines))


def test_criterion_8a_closed_form_visitations():
    rep = run_counterexample(0.9, 0.1)
    ok = rep.closed_form_match_robust
    assert report("8a", ok, f"robust visitations vs closed forms: max err {rep.closed_form_max_err_robust:.2e} "
                            f"(need <=1e-9); nominal visitations err {rep.closed_form_max_err_nominal:.1e}")


def test_criterion_8b_counterexample_verdict():
    rep = run_counterexample(0.9, 0.1)
    v = rep.v_pi_prime_linear
    assert report("8b", rep.verdict, f"V(1)={v[0]:.6f} V(2)={v[1]:.6f}, verdict={rep.verdict}")


def test_criterion_9_determinism(tmp_path):
    digests = []
    cfg = resolve_config({
        "env": {"kind": "garnet", "sn": 4, "an": 3, "seed": 2, "threshold": "robust"},
        "run": {"mode": "online", "delta": 0.2, "T": 6, "replicas": 2},
        "online": {"kappa": 5.0, "inner_cap": 5000},
        "schedule": {"lambda_max": 10.0},
    })
    exact = resolve_config(load_preset("minimal"))
    for name, c in (("online", cfg), ("exact", exact)):
        train(c, tmp_path / f"{name}1", jobs=1)
        manifest = json.loads((tmp_path / f"{name}1" / "manifest.json").read_text())
        train(resolve_config(manifest["config"]), tmp_path / f"{name}2", jobs=min(2, os.cpu_count() or 1))
        a = (tmp_path / f"{name}1" / "trace.csv").read_bytes()
        b = (tmp_path / f"{name}2" / "trace.csv").read_bytes()
        digests.append(a == b)
    ok = all(digests)
    assert report(9, ok, f"repeat runs from the manifest byte-identical: online={digests[0]}, exact={digests[1]}")


if __name__ == "__main__":  # pragma: no cover
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
