"""Acceptance suite: one test per criterion, each recording a PASS/FAIL summary line."""

import math
import time

import numpy as np
import pytest

from coopmc import sim
from coopmc.channel import hit_prob_point_source, hit_prob_sphere
from coopmc.evaluator import SweepGrid, expected_error, optimize_thresholds
from coopmc.experiments import preset, run_experiment
from coopmc.fusion import brute_force_fusion, fuse_asymmetric, fuse_symmetric
from coopmc.presets import paper_scenario
from coopmc.scenario import FusionRule
from oracles import binomial_band, kernel_over_sphere


def _best(rows, **match):
    """Smallest q_err among analytic rows whose columns equal ``match``."""
    cand = [r for r in rows if r["engine"] == "analytic" and all(r[k] == v for k, v in match.items())]
    return min(cand, key=lambda r: float(r["q_err"]))


@pytest.fixture(scope="module")
def fig2_rows(tmp_path_factory):
    return run_experiment(preset("fig2"), tmp_path_factory.mktemp("acc") / "fig2.csv")


@pytest.fixture(scope="module")
def fig5_rows(tmp_path_factory):
    return run_experiment(preset("fig5"), tmp_path_factory.mktemp("acc") / "fig5.csv")


def test_criterion_1_headline_optimum(criterion):
    sc = paper_scenario(2, "symmetric", "or", 10, 7)
    start = time.perf_counter()
    res = optimize_thresholds(sc, SweepGrid(xi_r=list(range(1, 41)), xi_fc=list(range(1, 41))), "noisy")
    elapsed = time.perf_counter() - start
    ok = res.xi_r == (10, 10) and res.xi_fc == 7 and 4e-3 <= res.q_bar <= 9e-3 and elapsed <= 600
    criterion(1, ok, f"argmin (xi_R, xi_FC) = ({res.xi_r[0]}, {res.xi_fc}), Q* = {res.q_bar:.4e}, {elapsed:.1f} s")


def test_criterion_2_simulator_agreement(criterion, tmp_path):
    spec = preset("fig4")
    assert len(spec.grid.xi_r) * len(spec.grid.xi_fc) >= 10 and spec.n_trials == 20_000
    rows = run_experiment(spec, tmp_path / "fig4.csv")
    analytic = {(r["xi_r"], r["xi_fc"]): float(r["q_err"]) for r in rows if r["engine"] == "analytic"}
    inside = 0
    worst = (0.0, None)
    for r in rows:
        if r["engine"] != "simulator":
            continue
        sigma = float(r["ci_halfwidth"]) / 1.96
        q_a = analytic[(r["xi_r"], r["xi_fc"])]
        dev = abs(float(r["q_err"]) - q_a)
        # a zero-variance estimate has a degenerate interval; it agrees only on exact equality
        inside += dev <= 3 * sigma
        z = dev / sigma if sigma > 0 else math.inf if dev else 0.0
        worst = max(worst, (z, (r["xi_r"], r["xi_fc"])))
    n = len(analytic)
    frac = inside / n
    criterion(2, frac >= 0.9, f"{inside}/{n} grid points within 3 sigma ({frac:.0%}); worst |z| = {worst[0]:.2f} at {worst[1]}")


def test_criterion_3_rule_ordering(criterion, fig2_rows, fig5_rows):
    perfect = {r: float(_best(fig2_rows, rule=r)["q_err"]) for r in ("majority", "or", "and")}
    noisy = {r: float(_best(fig5_rows, rule=r, k="3")["q_err"]) for r in ("majority", "or", "and")}
    ok = all(q["majority"] <= q["or"] <= q["and"] for q in (perfect, noisy))
    fmt = lambda q: " <= ".join(f"{r} {q[r]:.3e}" for r in ("majority", "or", "and"))  # noqa: E731
    criterion(3, ok, f"perfect: {fmt(perfect)}; noisy: {fmt(noisy)}")


def test_criterion_4_cooperation_gain(criterion, fig5_rows):
    maj = [float(_best(fig5_rows, rule="majority", k=str(k))["q_err"]) for k in range(1, 7)]
    tx_rx = float(_best(fig5_rows, rule="baseline-tx-rx")["q_err"])
    tx_fc = float(_best(fig5_rows, rule="baseline-tx-fc")["q_err"])
    beats = maj[2] < tx_rx and maj[2] < tx_fc
    monotone = all(b <= a for a, b in zip(maj, maj[1:]))
    curve = ", ".join(f"{q:.3e}" for q in maj)
    criterion(
        4,
        beats and monotone,
        f"K=3 majority {maj[2]:.3e} vs TX-RX {tx_rx:.3e}, TX-FC {tx_fc:.3e}; majority Q*(K=1..6) = [{curve}]",
    )


def test_criterion_5_soft_bound(criterion, fig2_rows):
    soft = _best(fig2_rows, rule="soft")
    hard = {r: float(_best(fig2_rows, rule=r)["q_err"]) for r in ("majority", "or", "and")}
    ok = float(soft["q_err"]) <= min(hard.values())
    criterion(5, ok, f"soft {float(soft['q_err']):.3e} (threshold {soft['xi_r']}) vs best hard {min(hard.values()):.3e}")


def test_criterion_6_fusion_oracles(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    samples = 0
    for _ in range(1500):
        k = int(rng.integers(1, 5))
        n = int(rng.integers(1, k + 1))
        # mix interior values with exact 0/1 entries
        p_md = np.where(rng.random(k) < 0.1, rng.integers(0, 2, k), rng.random(k))
        p_fa = np.where(rng.random(k) < 0.1, rng.integers(0, 2, k), rng.random(k))
        bf = brute_force_fusion(n, p_md, p_fa)
        cf = fuse_asymmetric(n, p_md, p_fa)
        worst = max(worst, abs(bf[0] - cf[0]), abs(bf[1] - cf[1]))
        samples += 1
    sym = 0.0
    for k in range(1, 9):
        for n in range(1, k + 1):
            for pm in np.linspace(0, 1, 11):
                for pf in np.linspace(0, 1, 11):
                    s = fuse_symmetric(n, pm, pf, k)
                    a = fuse_asymmetric(n, [pm] * k, [pf] * k)
                    sym = max(sym, abs(s[0] - a[0]), abs(s[1] - a[1]))
    alias = 0.0
    for _ in range(500):
        k = int(rng.integers(1, 9))
        p_md, p_fa = rng.random(k), rng.random(k)
        for named, n in ((FusionRule.or_rule(), 1), (FusionRule.and_rule(), k)):
            a, b = fuse_asymmetric(named, p_md, p_fa), brute_force_fusion(n, p_md, p_fa)
            alias = max(alias, abs(a[0] - b[0]), abs(a[1] - b[1]))
    ok = samples >= 1000 and max(worst, sym, alias) <= 1e-12
    criterion(6, ok, f"brute force max diff {worst:.1e} over {samples}; symmetric {sym:.1e}; OR/AND aliases {alias:.1e}")


def test_criterion_7_channel_math(criterion):
    D, r = 5e-9, 0.225e-6
    V = 4 / 3 * np.pi * r**3
    times = [1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 3e-4, 5e-4, 1.1e-3, 2.2e-3, 5e-3]
    tx_rx = [math.hypot(1.5, 0.6), math.hypot(2, 0.6), math.hypot(2.5, 0.6)]
    rx_fc = [0.6, 0.9, 1.5]
    sphere_err = point_err = (0.0, None)
    for t in times:
        for d in tx_rx + rx_fc:
            q = kernel_over_sphere(t, d * 1e-6, D, r)
            sphere_err = max(sphere_err, (abs(hit_prob_sphere(t, d * 1e-6, D, r) - q), (t, round(d, 4))))
            if d in tx_rx:
                point_err = max(point_err, (abs(hit_prob_point_source(t, d * 1e-6, D, V) - q), (t, round(d, 4))))
    n = 10**6
    rng = np.random.default_rng(7)
    t, d = 2e-5, 0.6e-6
    hits = sim.count_hits(rng, [0.0, 0.0, 0.0], n, D, [t], [[d, 0.0, 0.0]], [r])[0, 0]
    p = hit_prob_sphere(t, d, D, r)
    sim_ok = abs(hits / n - p) <= binomial_band(p, n)
    ok = sphere_err[0] <= 1e-6 and point_err[0] <= 1e-6 and sim_ok
    criterion(
        7,
        ok,
        f"sphere max |err| {sphere_err[0]:.1e}; point-source max |err| {point_err[0]:.1e} at (t, d_um) = {point_err[1]}; "
        f"simulated frequency {hits / n:.5f} vs {p:.5f} ({'within' if sim_ok else 'outside'} 3 sigma)",
    )


def test_criterion_8_degenerate_contracts(criterion):
    zero = paper_scenario(2, "symmetric", "or", 10, 7, molecules_tx=0)
    q_zero = {m: expected_error(zero, m).q_bar for m in ("perfect", "noisy")}
    zero_ok = all(q == zero.physical.p_one for q in q_zero.values())
    big = paper_scenario(2, "symmetric", "or", 10, 7, molecules_rx=1e12)
    gap = abs(expected_error(big, "noisy").q_bar - expected_error(big, "perfect").q_bar)
    sc = paper_scenario(2, "symmetric", "or", 10, 7)
    sim_rep = sim.estimate_error(sc, 20, base_seed=8, tx_bits=np.zeros(sc.timing.length))
    ok = zero_ok and gap < 1e-6 and sim_rep.q_bar == 0.0
    criterion(
        8,
        ok,
        f"S0=0 gives Q = {q_zero} (P1 = 0.5); |noisy - perfect| at S_k=1e12 = {gap:.3e}; "
        f"all-zero bits simulated errors = {sim_rep.metadata['n_errors']}",
    )
