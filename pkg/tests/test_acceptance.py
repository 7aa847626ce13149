"""Acceptance suite: one PASS/FAIL line per criterion (also repeated in the pytest summary)."""

import functools
import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import all_un
from singing_mis.analysis import (
    check_async_contraction,
    check_dynamic_contraction,
    check_static_contraction,
    degeneration_mismatches,
    locality_violations,
)
from singing_mis.async_engine import TimingParams, run_async_batch
from singing_mis.cli import main as cli_main
from singing_mis.coin import capped_win_probability, estimate_coin_bounds, exact_win_probability
from singing_mis.generators import churn_script, generate
from singing_mis.listings import compare_hearing, compare_transitions
from singing_mis.protocol import HearingMode
from singing_mis.sync_engine import run_sync, run_sync_batch

TIMING = TimingParams(4, 8, 2)
GRAPHS = {"gnp:256,0.05": 10, "ring:100": 1, "grid:16x16": 1, "complete:64": 1}  # spec -> graph draws


@functools.lru_cache(maxsize=None)
def static_runs():
    """1000 runs per (graph, variant, engine); gnp spreads them over 10 graph draws."""
    rows = []
    for spec, draws in GRAPHS.items():
        per = 1000 // draws
        for g in range(draws):
            net = generate(spec, g)
            seeds = np.arange(g * per, (g + 1) * per)
            for variant in ("singing", "sj"):
                r = run_sync_batch(net, all_un(net), seeds, variant=variant)
                rows.append(dict(graph=spec, variant=variant, engine="sync", runs=per,
                                 ok=int((r.converged & r.mis_valid).sum()), in_in=int(r.in_in_rounds.sum())))
                a = run_async_batch(net, all_un(net), TIMING, seeds, variant=variant)
                rows.append(dict(graph=spec, variant=variant, engine="async", runs=per,
                                 ok=int((a.converged & a.mis_valid).sum()), in_in=int(a.in_in_events.sum())))
    return rows


def test_c01_mis_correctness(acceptance):
    rows = static_runs()
    runs = sum(r["runs"] for r in rows)
    ok = sum(r["ok"] for r in rows)
    worst = min(rows, key=lambda r: r["ok"] / r["runs"])
    assert acceptance(1, ok == runs, f"{ok}/{runs} runs converged to a valid MIS "
                                     f"(4 graphs x 2 variants x 2 engines x 1000 seeds; worst cell "
                                     f"{worst['graph']} {worst['variant']} {worst['engine']} {worst['ok']}/{worst['runs']})")


def test_c02_never_both_in(acceptance):
    rows = [r for r in static_runs() if r["variant"] == "singing"]
    bad = sum(r["in_in"] for r in rows)
    runs = sum(r["runs"] for r in rows)
    assert acceptance(2, bad == 0, f"{bad} adjacent In-In rounds/ticks over {runs} singing runs (sync and async)")


def test_c03_static_contraction(acceptance):
    traces = [run_sync(generate("gnp:64,0.1", k), all_un(generate("gnp:64,0.1", k)), seed=k) for k in range(5)]
    rep = check_static_contraction(traces, branches=10_000, seed=3)
    worst = max(rep.rows, key=lambda r: r["mean"])
    ok = rep.passed and rep.samples > 0 and rep.max_se <= 0.01
    assert acceptance(3, ok, f"{rep.samples} frozen configurations x 10^4 branches; largest mean "
                             f"e(i+2)/e(i) = {worst['mean']:.4f} (se {worst['se']:.4f}); max se {rep.max_se:.4f}; "
                             f"bound 0.75 + 3 se")


def test_c04_log_scaling(acceptance, tmp_path):
    status = cli_main(["sweep", "--family", "gnp", "--degree", "8", "--trials", "200", "--out", str(tmp_path)])
    lines = (tmp_path / "sweep.csv").read_text().splitlines()[1:]
    ratio = [float(line.split(",")[2]) / float(line.split(",")[1]) for line in lines]
    spread = max(ratio) / min(ratio)
    assert acceptance(4, status == 0 and len(lines) == 9 and spread <= 3,
                      f"median_rounds/log2(n) over n=16..4096 in [{min(ratio):.3f}, {max(ratio):.3f}], "
                      f"spread {spread:.3f} <= 3")


def test_c05_coin_bounds(acceptance):
    bad = []
    for p in (0.25, 0.5, 0.75):
        for est in estimate_coin_bounds(range(1, 17), p=p, trials=1_000_000, seed=5):
            if not (est.y_ok and est.x_ok):
                bad.append((est.d, p))
    exact_bad = []
    for p in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
        for d in (1, 2, 3):
            y = exact_win_probability(d, p)
            lo, missing = capped_win_probability(d, p, 6)
            if not (y >= 2 * p / ((1 + p) * d) and lo <= y <= lo + missing):
                exact_bad.append((d, p))
    ok = not bad and not exact_bad
    assert acceptance(5, ok, f"{48 - len(bad)}/48 (d, p) cells with y_hat >= bound - 3 se and |x_hat - 1/d| <= 3 se "
                             f"at 10^6 trials; exact d<=3 check: {9 - len(exact_bad)}/9 cells above the bound")


def _churn_trace(variant, k, q, rounds=200, n=128):
    net = generate(f"gnp:{n},0.05", 100 + k)
    script = churn_script(net, rounds, q, seed=200 + k)
    return run_sync(net, all_un(net), script=script, variant=variant, seed=k, max_rounds=rounds + 1,
                    stop_on_convergence=False)


def test_c06_dynamic_locality(acceptance):
    total, checked = 0, 0
    for variant in ("singing", "sj"):
        for k in range(3):
            tr = _churn_trace(variant, k, 0.02)
            total += len(locality_violations(tr))
            checked += len(tr.rounds)
    assert acceptance(6, total == 0, f"{total} eliminated edges outside A(i+1) became active "
                                     f"({checked} churned rounds, q=0.02, n=128, both variants)")


def test_c07_dynamic_contraction(acceptance):
    rows, bad = 0, []
    for variant in ("singing", "sj"):
        for q in (0.02, 0.001):
            tr = _churn_trace(variant, 0, q, rounds=60)
            rep = check_dynamic_contraction([tr], branches=10_000, windows=range(1, 58, 8), seed=7)
            rows += rep.samples
            if not rep.passed or rep.max_se * 3 > max(r["bound"] for r in rep.rows):
                bad.append((variant, q, rep.summary()))
    assert acceptance(7, not bad and rows > 0,
                      f"{rows} windows x 10^4 branches (q in {{0.02, 0.001}}, both variants) within bound + 3 se"
                      + (f"; failures: {bad}" if bad else ""))


def test_c08_async_window_decrease(acceptance):
    net = generate("gnp:64,0.1", 0)
    sing = check_async_contraction(net, TIMING, "singing", trials=10_000, seed=8)
    sj = check_async_contraction(net, TIMING, "sj", trials=10_000, seed=8, t_diff=(40, 52))
    parts = [f"{v} T={r['window']}: decrease {r['mean_decrease']:.1f} vs required {r['required']:.3f}"
             for v, rep in (("singing", sing), ("sj", sj)) for r in rep.rows]
    assert acceptance(8, sing.passed and sj.passed, "; ".join(parts) + " (10^4 runs each, one-sided 3 se)")


def test_c09_transition_oracle(acceptance):
    cases, bad = compare_transitions(8)
    hcases, hbad = compare_hearing(5)
    assert acceptance(9, not bad and not hbad,
                      f"{len(bad)} mismatches over {cases} (state, heard subset, ell<=8) cases; "
                      f"{len(hbad)} over {hcases} hearing cases")


def test_c10_degeneration(acceptance):
    rng = np.random.default_rng(10)
    compared, bad = 0, 0
    for k in range(100):
        n = int(rng.integers(1, 33))
        p = float(rng.uniform(0.05, 0.6))
        net = generate(f"gnp:{n},{p!r}", k)
        for variant in ("singing", "sj"):
            c, b = degeneration_mismatches(net, TIMING, variant, seed=k)
            compared += c
            bad += len(b)
    assert acceptance(10, bad == 0, f"{bad} mismatches over {compared} (agent, round) comparisons on 100 graphs, n<=32")


def test_c11_negative_control(acceptance, k2):
    res = run_sync_batch(k2, all_un(k2), np.arange(1000), variant="singing", mode=HearingMode.SELF_JAMMING,
                         unsafe_pairing=True, max_rounds=200)
    frac = float((res.in_in_rounds > 0).mean())
    assert acceptance(11, frac >= 0.99, f"{frac:.3f} of 1000 seeds reach an adjacent In-In pair within 200 rounds")


@pytest.mark.parametrize("spec", sorted(GRAPHS))
def test_static_cells_all_valid(spec):
    for r in static_runs():
        if r["graph"] == spec:
            assert r["ok"] == r["runs"], r
