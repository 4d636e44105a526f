"""Acceptance gate: the eight headline checks for this package.

Each criterion is one test, so a verbose pytest run shows one pass/fail
line per criterion; every test also prints a ``criterion N: PASS/FAIL``
line with the measured numbers (visible with ``pytest -s`` or on
failure).  The Monte Carlo checks run at 100 replications for the
reference condition and 50 for the decay sweep; everything is seeded, so
reruns are bit-identical.
"""

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from selfreg import (FirstOrderParams, SimulationCondition, generate_panel,
                     integrate, make_excitation, reference_conditions,
                     run_condition, summarize)
from selfreg.deriv import GllaConfig, SplineConfig, glla_rows, spline_rows
from selfreg.pipeline import optimize_smoothing
from selfreg.regress import (RegressionData, fit_gee, fit_lmm, fit_ols)
from selfreg.study import ConditionRun, replication_seed

from conftest import noiseless_condition, rk4_integrate

BASE_SEED = 0
REPS_FULL = 100
REPS_SWEEP = 50


def report(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def reference_runs():
    """100 replications of the reference condition, both families."""
    cells = reference_conditions()
    return {fam: run_condition(cells[1], fam, REPS_FULL, BASE_SEED)
            for fam in ("spline", "glla")}


@pytest.fixture(scope="module")
def homogeneous_run():
    return run_condition(reference_conditions()[17], "spline", REPS_FULL,
                         BASE_SEED)


@pytest.fixture(scope="module")
def sweep_runs(reference_runs):
    """Decay sweep at 50 replications per cell.

    Replication seeds depend only on (base seed, condition, index), so
    the first 50 records of the shared 100-replication reference runs
    are identical to a dedicated 50-replication run and are reused for
    the decay-time-15 cell.
    """
    cells = reference_conditions()
    runs = {("glla", cid): run_condition(cells[cid], "glla", REPS_SWEEP,
                                         BASE_SEED)
            for cid in (2, 3, 4)}
    runs[("spline", 2)] = run_condition(cells[2], "spline", REPS_SWEEP,
                                        BASE_SEED)
    for fam in ("glla", "spline"):
        full = reference_runs[fam]
        runs[(fam, 1)] = ConditionRun(
            condition=full.condition, family=fam, search=full.search,
            records=full.records[:REPS_SWEEP],
        )
    return runs


def test_criterion_1_reference_recovery(reference_runs):
    s = summarize(reference_runs["spline"])
    decay, gain = s.param("decay_rate"), s.param("gain_coef")
    ok = (-8.0 <= decay.median <= 7.0 and -2.0 <= gain.median <= 12.0
          and decay.n10 >= 80.0 and 0.70 <= s.r2_indiv_median <= 0.90)
    report(1, ok,
           f"spline+lmm decay bias {decay.median:+.1f}% in [-8,+7], "
           f"gain-coef bias {gain.median:+.1f}% in [-2,+12], "
           f"N10 {decay.n10:.1f}% >= 80, "
           f"median indiv R2 {s.r2_indiv_median:.3f} in [0.70,0.90]")


def test_criterion_2_glla_gain_overestimation(reference_runs):
    s = summarize(reference_runs["glla"])
    gain = s.param("gain_coef")
    positive = gain.median > 0.0
    in_interval = 9.0 <= gain.median <= 25.0
    if positive and not in_interval:
        warnings.warn(
            f"gain-coef bias {gain.median:+.1f}% is positive but outside "
            "the soft interval [+9,+25]", stacklevel=1)
    report(2, positive,
           f"glla+lmm gain-coef bias {gain.median:+.1f}% "
           f"(> 0 required; soft interval [+9,+25] "
           f"{'met' if in_interval else 'missed'})")


def test_criterion_3_misspecification_detection(homogeneous_run):
    s = summarize(homogeneous_run)
    decay = s.param("decay_rate")
    report(3, decay.median <= -60.0,
           f"homogeneous spline decay bias {decay.median:+.1f}% <= -60")


def test_criterion_4_decay_sweep(sweep_runs):
    order = [(2, "1/5"), (3, "1/10"), (1, "1/15"), (4, "1/20")]
    glla_n10 = {label: summarize(sweep_runs[("glla", cid)])
                .param("decay_rate").n10 for cid, label in order}
    fda_fast = summarize(sweep_runs[("spline", 2)]) \
        .param("decay_rate").n10
    fda_ref = summarize(sweep_runs[("spline", 1)]) \
        .param("decay_rate").n10
    glla_ok = all(v >= 60.0 for v in glla_n10.values())
    fda_ok = fda_fast < fda_ref
    pretty = " ".join(f"{lbl}:{v:.0f}" for lbl, v in glla_n10.items())
    report(4, glla_ok and fda_ok,
           f"glla N10 {pretty} (all >= 60); spline N10 degrades "
           f"{fda_fast:.0f} (1/5) < {fda_ref:.0f} (1/15)")


def test_criterion_5_oracle_equivalences():
    rng = np.random.default_rng(11)

    # (a) exact propagation against a fine Runge-Kutta reference.
    params = FirstOrderParams(decay_rate=1 / 15, gain=1.0,
                              equilibrium=0.5, initial_value=0.5)
    times = np.arange(50.0)
    u = make_excitation(SimulationCondition().shape, 50)
    exact = integrate(params, u, times)
    ref = rk4_integrate(params, u, times)
    irr = np.sort(rng.uniform(0.0, 40.0, 60))
    u_irr = rng.normal(0.0, 1.0, 60)
    exact_i = integrate(params, u_irr, irr)
    ref_i = rk4_integrate(params, u_irr, irr)
    rel_a = max(
        float(np.max(np.abs(exact - ref) / np.maximum(np.abs(ref), 1e-9))),
        float(np.max(np.abs(exact_i - ref_i)
                     / np.maximum(np.abs(ref_i), 1e-9))),
    )

    # (b) two-point windows reduce to first differences.
    sig = rng.normal(0.0, 1.0, 40)
    rows = glla_rows(sig, np.zeros(40), np.arange(40.0),
                     GllaConfig(embedding=2))
    dev_b = float(np.max(np.abs(rows.slope - np.diff(sig))))

    # (c) both families reproduce a linear signal's slope exactly.
    t = np.arange(50.0)
    line = 0.3 + 0.2 * t
    g = glla_rows(line, np.zeros(50), t, GllaConfig(embedding=5))
    s = spline_rows(line, np.zeros(50), t, SplineConfig(spar=0.5))
    dev_c = max(float(np.max(np.abs(g.slope - 0.2))),
                float(np.max(np.abs(s.slope - 0.2))))

    # (d) a vanishing penalty interpolates the data.
    noisy = line + rng.normal(0.0, 0.3, 50)
    interp = spline_rows(noisy, np.zeros(50), t, SplineConfig(penalty=0.0))
    dev_d = float(np.max(np.abs(interp.level - noisy)))

    # (e) identical groups collapse the mixed model onto pooled least
    # squares.
    n = 25
    X = np.column_stack([np.ones(n), rng.normal(0, 1, n),
                         rng.integers(0, 2, n).astype(float)])
    y = X @ np.array([0.4, -0.25, 0.9]) + rng.normal(0, 0.05, n)
    data = RegressionData(
        X=np.tile(X, (10, 1)), y=np.tile(y, 10),
        group_ids=list(range(1, 11)), group_sizes=np.full(10, n),
        columns=("intercept", "level", "excitation"),
    )
    dev_e = float(np.max(np.abs(fit_lmm(data).coef - fit_ols(data).coef)))

    # (f) an independence working correlation is pooled least squares.
    dev_f = float(np.max(np.abs(
        fit_gee(data, corr="independence").coef - fit_ols(data).coef)))

    checks = [
        ("a", rel_a, 1e-6), ("b", dev_b, 1e-12), ("c", dev_c, 1e-10),
        ("d", dev_d, 1e-8), ("e", dev_e, 1e-4), ("f", dev_f, 1e-8),
    ]
    ok = all(v <= tol for _, v, tol in checks)
    detail = ", ".join(f"{k}={v:.1e}<={tol:g}" for k, v, tol in checks)
    report(5, ok, detail)


def test_criterion_6_noiseless_identifiability():
    cond = noiseless_condition()
    worst = {}
    for fam in ("spline", "glla"):
        panel = generate_panel(cond, seed=0)
        fit = optimize_smoothing(panel, fam, regression="lmm").fit
        worst[fam] = max(
            abs(fit.decay_rate - cond.decay_rate) / cond.decay_rate,
            abs(fit.gain - cond.gain) / cond.gain,
            abs(fit.equilibrium - cond.equilibrium) / cond.equilibrium,
        )
    ok = all(v <= 0.03 for v in worst.values())
    report(6, ok,
           "worst relative error " +
           ", ".join(f"{fam} {v * 100:.2f}%" for fam, v in worst.items())
           + " <= 3%")


def test_criterion_7_coverage_pathology(reference_runs):
    s = summarize(reference_runs["spline"])
    cov = s.param("gain_coef").coverage
    report(7, cov < 20.0,
           f"gain-coefficient CI coverage {cov:.1f}% < 20%")


def test_criterion_8_smoothing_search(reference_runs):
    # Part one: the R2-vs-spar trace rises to a single maximum (modulo
    # a small plateau tolerance) and falls beyond it.
    trace = [p for p in reference_runs["spline"].search.trace
             if math.isfinite(p.r2)]
    r2 = [p.r2 for p in trace]
    peak = int(np.argmax(r2))
    eps = 0.005
    rises = all(r2[i + 1] >= r2[i] - eps for i in range(peak))
    falls = all(r2[i + 1] <= r2[i] + eps
                for i in range(peak, len(r2) - 1))
    humped = (r2[peak] - r2[0] > 0.02) and (r2[peak] - r2[-1] > 0.02)

    # Part two: more noise should not call for less smoothing.  Pairs
    # share every draw except the noise amplitude: rebuilding the same
    # seed sequence gives identical parameter and noise streams, scaled
    # by the condition's noise level.
    cells = reference_conditions()
    wins = 0
    n_pairs = 20
    for k in range(n_pairs):
        chosen = {}
        for cid in (13, 14):
            panel = generate_panel(cells[cid],
                                   replication_seed(BASE_SEED, 900, k))
            search = optimize_smoothing(panel, "spline",
                                        regression="lmm")
            chosen[cid] = search.chosen.spar
        if chosen[13] <= chosen[14]:
            wins += 1
    ok = rises and falls and humped and wins >= 0.7 * n_pairs
    report(8, ok,
           f"trace unimodal-with-plateau: rises={rises} falls={falls} "
           f"humped={humped}; low-noise spar <= high-noise spar in "
           f"{wins}/{n_pairs} pairs (need >= 14)")
