"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from biphoton_scatter import events as ev
from biphoton_scatter import experiments as ex
from biphoton_scatter.coincidence import (
    laplacian_gaussian_filter,
    marginal,
    postselect_sum,
    sample_pairs,
)
from biphoton_scatter.grid import BiphotonState, Direction, Domain, fourier_2d, make_grid, to_momentum, to_position
from biphoton_scatter.metrics import estimate_strength, mtf, predict_ratio, rms, validate_broadening_law
from biphoton_scatter.pipeline import (
    Configuration,
    ObjectMask,
    PipelineConfig,
    _apply,
    _screens,
    ground_truth,
    run_ensemble,
)
from biphoton_scatter.screens import ScreenParams
from biphoton_scatter.source import SourceParams, make_source

RESULTS = []


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# Reference setup for the contrast sweeps: M=512, w_q = 0.2 M, w_q/w_0 = 50,
# R = 100 realizations, five repeats, aperture array period 32 px.
SWEEP_SETUP = ex.RunConfig(strict_sampling=False, seed=0, repeats=5, n_list=(1,))


def _agg(rows, axis):
    return {a[axis]: a for a in rows if a.get("row") == "aggregate"}


# 1 -------------------------------------------------------------------------

def test_criterion_1_unitarity():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    M = 128
    grid = make_grid(M)
    worst = 0.0
    for k in range(1000):
        w_q = rng.uniform(8, 32)
        src = SourceParams(w_q, w_q / rng.uniform(1, 20))
        conf = [Configuration.BOTH_PHOTONS, Configuration.ONE_ARM][k % 2]
        obj = ObjectMask(grid, np.ones(M))
        cfg = PipelineConfig(grid, src, obj, ScreenParams(int(rng.integers(2, M + 1)), 1, int(rng.integers(2**63))),
                             conf, strict=False)
        psi = make_source(grid, src, strict=False)
        s1, s2 = _screens(cfg, 0)
        state = psi
        for step in (lambda s: _apply(cfg, s, s1), lambda s: fourier_2d(s, Direction.INVERSE),
                     lambda s: fourier_2d(s, Direction.FORWARD), lambda s: _apply(cfg, s, s2),
                     lambda s: fourier_2d(s, Direction.INVERSE)):
            state = step(state)
            worst = max(worst, abs(state.norm - 1.0))
        a = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M)) if k < 50 else None
        if a is not None:
            s = BiphotonState(grid, a, Domain.POSITION)
            worst_rt = np.max(np.abs(to_position(to_momentum(s)).amplitude - a))
            worst = max(worst, worst_rt)
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-9 and elapsed < 60, f"max norm / round-trip deviation {worst:.2e} over 1000 pipelines, {elapsed:.1f} s")


# 2 -------------------------------------------------------------------------

def test_criterion_2_ground_truth_recovery():
    cfg = ex.pipeline_config(replace(SWEEP_SETUP, strength=0.0))
    ens = run_ensemble(cfg)
    truth = ground_truth(cfg).values
    post = postselect_sum(ens.gamma, 1).values
    m_truth = mtf(truth, truth)[0]
    checks = {"post": post, "singles": ens.singles.values}
    parts, ok = [], True
    for name, img in checks.items():
        r = rms(img, truth)
        dm = abs(mtf(img, truth)[0] / m_truth - 1)
        ok &= r < 0.01 and dm < 0.02
        parts.append(f"{name}: RMS {r:.2e}, MTF dev {dm:.2%}")
    report(2, ok, "; ".join(parts))


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_scattering_sweep():
    start = time.perf_counter()
    rows, agg = ex.sweep(SWEEP_SETUP, "strength")
    a = _agg(agg, "strength")
    cells = {s: (a[s]["mtf_post"], a[s]["mtf_marginal"]) for s in (1.0, 2.0, 5.0, 10.0)}
    higher = all(p > m for p, m in cells.values())
    e5, e20 = a[5.0]["enhancement"], a[20.0]["enhancement"]
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"s={s:g}: post {p:.4f} vs marginal {m:.4f}" for s, (p, m) in cells.items())
    detail += f"; enhancement s=5 {e5:.3f}, s=20 {e20:.3f} (+-{a[20.0]['std_enhancement']:.3f}); {elapsed:.0f} s"
    report(3, higher and e20 < e5 and elapsed < 1800, detail)


# 4 -------------------------------------------------------------------------

def _inversions(means, stds):
    bad = []
    for k in range(len(means) - 1):
        if means[k + 1] < means[k]:
            bad.append((k, means[k] - means[k + 1] <= max(stds[k], stds[k + 1])))
    return bad


@pytest.mark.slow
def test_criterion_4_entanglement_sweep():
    rows, agg = ex.sweep(replace(SWEEP_SETUP, strength=5.0), "entanglement")
    a = _agg(agg, "entanglement")
    ratios = sorted(a)
    means = [a[r]["enhancement"] for r in ratios]
    stds = [a[r]["std_enhancement"] for r in ratios]
    inv = _inversions(means, stds)
    ok = len(inv) <= 1 and all(within for _, within in inv)
    detail = ", ".join(f"{r:g}: {m:.3f}+-{s:.3f}" for r, m, s in zip(ratios, means, stds))
    report(4, ok, f"enhancement by w_q/w_0 {detail}; inversions {len(inv)}")


# 5 -------------------------------------------------------------------------

def test_criterion_5_broadening_law():
    table = validate_broadening_law()
    errs = [abs(t.relative_error) for t in table]
    worst = max(errs)
    trips = [abs(estimate_strength(predict_ratio(s, c), 1.0, c) - s)
             for s in np.linspace(0.01, 100, 200) for c in (Configuration.BOTH_PHOTONS, Configuration.ONE_ARM)]
    detail = "; ".join(f"{t.configuration} s={t.strength:.2f}: {t.measured_ratio:.2f}/{t.predicted_ratio:.2f}"
                       for t in table)
    report(5, worst <= 0.15 and max(trips) < 1e-12,
           f"worst relative error {worst:.1%}, round trip {max(trips):.1e}; {detail}")


# 6 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_window_tradeoff():
    cfg = replace(SWEEP_SETUP, strength=3.4, n_list=(1, 3, 6), pairs=2_000_000, seed=6)
    pc = ex.pipeline_config(cfg)
    im = ex.reconstruct(pc, cfg)
    truth = im.truth.values
    m = {name: mtf(img.values, truth)[0] for name, img in
         [("post1", im.post[1]), ("post3", im.post[3]), ("post6", im.post[6]), ("marginal", im.marginal),
          ("singles", im.singles)]}
    order = [m["post1"], m["post3"], m["post6"], m["marginal"], m["singles"]]
    ordered = all(a >= b for a, b in zip(order, order[1:]))

    # per-pixel relative shot noise from independent acquisitions of the same budget
    ens = run_ensemble(pc, with_singles=False)
    K = 24
    post6, marg = [], []
    for k in range(K):
        s = sample_pairs(ens.gamma, cfg.pairs, seed=1000 + k)
        post6.append(postselect_sum(s, 6).values)
        marg.append(marginal(s).values)
    post6, marg = np.array(post6), np.array(marg)
    roi = truth > 0.1 * truth.max()
    noise = lambda a: np.median(a.std(axis=0, ddof=1)[roi] / a.mean(axis=0)[roi])
    ratio = noise(post6) / noise(marg)
    detail = ", ".join(f"{k} {v:.4f}" for k, v in m.items())
    report(6, ordered and ratio <= 1.5, f"MTF {detail}; relative noise post6/marginal {ratio:.2f}")


# 7 -------------------------------------------------------------------------

def _accidental_rate_for_fraction(rate, window_ns, fraction):
    """Per-arm background rate giving the requested accidental share of coincidences."""
    tau = 2 * window_ns * 1e-9
    target = fraction / (1 - fraction) * rate / tau
    return (-rate + np.sqrt(rate**2 + 4 * target)) / 2


def test_criterion_7_background_rejection():
    cfg = replace(ex.RunConfig(seed=7), rate=1e5, duration=1.0)
    model, truth = ex.event_model(cfg)
    acc = _accidental_rate_for_fraction(cfg.rate, cfg.window, 0.30)
    s = ev.synthesize_stream(model, cfg.rate, 1.0, acc, cfg.duration, 0.0, cfg.seed)
    pairs = ev.pair_events(s, cfg.window)
    true = pairs.true_mask()
    frac_all = 1 - true.mean()
    corr_true = ev.accumulate_corr4d(ev.Pairs(s, pairs.a[true], pairs.b[true], cfg.window))
    corr_acc = ev.accumulate_corr4d(ev.Pairs(s, pairs.a[~true], pairs.b[~true], cfg.window))
    kept_true = ev.postselect_sum_2d(corr_true, 6).sum()
    kept_acc = ev.postselect_sum_2d(corr_acc, 6).sum()
    frac_post = kept_acc / (kept_acc + kept_true)
    retained = kept_true / corr_true.total
    ok = 0.25 <= frac_all <= 0.35 and frac_post < 0.05 and retained >= 0.5
    report(7, ok, f"accidental share {frac_all:.1%} before, {frac_post:.2%} after 6x6 post-selection; "
                  f"ballistic pairs retained {retained:.1%}")


# 8 -------------------------------------------------------------------------

def test_criterion_8_pairing_oracle_and_speed():
    rng = np.random.default_rng(8)
    shared = total = 0
    box = ev.RoiBounds(0, 0, 16, 16)
    for k in range(100):
        n = 400
        t = np.sort(rng.integers(0, 200_000, n))
        roi = rng.integers(0, 2, n).astype(np.uint8)
        s = ev.EventStream(t, np.zeros(n, int), np.zeros(n, int), roi, box, box, 50_000, 4).sorted()
        g = ev.pair_events(s, 10)
        ref = ev.brute_force_pairs(s, 10)
        mine = set(zip(g.a.tolist(), g.b.tolist()))
        shared += len(mine & ref)
        total += max(len(mine), len(ref))
    agreement = shared / total

    N = 10_000_000
    t = np.sort(rng.integers(0, 10**11, N))
    roi = rng.integers(0, 2, N).astype(np.uint8)
    big = ev.EventStream(t, np.zeros(N, int), np.zeros(N, int), roi, box, box, 10**9, 100).sorted()
    ev.pair_events(ev.EventStream(t[:10], np.zeros(10, int), np.zeros(10, int), roi[:10], box, box, 10**9, 1).sorted())
    start = time.perf_counter()
    p = ev.pair_events(big, 10)
    elapsed = time.perf_counter() - start
    report(8, agreement >= 0.99 and elapsed < 10,
           f"greedy/brute agreement {agreement:.2%} over 100 streams ({total} pairs); 1e7 events paired in {elapsed:.2f} s ({len(p)} pairs)")


# 9 -------------------------------------------------------------------------

def test_criterion_9_analytic_oracles():
    x = np.arange(256)
    errs = []
    for C, k0 in [(0.1, 5), (0.5, 17), (1.0, 64), (0.33, 100)]:
        img = 1 + C * np.cos(2 * np.pi * k0 * x / 256)
        errs.append(abs(mtf(img, img)[0] - C / 2))
    log_const = np.max(np.abs(laplacian_gaussian_filter(np.full((64, 64), 3.7), 2.0)[6:-6, 6:-6]))

    M = 64
    grid = make_grid(M)
    src = SourceParams(12.8, 2.56)
    cfg = PipelineConfig(grid, src, ObjectMask(grid, np.ones(M)), ScreenParams(8, 10, 3), strict=False)
    gamma = run_ensemble(cfg, with_singles=False).gamma
    N = 100 * M * M
    s = sample_pairs(gamma, N, seed=9)
    exp_counts = N * gamma.counts.ravel()
    obs = s.counts.ravel()
    big = exp_counts >= 5
    f_obs = np.append(obs[big], obs[~big].sum())
    f_exp = np.append(exp_counts[big], exp_counts[~big].sum())
    chi2, p = stats.chisquare(f_obs, f_exp * f_obs.sum() / f_exp.sum())
    ok = max(errs) < 1e-9 and log_const < 1e-9 and p > 1e-3
    report(9, ok, f"cosine MTF error {max(errs):.1e}, LoG(constant) {log_const:.1e}, chi2 p-value {p:.3f} at N=100 M^2")


# 10 ------------------------------------------------------------------------

SMALL = """
[grid]
size = 128
[source]
entanglement = 15
strict_sampling = false
[scatter]
realizations = 6
strength = 2
[object]
period = 16
[sweep]
strengths = 1,4
entanglements = 15,30
repeats = 2
[sampling]
pairs = 50000
[broadening]
broadening_strengths = 2
broadening_realizations = 6
[calibration]
segments = 4,16
[events]
rate = 20000
duration = 0.5
accidental_rate = 2000
"""

CSV_OUTPUTS = {
    "simulate": ["gamma.csv", "singles.csv", "marginal.csv", "post_n1.csv", "post_n6.csv"],
    "sweep-scatter": ["sweep_scatter.csv"],
    "sweep-entanglement": ["sweep_entanglement.csv"],
    "validate-broadening": ["broadening.csv"],
    "calibrate-screens": ["calibration.csv"],
    "events-synth": ["truth.csv"],
    "events-analyze": ["events_metrics.csv", "post_n6.csv", "marginal.csv", "singles.csv"],
}


def test_criterion_10_determinism(tmp_path):
    from biphoton_scatter import cli

    cfgp = tmp_path / "run.ini"
    cfgp.write_text(SMALL)
    mismatched = []
    for run, workers in (("a", 1), ("b", 2)):
        for cmd in CSV_OUTPUTS:
            out = tmp_path / run / ("events" if cmd.startswith("events") else cmd)
            code = cli.main([cmd, "--config", str(cfgp), "--out", str(out), "--seed", "42", "--workers", str(workers)])
            assert code == 0, cmd
    for cmd, files in CSV_OUTPUTS.items():
        sub = "events" if cmd.startswith("events") else cmd
        for f in files + ["resolved-config.ini"]:
            a = (tmp_path / "a" / sub / f).read_bytes()
            b = (tmp_path / "b" / sub / f).read_bytes()
            if a != b and f != "resolved-config.ini":
                mismatched.append(f"{cmd}/{f}")
    events_a = (tmp_path / "a" / "events" / "events.txt").read_bytes()
    events_b = (tmp_path / "b" / "events" / "events.txt").read_bytes()
    if events_a != events_b:
        mismatched.append("events.txt")
    report(10, not mismatched, "all CSV artifacts byte-identical across runs with 1 and 2 workers"
           if not mismatched else f"differences in {mismatched}")
