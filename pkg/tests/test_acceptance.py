"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Criteria 6, 7 and 9 train full models and take several minutes on one core.
"""

import time

import numpy as np
import pytest

from hydrofriction import io
from hydrofriction.cli import LUGRE_INIT
from hydrofriction.evaluation import benchmark_streaming, compare_models
from hydrofriction.forest import ForestConfig, bootstrap_indices, fit_forest, fit_tree
from hydrofriction.hybrid import estimate_series, hpo_search, train_hybrid, trials_to_csv
from hydrofriction.inverse import StiffnessModel, label_dataset, label_frames
from hydrofriction.lstm import LstmConfig, adam_init, adam_step, forward, gradient, init_weights
from hydrofriction.lugre import LuGreParams, identify
from hydrofriction.plant import (DEFAULT_PLANT_LUGRE, CylinderGeometry, PlantFriction,
                                 ScenarioConfig, add_noise, generate_scenario,
                                 simulate_prescribed)
from hydrofriction.signals import Frames, preprocess

GEOM = CylinderGeometry()
# soft fluid springs for the prescribed-mode checks (see the decisions ledger)
SOFT = CylinderGeometry(bulk_modulus=1e6)
HOLDOUT = 0.2
STRIDE = 3
HPO_BUDGET = 20
HPO_TRIAL_EPOCHS = 30
HPO_STRIDE = 4


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


def _cut(n):
    return n - int(round(n * HOLDOUT))


# ------------------------------------------------------------- 1 and 2


def test_criterion_1_closed_loop(verdict):
    t0 = time.perf_counter()
    worst = {}
    for name, g in (("soft", SOFT), ("default", GEOM)):
        tr = simulate_prescribed(20.0, g, PlantFriction(DEFAULT_PLANT_LUGRE))
        s = tr.series
        f, _ = label_frames(Frames(s.t, s.x_p, tr.v, tr.a, s.p1, s.p2), g,
                            StiffnessModel.from_geometry(g))
        worst[name] = float(np.max(np.abs(f - s.f_true)) / np.ptp(s.f_true))
    took = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-6 and took < 10
    verdict(1, ok, f"max rel error soft={worst['soft']:.2e} default-beta={worst['default']:.2e} "
                   f"(< 1e-6), {took:.1f} s (< 10 s)")


def test_criterion_2_full_chain(verdict):
    t0 = time.perf_counter()
    tr = simulate_prescribed(20.0, SOFT, PlantFriction(DEFAULT_PLANT_LUGRE))
    s = tr.series
    noisy = add_noise(s, 5e3, 2e-5, quantize=True, seed=1, stroke=SOFT.stroke)
    ds = label_dataset(preprocess(noisy), SOFT, StiffnessModel.from_geometry(SOFT))
    m = ds.mask
    frac = float(np.mean(np.abs(ds.f[m] - s.f_true[m])) / np.ptp(s.f_true))
    took = time.perf_counter() - t0
    verdict(2, frac < 0.05 and took < 30,
            f"label MAE = {100 * frac:.2f}% of friction range (< 5%), {took:.1f} s (< 30 s)")


# --------------------------------------------------------------- 3 to 5


def test_criterion_3_gradient_check(verdict):
    cfg = LstmConfig(num_layers=1, hidden_size=2, dropout=0.0, window_length=3)
    p = init_weights(2, cfg, np.random.default_rng(0))
    X = np.random.default_rng(1).normal(size=(4, 3, 2))
    # residual signs unbalanced so no gradient component is identically zero
    y = np.array([3.0, -3.0, 2.5, 2.0])
    assert np.all(np.abs(forward(X, p)[0] - y) > 0.5)
    grads = gradient(X, y, p)
    eps, worst = 1e-5, 0.0
    for name, w in p.items():
        flat = w.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up = np.mean(np.abs(forward(X, p)[0] - y))
            flat[j] = old - eps
            dn = np.mean(np.abs(forward(X, p)[0] - y))
            flat[j] = old
            num = (up - dn) / (2 * eps)
            ana = grads[name].reshape(-1)[j]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    verdict(3, worst < 1e-4, f"max relative error {worst:.2e} over all weights (< 1e-4)")


def test_criterion_4_adam(verdict):
    p = {"w": np.array([0.0])}
    m = adam_init(p)
    reached = None
    for t in range(1, 501):
        adam_step(p, {"w": 2 * (p["w"] - 3.0)}, m, t, 0.05)
        if reached is None and abs(p["w"][0] - 3.0) < 1e-2:
            reached = t
    final = abs(p["w"][0] - 3.0)
    verdict(4, final < 1e-2, f"|w - 3| = {final:.1e} after 500 steps (< 1e-2), "
                             f"first within tolerance at step {reached}")


def test_criterion_5_forest(verdict):
    x = np.linspace(0, 1, 50)[:, None]
    y = np.where(x[:, 0] > 0.37, 5.0, -2.0) + np.floor(x[:, 0] * 7)
    tree = fit_tree(x, y, ForestConfig(max_depth=None, bootstrap=False))
    train_mae = float(np.mean(np.abs(tree.predict(x) - y)))

    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    f = fit_forest(X, X[:, 0] + rng.normal(size=200), ForestConfig(n_estimators=7, max_depth=5))
    total = np.zeros(200)
    for t in f.trees:
        total += t.predict(X)
    mean_exact = np.array_equal(f.predict(X), total / 7)

    cover = float(np.mean([len(np.unique(bootstrap_indices(1000, 0, i))) / 1000
                           for i in range(100)]))
    ok = train_mae == 0 and mean_exact and abs(cover - 0.632) <= 0.02
    verdict(5, ok, f"tree train MAE {train_mae}, forest mean exact {mean_exact}, "
                   f"bootstrap unique fraction {cover:.4f} (0.632 +- 0.02)")


# ------------------------------------------------------------ 6, 7, 9


@pytest.fixture(scope="module")
def study():
    """Tests 1-4 in valve mode, hybrid on all training strokes, LuGre on test 1."""
    t0 = time.perf_counter()
    stiff = StiffnessModel.from_geometry(GEOM, spring_term=False)
    raws, dss = {}, {}
    for tid in (1, 2, 3, 4):
        tr = generate_scenario(ScenarioConfig(test_id=tid, seed=tid))
        raws[tid] = tr.series
        dss[tid] = label_dataset(preprocess(tr.series), GEOM, stiff, f_true=tr.series.f_true)
    starts = {tid: _cut(len(ds)) for tid, ds in dss.items()}
    ranges = [(0, starts[tid]) for tid in (1, 2, 3, 4)]
    model, log = train_hybrid([dss[t] for t in (1, 2, 3, 4)], LstmConfig(), ForestConfig(),
                              seed=0, stride=STRIDE, ranges=ranges)
    d1, c1 = dss[1], starts[1]
    fr = d1.frames
    lugre, _ = identify(fr.v[:c1], fr.a[:c1], d1.f[:c1], d1.mask[:c1], fr.dt,
                        LuGreParams(**LUGRE_INIT), budget=200)
    report = compare_models(dss, model, lugre, starts, {"seed": 0})
    return {"raws": raws, "dss": dss, "starts": starts, "model": model, "log": log,
            "lugre": lugre, "report": report, "elapsed": time.perf_counter() - t0}


def test_criterion_6_table_trend(study, verdict):
    tests = study["report"].tests
    h = [tests[t].hybrid_mae_percent for t in (1, 2, 3, 4)]
    lg = [tests[t].lugre_mae_percent for t in (1, 2, 3, 4)]
    a_ok = all(x < 10 for x in h)
    b_ok = all(b > a for a, b in zip(lg, lg[1:])) and all(lg[i] > h[i] for i in (1, 2, 3))
    took = study["elapsed"]
    verdict(6, a_ok and b_ok and took <= 900,
            "hybrid MAE% " + ", ".join(f"{x:.2f}" for x in h) + " (< 10); LuGre MAE% "
            + ", ".join(f"{x:.2f}" for x in lg) + f" (increasing, above hybrid on 2-4); "
            f"{took:.0f} s (<= 900 s)")


def test_criterion_9_residuals(study, verdict):
    worst = []
    ok = True
    for tid, r in sorted(study["report"].tests.items()):
        rng_ = r.friction_range
        med = abs(r.hybrid_residuals["median"]) / rng_
        skew = abs(r.hybrid_residuals["skewness"])
        slope, icpt = r.parity["slope"], abs(r.parity["intercept"]) / rng_
        ok &= med <= 0.02 and skew < 0.5 and abs(slope - 1) <= 0.05 and icpt <= 0.02
        worst.append(f"T{tid}: median {100 * med:.2f}%, |skew| {skew:.2f}, slope {slope:.3f}, "
                     f"intercept {100 * icpt:.2f}%")
    verdict(9, bool(ok), "; ".join(worst) + " (limits 2%, 0.5, 1+-0.05, 2%)")


def test_criterion_7_hpo(study, verdict):
    dss = [study["dss"][t] for t in (1, 2, 3, 4)]
    # reduced dataset: first half of every test, sparser windows
    ranges = [(0, len(d) // 2) for d in dss]
    t0 = time.perf_counter()
    _, dlog = train_hybrid(dss, LstmConfig(max_epochs=HPO_TRIAL_EPOCHS), ForestConfig(), seed=0,
                           stride=HPO_STRIDE, ranges=ranges)
    default_val = dlog.extra["stage2_val_mae"]
    kw = dict(seed=0, trial_epochs=HPO_TRIAL_EPOCHS, stride=HPO_STRIDE, ranges=ranges)
    best, trials = hpo_search(dss, HPO_BUDGET, **kw)
    took = time.perf_counter() - t0
    done = [t.val_mae for t in trials if t.status == "completed"]
    best_val = min(done)
    # a shorter search with the same seed reproduces the head of the log
    again = hpo_search(dss, 2, **kw)[1]
    deterministic = trials_to_csv(again) == trials_to_csv(trials[:2])
    ok = best_val <= default_val and deterministic and took <= 1800
    verdict(7, ok, f"best val MAE {best_val:.3f} N vs default {default_val:.3f} N, "
                   f"{len(done)}/{HPO_BUDGET} completed, log prefix reproducible "
                   f"{deterministic}, {took:.0f} s (<= 1800 s)")


# ------------------------------------------------------------------- 8


def test_criterion_8_latency(study, verdict):
    raw = study["raws"][1]
    samples = list(zip(raw.t.tolist(), raw.x_p.tolist(), raw.p1.tolist(), raw.p2.tolist()))
    res = benchmark_streaming(study["model"], study["lugre"], samples, 2000)
    h, lg = res["hybrid"], res["lugre"]
    ok = h["mean"] <= 2e-3 and res["ratio_mean"] >= 5
    verdict(8, ok, f"hybrid mean {h['mean'] * 1e3:.3f} ms (p50 {h['p50'] * 1e3:.3f}, "
                   f"p99 {h['p99'] * 1e3:.3f}) <= 2 ms; LuGre mean {lg['mean'] * 1e6:.1f} us, "
                   f"ratio {res['ratio_mean']:.0f}x (>= 5x); {h['timed_calls']} timed calls")


# ------------------------------------------------------------------ 10


def test_criterion_10_determinism(study, tmp_path, verdict):
    checks = {}
    cfg = ScenarioConfig(test_id=2, duration=8.0, seed=7)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_dataset(generate_scenario(cfg).series, a)
    io.write_dataset(generate_scenario(cfg).series, b)
    checks["dataset"] = a.read_bytes() == b.read_bytes()

    dss = [study["dss"][1], study["dss"][3]]
    small = LstmConfig(num_layers=2, hidden_size=8, max_epochs=2, window_length=10)
    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    for path in (m1, m2):
        model, _ = train_hybrid(dss, small, ForestConfig(n_estimators=4, max_depth=8), seed=3,
                                stride=8)
        io.save_model(model, path, {"seed": 3})
    checks["model"] = m1.read_bytes() == m2.read_bytes()

    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    for path in (r1, r2):
        rep = compare_models(study["dss"], study["model"], study["lugre"], study["starts"],
                             {"seed": 0})
        io.save_report(rep.to_dict(include_latency=False), path)
    checks["report"] = r1.read_bytes() == r2.read_bytes()

    # round trips: dataset, frames, labelled, model (hybrid and LuGre)
    s = io.read_dataset(a)
    io.write_dataset(s, b)
    checks["dataset_rt"] = a.read_bytes() == b.read_bytes()
    fr = preprocess(s)
    f1, f2 = tmp_path / "f1.csv", tmp_path / "f2.csv"
    io.write_frames(fr, f1, s.f_true)
    frb, ftb = io.read_frames(f1)
    io.write_frames(frb, f2, ftb)
    checks["frames_rt"] = f1.read_bytes() == f2.read_bytes()
    l1, l2 = tmp_path / "l1.csv", tmp_path / "l2.csv"
    io.write_labeled(study["dss"][4], l1)
    io.write_labeled(io.read_labeled(l1), l2)
    checks["labeled_rt"] = l1.read_bytes() == l2.read_bytes()
    h1, h2 = tmp_path / "h1.json", tmp_path / "h2.json"
    io.save_model(study["model"], h1, {"seed": 0})
    _, back, _ = io.load_model(h1)
    io.save_model(back, h2, {"seed": 0})
    feats = study["dss"][2].features
    checks["hybrid_rt"] = (h1.read_bytes() == h2.read_bytes() and
                           estimate_series(back, feats)[1].tobytes()
                           == estimate_series(study["model"], feats)[1].tobytes())
    g1, g2 = tmp_path / "g1.json", tmp_path / "g2.json"
    io.save_model(study["lugre"], g1)
    io.save_model(io.load_model(g1)[1], g2)
    checks["lugre_rt"] = g1.read_bytes() == g2.read_bytes()
    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} byte-identical checks"
                            + (f"; failed: {', '.join(failed)}" if failed else ""))
