"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION <k>: PASS|FAIL <details>`` line
(visible with ``pytest -s`` or in the ``-v`` captured output on failure)
and asserts the criterion at its stated tolerance. Running this file as a
script prints all twelve lines.

Frozen oracle values:
    TW2_TAIL_AT_2: 1 - F_2(2) for the beta = 2 Tracy-Widom law, from a
    Gauss-Legendre discretisation of the Airy-kernel Fredholm determinant
    (40, 80 and 120 nodes agree to 1e-15).
"""
from __future__ import annotations

import json
import math
import os
import subprocess
import sys
import tempfile
import time

import numpy as np
import pytest

from igmcmc.airy import (AiryModel, EigenBox, EigenCondition, airy_manifold, eigen_gradient,
                         eigen_top, experiment_single_eig, tail_counts)
from igmcmc.geometry import crofton_check
from igmcmc.samplers import (normalized_weight_variance, run_deterministic_gibbs, run_rejection,
                             search_sphere_factor, weighted_ks_distance, weighted_mean)
from igmcmc.solver import SolverConfig
from igmcmc.validation import (circle_on_sphere_estimate, circle_variance_reruns,
                               circle_weight_experiment, round_sphere_sampler,
                               sphere_collection_experiment, sphere_curvature_estimate,
                               theorem3_check, volume_from_curvature)
from igmcmc.weights import WeightConfig

pytestmark = pytest.mark.acceptance

SEED = 20240611
TW2_TAIL_AT_2 = 1.1244630169e-4
STATED_TAIL_AT_2 = 1e-4


def _rng(k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(SEED).spawn(12)[k - 1])


def _report(k: int, ok: bool, detail: str) -> str:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line, flush=True)
    return line


# ---------------------------------------------------------------------------


def criterion_1():
    rng = _rng(1)
    t0 = time.perf_counter()
    r = circle_weight_experiment(1_000_000, rng, (10_000,))
    rr = circle_variance_reruns(20, 1_000_000, 10_000, rng)
    dt = time.perf_counter() - t0
    ok_mean = r["rel_err"] < 0.02
    ok_fo = r["var_first_order"] == 0.0
    ok_tail = rr["increases"] >= 18
    ok = ok_mean and ok_fo and ok_tail and dt < 10
    return ok, (f"mean={r['mean_traditional']:.5f} (2pi={2 * math.pi:.5f}, rel_err={r['rel_err']:.2e}); "
                f"first-order var={r['var_first_order']}; variance grew 1e4->1e6 in "
                f"{rr['increases']}/20 reruns (need 18); runtime {dt:.1f}s")


def criterion_2():
    rng = _rng(2)
    t0 = time.perf_counter()
    errs = []
    for n, d, k in ((4, 2, 1), (6, 3, 2), (10, 5, 1)):
        errs.append(crofton_check(n, d, k, 1_000_000, rng)["rel_err"])
    dt = time.perf_counter() - t0
    ok = max(errs) < 0.01 and dt < 60
    return ok, f"rel errs {', '.join(f'{e:.2e}' for e in errs)}; runtime {dt:.1f}s"


def criterion_3():
    r = circle_on_sphere_estimate(100_000, _rng(3))
    ok = r["rel_err"] < 0.02
    return ok, f"estimate={r['estimate']:.5f} true=4pi={r['true']:.5f} rel_err={r['rel_err']:.2e}"


def criterion_4():
    r = sphere_curvature_estimate(10, 4, 1.0, 100_000, 10_000, _rng(4))
    ok = r["rel_err"] < 0.05 and r["rel_err_analytic"] < 0.05
    return ok, (f"numeric-pipeline estimate={r['estimate']:.4f}, analytic={r['estimate_analytic']:.4f}, "
                f"true={r['true']:.4f}; rel errs {r['rel_err']:.2e}/{r['rel_err_analytic']:.2e}")


def criterion_5():
    reps = theorem3_check(50, [5, 10, 20], 1_000_000, _rng(5))
    inside = [r.within_bounds for r in reps]
    logv = [math.log1p(r.empirical_var) for r in reps]
    incr = all(b > a for a, b in zip(logv, logv[1:]))
    ok = all(inside) and incr
    parts = [f"d={r.d}: var={r.empirical_var:.4g} in [{r.lower_bound:.4g}, {r.upper_bound:.4g}]? "
             f"{r.within_bounds}" for r in reps]
    return ok, "; ".join(parts) + f"; log-variance increasing: {incr}"


def criterion_6():
    w = WeightConfig("curvature", cutoff_high=math.inf, normalization_mc_samples=10_000)
    r = sphere_collection_experiment(20, 8, 50, 1.0, 100_000, w, _rng(6))
    pc, pr = r["curvature"]["rank_p"], r["raw"]["rank_p"]
    vc, vr = r["curvature"]["volume_variance"], r["raw"]["volume_variance"]
    ok = pc > 0.01 and pr < 0.001 and vr >= 10 * vc
    return ok, (f"selection-rank chi2 p: curvature={pc:.3g}, raw={pr:.3g}; "
                f"normalised volume variance raw={vr:.4g} vs curvature={vc:.3g}")


def criterion_7():
    r = volume_from_curvature(round_sphere_sampler(2, 3.0), 2, 2, 10_000, _rng(7))
    rel = abs(r["volume"] - 36 * math.pi) / (36 * math.pi)
    return rel < 0.01, f"volume={r['volume']:.6f} vs 36pi={36 * math.pi:.6f} rel_err={rel:.2e}"


def _fd_gradient(model, index, N, h=1e-5):
    g = np.empty(N.size)
    for j in range(N.size):
        e = np.zeros(N.size)
        e[j] = h
        hi = eigen_top(model, index, N + e)[0][index - 1]
        lo = eigen_top(model, index, N - e)[0][index - 1]
        g[j] = (hi - lo) / (2 * h)
    return g


def criterion_8():
    rng = _rng(8)
    model = AiryModel.from_n(1000)
    assert model.matrix_size == 100
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        N = rng.standard_normal(model.matrix_size)
        g = eigen_gradient(model, 1, N)
        fd = _fd_gradient(model, 1, N)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    dt = time.perf_counter() - t0
    return worst < 1e-6 and dt < 30, f"max rel err {worst:.2e} over 100 instances; runtime {dt:.1f}s"


def criterion_9():
    rng = _rng(9)
    draws = 10_000_000
    m100 = AiryModel.from_n(1000)
    hits = tail_counts(m100, 2.0, draws, rng)
    p = hits / draws
    se0 = math.sqrt(STATED_TAIL_AT_2 * (1 - STATED_TAIL_AT_2) / draws)
    z = (p - STATED_TAIL_AT_2) / se0
    if abs(z) <= 3:
        return True, f"K=100: P={p:.4e} ({hits}/{draws}), z={z:+.2f} vs 1e-4"
    # the fallback applies only if K = 100 is itself off the continuum value
    se_c = math.sqrt(TW2_TAIL_AT_2 * (1 - TW2_TAIL_AT_2) / draws)
    z_c = (p - TW2_TAIL_AT_2) / se_c
    shifted = abs(z_c) > 3
    m1000 = AiryModel.from_n(1e6)
    d2 = 1_000_000
    h2 = tail_counts(m1000, 2.0, d2, rng)
    p2 = h2 / d2
    z2 = (p2 - STATED_TAIL_AT_2) / math.sqrt(STATED_TAIL_AT_2 * (1 - STATED_TAIL_AT_2) / d2)
    ok = shifted and abs(z2) <= 5
    return ok, (f"K=100: P={p:.4e} ({hits}/{draws}), z={z:+.2f} vs 1e-4; z={z_c:+.2f} vs continuum "
                f"{TW2_TAIL_AT_2:.4e} (discretisation shift: {shifted}); "
                f"K=1000 fallback: P={p2:.4e}, z={z2:+.2f} (counts only if shifted)")


_REJECTION_CACHE = {}


def _rejection_reference(model, halfwidth, rng, max_accept=4000):
    key = (model.matrix_size, halfwidth)
    if key not in _REJECTION_CACHE:
        box = EigenBox.around(EigenCondition((1,), (2.0,)), halfwidth)
        _REJECTION_CACHE[key] = run_rejection(box, model, 200_000_000, rng, psi_index=2,
                                              max_accept=max_accept, require_accept=True)
    return _REJECTION_CACHE[key]


def criterion_10(reruns=5, samples=5000):
    rng = _rng(10)
    model = AiryModel.from_n(1000)
    m = airy_manifold(model, EigenCondition((1,), (2.0,)))
    ref = _rejection_reference(model, 0.1, rng)

    def psi(N):
        return np.array([eigen_top(model, 2, N)[0][1]])

    ratios, geo, wins, ks = [], [], 0, []
    for g in rng.spawn(reruns):
        run = run_deterministic_gibbs(m, 23, int(samples * 1.1), SolverConfig(),
                                      ("first_order", "traditional"), g, psi=psi)
        st = run.statistic[:samples, 0]
        wf = run.weights["first_order"][:samples]
        wt = run.weights["traditional"][:samples]
        if st.size < samples:
            return False, f"only {st.size} solver outputs"
        ratios.append(normalized_weight_variance(wt) / normalized_weight_variance(wf))
        # informational: the same ratio with the shared radius factor divided out
        rad = np.array([search_sphere_factor(r, 23) for r in run.radii[:samples]])
        geo.append(normalized_weight_variance(wt / rad) / normalized_weight_variance(wf / rad))
        kf = weighted_ks_distance(st, wf, ref.statistic)
        kt = weighted_ks_distance(st, wt, ref.statistic)
        ks.append((kf, kt))
        wins += kf < kt
    ok_a = all(r > 10 for r in ratios)
    ok_b = wins >= 4
    return ok_a and ok_b, (f"(a) variance ratios {', '.join(f'{r:.3g}' for r in ratios)} (need >10), "
                           f"radius-conditioned {', '.join(f'{r:.3g}' for r in geo)}; "
                           f"(b) KS first-order<traditional in {wins}/{reruns} "
                           f"[{'; '.join(f'{a:.3f}/{b:.3f}' for a, b in ks)}]; "
                           f"rejection reference {ref.accepted} accepts in {ref.draws} draws, window 2+-0.1")


def criterion_11():
    model = AiryModel.from_n(1000)
    res = experiment_single_eig(model, (-2.0, 0.0, 2.0), 23, 1000, _rng(11), control_value=None)
    means = [res["summary"][v]["schemes"]["first_order"]["weighted_mean"] for v in (-2.0, 0.0, 2.0)]
    ok = all(b > a for a, b in zip(means, means[1:]))
    return ok, "first-order weighted E[lambda_2 | lambda_1] at -2, 0, 2: " + ", ".join(f"{x:.4f}" for x in means)


SMALL_CONFIGS = {
    "circle": {"params": {"samples": 20000, "reruns": 2, "checkpoints": [1000]}},
    "theorem3": {"params": {"samples": 20000}},
    "sphere_collection": {"params": {"samples": 3000}, "weights": {"normalization_mc_samples": 500}},
    "volume_estimator": {"params": {"samples": 200}},
    "algebraic_bound": {"params": {"calibration_samples": 20000}},
    "airy_single": {"params": {"i_max": 15, "control_iters": 5}},
    "airy_multi": {"params": {"i_max": 10, "rejection_draws": 20000}},
    "gaussian_sanity": {"params": {"i_max": 500}},
}


def _run_cli(cfg_path, out_dir):
    return subprocess.run([sys.executable, "-m", "igmcmc", "--config", cfg_path, "--output", out_dir,
                           "--threads", "1"], capture_output=True, text=True)


def criterion_12():
    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, extra in SMALL_CONFIGS.items():
            cfg = {"experiment": name, "seed": SEED, **extra}
            path = os.path.join(tmp, f"{name}.json")
            with open(path, "w") as fh:
                json.dump(cfg, fh)
            outs = []
            for rep in range(2):
                od = os.path.join(tmp, f"{name}_{rep}")
                p = _run_cli(path, od)
                if p.returncode != 0:
                    bad.append(f"{name}: exit {p.returncode} {p.stderr.strip()[-200:]}")
                    break
                outs.append([open(os.path.join(od, f), "rb").read() for f in ("samples.csv", "histogram.csv")])
            else:
                if outs[0] != outs[1]:
                    bad.append(f"{name}: CSV differs")
    return not bad, ("byte-identical CSVs for all experiments" if not bad else "; ".join(bad))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def _check(k):
    ok, detail = CRITERIA[k - 1]()
    _report(k, ok, detail)
    assert ok, detail


def test_criterion_01_circle_weight_law():
    _check(1)


def test_criterion_02_spherical_crofton():
    _check(2)


def test_criterion_03_first_order_unbiased():
    _check(3)


def test_criterion_04_curvature_unbiased():
    _check(4)


def test_criterion_05_concentration_bounds():
    _check(5)


def test_criterion_06_sphere_collection():
    _check(6)


def test_criterion_07_volume_from_curvature():
    _check(7)


def test_criterion_08_airy_gradients():
    _check(8)


def test_criterion_09_airy_tail():
    _check(9)


def test_criterion_10_weighting_schemes():
    _check(10)


def test_criterion_11_mean_shift():
    _check(11)


def test_criterion_12_determinism():
    _check(12)


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        try:
            ok, detail = fn()
        except Exception as exc:  # report and continue
            ok, detail = False, f"error: {type(exc).__name__}: {exc}"
        _report(i, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
