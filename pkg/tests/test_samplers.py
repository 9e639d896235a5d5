import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igmcmc.errors import EstimationError, InputError
from igmcmc.geometry import SphereRestriction, haar_batch, sphere_tangent_basis
from igmcmc.manifold import (ConstraintManifold, full_space, restricted_jacobian_det, sphere,
                             standard_gaussian)
from igmcmc.samplers import (ChiStep, adjust_parity, effective_sample_size, fd_edges,
                             normalized_weight_variance, run_deterministic_gibbs, run_gibbs_mcmc,
                             run_independent_gaussian, search_sphere_factor, weighted_histogram,
                             weighted_ks_distance, weighted_ks_to_cdf, weighted_mean,
                             weighted_quantile, weighted_variance)
from igmcmc.solver import SolverConfig
from igmcmc.weights import WeightConfig


def test_adjust_parity():
    assert adjust_parity(3, 1, 10) == 4
    assert adjust_parity(4, 1, 10) == 4
    assert adjust_parity(5, 1, 10) == 6
    assert adjust_parity(5, 1, 5) == 5


def test_chi_step_density_and_draws():
    s = ChiStep(3, 2.0)
    rng = np.random.default_rng(0)
    r = np.array([s.sample(rng) for _ in range(20000)])
    assert r.mean() == pytest.approx(2.0 * math.sqrt(8 / math.pi), rel=0.02)
    assert s(1.0) > 0
    with pytest.raises(InputError):
        ChiStep(0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=50), st.floats(0.1, 10))
def test_weighted_estimators_scale_invariant(vals, c):
    v = np.array(vals)
    w = np.linspace(1, 2, v.size)
    assert np.allclose(weighted_mean(v, w), weighted_mean(v, c * w))
    assert np.allclose(weighted_variance(v, w), weighted_variance(v, c * w), atol=1e-9)
    assert effective_sample_size(w) == pytest.approx(effective_sample_size(c * w))
    assert weighted_ks_distance(v, w, v, c * w) == pytest.approx(0.0, abs=1e-12)


def test_unit_weights_reduce_to_plain_estimators():
    v = np.random.default_rng(1).standard_normal(500)
    w = np.ones_like(v)
    assert weighted_mean(v, w) == pytest.approx(v.mean())
    assert weighted_variance(v, w) == pytest.approx(v.var())
    assert effective_sample_size(w) == pytest.approx(500)
    assert normalized_weight_variance(w) == 0.0
    assert weighted_quantile(v, w, 0.5) == pytest.approx(np.median(v), abs=0.05)


def test_histogram_and_ks_to_cdf():
    from scipy import stats
    v = np.random.default_rng(2).standard_normal(20000)
    h = weighted_histogram(v, weights=np.ones_like(v))
    assert h.mass.sum() == pytest.approx(20000)
    assert np.sum(h.density * np.diff(h.edges)) == pytest.approx(1.0)
    assert weighted_ks_to_cdf(v, np.ones_like(v), stats.norm.cdf) < 0.02
    assert fd_edges(np.ones(10)).size == 2
    with pytest.raises(InputError):
        weighted_mean(np.zeros(0), np.zeros(0))


def test_full_space_gibbs_targets_gaussian():
    m = full_space(3)
    run = run_gibbs_mcmc(m, standard_gaussian(), 2, ChiStep(3, 1.5), SolverConfig(), WeightConfig(),
                         20000, np.zeros(3), np.random.default_rng(3), n_starts=6)
    X = run.points[2000:]
    assert np.abs(X.mean(axis=0)).max() < 0.1
    assert np.abs(np.cov(X.T) - np.eye(3)).max() < 0.15
    assert 0 < run.counters.accepted <= 20000


def test_gibbs_on_sphere_stays_on_sphere():
    m = sphere(4, 1.0)
    x0 = np.array([1.0, 0, 0, 0])
    run = run_gibbs_mcmc(m, None, 2, ChiStep(4, 0.5), SolverConfig(), WeightConfig(), 50, x0,
                         np.random.default_rng(4), n_starts=4)
    assert np.allclose(np.linalg.norm(run.points, axis=1), 1.0, atol=1e-8)
    with pytest.raises(InputError):
        run_gibbs_mcmc(m, None, 2, ChiStep(4), SolverConfig(), WeightConfig(), 5, np.zeros(4),
                       np.random.default_rng(0))


def test_independent_gaussian_on_plane_is_gaussian_marginal():
    from igmcmc.manifold import affine_plane
    m = affine_plane([[1.0, 0, 0]], [0.5])
    run = run_independent_gaussian(m, 2, 3000, SolverConfig(), WeightConfig(), np.random.default_rng(5))
    X = run.points
    assert np.allclose(X[:, 0], 0.5)
    # conditioned Gaussian: other coordinates standard normal, sampled with weights 1
    assert abs(X[:, 1].mean()) < 0.1


def test_deterministic_gibbs_weights_per_scheme():
    m = sphere(5, 1.0, center=[0.4, 0, 0, 0, 0])
    run = run_deterministic_gibbs(m, 3, 60, SolverConfig(), ("first_order", "traditional"),
                                  np.random.default_rng(6))
    wf, wt = run.weights["first_order"], run.weights["traditional"]
    assert wf.size == wt.size == run.points.shape[0] > 0
    assert np.all(wt >= wf * (1 - 1e-12))
    with pytest.raises(InputError):
        run_deterministic_gibbs(m, 3, 5, SolverConfig(), ("magic",), np.random.default_rng(0))


def test_thread_count_does_not_change_results():
    m = sphere(5, 1.0, center=[0.4, 0, 0, 0, 0])
    a = run_deterministic_gibbs(m, 3, 30, SolverConfig(), ("first_order",), np.random.default_rng(7))
    b = run_deterministic_gibbs(m, 3, 30, SolverConfig(), ("first_order",), np.random.default_rng(7),
                                threads=3)
    assert np.array_equal(a.points, b.points)


def _ellipsoid_sections(diag, size, rng):
    """All points of M cap S cap rS for random planes S through 0, r ~ chi_3.

    M = {x : sum diag_i x_i^2 = 1}. Returns points, radii and plane bases.
    """
    B = haar_batch(3, 2, size, rng)
    r = np.sqrt(rng.chisquare(3, size))
    a, b = B[:, :, 0], B[:, :, 1]
    A, C, Bc = (a * a) @ diag, (b * b) @ diag, (a * b) @ diag
    # r^2 (P + Q cos 2t + R sin 2t) = 1 on the circle x = r (cos t a + sin t b)
    P, Q = (A + C) / 2, (A - C) / 2
    amp, rhs, phi = np.hypot(Q, Bc), 1 / r**2 - P, np.arctan2(Bc, Q)
    ok = np.abs(rhs) < amp
    al = np.arccos(np.clip(rhs / amp, -1, 1))
    X, R, I = [], [], []
    for t in ((phi + al) / 2, (phi - al) / 2, (phi + al) / 2 + np.pi, (phi - al) / 2 + np.pi):
        x = r[:, None] * (np.cos(t)[:, None] * a + np.sin(t)[:, None] * b)
        X.append(x[ok]); R.append(r[ok]); I.append(np.flatnonzero(ok))
    return np.concatenate(X), np.concatenate(R), B[np.concatenate(I)]


def test_search_sphere_factor_unbiased_on_ellipsoid():
    # weight each exact intersection point; the weighted law must match the
    # Gaussian conditioned on the ellipsoid (thin-shell reference)
    rng = np.random.default_rng(7)
    diag = np.array([0.25, 1.0, 4.0])
    m = ConstraintManifold(3, 1, 1.0, lambda x: np.array([x @ (diag * x)]),
                           lambda x: (2 * diag * x)[None, :])
    X, R, B = _ellipsoid_sections(diag, 20000, rng)
    w_plain = np.empty(len(X))
    for i, (x, r) in enumerate(zip(X, R)):
        sph = SphereRestriction(np.zeros(3), r)
        w_plain[i] = 1.0 / restricted_jacobian_det(m, x, sphere_tangent_basis(sph, x))
    w = w_plain * np.array([search_sphere_factor(r, 2) for r in R])
    Z = rng.standard_normal((4_000_000, 3))
    lam = (Z * Z) @ diag
    ref = Z[np.abs(lam - 1) < 0.01, 2] ** 2
    v = X[:, 2] ** 2
    se = np.hypot(ref.std() / np.sqrt(ref.size), v.std() / np.sqrt(effective_sample_size(w)))
    assert abs(weighted_mean(v, w) - ref.mean()) < 4 * se
    assert abs(weighted_mean(v, w_plain) - ref.mean()) > 8 * se
