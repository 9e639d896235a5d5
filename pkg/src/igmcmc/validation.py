"""Checks of the geometric identities, weight laws and variance bounds.

Everything here works with analytic intersection volumes (spheres, caps,
circles) so that Monte Carlo error is the only error source.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import betaln

from .errors import DegenerateIntersectionError, InputError
from .geometry import (SearchSubspace, SphereRestriction, ball_volume, crofton_constant,
                       kinematic_planes, sphere_volume)
from .manifold import ConstraintManifold, jacobian, sphere
from .weights import (WeightConfig, _dfact, curvature_normalization, first_order_weight,
                      intersection_curvature, lipschitz_killing)


# ---------------------------------------------------------------------------
# traditional weights on the unit circle


def circle_traditional_weights(x: np.ndarray) -> np.ndarray:
    """w(x) = sqrt(1 + x^2 / (1 - x^2)) for vertical lines at abscissa x."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x / (1.0 - x * x))


def circle_weight_experiment(samples: int, rng: np.random.Generator,
                             checkpoints: Sequence[int] = (10_000,), return_draws: bool = False) -> dict:
    """Traditional vs first-order weights for lines hitting the unit circle.

    Each draw is a vertical line at x ~ U[-1, 1] meeting the circle twice,
    so the per-draw estimate of the circumference is 2 * 2 * w(x) (interval
    length times the two intersections). First-order weights are the ratio
    |grad| / |grad| at the intersection points, i.e. identically one.

    Returns a dict with the mean/variance of the per-draw traditional
    estimate, its running variance at ``checkpoints`` (and at ``samples``),
    and the first-order weight variance. With ``return_draws`` the abscissae
    and per-draw estimates are included as ``x`` and ``traditional``.
    """
    if samples < 2:
        raise InputError("need at least two samples")
    x = rng.uniform(-1.0, 1.0, samples)
    t = 4.0 * circle_traditional_weights(x)
    y = np.sqrt(1.0 - x * x)
    g = np.stack([x, y], axis=1)
    ng = np.linalg.norm(g, axis=1)
    fo = ng / ng
    cps = sorted({int(c) for c in checkpoints if 2 <= c <= samples} | {samples})
    running = {c: float(np.var(t[:c], ddof=1)) for c in cps}
    mean = float(t.mean())
    out = {"samples": samples, "mean_traditional": mean,
           "rel_err": abs(mean - 2 * np.pi) / (2 * np.pi),
           "var_traditional": running[samples], "running_variance": running,
           "mean_first_order": float(fo.mean()),
           "var_first_order": float(np.var(fo))}
    if return_draws:
        out["x"], out["traditional"] = x, t
    return out


def circle_variance_reruns(reruns: int, samples: int, early: int,
                           rng: np.random.Generator) -> dict:
    """How often the running variance at ``samples`` exceeds that at ``early``."""
    wins = 0
    rows = []
    for g in rng.spawn(reruns):
        r = circle_weight_experiment(samples, g, (early,))
        a, b = r["running_variance"][early], r["running_variance"][samples]
        wins += b > a
        rows.append((a, b, r["mean_traditional"]))
    return {"reruns": reruns, "increases": int(wins), "rows": rows}


def circle_arc_uniformity(samples: int, rng: np.random.Generator) -> dict:
    """Weighted KS test of traditional-weighted arc positions against uniform.

    One of the two intersection points of each vertical line is picked at
    random; its angle, weighted by the traditional weight, should be uniform
    on [0, 2 pi). The KS p-value uses the effective sample size.
    """
    from .samplers import effective_sample_size, weighted_ks_to_cdf

    r = circle_weight_experiment(samples, rng, (), return_draws=True)
    x = r["x"]
    sign = rng.choice([-1.0, 1.0], x.size)
    theta = np.mod(np.arctan2(sign * np.sqrt(1.0 - x * x), x), 2 * np.pi)
    w = r["traditional"]
    D = weighted_ks_to_cdf(theta, w, lambda t: t / (2 * np.pi))
    ess = effective_sample_size(w)
    return {"ks": D, "ess": ess, "p_value": float(stats.kstwo.sf(D, max(int(ess), 1)))}


# ---------------------------------------------------------------------------
# concentration of the euclidean kinematic measure


def phi(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    a = 1.0 / alpha
    return float(np.log(2.0) + a * np.log(a) - (a / 2 + 0.5) * np.log(a + 1)
                 - (a / 2 - 0.5) * np.log(a - 1))


def _root(n, d):
    return np.sqrt((n - 1) * (n / d - 1) / ((d - 1) * (n + d - 2)))


def k_lower(n: int, d: int) -> float:
    a = d / n
    return float((2 * np.pi) ** 1.5 / np.e ** 4 * (n - d) ** 2 * _root(n, d)
                 * np.exp(-1.0 - (1 + a) / (1 + a - 2.0 / d)))


def k_upper(n: int, d: int) -> float:
    return float(np.e ** 3 / (4 * np.pi ** 2) * (n - d) ** 2 * _root(n, d)
                 * np.exp(1.0 - n / (n - 1)))


def concentration_bounds(n: int, d: int):
    """(lower, upper) bounds on the normalised intersection-volume variance."""
    if not 2 <= d < n:
        raise InputError("need 2 <= d < n")
    e = np.exp(d * phi(d / n))
    return k_lower(n, d) * e - 1.0, k_upper(n, d) * e - 1.0


def section_variance_exact(n: int, d: int, ball_radius: float = 1.0, conditioned: bool = True) -> float:
    """Closed-form normalised variance of Vol(S cap unit sphere).

    Foot distance t has density m t^{m-1} / L^m on [0, L] (m = n - d) and
    the section volume is proportional to (1 - t^2)^{(d-1)/2} for t < 1.
    """
    m = n - d
    L = float(ball_radius)
    if L < 1.0:
        raise InputError("ball_radius must be >= 1")

    def mom(a):
        return (m / 2) * np.exp(betaln(m / 2, a + 1))

    v = mom(d - 1) / mom((d - 1) / 2) ** 2
    if not conditioned:
        v *= L ** m
    return float(v - 1.0)


@dataclass(frozen=True)
class ConcentrationReport:
    n: int
    d: int
    alpha: float
    empirical_var: float
    lower_bound: float
    upper_bound: float
    samples: int
    unconditioned_var: float = float("nan")
    ball_radius: float = 1.0
    exact_var: float = float("nan")

    def __post_init__(self):
        if not self.lower_bound <= self.upper_bound:
            raise InputError("lower bound exceeds upper bound")

    @property
    def within_bounds(self) -> bool:
        return self.lower_bound <= self.empirical_var <= self.upper_bound

    @property
    def unconditioned_within_bounds(self) -> bool:
        return self.lower_bound <= self.unconditioned_var <= self.upper_bound

    def as_dict(self):
        out = asdict(self)
        out["within_bounds"] = self.within_bounds
        out["unconditioned_within_bounds"] = self.unconditioned_within_bounds
        return out


def section_volumes(n: int, d: int, samples: int, ball_radius: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Vol(S cap S^{n-1}) for kinematic d-planes with foot point in a ball.

    The volume depends only on the foot distance, which for a foot point
    uniform in the (n-d)-ball of radius L is L U^{1/(n-d)}; the plane
    orientation is irrelevant for a sphere centred at the origin.
    """
    m = n - d
    t = ball_radius * rng.random(samples) ** (1.0 / m)
    v = np.zeros(samples)
    hit = t < 1.0
    v[hit] = sphere_volume(d - 1) * (1.0 - t[hit] ** 2) ** (0.5 * (d - 1))
    return v


def _normalised_var(v):
    mu = v.mean()
    return float(np.var(v / mu, ddof=1))


def theorem3_check(n: int, d_list: Sequence[int], samples: int, rng: np.random.Generator,
                   ball_radius: float = 1.0):
    """Normalised variance of section volumes against the closed-form bounds.

    The conditioned variant keeps only planes that meet the sphere; the
    unconditioned one keeps the zero volumes of planes with foot point in
    the ball of radius ``ball_radius`` (identical to the conditioned one
    when the radius is 1).
    """
    out = []
    for d in d_list:
        if not 2 <= d < n:
            raise InputError("need 2 <= d < n")
        lo, hi = concentration_bounds(n, d)
        vc = section_volumes(n, d, samples, 1.0, rng)
        vu = vc if ball_radius == 1.0 else section_volumes(n, d, samples, ball_radius, rng)
        out.append(ConcentrationReport(n, d, d / n, _normalised_var(vc[vc > 0]), lo, hi, samples,
                                       _normalised_var(vu), float(ball_radius),
                                       section_variance_exact(n, d)))
    return out


# ---------------------------------------------------------------------------
# collection of equal spheres


def _flat_sphere_normalization(n: int, d: int, radius: float) -> float:
    # E_Q[|Pf| gdet] for a round sphere cut by a d-plane through a surface point
    a, b = d / 2.0, (n - d) / 2.0
    from scipy.special import gammaln
    return float(radius ** (-(d - 1)) * np.exp(gammaln(a + b) - gammaln(1 + b) - gammaln(a)))


def sphere_collection_experiment(n: int, d: int, n_spheres: int, radius: float, samples: int,
                                 weights: WeightConfig, rng: np.random.Generator,
                                 center_spread: float = 0.3, bins: int = 10) -> dict:
    """Raw-volume vs curvature weighting on a collection of equal spheres.

    Centres are drawn once, uniform in a ball of radius ``center_spread``.
    Each draw is a kinematic d-plane with foot point uniform in the ball of
    radius ``radius + max |centre|`` (so every sphere is hit with the same
    probability); one intersected sphere is selected with probability
    proportional to its weighted section volume.

    Uniformity statistic: the randomised rank of the selected sphere's foot
    distance among all intersected spheres of the draw. Under uniform
    selection among intersected spheres it is U(0, 1); raw-volume weighting
    favours near-central cuts. Per-sphere counts are also tested.
    """
    if n_spheres < 1 or not 1 <= d < n or radius <= 0:
        raise InputError("invalid sphere collection parameters")
    m = n - d
    C = rng.standard_normal((n_spheres, n))
    C *= (center_spread * rng.random(n_spheres) ** (1.0 / n)
          / np.linalg.norm(C, axis=1))[:, None]
    L = radius + float(np.linalg.norm(C, axis=1).max())
    mc = weights.normalization_mc_samples
    probe = sphere(n, radius)
    x0 = np.zeros(n)
    x0[0] = radius
    norm_mc, norm_se = curvature_normalization(probe, x0, d, mc, rng, weights)
    norm_exact = _flat_sphere_normalization(n, d, radius)

    res = {"raw": {"ranks": [], "counts": np.zeros(n_spheres, dtype=np.int64), "vols": []},
           "curvature": {"ranks": [], "counts": np.zeros(n_spheres, dtype=np.int64), "vols": []}}
    draws = hits_total = 0
    chunk = 20_000
    while draws < samples:
        b = min(chunk, samples - draws)
        draws += b
        Q, U, o = kinematic_planes(n, d, b, L, rng)
        off = np.einsum("bni,sn->bsi", U, C) - o[:, None, :]
        dist2 = (off * off).sum(axis=2)
        hit = dist2 < radius ** 2
        r = np.sqrt(np.clip(radius ** 2 - dist2, 0.0, None))
        vol = np.where(hit, sphere_volume(d - 1) * r ** (d - 1), 0.0)
        kappa = np.where(hit, 1.0 / np.where(hit, r, 1.0), 0.0)
        pf = lipschitz_killing(np.repeat(kappa[..., None], d - 1, axis=2), 0.0)
        cvol = np.where(hit, vol * weights.clamp(pf) / norm_mc, 0.0)
        nh = hit.sum(axis=1)
        rows = np.flatnonzero(nh > 0)
        hits_total += int(nh.sum())
        for tag, W in (("raw", vol), ("curvature", cvol)):
            Wr = W[rows]
            p = Wr / Wr.sum(axis=1, keepdims=True)
            u = rng.random(rows.size)
            sel = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
            sel = np.minimum(sel, n_spheres - 1)
            # rank of the selected sphere's foot distance among the hit spheres
            dr = np.where(hit[rows], dist2[rows], np.inf)
            dsel = dr[np.arange(rows.size), sel]
            below = (dr < dsel[:, None]).sum(axis=1)
            ur = (below + rng.random(rows.size)) / nh[rows]
            res[tag]["ranks"].append(ur)
            res[tag]["counts"] += np.bincount(sel, minlength=n_spheres)
            Wh = W[hit]
            res[tag]["vols"].append(Wh)

    out = {"n": n, "d": d, "n_spheres": n_spheres, "radius": radius, "samples": samples,
           "ball_radius": L, "intersections": hits_total,
           "normalization_mc": norm_mc, "normalization_se": norm_se,
           "normalization_exact": norm_exact}
    for tag, r in res.items():
        ur = np.concatenate(r["ranks"])
        obs = np.histogram(ur, bins=bins, range=(0.0, 1.0))[0]
        chi_rank = stats.chisquare(obs)
        chi_count = stats.chisquare(r["counts"])
        v = np.concatenate(r["vols"])
        out[tag] = {"selections": int(ur.size),
                    "rank_chi2": float(chi_rank.statistic), "rank_p": float(chi_rank.pvalue),
                    "count_chi2": float(chi_count.statistic), "count_p": float(chi_count.pvalue),
                    "volume_variance": float(np.var(v / v.mean(), ddof=1)),
                    "counts": r["counts"].tolist(), "rank_histogram": obs.tolist()}
    return out


# ---------------------------------------------------------------------------
# volume from the Gauss-Bonnet-Chern integrand


def pfaffian_from_shape(kappa: np.ndarray) -> np.ndarray:
    """Chern-normalised Pf(Omega) of a hypersurface of flat space: (m-1)!! prod kappa."""
    kappa = np.asarray(kappa, dtype=float)
    m = kappa.shape[-1]
    return _dfact(m - 1) * np.prod(kappa, axis=-1)


def volume_from_curvature(sampler: Callable, euler_char: int, m: int, samples: int,
                          rng: np.random.Generator) -> dict:
    """(2 pi)^{m/2} chi / E_M[Pf(Omega)] from uniform points on M.

    ``sampler(size, rng)`` must return Pf(Omega) evaluated at ``size``
    uniform points of M.
    """
    if m % 2:
        raise InputError("m must be even")
    if euler_char == 0:
        raise InputError("Euler characteristic 0 leaves the volume undetermined")
    pf = np.asarray(sampler(samples, rng), dtype=float)
    mu = float(pf.mean())
    if mu == 0 or not np.isfinite(mu):
        raise DegenerateIntersectionError("mean Pfaffian vanished")
    vol = (2 * np.pi) ** (m / 2) * euler_char / mu
    se = float(pf.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
    return {"volume": vol, "mean_pf": mu, "pf_stderr": se, "samples": samples,
            "volume_stderr": abs(vol) * se / abs(mu) if np.isfinite(se) else float("nan"),
            "values": pf}


def round_sphere_sampler(m: int, radius: float) -> Callable:
    """Sampler for :func:`volume_from_curvature` on the round m-sphere.

    Points are uniform; principal curvatures come from the manifold Hessian
    and gradient through :func:`intersection_curvature` with S = R^{m+1}.
    """
    M = sphere(m + 1, radius)
    B = np.eye(m + 1)

    def draw(size, rng):
        X = rng.standard_normal((size, m + 1))
        X *= radius / np.linalg.norm(X, axis=1, keepdims=True)
        out = np.empty(size)
        for i, x in enumerate(X):
            form = intersection_curvature(M, SearchSubspace(B, x), None, x)
            kappa = np.linalg.eigvalsh(form.shape_matrix)
            out[i] = pfaffian_from_shape(kappa)
        return out

    return draw


# ---------------------------------------------------------------------------
# algebraic bound


def algebraic_volume_bound(s: int, d: int, k: int, n: int, b: float, space: str = "euclidean",
                           c: Optional[float] = None, samples: int = 200_000) -> float:
    """Upper bound (1/c)(1/b)(s (s-1)^d / 2) Vol(S^n) for a degree-s hypersurface.

    ``c`` defaults to the calibrated Crofton constant of ``space``.
    """
    if k != 1:
        raise InputError("the bound is stated for hypersurfaces (k = 1)")
    if not b > 0 or s < 1:
        raise InputError("need b > 0 and s >= 1")
    if c is None:
        c = crofton_constant(d, k, n, space, samples=samples).value
    return float(s * (s - 1) ** d / 2.0 * sphere_volume(n) / (c * b))


# ---------------------------------------------------------------------------
# unbiasedness of the weighted Crofton estimators


def circle_on_sphere_estimate(samples: int, rng: np.random.Generator, sphere_radius: float = 2.5,
                              height: float = 1.5) -> dict:
    """First-order weighted length of the circle {|x| = R, x_3 = h} in R^3.

    The circle is the level set of lambda = (x_3 - h)(2 + x_1 / R) on the
    sphere of radius R, a level function whose gradient varies along the
    circle. Search subspaces are Haar 2-planes through the centre, so S cap
    sphere is a random great circle; the Crofton constant on the sphere of
    radius R is R^2 Vol(S^1)^2 / Vol(S^0). Each intersection point carries
    the first-order weight times |grad lambda| restricted to the sphere
    (the coarea factor for the uniform density on the circle).
    """
    R, h = float(sphere_radius), float(height)
    if not 0 <= h < R:
        raise InputError("need 0 <= height < sphere_radius")
    lam = ConstraintManifold(3, 1, np.zeros(1),
                             lambda x: np.array([(x[2] - h) * (2 + x[0] / R)]),
                             lambda x: np.array([[(x[2] - h) / R, 0.0, 2 + x[0] / R]]),
                             name="circle_level")
    sph = SphereRestriction(np.zeros(3), R)
    Q = np.linalg.qr(rng.standard_normal((samples, 3, 2)))[0]
    nrm = np.cross(Q[:, :, 0], Q[:, :, 1])
    # plane {nrm . x = 0} meets {x_3 = h} in a line; intersect it with the sphere
    a, b3 = nrm[:, :2], nrm[:, 2]
    na2 = (a * a).sum(axis=1)
    ok = na2 > 1e-300
    foot = np.zeros((samples, 2))
    foot[ok] = -(b3[ok] * h / na2[ok])[:, None] * a[ok]
    rho2 = R * R - h * h - (foot * foot).sum(axis=1)
    hit = ok & (rho2 > 0)
    tot = np.zeros(samples)
    for i in np.flatnonzero(hit):
        t = np.array([-a[i, 1], a[i, 0]]) / np.sqrt(na2[i])
        s = np.sqrt(rho2[i])
        for sign in (1.0, -1.0):
            p = foot[i] + sign * s * t
            x = np.array([p[0], p[1], h])
            J = jacobian(lam, x)
            w1 = first_order_weight(lam, None, sph, x, J=J)
            tot[i] += w1 * _sphere_grad_norm(J[0], x)
    c = R ** 2 * sphere_volume(1) ** 2 / sphere_volume(0)
    est_draws = c / (R * sphere_volume(1)) * tot
    est = float(est_draws.mean())
    true = sphere_volume(1) * np.sqrt(R * R - h * h)
    return {"estimate": est, "true": true, "rel_err": abs(est - true) / true,
            "stderr": float(est_draws.std(ddof=1) / np.sqrt(samples)), "samples": samples,
            "hit_fraction": float(hit.mean())}


def _sphere_grad_norm(g, x):
    u = x / np.linalg.norm(x)
    return float(np.linalg.norm(g - (g @ u) * u))


def sphere_curvature_estimate(n: int, d: int, radius: float, samples: int, mc: int,
                              rng: np.random.Generator, ball_radius: Optional[float] = None,
                              numeric_every: int = 1) -> dict:
    """Curvature-weighted kinematic estimate of Vol of the radius-R sphere in R^n.

    Planes are kinematic (Haar orientation, foot point uniform in a ball of
    radius ``ball_radius``, default 1.25 R); each hit contributes
    Vol(S cap M) |Pf| / E_Q[|Pf| gdet]. The gdet factor inside the
    normalisation plays the role of the Crofton constant, so no separate
    constant enters. The Pfaffian is computed from the manifold Hessian at
    a point of the section (every ``numeric_every``-th hit; the others use
    the analytic value) and E_Q by Monte Carlo with ``mc`` draws.
    """
    if not 2 <= d < n:
        raise InputError("need 2 <= d < n")
    L = 1.25 * radius if ball_radius is None else float(ball_radius)
    if L < radius:
        raise InputError("ball must contain the sphere")
    M = sphere(n, radius)
    x0 = np.zeros(n)
    x0[0] = radius
    cfg = WeightConfig("curvature", normalization_mc_samples=mc)
    norm, norm_se = curvature_normalization(M, x0, d, mc, rng, cfg)
    m = n - d
    vals = np.zeros(samples)
    vals_an = np.zeros(samples)
    n_numeric = 0
    max_dev = 0.0
    chunk = 10_000
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        Q, U, o = kinematic_planes(n, d, b, L, rng)
        t2 = (o * o).sum(axis=1)
        hit = t2 < radius ** 2
        for j in np.flatnonzero(hit):
            r = np.sqrt(radius ** 2 - t2[j])
            vol = sphere_volume(d - 1) * r ** (d - 1)
            pf = r ** (-(d - 1))
            vals_an[done + j] = vol * cfg.clamp(pf) / norm
            if (done + j) % numeric_every == 0:
                e = rng.standard_normal(d)
                x = U[j] @ o[j] + r * (Q[j] @ (e / np.linalg.norm(e)))
                form = intersection_curvature(M, SearchSubspace(Q[j], x), None, x)
                max_dev = max(max_dev, abs(form.pfaffian_abs / pf - 1.0))
                pf = form.pfaffian_abs
                n_numeric += 1
            vals[done + j] = vol * cfg.clamp(pf) / norm
        done += b
    scale = ball_volume(m) * L ** m
    est_draws = scale * vals
    est = float(est_draws.mean())
    est_an = float(scale * vals_an.mean())
    true = sphere_volume(n - 1) * radius ** (n - 1)
    return {"estimate": est, "true": true, "rel_err": abs(est - true) / true,
            "stderr": float(est_draws.std(ddof=1) / np.sqrt(samples)),
            "estimate_analytic": est_an, "rel_err_analytic": abs(est_an - true) / true,
            "normalization": norm, "normalization_se": norm_se,
            "normalization_exact": _flat_sphere_normalization(n, d, radius),
            "numeric_pf_evaluations": n_numeric,
            "max_pf_rel_dev": max_dev, "samples": samples}
