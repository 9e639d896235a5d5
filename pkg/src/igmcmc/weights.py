"""Traditional, first-order (Crofton) and curvature (Chern-Gauss-Bonnet) weights.

Conventions
-----------
``f`` is a :class:`~igmcmc.manifold.TargetDensity` (or None for a constant
density), ``rho`` an optional callable giving the step-distance density at
r. Curvature pre-weights are only implemented for effective codimension one
(a hypersurface of the search subspace or of its great sphere).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import DegenerateIntersectionError, EstimationError, InputError
from .geometry import (CroftonConstant, SearchSubspace, SphereRestriction, _complement,
                       haar_batch, sphere_tangent_basis, sphere_volume,
                       subspace_sphere_tangent_basis)
from .manifold import ConstraintManifold, hessian, jacobian, restricted_jacobian_det

SCHEMES = ("traditional", "first_order", "curvature")


@dataclass(frozen=True)
class WeightConfig:
    scheme: str = "first_order"
    cutoff_low: float = 1e-8
    cutoff_high: float = 1e8
    normalization_mc_samples: int = 1000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown weight scheme {self.scheme!r}")
        if not (0 <= self.cutoff_low < self.cutoff_high):
            raise InputError("need 0 <= cutoff_low < cutoff_high")
        if self.scheme == "curvature" and self.normalization_mc_samples < 100:
            raise InputError("curvature scheme needs normalization_mc_samples >= 100")

    def clamp(self, v):
        return np.clip(v, self.cutoff_low, self.cutoff_high)


@dataclass(frozen=True)
class CurvatureForm:
    """Second fundamental form of the intersection and its |Pf|.

    ``pfaffian_abs`` is normalised so that for a hypersurface of flat space
    it equals |det(shape_matrix)| (the Gauss-Kronecker curvature).
    ``ambient_curvature`` is the sectional curvature of the space the
    intersection sits in (0 for a flat subspace, 1/r^2 for a great sphere).
    """

    shape_matrix: np.ndarray
    pfaffian_abs: float
    ambient_curvature: float = 0.0

    @property
    def dim(self) -> int:
        return self.shape_matrix.shape[0]


def _density(f, x) -> float:
    return 1.0 if f is None else f(x)


def _step(rho, sph, x) -> float:
    if rho is None:
        return 1.0
    return float(rho(np.linalg.norm(np.asarray(x) - sph.center)))


def traditional_weight(m: ConstraintManifold, f, S: SearchSubspace, sph: SphereRestriction,
                       x, rho: Optional[Callable] = None, J=None) -> float:
    """f(x) rho(r) / |grad lambda restricted to the tangent of S cap sphere|."""
    if m.codim == 0:
        return _density(f, x) * _step(rho, sph, x)
    T = subspace_sphere_tangent_basis(S, sph, x)
    return _density(f, x) * _step(rho, sph, x) / restricted_jacobian_det(m, x, T, J)


def first_order_weight(m: ConstraintManifold, f, sph: SphereRestriction, x,
                       c: Optional[CroftonConstant] = None, rho: Optional[Callable] = None,
                       subspace_volume: Optional[float] = None, J=None) -> float:
    """(c / Vol_d(S)) f(x) rho(r) / |grad lambda restricted to the sphere tangent|.

    The restriction is to the whole (n-1)-dimensional tangent space of the
    sphere, so the value does not depend on the orientation of S. Without
    ``c`` the constant prefactor is dropped. ``subspace_volume`` defaults to
    Vol(S^d) for spherical constants and 1 for euclidean ones.
    """
    pref = 1.0
    if c is not None:
        if subspace_volume is None:
            subspace_volume = sphere_volume(c.d) if c.space == "spherical" else 1.0
        pref = c.value / subspace_volume
    w = pref * _density(f, x) * _step(rho, sph, x)
    if m.codim == 0:
        return w
    return w / restricted_jacobian_det(m, x, sphere_tangent_basis(sph, x), J)


# ---------------------------------------------------------------------------
# curvature


def _dfact(k: int) -> float:
    # (k)!! for odd k >= -1
    out = 1.0
    while k > 1:
        out *= k
        k -= 2
    return out


def _elementary(kappa: np.ndarray) -> np.ndarray:
    """Elementary symmetric polynomials e_0..e_m along the last axis."""
    kappa = np.asarray(kappa, dtype=float)
    m = kappa.shape[-1]
    e = np.zeros(kappa.shape[:-1] + (m + 1,))
    e[..., 0] = 1.0
    for i in range(m):
        e[..., 1:i + 2] = e[..., 1:i + 2] + kappa[..., i:i + 1] * e[..., 0:i + 1]
    return e


def lipschitz_killing(kappa: np.ndarray, ambient_curvature: float = 0.0) -> np.ndarray:
    """Normalised Pfaffian of a hypersurface with principal curvatures ``kappa``.

    Sits in a space form of sectional curvature K. By the Gauss equation the
    curvature operator is diagonal in the principal frame with entries
    K + kappa_i kappa_j, and the Pfaffian is a sum over perfect matchings,
    which collapses to

        sum_s K^{m/2-s} (2s-1)!! (m-2s-1)!! e_{2s}(kappa) / (m-1)!!.

    For K = 0 this is det(shape); for odd m we return |det(shape)|.
    """
    kappa = np.asarray(kappa, dtype=float)
    m = kappa.shape[-1]
    if m == 0:
        return np.ones(kappa.shape[:-1])
    if ambient_curvature == 0.0 or m % 2 == 1:
        return np.abs(np.prod(kappa, axis=-1))
    e = _elementary(kappa)
    tot = np.zeros(kappa.shape[:-1])
    for s in range(m // 2 + 1):
        tot = tot + (ambient_curvature ** (m // 2 - s) * _dfact(2 * s - 1)
                     * _dfact(m - 2 * s - 1) * e[..., 2 * s])
    return np.abs(tot / _dfact(m - 1))


def _section_frame(S: Optional[SearchSubspace], sph: Optional[SphereRestriction], x):
    """Tangent basis of the ambient piece (S or S cap sphere) and its data.

    Returns (B, center', radius') where center'/radius' describe the great
    sphere S cap sphere (None for the flat case).
    """
    if sph is None:
        return S.basis, None, None
    B = subspace_sphere_tangent_basis(S, sph, x)
    # sphere of S cap sph: centered at the foot of sph.center on S
    y = sph.center - S.center
    c2 = S.center + S.basis @ (S.basis.T @ y)
    r2 = float(np.linalg.norm(np.asarray(x) - c2))
    return B, c2, r2


def intersection_curvature(m: ConstraintManifold, S: SearchSubspace,
                           sph: Optional[SphereRestriction], x, J=None, H=None) -> CurvatureForm:
    """Shape operator and |Pf| of S cap M (cap sphere) at x.

    With ``sph=None`` the intersection S cap M is treated as a hypersurface
    of the flat affine plane S. With a sphere, S cap M cap sphere is a
    hypersurface of the great sphere S cap sphere and the Gauss equation
    adds that sphere's curvature.
    """
    if m.codim != 1:
        raise InputError("curvature pre-weights need effective codimension one")
    x = np.asarray(x, dtype=float)
    g = (jacobian(m, x) if J is None else np.asarray(J))[0]
    Hm = (hessian(m, x) if H is None else np.asarray(H))[0]
    B, c2, r2 = _section_frame(S, sph, x)
    gs = B.T @ g
    ngs = float(np.linalg.norm(gs))
    if ngs <= 1e-10 * max(float(np.linalg.norm(g)), 1e-300):
        raise DegenerateIntersectionError("subspace tangent to the manifold")
    if B.shape[1] == 1:
        return CurvatureForm(np.zeros((0, 0)), 1.0, 0.0 if sph is None else 1.0 / r2 ** 2)
    T = B @ _complement(gs / ngs)
    hess = T.T @ Hm @ T
    K = 0.0
    if sph is not None:
        hess = hess - np.eye(T.shape[1]) * float(g @ (x - c2)) / r2 ** 2
        K = 1.0 / r2 ** 2
    A = -0.5 * (hess + hess.T) / ngs
    kappa = np.linalg.eigvalsh(A)
    pf = float(lipschitz_killing(kappa, K))
    return CurvatureForm(A, pf, K)


def _batch_complement(v: np.ndarray) -> np.ndarray:
    """Householder complements of unit rows v (b, p) -> (b, p, p-1)."""
    b, p = v.shape
    i = np.argmax(np.abs(v), axis=1)
    e = np.zeros_like(v)
    e[np.arange(b), i] = 1.0
    sgn = np.sign(v[np.arange(b), i])
    sgn[sgn == 0] = 1.0
    w = v - sgn[:, None] * e
    nw2 = (w * w).sum(axis=1)
    nw2[nw2 == 0] = 1.0
    H = np.eye(p)[None] - 2.0 * w[:, :, None] * w[:, None, :] / nw2[:, None, None]
    # drop column i of each reflector
    keep = np.ones((b, p), dtype=bool)
    keep[np.arange(b), i] = False
    return H.transpose(0, 2, 1)[keep].reshape(b, p - 1, p).transpose(0, 2, 1)


def _pre_weights(g, Hm, frames, cfg: WeightConfig, x=None, center=None, radius=None):
    """Clamped pre-weights and normal projections for a batch of frames.

    frames: (b, n, p) orthonormal bases of the ambient piece at x.
    Returns (pre_weight, |frame^T g|).
    """
    gs = np.einsum("bnp,n->bp", frames, g)
    ng = np.linalg.norm(gs, axis=1)
    ok = ng > 1e-12 * max(np.linalg.norm(g), 1e-300)
    p = frames.shape[2]
    pf = np.zeros(frames.shape[0])
    if p == 1:
        pf[:] = 1.0
    elif ok.any():
        F = frames[ok]
        C = _batch_complement(gs[ok] / ng[ok, None])
        T = F @ C
        hess = np.einsum("bni,nm,bmj->bij", T, Hm, T)
        K = 0.0
        if center is not None:
            hess = hess - np.eye(p - 1)[None] * float(g @ (x - center)) / radius ** 2
            K = 1.0 / radius ** 2
        A = -hess / ng[ok, None, None]
        kappa = np.linalg.eigvalsh(0.5 * (A + A.transpose(0, 2, 1)))
        pf[ok] = lipschitz_killing(kappa, K)
    pre = np.where(ok, cfg.clamp(pf), 0.0)
    return pre, ng


def _tilted_frames(nu: np.ndarray, p: int, b: int, rng: np.random.Generator):
    """Haar p-frames of R^N drawn with the normal overlap eps = |frame^T nu| tilted.

    A Haar p-subspace V with |P_V nu| = eps is span(u) + W where
    u = eps nu + sqrt(1 - eps^2) t, t is uniform in nu^perp and W is a Haar
    (p-1)-subspace orthogonal to nu and t. Under Haar, eps^2 is
    Beta(p/2, (N-p)/2); for p >= 2 we draw it from Beta(1, (N-p)/2)
    instead, which cancels the eps^{-(p-2)} blow-up of |Pf| * gdet at
    nearly tangent frames, and return the likelihood ratios.

    Returns:
        (frames (b, N, p), eps (b,), importance weights (b,))
    """
    N = nu.size
    bshape = (N - p) / 2.0
    if p < 2 or p >= N:
        F = haar_batch(N, p, b, rng)
        return F, np.abs(np.einsum("bnp,n->bp", F, nu)).reshape(b, -1), np.ones(b)
    e2 = rng.beta(1.0, bshape, b)
    iw = np.exp(stats.beta.logpdf(e2, p / 2.0, bshape) - stats.beta.logpdf(e2, 1.0, bshape))
    eps = np.sqrt(e2)
    V0 = haar_batch(N - 1, p, b, rng)
    loc = np.zeros((b, N, p))
    loc[:, 0, 0] = eps
    loc[:, 1:, 0] = np.sqrt(1.0 - e2)[:, None] * V0[:, :, 0]
    loc[:, 1:, 1:] = V0[:, :, 1:]
    # Householder reflection taking e_1 to nu
    w = -nu.copy()
    w[0] += 1.0
    nw = float(w @ w)
    if nw > 1e-30:
        loc = loc - 2.0 * np.einsum("i,bip->bp", w, loc)[:, None, :] * w[None, :, None] / nw
    return loc, eps, iw


def curvature_normalization(m: ConstraintManifold, x, d: int, mc: int, rng: np.random.Generator,
                            cfg: Optional[WeightConfig] = None,
                            sph: Optional[SphereRestriction] = None, chunk: int = 4096):
    """E_Q[clamp|Pf(S_Q cap M)| * gdet(normal^T Q)] by Monte Carlo.

    Flat case (``sph=None``): Q is a Haar d-frame and S_Q = x + span(Q).
    Sphere case: S_Q is a Haar great (d-1)-sphere of ``sph`` through x, i.e.
    Q is a Haar (d-1)-frame of the sphere's tangent space at x, and the
    normal is that of M cap sphere inside the sphere.

    The overlap between the frame and the normal is importance sampled (see
    :func:`_tilted_frames`); without it the estimator has infinite variance
    for frame dimension >= 4.

    Returns:
        (mean, standard_error)
    """
    if m.codim != 1:
        raise InputError("curvature pre-weights need effective codimension one")
    if mc < 1:
        raise InputError("mc must be positive")
    cfg = WeightConfig("curvature", normalization_mc_samples=max(mc, 100)) if cfg is None else cfg
    x = np.asarray(x, dtype=float)
    g = jacobian(m, x)[0]
    Hm = hessian(m, x)[0]
    n = m.ambient_dim
    if sph is None:
        T, p = np.eye(n), d
    else:
        T, p = sphere_tangent_basis(sph, x), d - 1
    gl = T.T @ g
    gt = float(np.linalg.norm(gl))
    if gt == 0:
        raise DegenerateIntersectionError("manifold tangent to the ambient piece")
    nu = gl / gt
    tot = tot2 = 0.0
    done = 0
    while done < mc:
        b = min(chunk, mc - done)
        L, _, iw = _tilted_frames(nu, p, b, rng)
        P = np.einsum("ij,bjk->bik", T, L)
        if sph is None:
            pre, ng = _pre_weights(g, Hm, P, cfg)
        else:
            pre, ng = _pre_weights(g, Hm, P, cfg, x, sph.center, sph.radius)
        v = iw * pre * ng / gt
        tot += v.sum()
        tot2 += (v * v).sum()
        done += b
    mean = tot / mc
    if not mean > 0:
        raise EstimationError("all normalisation draws degenerate")
    se = np.sqrt(max(tot2 / mc - mean ** 2, 0.0) / mc)
    return float(mean), float(se)


class NormalizationCache:
    """Thread-safe memo for normalisations of homogeneous manifolds."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        with self._lock:
            self._store.setdefault(key, value)
        return self._store[key]


def curvature_weight(m: ConstraintManifold, f, S: SearchSubspace, sph: SphereRestriction, x,
                     cfg: WeightConfig, rng: np.random.Generator,
                     c: Optional[CroftonConstant] = None, rho: Optional[Callable] = None,
                     normalization: Optional[float] = None,
                     cache: Optional[NormalizationCache] = None) -> float:
    """first_order_weight * clamp(|Pf|) / E_Q[...].

    Without ``c`` this is exactly f rho / |grad lambda|_sphere * pre / E_Q.
    ``normalization`` skips the Monte Carlo; ``cache`` reuses it for
    homogeneous manifolds (keyed by d and the step radius).
    """
    J = jacobian(m, x)
    w1 = first_order_weight(m, f, sph, x, c, rho, J=J)
    form = intersection_curvature(m, S, sph, x, J=J)
    if normalization is None:
        key = (id(m), S.dim, round(sph.radius, 12)) if (cache is not None and m.homogeneous) else None
        if key is not None:
            normalization = cache.get(key)
        if normalization is None:
            normalization, _ = curvature_normalization(
                m, x, S.dim, cfg.normalization_mc_samples, rng, cfg, sph)
            if key is not None:
                normalization = cache.put(key, normalization)
    return float(w1 * cfg.clamp(form.pfaffian_abs) / normalization)


def weight_for(scheme: str, m, f, S, sph, x, cfg: WeightConfig, rng, rho=None,
               c=None, cache=None, J=None) -> float:
    """Dispatch on the scheme tag."""
    if scheme == "traditional":
        return traditional_weight(m, f, S, sph, x, rho, J)
    if scheme == "first_order":
        return first_order_weight(m, f, sph, x, c, rho, J=J)
    if scheme == "curvature":
        return curvature_weight(m, f, S, sph, x, cfg, rng, c, rho, cache=cache)
    raise InputError(f"unknown scheme {scheme!r}")
