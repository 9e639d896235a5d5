"""Isotropic subspaces, sphere restrictions and Cauchy-Crofton constants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateIntersectionError, EstimationError, InputError

ORTHO_TOL = 1e-12


def sphere_volume(m: int) -> float:
    """Volume of the unit m-sphere S^m in R^{m+1}."""
    if m < 0:
        raise InputError("sphere dimension must be >= 0")
    return float(np.exp(np.log(2.0) + 0.5 * (m + 1) * np.log(np.pi) - gammaln(0.5 * (m + 1))))


def ball_volume(m: int) -> float:
    """Volume of the unit ball in R^m."""
    return float(np.exp(0.5 * m * np.log(np.pi) - gammaln(0.5 * m + 1)))


@dataclass(frozen=True)
class SearchSubspace:
    """Affine subspace center + span(basis) with orthonormal basis (n, d)."""

    basis: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if B.ndim != 2 or B.shape[1] > B.shape[0]:
            raise InputError("basis must be (n, d) with d <= n")
        if c.shape != (B.shape[0],):
            raise InputError("center length must match the basis rows")
        if np.abs(B.T @ B - np.eye(B.shape[1])).max() > 1e-10:
            raise InputError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class SphereRestriction:
    """Sphere of radius r about a center (the step sphere around x_i)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError("radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "radius", float(self.radius))


def orthonormalize(G: np.ndarray) -> np.ndarray:
    """Q factor of G (stacked allowed) with the sign convention diag(R) > 0."""
    Q, R = np.linalg.qr(G)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    s = np.where(s == 0, 1.0, s)
    return Q * s[..., None, :]


def haar_orthogonal_columns(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """First d columns of a Haar orthogonal n x n matrix."""
    if not 1 <= d <= n:
        raise InputError("need 1 <= d <= n")
    return orthonormalize(rng.standard_normal((n, d)))


def haar_batch(n: int, d: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent Haar frames, shape (size, n, d)."""
    if not 1 <= d <= n:
        raise InputError("need 1 <= d <= n")
    return orthonormalize(rng.standard_normal((size, n, d)))


def isotropic_subspace(n: int, d: int, center, rng: np.random.Generator) -> SearchSubspace:
    """Isotropic random d-dimensional subspace through ``center``."""
    if not 1 <= d <= n:
        raise InputError("need 1 <= d <= n")
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    return SearchSubspace(haar_orthogonal_columns(n, d, rng), center)


def _complement(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of unit vector v."""
    # Householder reflector sending v to +-e_0; its other columns span v-perp
    n = v.size
    e = np.zeros(n)
    i = int(np.argmax(np.abs(v)))
    e[i] = 1.0
    w = v - np.sign(v[i]) * e if v[i] != 0 else v - e
    nw = np.linalg.norm(w)
    H = np.eye(n) if nw == 0 else np.eye(n) - 2.0 * np.outer(w, w) / nw ** 2
    return np.delete(H, i, axis=1)


def sphere_tangent_basis(s: SphereRestriction, x) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the tangent space of the sphere at x."""
    x = np.asarray(x, dtype=float)
    y = x - s.center
    r = np.linalg.norm(y)
    if abs(r - s.radius) > 1e-8 * s.radius:
        raise InputError("point is not on the sphere")
    return _complement(y / r)


def subspace_sphere_tangent_basis(S: SearchSubspace, s: SphereRestriction, x) -> np.ndarray:
    """Orthonormal basis (n, d-1) of span(S) intersected with the sphere tangent at x."""
    x = np.asarray(x, dtype=float)
    B = S.basis
    y = x - s.center
    r = np.linalg.norm(y)
    if abs(r - s.radius) > 1e-8 * s.radius:
        raise InputError("point is not on the sphere")
    off = (x - S.center) - B @ (B.T @ (x - S.center))
    if np.linalg.norm(off) > 1e-8 * max(1.0, s.radius):
        raise InputError("point is not in the subspace")
    g = B.T @ (y / r)
    ng = np.linalg.norm(g)
    if ng < 1e-12:
        raise DegenerateIntersectionError("subspace tangent to the sphere")
    if S.dim == 1:
        raise DegenerateIntersectionError("a line meets the sphere in isolated points")
    return B @ _complement(g / ng)


# ---------------------------------------------------------------------------
# Crofton constants


@dataclass(frozen=True)
class CroftonConstant:
    d: int
    k: int
    n: int
    space: str
    value: float
    stderr: float = 0.0


def spherical_crofton(d: int, k: int, n: int) -> float:
    return sphere_volume(n - k) * sphere_volume(d) / sphere_volume(d - k)


def crofton_constant(d: int, k: int, n: int, space: str = "spherical", *,
                     samples: int = 200_000, rng=None) -> CroftonConstant:
    """Cauchy-Crofton constant for d-subspaces against codim-k manifolds.

    The spherical constant is closed form. The euclidean one is estimated by
    :func:`calibrate_crofton` (a fixed internal seed is used if ``rng`` is
    not given, so the value is reproducible).
    """
    if not (0 <= k <= d <= n):
        raise InputError("need k <= d <= n")
    if space == "spherical":
        return CroftonConstant(d, k, n, space, spherical_crofton(d, k, n))
    if space == "euclidean":
        rng = np.random.default_rng(0x5EED) if rng is None else rng
        v, se = calibrate_crofton(d, k, n, "euclidean", samples, rng)
        return CroftonConstant(d, k, n, space, v, se)
    raise InputError(f"unsupported space {space!r}")


def subsphere_section_volumes(n: int, d: int, k: int, offset, size: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Volumes of S cap M for Haar great d-spheres S of S^n.

    M = {x in S^n : x[:k] = offset}, an (n-k)-sphere of radius
    sqrt(1 - |offset|^2); offset = 0 gives a great subsphere.
    """
    a = np.zeros(k) if offset is None else np.asarray(offset, dtype=float)
    Q = haar_batch(n + 1, d + 1, size, rng)
    A = Q[:, :k, :]
    G = A @ A.transpose(0, 2, 1)
    if np.any(a):
        q = np.einsum("i,bi->b", a, np.linalg.solve(G, np.broadcast_to(a, (size, k))[..., None])[..., 0])
    else:
        q = np.zeros(size)
    vol = np.zeros(size)
    hit = q < 1.0
    vol[hit] = sphere_volume(d - k) * (1.0 - q[hit]) ** (0.5 * (d - k))
    return vol


def subsphere_volume(n: int, k: int, offset=None) -> float:
    a2 = 0.0 if offset is None else float(np.dot(offset, offset))
    return sphere_volume(n - k) * (1.0 - a2) ** (0.5 * (n - k))


def crofton_check(n: int, d: int, k: int, samples: int, rng: np.random.Generator,
                  offset=None, chunk: int = 100_000) -> dict:
    """Monte Carlo check of Vol(M) = c / Vol(S^d) * E[Vol(S cap M)] on S^n."""
    tot = tot2 = 0.0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        v = subsphere_section_volumes(n, d, k, offset, b, rng)
        tot += v.sum()
        tot2 += (v * v).sum()
        done += b
    mean = tot / samples
    sd = np.sqrt(max(tot2 / samples - mean ** 2, 0.0))
    c = spherical_crofton(d, k, n)
    est = c / sphere_volume(d) * mean
    true = subsphere_volume(n, k, offset)
    return {"n": n, "d": d, "k": k, "estimate": est, "true": true,
            "rel_err": abs(est - true) / true,
            "stderr": c / sphere_volume(d) * sd / np.sqrt(samples)}


def kinematic_planes(n: int, d: int, size: int, ball_radius: float,
                     rng: np.random.Generator):
    """Random affine d-planes hitting a ball about the origin.

    Orientation is Haar; the foot point (the plane point closest to the
    origin) is uniform in the ball of radius ``ball_radius`` of the
    (n-d)-dimensional orthogonal complement.

    Returns:
        (Q, U, o): plane directions (size, n, d), complement frames
        (size, n, n-d) and foot coordinates o in the complement frame
        (size, n-d). The foot point is U @ o.
    """
    m = n - d
    F = haar_batch(n, n, size, rng)
    Q, U = F[:, :, :d], F[:, :, d:]
    g = rng.standard_normal((size, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = ball_radius * rng.random(size) ** (1.0 / m)
    return Q, U, g * rad[:, None]


def _euclid_section_volumes(n, d, k, size, rng):
    # reference: unit (n-k)-sphere inside span(e_0..e_{n-k}); planes with
    # foot points uniform in the unit (n-d)-ball
    Q, U, o = kinematic_planes(n, d, size, 1.0, rng)
    p = np.einsum("bij,bj->bi", U, o)
    dist2 = (p * p).sum(axis=1)
    if k > 1:
        A = Q[:, n - k + 1:, :]
        rhs = -p[:, n - k + 1:]
        # minimum-norm in-plane move onto span(e_0..e_{n-k})
        G = A @ A.transpose(0, 2, 1)
        z = np.linalg.solve(G, rhs[..., None])[..., 0]
        dist2 = dist2 + (rhs * z).sum(axis=1)
    vol = np.zeros(size)
    hit = dist2 < 1.0
    vol[hit] = sphere_volume(d - k) * (1.0 - dist2[hit]) ** (0.5 * (d - k))
    return vol


def calibrate_crofton(d: int, k: int, n: int, space: str, samples: int,
                      rng: np.random.Generator, chunk: int = 50_000):
    """Monte Carlo estimate of the Crofton constant and its standard error.

    Spherical: reference M = {x in S^n : x_0 = 1/2, x_1..x_{k-1} = 0}, a
    non-great (n-k)-subsphere, so draws carry genuine variance.
    Euclidean: reference is the unit (n-k)-sphere; the kinematic measure is
    Haar orientation times Lebesgue measure on the foot point, so that
    Vol(M) = c * integral of Vol(S cap M).

    Returns:
        (value, stderr)
    """
    if not (1 <= k <= d <= n):
        raise InputError("need 1 <= k <= d <= n")
    tot = tot2 = 0.0
    done = 0
    if space == "spherical":
        off = np.zeros(k)
        off[0] = 0.5
        while done < samples:
            b = min(chunk, samples - done)
            v = subsphere_section_volumes(n, d, k, off, b, rng)
            tot += v.sum()
            tot2 += (v * v).sum()
            done += b
        scale = subsphere_volume(n, k, off) * sphere_volume(d)
    elif space == "euclidean":
        if d == n:
            raise InputError("euclidean calibration needs d < n")
        while done < samples:
            b = min(chunk, samples - done)
            v = _euclid_section_volumes(n, d, k, b, rng)
            tot += v.sum()
            tot2 += (v * v).sum()
            done += b
        scale = sphere_volume(n - k) / ball_volume(n - d)
    else:
        raise InputError(f"unsupported space {space!r}")
    mean = tot / samples
    if mean <= 0:
        raise EstimationError("no intersections observed")
    se_mean = np.sqrt(max(tot2 / samples - mean ** 2, 0.0) / samples)
    value = scale / mean
    return value, value * se_mean / mean
