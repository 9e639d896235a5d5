"""Implicit constraint manifolds {x : lambda(x) = c} and target densities.

A manifold is described by a value oracle over R^n plus optional Jacobian
and Hessian oracles. Missing derivatives fall back to central differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateIntersectionError, InputError, NumericalError

RANK_TOL = 1e-10


def fd_step(x: np.ndarray) -> float:
    """Central-difference step used by the derivative fallbacks."""
    return max(1e-6, 1e-7 * float(np.linalg.norm(x)))


@dataclass(frozen=True)
class ConstraintManifold:
    """Level set of a vector-valued constraint function.

    Attributes:
        ambient_dim: dimension n of the ambient space.
        codim: number k of scalar constraints. ``codim=0`` denotes the whole
            space and is only meaningful to the samplers.
        constraint_value: target vector c of length k.
        value_oracle: x -> lambda(x) in R^k.
        jacobian_oracle: x -> (k, n) matrix, optional.
        hessian_oracle: x -> (k, n, n) array, optional.
        name: registry tag, informational.
        homogeneous: True when every point looks alike up to isometry, so
            per-point normalisations may be cached (e.g. a round sphere).
    """

    ambient_dim: int
    codim: int
    constraint_value: np.ndarray
    value_oracle: Callable[[np.ndarray], np.ndarray]
    jacobian_oracle: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian_oracle: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    homogeneous: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.ambient_dim < 1:
            raise InputError("ambient_dim must be positive")
        if not 0 <= self.codim <= self.ambient_dim:
            raise InputError("need 0 <= codim <= ambient_dim")
        c = np.atleast_1d(np.asarray(self.constraint_value, dtype=float))
        if c.shape != (self.codim,):
            raise InputError(f"constraint_value must have length {self.codim}")
        object.__setattr__(self, "constraint_value", c)


def _check_point(m: ConstraintManifold, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.ambient_dim,):
        raise InputError(f"point has shape {x.shape}, expected ({m.ambient_dim},)")
    return x


def eval_constraint(m: ConstraintManifold, x) -> np.ndarray:
    """Residual lambda(x) - c (zero exactly on the manifold)."""
    x = _check_point(m, x)
    if m.codim == 0:
        return np.zeros(0)
    v = np.atleast_1d(np.asarray(m.value_oracle(x), dtype=float))
    return v - m.constraint_value


def _fd_jacobian(fun, x, k):
    h = fd_step(x)
    J = np.empty((k, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * h)
    return J


def jacobian(m: ConstraintManifold, x) -> np.ndarray:
    """Jacobian of lambda at x, shape (k, n)."""
    x = _check_point(m, x)
    if m.codim == 0:
        return np.zeros((0, m.ambient_dim))
    if m.jacobian_oracle is not None:
        J = np.asarray(m.jacobian_oracle(x), dtype=float).reshape(m.codim, m.ambient_dim)
    else:
        J = _fd_jacobian(m.value_oracle, x, m.codim)
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite Jacobian")
    return J


def hessian(m: ConstraintManifold, x) -> np.ndarray:
    """Stacked Hessians of the constraint components, shape (k, n, n)."""
    x = _check_point(m, x)
    n, k = m.ambient_dim, m.codim
    if m.hessian_oracle is not None:
        H = np.asarray(m.hessian_oracle(x), dtype=float).reshape(k, n, n)
    else:
        # differences of the gradient; symmetrised
        h = fd_step(x)
        H = np.empty((k, n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            H[:, :, j] = (jacobian(m, x + e) - jacobian(m, x - e)) / (2 * h)
        H = 0.5 * (H + H.transpose(0, 2, 1))
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite Hessian")
    return H


def gdet(M: np.ndarray) -> float:
    """Generalized determinant: product of singular values of M."""
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return float(np.prod(s))


def restricted_jacobian_det(m: ConstraintManifold, x, tangent_basis, J=None) -> float:
    """|grad(lambda o T)(x)| for T the embedding of span(tangent_basis).

    Args:
        m: the manifold.
        x: point.
        tangent_basis: (n, p) matrix with orthonormal columns, p >= k.
        J: optional precomputed Jacobian at x.

    Raises:
        DegenerateIntersectionError: if the restricted Jacobian is rank
            deficient (smallest singular value below RANK_TOL times largest).
    """
    if m.codim == 0:
        return 1.0
    if J is None:
        J = jacobian(m, x)
    B = np.asarray(tangent_basis, dtype=float)
    if B.ndim != 2 or B.shape[0] != m.ambient_dim:
        raise InputError("tangent_basis must be (n, p)")
    if B.shape[1] < m.codim:
        raise InputError("tangent_basis has fewer columns than the codimension")
    s = np.linalg.svd(J @ B, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        raise DegenerateIntersectionError("restricted Jacobian is rank deficient")
    return float(np.prod(s))


def check_full_rank(m: ConstraintManifold, x) -> bool:
    """True when the Jacobian at x has full row rank."""
    if m.codim == 0:
        return True
    s = np.linalg.svd(jacobian(m, x), compute_uv=False)
    return bool(s[0] > 0 and s[-1] > RANK_TOL * s[0])


# ---------------------------------------------------------------------------
# built-in manifolds


def circle(radius: float = 1.0, center=None, ambient_dim: int = 2) -> ConstraintManifold:
    """Circle of the given radius in the (x1, x2) plane through ``center``.

    In R^2 the single constraint is |x - center|^2 = r^2. In R^n with n > 2
    the remaining coordinates are pinned to the center, giving codim n - 1.
    """
    if radius <= 0:
        raise InputError("radius must be positive")
    n = int(ambient_dim)
    if n < 2:
        raise InputError("a circle needs ambient_dim >= 2")
    c0 = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if c0.shape != (n,):
        raise InputError("center has the wrong length")
    r2 = float(radius) ** 2

    def value(x):
        y = x - c0
        return np.concatenate(([y[0] ** 2 + y[1] ** 2], y[2:]))

    def jac(x):
        y = x - c0
        J = np.zeros((n - 1, n))
        J[0, :2] = 2 * y[:2]
        J[1:, 2:] = np.eye(n - 2)
        return J

    def hess(x):
        H = np.zeros((n - 1, n, n))
        H[0, 0, 0] = H[0, 1, 1] = 2.0
        return H

    c = np.concatenate(([r2], c0[2:] * 0.0))
    return ConstraintManifold(n, n - 1, c, value, jac, hess, name="circle",
                              homogeneous=True,
                              meta={"radius": float(radius), "center": c0})


def sphere(ambient_dim: int, radius: float = 1.0, center=None) -> ConstraintManifold:
    """Round (n-1)-sphere |x - center|^2 = r^2 in R^n."""
    if radius <= 0:
        raise InputError("radius must be positive")
    n = int(ambient_dim)
    c0 = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if c0.shape != (n,):
        raise InputError("center has the wrong length")
    H2 = 2.0 * np.eye(n)[None]

    return ConstraintManifold(
        n, 1, np.array([float(radius) ** 2]),
        lambda x: np.array([np.dot(x - c0, x - c0)]),
        lambda x: 2.0 * (x - c0)[None, :],
        lambda x: H2,
        name="sphere", homogeneous=True,
        meta={"radius": float(radius), "center": c0},
    )


def affine_plane(normals, offsets) -> ConstraintManifold:
    """Affine subspace {x : N x = b} with N of shape (k, n)."""
    N = np.atleast_2d(np.asarray(normals, dtype=float))
    b = np.atleast_1d(np.asarray(offsets, dtype=float))
    k, n = N.shape
    Z = np.zeros((k, n, n))
    return ConstraintManifold(n, k, b, lambda x: N @ x, lambda x: N, lambda x: Z,
                              name="affine_plane", homogeneous=True)


def sphere_collection(centers, radius: float) -> ConstraintManifold:
    """Union of equal-radius spheres, lambda(x) = |x - nearest center|^2.

    The nearest-center switch happens on Voronoi walls, away from the
    spheres as long as they do not overlap, so lambda is smooth near M.
    """
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    n = C.shape[1]

    def nearest(x):
        return C[np.argmin(((C - x) ** 2).sum(axis=1))]

    def value(x):
        y = x - nearest(x)
        return np.array([y @ y])

    H2 = 2.0 * np.eye(n)[None]
    return ConstraintManifold(
        n, 1, np.array([float(radius) ** 2]), value,
        lambda x: 2.0 * (x - nearest(x))[None, :], lambda x: H2,
        name="sphere_collection", homogeneous=True,
        meta={"radius": float(radius), "centers": C},
    )


def full_space(ambient_dim: int) -> ConstraintManifold:
    """R^n itself (k = 0): the unconstrained Gibbs setting."""
    return ConstraintManifold(int(ambient_dim), 0, np.zeros(0), lambda x: np.zeros(0),
                              name="full_space", homogeneous=True)


# ---------------------------------------------------------------------------
# target densities


@dataclass(frozen=True)
class TargetDensity:
    """Log density up to an additive constant, tagged by kind."""

    log_density: Callable[[np.ndarray], float]
    kind: str = "custom"

    def __post_init__(self):
        if self.kind not in ("standard_gaussian", "uniform_on_region", "custom"):
            raise InputError(f"unknown density kind {self.kind!r}")

    def __call__(self, x) -> float:
        return float(np.exp(self.log_density(np.asarray(x, dtype=float))))


def standard_gaussian() -> TargetDensity:
    return TargetDensity(lambda x: -0.5 * float(x @ x), "standard_gaussian")


def uniform(indicator: Optional[Callable[[np.ndarray], bool]] = None) -> TargetDensity:
    """Uniform density, optionally restricted by an indicator of the region."""
    if indicator is None:
        return TargetDensity(lambda x: 0.0, "uniform_on_region")
    return TargetDensity(lambda x: 0.0 if indicator(x) else -np.inf, "uniform_on_region")


def build(name: str, **params) -> ConstraintManifold:
    """Registry lookup used by the CLI."""
    if name == "circle":
        return circle(**params)
    if name == "sphere":
        return sphere(**params)
    if name == "sphere_collection":
        return sphere_collection(**params)
    if name == "airy_eigs":
        from .airy import AiryModel, EigenCondition, airy_manifold

        model = AiryModel.from_n(params.pop("n_parameter"), beta=params.pop("beta", 2.0))
        cond = EigenCondition(params.pop("indices"), params.pop("values"))
        if params:
            raise InputError(f"unknown airy_eigs parameters {sorted(params)}")
        return airy_manifold(model, cond)
    raise InputError(f"unknown manifold {name!r}")


REGISTRY = ("circle", "sphere", "sphere_collection", "airy_eigs")
