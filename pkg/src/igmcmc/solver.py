"""Damped Newton solves for points of S cap M cap sphere, plus multi-start selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IGMCMCError, InputError
from .geometry import SearchSubspace, SphereRestriction
from .manifold import ConstraintManifold, eval_constraint, jacobian


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50
    residual_tol: float = 1e-10
    step_damping: float = 1.0
    max_restarts: int = 10
    max_halvings: int = 30
    stagnation_window: int = 5

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not self.residual_tol > 0:
            raise InputError("residual_tol must be positive")
        if not 0 < self.step_damping <= 1:
            raise InputError("step_damping must lie in (0, 1]")
        if self.max_restarts < 1:
            raise InputError("max_restarts must be >= 1")
        if self.stagnation_window < 1:
            raise InputError("stagnation_window must be >= 1")


@dataclass(frozen=True)
class IntersectionPoint:
    x: np.ndarray
    residual_norm: float
    iterations: int
    start_seed: int


def _embed(S: SearchSubspace, sph: SphereRestriction, u):
    return sph.center + sph.radius * (S.basis @ u)


def _check_geometry(S: SearchSubspace, sph: SphereRestriction):
    if S.ambient_dim != sph.center.size:
        raise InputError("subspace and sphere live in different dimensions")
    off = sph.center - S.center
    off = off - S.basis @ (S.basis.T @ off)
    if np.linalg.norm(off) > 1e-10 * max(1.0, sph.radius):
        raise InputError("the sphere center must lie in the search subspace")


def newton_on_sphere(m: ConstraintManifold, S: SearchSubspace, sph: SphereRestriction,
                     u0: np.ndarray, cfg: SolverConfig):
    """Damped Gauss-Newton on the unit sphere of subspace coordinates.

    Returns (x, residual_norm, iterations) or None if it does not converge.
    """
    u = u0 / np.linalg.norm(u0)
    x = _embed(S, sph, u)
    try:
        F = eval_constraint(m, x)
    except IGMCMCError:
        return None
    fn = float(np.linalg.norm(F))
    hist = [fn]
    w = cfg.stagnation_window
    for it in range(cfg.max_iters + 1):
        if fn < cfg.residual_tol:
            return x, fn, it
        if it == cfg.max_iters:
            break
        if len(hist) > w and fn > 0.99 * hist[-1 - w]:
            # stuck near a local minimum of |F| with no root nearby
            return None
        try:
            Ju = sph.radius * (jacobian(m, x) @ S.basis)
        except IGMCMCError:
            return None
        Jt = Ju - np.outer(Ju @ u, u)  # restrict to the tangent of the u-sphere
        du, *_ = np.linalg.lstsq(Jt, -F, rcond=None)
        if not np.all(np.isfinite(du)) or not np.any(du):
            return None
        alpha = cfg.step_damping
        for _ in range(cfg.max_halvings):
            un = u + alpha * du
            un /= np.linalg.norm(un)
            xn = _embed(S, sph, un)
            try:
                Fn = eval_constraint(m, xn)
            except IGMCMCError:
                Fn = None
            if Fn is not None and np.all(np.isfinite(Fn)):
                fnn = float(np.linalg.norm(Fn))
                if fnn < fn:
                    u, x, F, fn = un, xn, Fn, fnn
                    hist.append(fn)
                    break
            alpha *= 0.5
        else:
            return None
    return None


def _random_unit(d, rng):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def solve_intersection(m: ConstraintManifold, S: SearchSubspace, sph: SphereRestriction,
                       cfg: SolverConfig, rng: np.random.Generator) -> Optional[IntersectionPoint]:
    """One point of S cap M cap sphere from random starts, or None.

    Starts are uniform on the unit sphere of subspace coordinates; at most
    ``cfg.max_restarts`` starts are tried.
    """
    if S.dim < max(m.codim, 1):
        raise InputError("need d >= k")
    _check_geometry(S, sph)
    for start in range(cfg.max_restarts):
        res = newton_on_sphere(m, S, sph, _random_unit(S.dim, rng), cfg)
        if res is not None:
            x, fn, it = res
            return IntersectionPoint(x, fn, it, start)
    return None


def dedup(points: Sequence[IntersectionPoint], tol: float):
    """Drop points within ``tol`` of an earlier one (order preserved)."""
    kept = []
    for p in points:
        if all(np.linalg.norm(p.x - q.x) >= tol for q in kept):
            kept.append(p)
    return kept


def find_points(m, S, sph, n_starts: int, cfg: SolverConfig, rng):
    """Run ``n_starts`` independent single-start solves and deduplicate."""
    single = SolverConfig(cfg.max_iters, cfg.residual_tol, cfg.step_damping, 1, cfg.max_halvings,
                          cfg.stagnation_window)
    _check_geometry(S, sph)
    found = []
    for i in range(n_starts):
        res = newton_on_sphere(m, S, sph, _random_unit(S.dim, rng), single)
        if res is not None:
            found.append(IntersectionPoint(res[0], res[1], res[2], i))
    return dedup(found, 1e-6 * sph.radius)


def sample_intersection_point(m: ConstraintManifold, S: SearchSubspace, sph: SphereRestriction,
                              weight_fn: Callable[[np.ndarray], float], n_starts: int,
                              rng: np.random.Generator, cfg: Optional[SolverConfig] = None,
                              return_all: bool = False):
    """Multi-start search then categorical selection by ``weight_fn``.

    Points whose weight raises a package error or is not a positive finite
    number are dropped. Returns None when nothing usable was found; with
    ``return_all`` returns (chosen, points, weights).
    """
    cfg = SolverConfig() if cfg is None else cfg
    pts = find_points(m, S, sph, n_starts, cfg, rng)
    keep, w = [], []
    for p in pts:
        try:
            v = float(weight_fn(p.x))
        except IGMCMCError:
            continue
        if np.isfinite(v) and v > 0:
            keep.append(p)
            w.append(v)
    if not keep:
        return (None, [], np.zeros(0)) if return_all else None
    w = np.asarray(w)
    i = 0 if len(keep) == 1 else int(rng.choice(len(keep), p=w / w.sum()))
    return (keep[i], keep, w) if return_all else keep[i]
