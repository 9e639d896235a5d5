"""Reweighted Metropolis-within-Gibbs samplers and weighted estimators.

* :func:`run_gibbs_mcmc` - sequential chain with subspaces through the
  current point (first-order or curvature proposal weights).
* :func:`run_independent_gaussian` - subspaces through the origin and
  chi_n radii for Gaussian ambient targets.
* :func:`run_deterministic_gibbs` - one solver solution per iteration,
  emitted with weights for several schemes at once.
* :func:`run_rejection` - vectorised rejection baseline for the Airy model.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import EstimationError, IGMCMCError, InputError
from .geometry import SearchSubspace, SphereRestriction, isotropic_subspace
from .manifold import ConstraintManifold, TargetDensity, jacobian, restricted_jacobian_det
from .solver import SolverConfig, find_points, sample_intersection_point, solve_intersection
from .weights import (NormalizationCache, WeightConfig, curvature_normalization,
                      intersection_curvature, weight_for)
from .geometry import sphere_tangent_basis, subspace_sphere_tangent_basis

STALL_LIMIT = 0.5


@dataclass
class ChainState:
    current: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class WeightedSample:
    x: np.ndarray
    weight: float
    statistic: np.ndarray
    scheme: str


@dataclass(frozen=True)
class WeightedHistogram:
    edges: np.ndarray
    mass: np.ndarray
    total_weight: float

    @property
    def density(self) -> np.ndarray:
        w = np.diff(self.edges)
        if self.total_weight <= 0:
            return np.zeros_like(self.mass)
        return self.mass / (self.total_weight * w)


@dataclass
class Counters:
    iterations: int = 0
    stalls: int = 0
    degenerate: int = 0
    solver_calls: int = 0
    solver_successes: int = 0
    accepted: int = 0

    @property
    def stall_fraction(self) -> float:
        return self.stalls / self.iterations if self.iterations else 0.0

    def as_dict(self):
        return {"iterations": self.iterations, "stalls": self.stalls,
                "degenerate": self.degenerate, "solver_calls": self.solver_calls,
                "solver_successes": self.solver_successes, "accepted": self.accepted,
                "stall_fraction": self.stall_fraction}


@dataclass
class ChainResult:
    samples: List[WeightedSample]
    counters: Counters
    d_used: int

    @property
    def points(self) -> np.ndarray:
        return np.array([s.x for s in self.samples])

    @property
    def invalid(self) -> bool:
        return self.counters.stall_fraction > STALL_LIMIT


class ChiStep:
    """Step-distance law: scale times a chi variable with ``dof`` degrees."""

    def __init__(self, dof: int, scale: float = 1.0):
        if dof < 1 or not scale > 0:
            raise InputError("need dof >= 1 and scale > 0")
        self.dof = int(dof)
        self.scale = float(scale)
        self._dist = stats.chi(self.dof, scale=self.scale)

    def sample(self, rng: np.random.Generator) -> float:
        return self.scale * float(np.sqrt(rng.chisquare(self.dof)))

    def __call__(self, r) -> float:
        return float(self._dist.pdf(r))


def adjust_parity(d: int, k: int, n: int) -> int:
    """Smallest d' >= d with d' - k - 1 even (capped at n)."""
    if (d - k - 1) % 2 == 1 and d < n:
        return d + 1
    return d


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _psi_value(psi, x):
    return np.atleast_1d(np.asarray(x if psi is None else psi(x), dtype=float))


# ---------------------------------------------------------------------------
# Algorithm 1 / 3


def run_gibbs_mcmc(m: ConstraintManifold, f: Optional[TargetDensity], d: int, rho, cfg: SolverConfig,
                   weights: WeightConfig, i_max: int, x0, rng: np.random.Generator,
                   n_starts: int = 8, psi: Optional[Callable] = None,
                   metropolis: Optional[bool] = None) -> ChainResult:
    """Reweighted Metropolis-within-Gibbs chain.

    Each iteration draws an isotropic d-subspace S through x_i and a radius
    r from ``rho``, finds points of S cap M cap sphere(x_i, r) from
    ``n_starts`` solver starts and moves to one of them with probability
    proportional to its weight.

    With ``metropolis`` (default: only when k = 0) the move is corrected
    by a multiple-try acceptance step: candidates from the reverse move
    around the proposed point are generated, the old point is added, and
    the move is accepted with probability min(1, W_forward / W_reverse).
    For k = 0 the candidates are exact uniform draws on the step sphere
    and the chain is exactly invariant for f.

    Output samples carry weight 1.
    """
    x = np.asarray(x0, dtype=float)
    n, k = m.ambient_dim, m.codim
    if not k <= d <= n:
        raise InputError("need k <= d <= n")
    if k and np.linalg.norm(m.value_oracle(x) - m.constraint_value) > 1e-6 * max(1.0, np.abs(m.constraint_value).max()):
        raise InputError("x0 is not on the manifold")
    if weights.scheme == "curvature":
        d = adjust_parity(d, k, n)
    if metropolis is None:
        metropolis = k == 0
    cache = NormalizationCache()
    cnt = Counters()
    out = []
    scheme = weights.scheme

    def wfun(S, sph):
        def w(y):
            return weight_for(scheme, m, f, S, sph, y, weights, rng, rho=rho, cache=cache)
        return w

    if k == 0 and scheme != "curvature":
        return _gibbs_full_space(m, f, d, rho, i_max, x, rng, n_starts, psi, metropolis, scheme)

    for it in range(i_max):
        cnt.iterations += 1
        S = isotropic_subspace(n, d, x, rng)
        r = rho.sample(rng)
        sph = SphereRestriction(x, r)
        cnt.solver_calls += 1
        chosen, pts, w = sample_intersection_point(m, S, sph, wfun(S, sph), n_starts, rng, cfg,
                                                   return_all=True)
        if chosen is None:
            cnt.stalls += 1
        else:
            cnt.solver_successes += 1
            y = chosen.x
            accept = True
            if metropolis:
                Sy = SearchSubspace(S.basis, y)
                sy = SphereRestriction(y, r)
                if k == 0:
                    # m - 1 fresh uniform draws plus the old point
                    _, back, wb = sample_intersection_point(m, Sy, sy, wfun(Sy, sy), n_starts - 1,
                                                            rng, cfg, return_all=True) if n_starts > 1 else (None, [], np.zeros(0))
                    wx = wfun(Sy, sy)(x)
                    W_rev = float(np.sum(wb)) + wx
                else:
                    _, back, wb = sample_intersection_point(m, Sy, sy, wfun(Sy, sy), n_starts,
                                                            rng, cfg, return_all=True)
                    wx = wfun(Sy, sy)(x)
                    seen = any(np.linalg.norm(p.x - x) < 1e-6 * r for p in back)
                    W_rev = float(np.sum(wb)) + (0.0 if seen else wx)
                W_fwd = float(np.sum(w))
                accept = W_rev <= 0 or rng.random() < min(1.0, W_fwd / W_rev)
            if accept:
                x = y
                cnt.accepted += 1
        out.append(WeightedSample(x.copy(), 1.0, _psi_value(psi, x), scheme))
    return ChainResult(out, cnt, d)


def _gibbs_full_space(m, f, d, rho, i_max, x, rng, n_starts, psi, metropolis, scheme):
    # k = 0: S cap sphere is a great (d-1)-sphere, so candidates are drawn
    # directly instead of through the solver
    from .geometry import haar_orthogonal_columns

    n = m.ambient_dim
    logf = (lambda Y: np.zeros(len(Y))) if f is None else (
        lambda Y: np.array([f.log_density(y) for y in Y]))
    cnt = Counters()
    out = []

    def cands(c, B, r, size):
        U = rng.standard_normal((size, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        return c + r * U @ B.T

    for it in range(i_max):
        cnt.iterations += 1
        cnt.solver_calls += 1
        B = haar_orthogonal_columns(n, d, rng)
        r = rho.sample(rng)
        Y = cands(x, B, r, n_starts)
        lw = logf(Y)
        top = lw.max()
        p = np.exp(lw - top)
        j = int(rng.choice(n_starts, p=p / p.sum())) if n_starts > 1 else 0
        y = Y[j]
        cnt.solver_successes += 1
        accept = True
        if metropolis:
            Xr = np.vstack([cands(y, B, r, n_starts - 1), x[None, :]])
            lr = logf(Xr)
            ref = max(top, lr.max())
            W_fwd = np.exp(lw - ref).sum()
            W_rev = np.exp(lr - ref).sum()
            accept = rng.random() < min(1.0, W_fwd / W_rev)
        if accept:
            x = y
            cnt.accepted += 1
        out.append(WeightedSample(x.copy(), 1.0, _psi_value(psi, x), scheme))
    return ChainResult(out, cnt, d)


# ---------------------------------------------------------------------------
# Algorithm 2


def run_independent_gaussian(m: ConstraintManifold, d: int, i_max: int, cfg: SolverConfig,
                             weights: WeightConfig, rng: np.random.Generator, n_starts: int = 4,
                             psi: Optional[Callable] = None, threads: int = 1) -> ChainResult:
    """Independent subspaces through the origin with chi_n radii.

    The ambient target is the standard Gaussian, which is constant on each
    sphere, so the proposal weights reduce to the geometric factors. The
    radius is drawn before the points are known, so each sample carries the
    importance weight r^{-(d-1)} * (sum of the weights of the points found);
    one point is selected with probability proportional to its weight.
    """
    n, k = m.ambient_dim, m.codim
    if not max(k, 1) <= d <= n:
        raise InputError("need k <= d <= n")
    if weights.scheme == "curvature":
        d = adjust_parity(d, k, n)
    cache = NormalizationCache()
    subs = rng.spawn(i_max)

    def one(g):
        S = isotropic_subspace(n, d, np.zeros(n), g)
        r = float(np.sqrt(g.chisquare(n)))
        sph = SphereRestriction(np.zeros(n), r)
        wf = lambda y: weight_for(weights.scheme, m, None, S, sph, y, weights, g, cache=cache)
        p, _, w = sample_intersection_point(m, S, sph, wf, n_starts, g, cfg, return_all=True)
        return None if p is None else (p, float(w.sum()) * search_sphere_factor(r, d))

    res = _map(one, subs, threads)
    cnt = Counters(iterations=i_max, solver_calls=i_max)
    out = []
    for item in res:
        if item is None:
            cnt.stalls += 1
            continue
        p, tw = item
        cnt.solver_successes += 1
        out.append(WeightedSample(p.x, tw, _psi_value(psi, p.x), weights.scheme))
    return ChainResult(out, cnt, d)


# ---------------------------------------------------------------------------
# Algorithm 2.1


@dataclass
class DeterministicRun:
    """Solver outputs with one weight vector per scheme."""

    points: np.ndarray
    statistic: np.ndarray
    weights: Dict[str, np.ndarray]
    radii: np.ndarray
    counters: Counters
    d_used: int
    extras: dict = field(default_factory=dict)

    def samples(self, scheme: str) -> List[WeightedSample]:
        w = self.weights[scheme]
        return [WeightedSample(x, float(wi), s, scheme)
                for x, wi, s in zip(self.points, w, self.statistic)]

    @property
    def invalid(self) -> bool:
        return self.counters.stall_fraction > STALL_LIMIT


def search_sphere_factor(r: float, d: int) -> float:
    """Radius factor r^{-(d-1)} for subspaces through the origin with r ~ chi_n.

    It is 1 / Vol(S cap rS) up to a constant: f / rho_chi = r^{-(n-1)} and the
    Crofton density of S on the radius-r sphere scales as r^{d-n}.
    """
    return float(np.exp(-(d - 1) * np.log(r)))


def _deterministic_one(m, d, cfg, schemes, wcfg, psi, g, cache):
    n = m.ambient_dim
    S = isotropic_subspace(n, d, np.zeros(n), g)
    r = float(np.sqrt(g.chisquare(n)))
    sph = SphereRestriction(np.zeros(n), r)
    p = solve_intersection(m, S, sph, cfg, g)
    if p is None:
        return None
    vol = search_sphere_factor(r, d)
    try:
        J = jacobian(m, p.x)
        w = {}
        for s in schemes:
            if s == "first_order":
                w[s] = vol / restricted_jacobian_det(m, p.x, sphere_tangent_basis(sph, p.x), J)
            elif s == "traditional":
                w[s] = vol / restricted_jacobian_det(m, p.x, subspace_sphere_tangent_basis(S, sph, p.x), J)
            else:
                w[s] = vol * weight_for(s, m, None, S, sph, p.x, wcfg, g, cache=cache, J=J)
        if not all(np.isfinite(v) and v > 0 for v in w.values()):
            return "degenerate"
        return p.x, _psi_value(psi, p.x), w, r
    except IGMCMCError:
        return "degenerate"


def run_deterministic_gibbs(m: ConstraintManifold, d: int, i_max: int, cfg: SolverConfig,
                            schemes: Sequence[str], rng: np.random.Generator,
                            psi: Optional[Callable] = None, weight_cfg: Optional[WeightConfig] = None,
                            threads: int = 1) -> DeterministicRun:
    """One solver solution per iteration, weighted under every scheme in ``schemes``.

    Weights: first_order = r^{-(d-1)} / |grad lambda restricted to the sphere|,
    traditional = r^{-(d-1)} / |grad lambda restricted to S cap sphere|,
    curvature = first_order * clamp|Pf| / E_Q[...]. The factor r^{-(d-1)}
    is 1 / Vol(S cap rS) up to a constant; it is what remains of f / rho
    once the radius is drawn from chi_n.
    """
    n, k = m.ambient_dim, m.codim
    if not max(k, 1) <= d <= n:
        raise InputError("need k <= d <= n")
    schemes = tuple(schemes)
    for s in schemes:
        if s not in ("traditional", "first_order", "curvature"):
            raise InputError(f"unknown scheme {s!r}")
    if "curvature" in schemes:
        d = adjust_parity(d, k, n)
    wcfg = WeightConfig("curvature") if weight_cfg is None else weight_cfg
    cache = NormalizationCache()
    subs = rng.spawn(i_max)
    res = _map(lambda g: _deterministic_one(m, d, cfg, schemes, wcfg, psi, g, cache), subs, threads)
    cnt = Counters(iterations=i_max, solver_calls=i_max)
    pts, st, rad = [], [], []
    ws = {s: [] for s in schemes}
    for r in res:
        if r is None:
            cnt.stalls += 1
            continue
        if isinstance(r, str):
            cnt.degenerate += 1
            continue
        cnt.solver_successes += 1
        pts.append(r[0])
        st.append(r[1])
        rad.append(r[3])
        for s in schemes:
            ws[s].append(r[2][s])
    q = len(st[0]) if st else 1
    return DeterministicRun(np.array(pts).reshape(-1, n), np.array(st).reshape(-1, q),
                            {s: np.asarray(v, dtype=float) for s, v in ws.items()},
                            np.asarray(rad), cnt, d)


# ---------------------------------------------------------------------------
# rejection baseline


@dataclass
class RejectionResult:
    statistic: np.ndarray
    draws: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.draws if self.draws else 0.0


def run_rejection(box, model, i_max: int, rng: np.random.Generator, psi_index: Optional[int] = None,
                  batch: int = 100_000, max_accept: Optional[int] = None,
                  require_accept: bool = False) -> RejectionResult:
    """Draw ``i_max`` operators (or stop at ``max_accept``) and keep those inside ``box``.

    Args:
        box: object with ``accept(model, diag) -> bool mask``.
        model: the Airy model.
        psi_index: 1-based eigenvalue index recorded for accepted draws.
    """
    from .airy import sample_diagonals, top_eigvals_of

    vals = []
    drawn = acc = 0
    while drawn < i_max:
        b = min(batch, i_max - drawn)
        D = sample_diagonals(model, b, rng)
        ok = box.accept(model, D)
        drawn += b
        na = int(ok.sum())
        acc += na
        if na and psi_index is not None:
            vals.append(top_eigvals_of(model, D[ok], psi_index)[:, psi_index - 1])
        if max_accept is not None and acc >= max_accept:
            break
    if require_accept and acc == 0:
        raise EstimationError(f"no acceptances in {drawn} draws")
    st = np.concatenate(vals) if vals else np.zeros(0)
    return RejectionResult(st, drawn, acc)


# ---------------------------------------------------------------------------
# estimators


def _vw(samples_or_values, weights=None):
    if weights is None:
        samples = list(samples_or_values)
        if not samples:
            raise InputError("empty sample set")
        v = np.array([s.statistic for s in samples], dtype=float)
        w = np.array([s.weight for s in samples], dtype=float)
    else:
        v = np.asarray(samples_or_values, dtype=float)
        w = np.asarray(weights, dtype=float)
        if v.shape[0] == 0:
            raise InputError("empty sample set")
    if not w.sum() > 0:
        raise InputError("total weight must be positive")
    return v, w


def weighted_mean(samples, weights=None) -> np.ndarray:
    v, w = _vw(samples, weights)
    return np.tensordot(w, v, axes=1) / w.sum()


def weighted_variance(samples, weights=None) -> np.ndarray:
    v, w = _vw(samples, weights)
    mu = np.tensordot(w, v, axes=1) / w.sum()
    return np.tensordot(w, (v - mu) ** 2, axes=1) / w.sum()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / (w * w).sum())


def weighted_quantile(values, weights, q):
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    o = np.argsort(v, kind="stable")
    cw = np.cumsum(w[o])
    cw /= cw[-1]
    return np.interp(q, cw - 0.5 * w[o] / w.sum(), v[o])


def fd_edges(values, weights=None, max_bins: int = 200) -> np.ndarray:
    """Freedman-Diaconis bin edges using the weighted IQR and the ESS."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo), abs(hi)):
        return np.array([lo - 0.5, lo + 0.5])
    q1, q3 = weighted_quantile(v, w, [0.25, 0.75])
    width = 2.0 * (q3 - q1) / effective_sample_size(w) ** (1.0 / 3.0)
    nb = max_bins if width <= 0 else int(np.clip(np.ceil((hi - lo) / width), 1, max_bins))
    return np.linspace(lo, hi, nb + 1)


def weighted_histogram(samples, edges=None, weights=None) -> WeightedHistogram:
    """Self-normalisable weighted histogram of a scalar statistic."""
    v, w = _vw(samples, weights)
    v = v.reshape(v.shape[0], -1)[:, 0]
    if edges is None:
        edges = fd_edges(v, w)
    edges = np.asarray(edges, dtype=float)
    mass, _ = np.histogram(v, bins=edges, weights=w)
    return WeightedHistogram(edges, mass, float(mass.sum()))


def normalized_weight_variance(w) -> float:
    """Sample variance of the weights divided by their median."""
    w = np.asarray(w, dtype=float)
    return float(np.var(w / np.median(w), ddof=1)) if w.size > 1 else 0.0


def weighted_ks_distance(a, wa, b, wb=None) -> float:
    """Sup distance between two weighted empirical CDFs."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    wa = np.asarray(wa, dtype=float).ravel()
    wb = np.ones_like(b) if wb is None else np.asarray(wb, dtype=float).ravel()
    grid = np.union1d(a, b)

    def cdf(v, w):
        o = np.argsort(v, kind="stable")
        cw = np.concatenate(([0.0], np.cumsum(w[o]) / w.sum()))
        return cw[np.searchsorted(v[o], grid, side="right")]

    return float(np.max(np.abs(cdf(a, wa) - cdf(b, wb))))


def weighted_ks_to_cdf(values, weights, cdf) -> float:
    """Sup distance of a weighted empirical CDF to a continuous CDF."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    o = np.argsort(v, kind="stable")
    v, w = v[o], w[o] / w.sum()
    hi = np.cumsum(w)
    lo = hi - w
    F = cdf(v)
    return float(max(np.max(np.abs(hi - F)), np.max(np.abs(F - lo))))
