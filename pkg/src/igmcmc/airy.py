"""Tridiagonal stochastic Airy operator and eigenvalue-conditioning tools.

The operator on a grid of step h with K points is

    A = Delta / h^2 - h diag(1..K) + c_noise diag(N),

with N iid standard normal. ``noise="white"`` (default) uses
c_noise = 2 / sqrt(h beta), the scaling of discretised white noise, which
reproduces Tracy-Widom soft-edge statistics. ``noise="literal"`` uses
2 / (h sqrt(beta)) for comparison only; it does not have a sensible
continuum limit.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import kernels
from .errors import DegenerateEigenvalueError, InputError, NumericalError
from .manifold import ConstraintManifold

DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class AiryModel:
    """Discretisation parameters; ``noise`` is an optional fixed N vector."""

    n_parameter: float
    beta: float
    grid_step: float
    matrix_size: int
    noise: Optional[np.ndarray] = None
    noise_mode: str = "white"

    def __post_init__(self):
        if self.matrix_size < 2:
            raise InputError("matrix_size must be >= 2")
        if not (self.beta > 0 and self.grid_step > 0):
            raise InputError("beta and grid_step must be positive")
        if self.noise_mode not in ("white", "literal"):
            raise InputError("noise_mode must be 'white' or 'literal'")
        if self.noise is not None:
            N = np.asarray(self.noise, dtype=float)
            if N.shape != (self.matrix_size,):
                raise InputError("noise must have length matrix_size")
            object.__setattr__(self, "noise", N)

    @classmethod
    def from_n(cls, n_parameter: float, beta: float = 2.0, matrix_size: Optional[int] = None,
               noise=None, noise_mode: str = "white") -> "AiryModel":
        """h = n^{-1/3} and K = ceil(10 n^{1/3}) unless K is given."""
        h = float(n_parameter) ** (-1.0 / 3.0)
        K = int(np.ceil(10.0 * float(n_parameter) ** (1.0 / 3.0) - 1e-9)) if matrix_size is None else int(matrix_size)
        return cls(float(n_parameter), float(beta), h, K, noise, noise_mode)

    def with_noise(self, N) -> "AiryModel":
        return AiryModel(self.n_parameter, self.beta, self.grid_step, self.matrix_size,
                         np.asarray(N, dtype=float), self.noise_mode)

    @property
    def noise_scale(self) -> float:
        h, b = self.grid_step, self.beta
        return 2.0 / np.sqrt(h * b) if self.noise_mode == "white" else 2.0 / (h * np.sqrt(b))

    @property
    def base_diagonal(self) -> np.ndarray:
        h = self.grid_step
        return -2.0 / h ** 2 - h * np.arange(1, self.matrix_size + 1)

    @property
    def off_diagonal(self) -> float:
        return 1.0 / self.grid_step ** 2

    def diagonal(self, N=None) -> np.ndarray:
        N = self._noise(N)
        return self.base_diagonal + self.noise_scale * N

    def _noise(self, N):
        if N is None:
            if self.noise is None:
                return np.zeros(self.matrix_size)
            return self.noise
        N = np.asarray(N, dtype=float)
        if N.shape[-1] != self.matrix_size:
            raise InputError("noise has the wrong length")
        return N


@dataclass(frozen=True)
class EigenCondition:
    """Conditioning lambda_i = value for 1-based descending indices."""

    indices: tuple
    values: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        val = tuple(float(v) for v in self.values)
        if len(idx) != len(val) or not idx:
            raise InputError("indices and values must be non-empty and of equal length")
        if min(idx) < 1 or any(b <= a for a, b in zip(idx, idx[1:])):
            raise InputError("indices must be positive and strictly increasing")
        if any(b >= a for a, b in zip(val, val[1:])):
            raise InputError("values must be strictly decreasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)


def build_matrix(model: AiryModel, N=None) -> np.ndarray:
    """Dense symmetric tridiagonal matrix (for small K and cross-checks)."""
    K = model.matrix_size
    A = np.diag(model.diagonal(N))
    o = np.full(K - 1, model.off_diagonal)
    return A + np.diag(o, 1) + np.diag(o, -1)


def eigen_top(model: AiryModel, p: int, N=None):
    """The p largest eigenvalues (descending) and orthonormal eigenvectors (K, p)."""
    K = model.matrix_size
    if not 1 <= p <= K:
        raise InputError("need 1 <= p <= K")
    d = model.diagonal(N)
    e = np.full(K - 1, model.off_diagonal)
    try:
        w, V = eigh_tridiagonal(d, e, select="i", select_range=(K - p, K - 1))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(str(exc)) from exc
    w, V = w[::-1], V[:, ::-1]
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(V))):
        raise NumericalError("non-finite eigenpairs")
    return w, V


def _spectral_norm_bound(model: AiryModel, d) -> float:
    return float(np.max(np.abs(d)) + 2 * model.off_diagonal)


def eigen_gradient(model: AiryModel, index: int, N=None) -> np.ndarray:
    """d lambda_index / dN = noise_scale * v^2 for the unit eigenvector v."""
    w, V = eigen_top(model, index + 1 if index < model.matrix_size else index, N)
    _check_gap(model, w, index, model.diagonal(N))
    return model.noise_scale * V[:, index - 1] ** 2


def _check_gap(model, w, index, d):
    tol = DEGENERACY_TOL * _spectral_norm_bound(model, d)
    i = index - 1
    if i > 0 and w[i - 1] - w[i] <= tol:
        raise DegenerateEigenvalueError("eigenvalue gap below tolerance")
    if i + 1 < w.size and w[i] - w[i + 1] <= tol:
        raise DegenerateEigenvalueError("eigenvalue gap below tolerance")


def airy_manifold(model: AiryModel, cond: EigenCondition) -> ConstraintManifold:
    """Level set {N : lambda_i(A(N)) = value_i} over the noise coordinates."""
    idx = np.asarray(cond.indices) - 1
    p = min(int(idx.max()) + 2, model.matrix_size)
    memo = threading.local()

    def pairs(x):
        key = x.tobytes()
        if getattr(memo, "key", None) != key:
            memo.val = eigen_top(model, p, x)
            memo.key = key
        return memo.val

    off2 = _off2(model)

    def value(x):
        # value-only calls (line searches) use Sturm bisection; eigenvectors
        # are only computed when the Jacobian is requested
        if getattr(memo, "key", None) == x.tobytes():
            return memo.val[0][idx]
        d = model.diagonal(x)[None, :]
        return kernels.top_eigvals(d, off2, p)[0][idx]

    def jac(x):
        w, V = pairs(x)
        d = model.diagonal(x)
        for i in cond.indices:
            _check_gap(model, w, i, d)
        return model.noise_scale * (V[:, idx] ** 2).T

    return ConstraintManifold(model.matrix_size, len(cond.indices), np.asarray(cond.values),
                              value, jac, None, name="airy_eigs",
                              meta={"model": model, "condition": cond})


# ---------------------------------------------------------------------------
# vectorised draws


def sample_diagonals(model: AiryModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Diagonals of ``size`` independent operators, shape (size, K)."""
    N = rng.standard_normal((size, model.matrix_size))
    N *= model.noise_scale
    N += model.base_diagonal
    return N


def _off2(model):
    return np.full(model.matrix_size - 1, model.off_diagonal ** 2)


def tail_counts(model: AiryModel, threshold: float, draws: int, rng: np.random.Generator,
                batch: int = 100_000) -> int:
    """Number of draws with lambda_1 >= threshold among ``draws``."""
    hits = 0
    off2 = _off2(model)
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        hits += int((kernels.sturm_count(sample_diagonals(model, b, rng), off2, threshold) > 0).sum())
        done += b
    return hits


@dataclass(frozen=True)
class EigenBox:
    """Relaxed condition lo_j < lambda_{i_j} < hi_j (1-based indices)."""

    indices: tuple = ()
    lows: tuple = ()
    highs: tuple = ()

    @classmethod
    def around(cls, cond: EigenCondition, halfwidth: float) -> "EigenBox":
        return cls(cond.indices, tuple(v - halfwidth for v in cond.values),
                   tuple(v + halfwidth for v in cond.values))

    def accept(self, model: AiryModel, diag: np.ndarray) -> np.ndarray:
        off2 = _off2(model)
        ok = np.ones(diag.shape[0], dtype=bool)
        for i, lo, hi in zip(self.indices, self.lows, self.highs):
            if not ok.any():
                break
            sub = np.flatnonzero(ok)
            # lambda_i > lo  <=>  #eig above lo >= i ; lambda_i < hi <=> #above hi < i
            above_lo = kernels.sturm_count(np.ascontiguousarray(diag[sub]), off2, lo)
            good = above_lo >= i
            sub2 = sub[good]
            if sub2.size:
                above_hi = kernels.sturm_count(np.ascontiguousarray(diag[sub2]), off2, hi)
                good2 = np.zeros(sub.size, dtype=bool)
                good2[np.flatnonzero(good)] = above_hi < i
                good = good2
            ok[sub] = good
        return ok


def top_eigvals_of(model: AiryModel, diag: np.ndarray, p: int) -> np.ndarray:
    """Top-p eigenvalues of a batch of diagonals via Sturm bisection."""
    return kernels.top_eigvals(np.ascontiguousarray(diag), _off2(model), p)


# ---------------------------------------------------------------------------
# experiments


SIX_EIG_INDICES = (1, 2, 3, 5, 6, 7)
SIX_EIG_VALUES = (-2.0, -3.5, -4.65, -7.9, -9.0, -10.8)


def _psi_eig(model, index, p):
    def psi(N):
        w, _ = eigen_top(model, p, N)
        return np.array([w[index - 1]])
    return psi


def _scheme_summary(run, schemes):
    from .samplers import effective_sample_size, normalized_weight_variance, weighted_mean
    out = {}
    vals = run.statistic[:, 0] if run.statistic.size else np.zeros(0)
    for s in schemes:
        w = run.weights[s]
        out[s] = {"weighted_mean": float(np.ravel(weighted_mean(vals, w))[0]) if w.size else float("nan"),
                  "weight_variance": normalized_weight_variance(w) if w.size > 1 else float("nan"),
                  "ess": effective_sample_size(w) if w.size else 0.0}
    return out


def experiment_single_eig(model: AiryModel, values: Sequence[float], d: int, i_max: int,
                          rng: np.random.Generator, schemes=("first_order", "traditional"),
                          psi_index: int = 2, control_value: Optional[float] = 5.0,
                          control_iters: Optional[int] = None, solver_cfg=None, threads: int = 1) -> dict:
    """lambda_{psi_index} conditioned on lambda_1 = v for each v in ``values``.

    Runs Algorithm 2.1 (one solver solution per iteration) and weights the
    same points under every scheme. For ``control_value`` an extra run with
    d = K (no subspace restriction) is added as the unconstrained-solver
    control.

    Returns:
        dict with ``runs`` (value -> DeterministicRun), ``summary`` (value ->
        per-scheme weighted mean, normalised weight variance and ESS) and
        optionally ``control``.
    """
    from .samplers import run_deterministic_gibbs
    from .solver import SolverConfig

    cfg = SolverConfig() if solver_cfg is None else solver_cfg
    psi = _psi_eig(model, psi_index, max(psi_index, 2))
    runs, summary = {}, {}
    streams = rng.spawn(len(values) + 1)
    for v, g in zip(values, streams):
        m = airy_manifold(model, EigenCondition((1,), (float(v),)))
        run = run_deterministic_gibbs(m, d, i_max, cfg, schemes, g, psi=psi, threads=threads)
        runs[float(v)] = run
        summary[float(v)] = {"schemes": _scheme_summary(run, schemes),
                             "counters": run.counters.as_dict(), "d_used": run.d_used}
    out = {"runs": runs, "summary": summary}
    if control_value is not None:
        m = airy_manifold(model, EigenCondition((1,), (float(control_value),)))
        n_c = i_max if control_iters is None else control_iters
        run = run_deterministic_gibbs(m, model.matrix_size, n_c, cfg, ("first_order",), streams[-1],
                                      psi=psi, threads=threads)
        out["control"] = {"value": float(control_value), "run": run,
                          "summary": {"schemes": _scheme_summary(run, ("first_order",)),
                                      "counters": run.counters.as_dict()}}
    return out


def experiment_multi_eig(model: AiryModel, d: int, i_max: int, rng: np.random.Generator,
                         indices=SIX_EIG_INDICES, values=SIX_EIG_VALUES, psi_index: int = 4,
                         box_indices=(3, 5), box_halfwidth: float = 1e-3,
                         rejection_draws: int = 1_000_000, schemes=("first_order", "traditional"),
                         solver_cfg=None, threads: int = 1) -> dict:
    """lambda_4 conditioned on the other top-seven eigenvalues, plus rejection.

    The rejection baseline only enforces the relaxed box on
    ``box_indices`` (|lambda_i - value_i| < ``box_halfwidth``).
    """
    from .samplers import run_deterministic_gibbs, run_rejection
    from .solver import SolverConfig

    cfg = SolverConfig() if solver_cfg is None else solver_cfg
    cond = EigenCondition(indices, values)
    m = airy_manifold(model, cond)
    p = max(max(indices), psi_index) + 1
    g1, g2 = rng.spawn(2)
    run = run_deterministic_gibbs(m, d, i_max, cfg, schemes, g1,
                                  psi=_psi_eig(model, psi_index, min(p, model.matrix_size)),
                                  threads=threads)
    lookup = dict(zip(cond.indices, cond.values))
    box = EigenBox(tuple(box_indices), tuple(lookup[i] - box_halfwidth for i in box_indices),
                   tuple(lookup[i] + box_halfwidth for i in box_indices))
    rej = run_rejection(box, model, rejection_draws, g2, psi_index=psi_index)
    return {"run": run, "rejection": rej, "box": box,
            "summary": {"schemes": _scheme_summary(run, schemes), "counters": run.counters.as_dict(),
                        "rejection_accepted": rej.accepted, "rejection_draws": rej.draws}}
