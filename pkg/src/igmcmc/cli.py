"""Experiment runner: ``igmcmc --config run.json [--seed S] [--threads N] [--output DIR]``.

The config is a single JSON object::

    {"experiment": "circle", "seed": 7, "output_dir": "out",
     "params": {...}, "weights": {...}, "solver": {...}, "max_csv_rows": 100000}

Only ``experiment`` is required. Unknown keys anywhere are rejected.
Exit codes: 0 ok, 2 config error (nothing written), 3 numerical failure
(nothing written), 4 run flagged invalid (stall fraction above 0.5;
outputs are written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ConfigError, IGMCMCError, InputError
from .samplers import STALL_LIMIT, fd_edges

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_STALL = 0, 2, 3, 4

_NUM = (int, float)
_SCHEMES = ("traditional", "first_order", "curvature")

# name -> (kind, default); kind in int, float, num_list, int_list, str, str_list, opt_float, opt_int
PARAMS: Dict[str, Dict[str, tuple]] = {
    "circle": {"samples": ("int", 1_000_000), "checkpoints": ("int_list", [10_000]),
               "reruns": ("int", 20)},
    "theorem3": {"n": ("int", 50), "d_list": ("int_list", [5, 10, 20]),
                 "samples": ("int", 1_000_000), "ball_radius": ("float", 1.0)},
    "sphere_collection": {"n": ("int", 20), "d": ("int", 8), "n_spheres": ("int", 50),
                          "radius": ("float", 1.0), "samples": ("int", 100_000),
                          "center_spread": ("float", 0.3), "bins": ("int", 10)},
    "volume_estimator": {"m": ("int", 2), "radius": ("float", 3.0), "samples": ("int", 10_000),
                         "euler_char": ("int", 2)},
    "algebraic_bound": {"s": ("int", 2), "d": ("int", 2), "n": ("int", 3), "b": ("float", 1.0),
                        "space": ("str", "euclidean"), "calibration_samples": ("int", 200_000)},
    "airy_single": {"n_parameter": ("float", 1000.0), "beta": ("float", 2.0),
                    "matrix_size": ("opt_int", None), "noise_mode": ("str", "white"),
                    "values": ("num_list", [-2.0, 0.0, 2.0]), "d": ("int", 23),
                    "i_max": ("int", 1000), "psi_index": ("int", 2),
                    "control_value": ("opt_float", 5.0), "control_iters": ("opt_int", None),
                    "schemes": ("str_list", ["first_order", "traditional"])},
    "airy_multi": {"n_parameter": ("float", 1000.0), "beta": ("float", 2.0),
                   "matrix_size": ("opt_int", None), "noise_mode": ("str", "white"),
                   "indices": ("int_list", [1, 2, 3, 5, 6, 7]),
                   "values": ("num_list", [-2.0, -3.5, -4.65, -7.9, -9.0, -10.8]),
                   "psi_index": ("int", 4), "d": ("int", 23), "i_max": ("int", 1000),
                   "box_indices": ("int_list", [3, 5]), "box_halfwidth": ("float", 1e-3),
                   "rejection_draws": ("int", 1_000_000),
                   "schemes": ("str_list", ["first_order", "traditional"])},
    "gaussian_sanity": {"n": ("int", 5), "d": ("int", 2), "i_max": ("int", 10_000),
                        "step_scale": ("float", 1.5), "n_starts": ("int", 8)},
}
TOP_KEYS = {"experiment", "seed", "output_dir", "params", "weights", "solver", "max_csv_rows"}
WEIGHT_KEYS = {"cutoff_low": "float", "cutoff_high": "float", "normalization_mc_samples": "int"}
SOLVER_KEYS = {"max_iters": "int", "residual_tol": "float", "step_damping": "float",
               "max_restarts": "int", "max_halvings": "int", "stagnation_window": "int"}


# ---------------------------------------------------------------------------
# config parsing


def _check(kind: str, key: str, v):
    def bad():
        raise ConfigError(f"{key}: expected {kind}, got {v!r}")

    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            bad()
        return int(v)
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, _NUM) or not math.isfinite(v):
            if v == "inf":
                return math.inf
            bad()
        return float(v)
    if kind == "str":
        if not isinstance(v, str):
            bad()
        return v
    if kind.startswith("opt_"):
        return None if v is None else _check(kind[4:], key, v)
    if kind.endswith("_list"):
        if not isinstance(v, list) or not v:
            bad()
        inner = {"num": "float", "int": "int", "str": "str"}[kind[:-5]]
        return [_check(inner, key, x) for x in v]
    raise ConfigError(f"unknown kind {kind}")  # pragma: no cover


def parse_config(raw: Any) -> dict:
    """Validate a decoded JSON config and fill defaults. Raises ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    exp = raw.get("experiment")
    if exp not in PARAMS:
        raise ConfigError(f"experiment must be one of {sorted(PARAMS)}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out_dir = raw.get("output_dir", "igmcmc_out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output_dir must be a non-empty string")
    rows = _check("int", "max_csv_rows", raw.get("max_csv_rows", 100_000))
    if rows < 0:
        raise ConfigError("max_csv_rows must be >= 0")

    spec = PARAMS[exp]
    given = raw.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be an object")
    extra = set(given) - set(spec)
    if extra:
        raise ConfigError(f"unknown params for {exp}: {sorted(extra)}")
    params = {k: _check(kind, k, given[k]) if k in given else default
              for k, (kind, default) in spec.items()}
    for k in ("samples", "i_max", "reruns", "rejection_draws", "n_spheres"):
        if k in params and params[k] < (0 if k == "reruns" else 1):
            raise ConfigError(f"{k} must be positive")
    for s in params.get("schemes", []):
        if s not in _SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")

    sections = {}
    for name, keys in (("weights", WEIGHT_KEYS), ("solver", SOLVER_KEYS)):
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"{name} must be an object")
        extra = set(sec) - set(keys)
        if extra:
            raise ConfigError(f"unknown {name} keys: {sorted(extra)}")
        sections[name] = {k: _check(keys[k], k, v) for k, v in sec.items()}
    # constructing the dataclasses validates ranges
    try:
        from .solver import SolverConfig
        from .weights import WeightConfig
        WeightConfig("curvature", **{"normalization_mc_samples": 1000, **sections["weights"]})
        SolverConfig(**sections["solver"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return {"experiment": exp, "seed": seed, "output_dir": out_dir, "params": params,
            "weights": sections["weights"], "solver": sections["solver"], "max_csv_rows": rows}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# outputs


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class Output:
    """Accumulates samples and histogram rows and the summary in memory."""

    SAMPLE_COLS = ("sample", "group", "scheme", "statistic", "weight")
    HIST_COLS = ("group", "scheme", "bin_left", "bin_right", "mass", "density")

    def __init__(self, max_rows: int):
        self.max_rows = max_rows
        self.samples: List[tuple] = []
        self.hist: List[tuple] = []
        self.summary: Dict[str, Any] = {}
        self.weight_variance: Dict[str, Any] = {}
        self.counters: Dict[str, Any] = {}
        self.stall_fraction = 0.0

    def add_samples(self, group, scheme, stat, weight):
        stat = np.ravel(np.asarray(stat, dtype=float))
        w = np.broadcast_to(np.asarray(weight, dtype=float), stat.shape)
        k = min(stat.size, self.max_rows)
        for i in range(k):
            self.samples.append((i, group, scheme, stat[i], w[i]))

    def add_histogram(self, group, scheme, stat, weight=None, edges=None):
        stat = np.ravel(np.asarray(stat, dtype=float))
        if stat.size == 0:
            return
        w = np.ones_like(stat) if weight is None else np.broadcast_to(np.asarray(weight, dtype=float), stat.shape)
        if not w.sum() > 0:
            return
        e = fd_edges(stat, w) if edges is None else np.asarray(edges, dtype=float)
        mass, _ = np.histogram(stat, bins=e, weights=w)
        dens = mass / (mass.sum() * np.diff(e)) if mass.sum() > 0 else np.zeros_like(mass)
        for i in range(mass.size):
            self.hist.append((group, scheme, e[i], e[i + 1], mass[i], dens[i]))

    def add_counters(self, group, counters: dict):
        self.counters[str(group)] = counters
        self.stall_fraction = max(self.stall_fraction, counters.get("stall_fraction", 0.0))

    @staticmethod
    def _csv(cols, rows) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def write(self, out_dir: str, summary: dict, config_text: str):
        os.makedirs(out_dir, exist_ok=True)
        files = {"samples.csv": self._csv(self.SAMPLE_COLS, self.samples),
                 "histogram.csv": self._csv(self.HIST_COLS, self.hist),
                 "summary.json": json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
                 "config.json": config_text}
        for name, text in files.items():
            tmp = os.path.join(out_dir, name + ".tmp")
            with open(tmp, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, os.path.join(out_dir, name))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


# ---------------------------------------------------------------------------
# experiments


def _weight_cfg(cfg, scheme="curvature"):
    from .weights import WeightConfig
    kw = {"normalization_mc_samples": 1000, **cfg["weights"]}
    return WeightConfig(scheme, **kw)


def _solver_cfg(cfg):
    from .solver import SolverConfig
    return SolverConfig(**cfg["solver"])


def _airy_model(p):
    from .airy import AiryModel
    return AiryModel.from_n(p["n_parameter"], p["beta"], p["matrix_size"], noise_mode=p["noise_mode"])


def _run_circle(cfg, rng, out: Output, threads):
    from .validation import circle_variance_reruns, circle_weight_experiment
    p = cfg["params"]
    g_main, g_re = rng.spawn(2)
    rep = circle_weight_experiment(p["samples"], g_main, p["checkpoints"], return_draws=True)
    x, t = rep.pop("x"), rep.pop("traditional")
    out.add_samples("draw", "traditional", x, t)
    out.add_samples("draw", "first_order", x, 1.0)
    out.add_histogram("draw", "traditional", t)
    if p["reruns"] > 0:
        early = min(p["checkpoints"])
        rr = circle_variance_reruns(p["reruns"], p["samples"], early, g_re)
        rep["reruns"] = {"count": rr["reruns"], "variance_increases": rr["increases"], "early": early}
    out.weight_variance = {"traditional": float(np.var(t, ddof=1) / t.mean() ** 2),
                           "first_order": rep["var_first_order"]}
    return rep


def _run_theorem3(cfg, rng, out, threads):
    from .validation import section_volumes, theorem3_check
    p = cfg["params"]
    g1, g2 = rng.spawn(2)
    reps = theorem3_check(p["n"], p["d_list"], p["samples"], g1, p["ball_radius"])
    for d, gg in zip(p["d_list"], g2.spawn(len(p["d_list"]))):
        v = section_volumes(p["n"], d, min(p["samples"], max(out.max_rows, 1)), 1.0, gg)
        v = v[v > 0]
        out.add_samples(f"d={d}", "volume", v / v.mean(), 1.0)
        out.add_histogram(f"d={d}", "volume", v / v.mean())
    logv = [math.log1p(r.empirical_var) for r in reps]
    return {"reports": [r.as_dict() for r in reps],
            "log_variance_increasing": bool(all(b > a for a, b in zip(logv, logv[1:]))),
            "all_within_bounds": bool(all(r.within_bounds for r in reps))}


def _run_sphere_collection(cfg, rng, out, threads):
    from .validation import sphere_collection_experiment
    p = cfg["params"]
    w = _weight_cfg(cfg)
    rep = sphere_collection_experiment(p["n"], p["d"], p["n_spheres"], p["radius"], p["samples"], w, rng,
                                       p["center_spread"], p["bins"])
    edges = np.linspace(0.0, 1.0, p["bins"] + 1)
    for tag in ("raw", "curvature"):
        out.add_samples("sphere_counts", tag, np.asarray(rep[tag]["counts"], dtype=float), 1.0)
        mass = np.asarray(rep[tag]["rank_histogram"], dtype=float)
        for i in range(mass.size):
            out.hist.append(("selection_rank", tag, edges[i], edges[i + 1], mass[i],
                             mass[i] / (mass.sum() * (edges[i + 1] - edges[i]))))
    out.weight_variance = {t: rep[t]["volume_variance"] for t in ("raw", "curvature")}
    return rep


def _run_volume(cfg, rng, out, threads):
    from .validation import round_sphere_sampler, volume_from_curvature
    p = cfg["params"]
    rep = volume_from_curvature(round_sphere_sampler(p["m"], p["radius"]), p["euler_char"], p["m"],
                                p["samples"], rng)
    vals = rep.pop("values")
    out.add_samples("pf", "curvature", vals, 1.0)
    out.add_histogram("pf", "curvature", vals)
    from .geometry import sphere_volume
    rep["true_volume"] = sphere_volume(p["m"]) * p["radius"] ** p["m"]
    rep["rel_err"] = abs(rep["volume"] - rep["true_volume"]) / rep["true_volume"]
    return rep


def _run_bound(cfg, rng, out, threads):
    from .geometry import calibrate_crofton
    from .validation import algebraic_volume_bound
    p = cfg["params"]
    c = None
    c_se = 0.0
    if p["space"] == "euclidean":
        c, c_se = calibrate_crofton(p["d"], 1, p["n"], "euclidean", p["calibration_samples"], rng)
    b = algebraic_volume_bound(p["s"], p["d"], 1, p["n"], p["b"], p["space"], c)
    out.add_samples("bound", "none", [b], 1.0)
    return {"bound": b, "crofton": c, "crofton_se": c_se}


def _airy_rows(out, group, run, schemes):
    st = run.statistic[:, 0] if run.statistic.size else np.zeros(0)
    for s in schemes:
        out.add_samples(group, s, st, run.weights[s])
        out.add_histogram(group, s, st, run.weights[s])
    out.add_counters(group, run.counters.as_dict())


def _run_airy_single(cfg, rng, out, threads):
    from .airy import experiment_single_eig
    p = cfg["params"]
    model = _airy_model(p)
    res = experiment_single_eig(model, p["values"], p["d"], p["i_max"], rng, tuple(p["schemes"]),
                                p["psi_index"], p["control_value"], p["control_iters"],
                                _solver_cfg(cfg), threads)
    for v, run in res["runs"].items():
        _airy_rows(out, f"lambda1={fmt(v)}", run, p["schemes"])
    summ = {fmt(k): v for k, v in res["summary"].items()}
    if "control" in res:
        _airy_rows(out, f"control:lambda1={fmt(res['control']['value'])}", res["control"]["run"],
                   ("first_order",))
        summ["control"] = res["control"]["summary"]
    means = [res["summary"][float(v)]["schemes"][p["schemes"][0]]["weighted_mean"] for v in p["values"]]
    out.weight_variance = {fmt(v): {s: res["summary"][float(v)]["schemes"][s]["weight_variance"]
                                    for s in p["schemes"]} for v in p["values"]}
    return {"conditions": summ, "weighted_means": means,
            "mean_increasing": bool(all(b > a for a, b in zip(means, means[1:])))}


def _run_airy_multi(cfg, rng, out, threads):
    from .airy import experiment_multi_eig
    p = cfg["params"]
    model = _airy_model(p)
    if len(p["indices"]) != len(p["values"]):
        raise ConfigError("indices and values must have equal length")
    res = experiment_multi_eig(model, p["d"], p["i_max"], rng, tuple(p["indices"]), tuple(p["values"]),
                               p["psi_index"], tuple(p["box_indices"]), p["box_halfwidth"],
                               p["rejection_draws"], tuple(p["schemes"]), _solver_cfg(cfg), threads)
    _airy_rows(out, "conditioned", res["run"], p["schemes"])
    rej = res["rejection"].statistic
    out.add_samples("rejection", "rejection", rej, 1.0)
    out.add_histogram("rejection", "rejection", rej)
    out.weight_variance = {s: res["summary"]["schemes"][s]["weight_variance"] for s in p["schemes"]}
    return res["summary"]


def _run_gaussian(cfg, rng, out, threads):
    from .manifold import full_space, standard_gaussian
    from .samplers import ChiStep, run_gibbs_mcmc
    from .weights import WeightConfig
    p = cfg["params"]
    n, d = p["n"], p["d"]
    res = run_gibbs_mcmc(full_space(n), standard_gaussian(), d, ChiStep(d, p["step_scale"]),
                         _solver_cfg(cfg), WeightConfig("first_order"), p["i_max"], np.zeros(n), rng,
                         n_starts=p["n_starts"])
    X = res.points
    out.add_samples("x0", "first_order", X[:, 0], 1.0)
    out.add_histogram("x0", "first_order", X[:, 0])
    out.add_counters("chain", res.counters.as_dict())
    out.weight_variance = {"first_order": 0.0}
    return {"mean": X.mean(axis=0), "cov_max_abs_err": float(np.abs(np.cov(X.T) - np.eye(n)).max()),
            "acceptance_rate": res.counters.accepted / max(res.counters.iterations, 1)}


RUNNERS = {"circle": _run_circle, "theorem3": _run_theorem3, "sphere_collection": _run_sphere_collection,
           "volume_estimator": _run_volume, "algebraic_bound": _run_bound,
           "airy_single": _run_airy_single, "airy_multi": _run_airy_multi,
           "gaussian_sanity": _run_gaussian}


# ---------------------------------------------------------------------------
# entry point


def _fail(code: int, category: str, msg: str) -> int:
    sys.stderr.write(json.dumps({"error": category, "exit_code": code, "message": msg}) + "\n")
    return code


def run(config_path: str, seed: Optional[int] = None, threads: Optional[int] = None,
        output: Optional[str] = None) -> int:
    """Run one experiment from a config file; returns the exit code."""
    try:
        with open(config_path) as fh:
            text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if isinstance(raw, dict) and seed is not None:
            raw = {**raw, "seed": seed}
        cfg = parse_config(raw)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    if output is not None:
        cfg["output_dir"] = output
    threads = threads if threads else (os.cpu_count() or 1)
    rng = np.random.default_rng(cfg["seed"])
    out = Output(cfg["max_csv_rows"])
    t0 = time.perf_counter()
    try:
        result = RUNNERS[cfg["experiment"]](cfg, rng, out, threads)
    except (ConfigError, InputError) as exc:
        # parameter combinations rejected by the library before any output
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (IGMCMCError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", f"{type(exc).__name__}: {exc}")
    wall = time.perf_counter() - t0
    invalid = out.stall_fraction > STALL_LIMIT
    summary = {"experiment": cfg["experiment"], "seed": cfg["seed"], "config_hash": config_hash(cfg),
               "wall_clock_seconds": wall, "threads": threads,
               "weight_variance": out.weight_variance, "counters": out.counters,
               "stall_fraction": out.stall_fraction, "invalid": invalid,
               "result": result, "config": cfg}
    out.write(cfg["output_dir"], summary, text)
    if invalid:
        return _fail(EXIT_STALL, "stall", f"stall fraction {out.stall_fraction:.3f} exceeds {STALL_LIMIT}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="igmcmc", description="Run an igmcmc experiment from a JSON config.")
    ap.add_argument("--config", required=True, help="path to the JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit), overrides config")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: logical cores)")
    ap.add_argument("--output", default=None, help="output directory, overrides config output_dir")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        return _fail(EXIT_CONFIG, "config", "seed must be an unsigned 64-bit integer")
    if args.threads is not None and args.threads < 1:
        return _fail(EXIT_CONFIG, "config", "threads must be >= 1")
    return run(args.config, args.seed, args.threads, args.output)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
