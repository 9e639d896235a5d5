import csv
import json
import os

import numpy as np
import pytest

from igmcmc import cli
from igmcmc.errors import ConfigError, NumericalError


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return str(p)


def test_parse_fills_defaults_and_rejects_unknown_keys():
    cfg = cli.parse_config({"experiment": "circle"})
    assert cfg["params"]["samples"] == 1_000_000 and cfg["seed"] == 0
    for bad in ({"experiment": "circle", "colour": 1},
                {"experiment": "circle", "params": {"sample": 5}},
                {"experiment": "nope"},
                {"experiment": "circle", "seed": -1},
                {"experiment": "circle", "seed": True},
                {"experiment": "circle", "weights": {"cutoff_low": 5.0, "cutoff_high": 1.0}},
                {"experiment": "circle", "solver": {"max_iters": 0}},
                {"experiment": "airy_single", "params": {"schemes": ["magic"]}},
                []):
        with pytest.raises(ConfigError):
            cli.parse_config(bad)
    assert cli.parse_config({"experiment": "circle", "weights": {"cutoff_high": "inf"}})["weights"][
        "cutoff_high"] == float("inf")


def test_config_hash_is_canonical():
    a = cli.parse_config({"experiment": "circle", "seed": 3})
    b = cli.parse_config({"seed": 3, "experiment": "circle"})
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.fmt(0.1) == "0.10000000000000001" and cli.fmt(True) == "true"


def test_bad_config_exits_2_and_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    p = _write(tmp_path, '{"experiment": "circle", "bogus": 1}')
    assert cli.main(["--config", p, "--output", str(out)]) == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err.strip())
    assert err["exit_code"] == 2
    assert cli.main(["--config", _write(tmp_path, "{not json", "b.json"), "--output", str(out)]) == 2
    assert cli.main(["--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main([]) == 2


def test_numerical_failure_exits_3_and_writes_nothing(tmp_path, monkeypatch):
    def boom(cfg, rng, out, threads):
        raise NumericalError("synthetic failure")

    monkeypatch.setitem(cli.RUNNERS, "circle", boom)
    out = tmp_path / "out"
    p = _write(tmp_path, {"experiment": "circle"})
    assert cli.main(["--config", p, "--output", str(out)]) == 3
    assert not out.exists()


def test_stalled_run_exits_4_with_outputs(tmp_path):
    # a single solver iteration almost never converges, so most iterations stall
    cfg = {"experiment": "airy_single", "seed": 1, "params": {"i_max": 6, "values": [0.0],
                                                               "control_value": None},
           "solver": {"max_iters": 1, "max_restarts": 1}}
    out = tmp_path / "out"
    assert cli.main(["--config", _write(tmp_path, cfg), "--output", str(out)]) == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["invalid"] is True and summary["stall_fraction"] > 0.5


def test_outputs_and_columns(tmp_path):
    cfg = {"experiment": "circle", "seed": 5, "params": {"samples": 5000, "reruns": 1,
                                                          "checkpoints": [100]}, "max_csv_rows": 50}
    out = tmp_path / "out"
    assert cli.main(["--config", _write(tmp_path, cfg), "--output", str(out), "--threads", "1"]) == 0
    with open(out / "samples.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sample", "group", "scheme", "statistic", "weight"]
    assert len(rows) - 1 <= 50 * 2
    with open(out / "histogram.csv") as fh:
        hrows = list(csv.reader(fh))
    assert hrows[0] == ["group", "scheme", "bin_left", "bin_right", "mass", "density"]
    s = json.loads((out / "summary.json").read_text())
    for key in ("seed", "config_hash", "wall_clock_seconds", "threads", "weight_variance",
                "counters", "stall_fraction", "result"):
        assert key in s
    assert s["seed"] == 5
    assert (out / "config.json").read_text() == json.dumps(cfg)


def test_seed_flag_overrides_and_is_deterministic(tmp_path):
    cfg = {"experiment": "gaussian_sanity", "seed": 1, "params": {"i_max": 200}}
    p = _write(tmp_path, cfg)
    blobs = []
    for i, seed in enumerate((9, 9, 10)):
        out = tmp_path / f"o{i}"
        assert cli.main(["--config", p, "--seed", str(seed), "--output", str(out)]) == 0
        blobs.append((out / "samples.csv").read_bytes())
    assert blobs[0] == blobs[1] != blobs[2]
