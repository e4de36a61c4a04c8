import json
import math

import numpy as np
import pytest

from gibbslimit import cli
from gibbslimit.errors import ConfigError
from gibbslimit.experiments import REGISTRY

NAMES = [
    "conditional", "limit-law", "convergence", "counting", "gibbs-paradox", "colonies",
    "shell", "legendre", "fluctuation", "kl-bound", "exchange", "compare-ab",
]


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# ---------------------------------------------------------------- list


def test_list_has_one_row_per_experiment(capsys):
    assert cli.main(["list"]) == 0
    text = capsys.readouterr().out
    rows = [line for line in text.splitlines() if line and not line.startswith(" ")]
    assert [r.split()[0] for r in rows] == NAMES


def test_list_json_matches_registry(capsys):
    assert cli.main(["list", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["experiment"] for r in rows] == NAMES
    for r in rows:
        assert r["anchor"]
        assert set(r["params"]) == set(REGISTRY[r["experiment"]].params)


# ---------------------------------------------------------------- run


def test_fluctuation_equality_case(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"experiment": "fluctuation", "family": "exponential", "lambda": 1, "seed": 42})
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    data = json.loads((out / "fluctuation.json").read_text())
    assert abs(data["lhs"]) <= 1e-12 and abs(data["rhs"]) <= 1e-12
    m = manifest(out)
    assert m["status"] == "pass"
    assert m["config"]["seed"] == 42
    # the resolved config echoes defaults too
    assert set(m["config"]["params"]) == set(REGISTRY["fluctuation"].params)
    assert "PASS" in capsys.readouterr().out


def test_convergence_outputs(tmp_path):
    out = tmp_path / "out"
    code, m = cli.run({"experiment": "convergence", "n": [10, 30, 100, 300, 1000], "h": 4, "seed": 7}, out)
    assert code == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "n,kl" and len(lines) == 6
    summary = json.loads((out / "convergence.json").read_text())
    assert summary["slope"] <= -0.4667
    for name in m["outputs"]:
        assert (out / name).stat().st_size > 0


def test_unknown_experiment(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"experiment": "unknown-name"})
    assert cli.main(["run", cfg, "--out", str(out)]) == 2
    m = manifest(out)
    assert m["status"] == "error"
    assert m["error"]["type"] == "ConfigError"


def test_unreadable_config(tmp_path):
    out = tmp_path / "out"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad), "--out", str(out)]) == 2
    assert manifest(out)["error"]["type"] == "ConfigError"
    assert cli.main(["run", str(tmp_path / "missing.json"), "--out", str(out)]) == 2


def test_runtime_error_is_named(tmp_path):
    # a shape below one makes f_Y(0) infinite
    code, m = cli.run({"experiment": "fluctuation", "family": "gamma", "shape": 0.5}, tmp_path)
    assert code == 3
    assert m["error"]["type"] == "UndefinedAtZero"
    assert manifest(tmp_path)["status"] == "error"


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env-out"))
    code, _ = cli.run({"experiment": "fluctuation"})
    assert code == 0
    assert (tmp_path / "env-out" / "manifest.json").exists()


def test_seed_override(tmp_path):
    _, m = cli.run({"experiment": "kl-bound", "pairs": 3, "seed": 1}, tmp_path, seed=99)
    assert m["config"]["seed"] == 99


# ---------------------------------------------------------------- config validation


@pytest.mark.parametrize(
    "raw",
    [
        [],
        {"experiment": "legendre", "bogus": 1},
        {"experiment": "legendre", "beta": "hot"},
        {"experiment": "kl-bound", "pairs": 2.5},
        {"experiment": "kl-bound", "pairs": True},
        {"experiment": "legendre", "seed": -1},
        {"experiment": "legendre", "seed": 2**64},
        {"experiment": "legendre", "seed": "7"},
    ],
)
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        cli.resolve_config(raw)


def test_int_accepted_for_float():
    cfg = cli.resolve_config({"experiment": "legendre", "beta": 2})
    assert isinstance(cfg["params"]["beta"], float)
    assert cfg["params"]["c"] == 1.5


# ---------------------------------------------------------------- serialization


def test_dumps_floats_round_trip():
    x = 0.1 + 0.2
    text = cli.dumps({"x": x, "arr": np.array([1.0 / 3.0, 2.0]), "k": np.int64(4)})
    back = json.loads(text)
    assert back["x"] == x
    assert back["arr"][0] == 1.0 / 3.0
    assert back["k"] == 4


def test_dumps_non_finite():
    text = cli.dumps([math.inf, -math.inf, math.nan, 1.5])
    assert json.loads(text) == ["inf", "-inf", "nan", 1.5]
    assert cli.fmt_float(math.nan) == "nan"
    with pytest.raises(TypeError):
        cli.dumps(object())


def test_csv_columns_checked(tmp_path):
    sink = cli.Sink(tmp_path)
    sink.csv("a.csv", {"x": [1.0, 2.0], "y": [3, 4]})
    assert (tmp_path / "a.csv").read_text() == "x,y\n1,3\n2,4\n"
    with pytest.raises(ValueError):
        sink.csv("b.csv", {"x": [1.0], "y": [1, 2]})
    assert sink.files == ["a.csv"]
