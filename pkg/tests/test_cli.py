import json

import numpy as np
import pytest

from bri.cli import AnalysisConfig, ingest_csv, load_config, main, validate_plan
from bri.errors import ConfigError, EmptyFile, IncompatibleStatistic, MissingColumn, ParseError

MAPPING = {"a": "treat", "y": "outcome"}


def _write_csv(path, rows, header="treat,outcome,x"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


@pytest.fixture
def small_csv(tmp_path):
    return _write_csv(tmp_path / "d.csv", ["0,1.2,1", "1,4.9,2", "1,3.4,3", "0,3.6,4"])


@pytest.fixture
def study_csv(tmp_path):
    gen = np.random.default_rng(7)
    a = np.repeat([0, 1], 40)
    x = gen.normal(size=80)
    y = 10 + 2 * a + x + gen.normal(size=80)
    return _write_csv(tmp_path / "study.csv", [f"{ai},{yi:.6f},{xi:.6f}" for ai, yi, xi in zip(a, y, x)])


GRID_SAMPLER = """[sampler]
type = "grid"
grid = [-20.0, 20.0, 2001]
"""


def _config(tmp_path, data_path, extra="", sampler=GRID_SAMPLER):
    path = tmp_path / "cfg.toml"
    path.write_text(f"""seed = 17
output_dir = "{tmp_path / 'out'}"

[data]
path = "{data_path}"
a = "treat"
y = "outcome"
covariates = ["x"]

{sampler}
[frt]
draws = 2000
{extra}
""")
    return path


def test_ingest_csv(small_csv):
    study = ingest_csv(small_csv, MAPPING)
    assert study.a.tolist() == [0, 1, 1, 0]
    np.testing.assert_array_equal(study.y, [1.2, 4.9, 3.4, 3.6])
    assert study.X is None
    with_x = ingest_csv(small_csv, {**MAPPING, "covariates": ["x"]})
    assert with_x.X.shape == (4, 1)


def test_ingest_errors(tmp_path):
    bad = _write_csv(tmp_path / "bad.csv", ["0,1.0,1", "1,2.0,1", "2,3.0,1"])
    with pytest.raises(ParseError) as info:
        ingest_csv(bad, MAPPING)
    assert info.value.row == 3 and "row 3" in str(info.value)
    text = _write_csv(tmp_path / "text.csv", ["0,abc,1"])
    with pytest.raises(ParseError):
        ingest_csv(text, MAPPING)
    with pytest.raises(MissingColumn):
        ingest_csv(bad, {"a": "treat", "y": "response"})
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyFile):
        ingest_csv(empty, MAPPING)
    header_only = _write_csv(tmp_path / "h.csv", [])
    header_only.write_text("treat,outcome\n")
    with pytest.raises(EmptyFile):
        ingest_csv(header_only, MAPPING)


def test_config_defaults_and_round_trip(tmp_path, small_csv):
    cfg = load_config(_config(tmp_path, small_csv))
    assert cfg["engine"]["type"] == "asymptotic"
    assert cfg["frt"]["draws"] == 2000
    assert cfg["frt"]["sided"] == "two_sided_abs"
    again = tmp_path / "again.toml"
    again.write_text(cfg.dumps())
    assert load_config(again).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("raw, fragment", [
    ({"data": {"path": "x", "a": "a", "y": "y"}}, "seed"),
    ({"seed": 1, "data": {"path": "x", "a": "a"}}, "data.y"),
    ({"seed": 1, "data": {"path": "x", "a": "a", "y": "y"}, "engine": {"type": "magic"}}, "magic"),
    ({"seed": 1, "data": {"path": "x", "a": "a", "y": "y"}, "model": {"type": "cubic"}}, "cubic"),
    ({"seed": 1, "data": {"path": "x", "a": "a", "y": "y"}, "extras": {}}, "extras"),
    ({"seed": 1, "data": {"path": "x", "a": "a", "y": "y"}, "checks": {"combine": "mean"}},
     "checks.combine"),
    ({"seed": 1, "data": {"path": "x", "a": "a", "y": "y"}, "checks": {"combine": "averaged"}},
     "rand_draws_per_theta"),
])
def test_config_errors(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        AnalysisConfig.from_dict(raw)


def test_incompatible_plan_rejected_before_computation(tmp_path, study_csv, capsys):
    cfg_path = _config(tmp_path, study_csv, """
[model]
type = "gaussian_shift"

[engine]
type = "exact"
""")
    with pytest.raises(IncompatibleStatistic):
        validate_plan(load_config(cfg_path))
    assert main(["analyze", "--config", str(cfg_path)]) == 2
    assert "IncompatibleStatistic" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_statistic_exit_code(tmp_path, study_csv, capsys):
    cfg_path = _config(tmp_path, study_csv, '\n[statistic]\nnames = ["median"]\n')
    assert main(["analyze", "--config", str(cfg_path)]) == 2
    assert "median" in capsys.readouterr().err


def test_analyze_outputs_and_reproducibility(tmp_path, study_csv):
    cfg_path = _config(tmp_path, study_csv, """
[checks]
discrepancies = ["s2"]
moments = true
moderation = true
posterior_draws = 200
moderation_draws = 500
""")
    first, second = tmp_path / "r1", tmp_path / "r2"
    assert main(["analyze", "--config", str(cfg_path), "--out", str(first)]) == 0
    assert main(["analyze", "--config", str(cfg_path), "--out", str(second)]) == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for required in ("summary.json", "posterior_density.csv", "frt_histogram.csv", "check_s2.csv",
                     "check_m3.csv"):
        assert required in names
    for name in names:
        if name != "summary.json":
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
    s1 = json.loads((first / "summary.json").read_text())
    s2 = json.loads((second / "summary.json").read_text())
    s1.pop("timestamp"), s2.pop("timestamp")
    assert s1 == s2
    assert 0.0 < s1["frt"]["p_value"] < 0.05
    row = s1["posterior"]["theta"]
    assert row["ci_lo"] < 2.0 < row["ci_hi"]
    assert s1["bvm"]["tv_distance"] < 0.2
    assert set(s1["moderation"]["p_values"]) == {"x"}
    assert {c["name"] for c in s1["checks"]} == {"s2", "m1", "m2", "m3", "m4", "m5"}


def test_frt_command(tmp_path, small_csv):
    cfg_path = _config(tmp_path, small_csv)
    out = tmp_path / "frt"
    assert main(["frt", "--config", str(cfg_path), "--out", str(out)]) == 0
    result = json.loads((out / "frt.json").read_text())
    # six assignments; |DIM| is 0.45, 1.75 or 1.95 in pairs and 1.75 is observed
    assert result["exact"] and result["n_draws"] == 6
    assert result["p_value"] == pytest.approx(4 / 6)


def test_mh_sampler_analysis(tmp_path, study_csv):
    cfg_path = _config(tmp_path, study_csv, sampler="""[sampler]
type = "mh"
init = [0.0]
warmup = 200
iters = 300
chains = 2
""")
    out = tmp_path / "mh"
    assert main(["analyze", "--config", str(cfg_path), "--out", str(out)]) == 0
    header = (out / "draws.csv").read_text().splitlines()[0]
    assert header == "chain,iteration,theta"


def test_simulate_presets(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--preset", "table1", "--reps", "3", "--seed", "1", "--out", str(out)]) == 0
    rows = (out / "table1_metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    assert main(["simulate", "--preset", "table2", "--reps", "2", "--out", str(out)]) == 0
    rows = (out / "table2_metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 4
    assert "n0=1000" in capsys.readouterr().out
