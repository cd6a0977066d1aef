import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypolsi.cli import dispatch, main
from hypolsi.config import EXPERIMENTS, SETTINGS, ConfigError, emit, parse_config, resolve


def test_minimal_constants_config():
    cfg = parse_config('experiment = "constants"\nGamma = 1\ntau = 36\nrho = 1\n')
    assert cfg.experiment == "constants"
    assert cfg["Gamma"] == 1.0 and cfg["tau"] == 36.0 and isinstance(cfg["tau"], float)


def test_tau_below_minimum_names_it():
    with pytest.raises(ConfigError) as ei:
        parse_config('experiment = "stlsi"\nGamma = 1\ntau = 10\n')
    assert "36" in str(ei.value) and ei.value.key == "tau"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as ei:
        parse_config('experiment = "constants"\nfriction = 2.0\n')
    assert "friction" in str(ei.value) and ei.value.key == "friction"


@pytest.mark.parametrize("text", [
    "experiment = ",
    'Gamma = 1\n',
    'experiment = "warp"\n',
    'experiment = "stlsi"\nGamma = -1\n',
    'experiment = "stlsi"\nn_time = "many"\n',
    'experiment = "renyi_decay"\nq = 2\np = 3\n',
    'experiment = "stlsi"\nnu0.kinetic = 1\n',
])
def test_rejects_bad_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_nested_tables_flatten_to_dotted_keys():
    cfg = parse_config('experiment = "entropy_decay"\n[grid]\nt_max = 10\nn = 11\n')
    assert cfg["grid.t_max"] == 10.0 and cfg["grid.n"] == 11


_finite = st.floats(0.1, 10.0, allow_nan=False)


@st.composite
def configs(draw):
    exp = draw(st.sampled_from(EXPERIMENTS))
    vals = {"experiment": exp, "seed": draw(st.integers(0, 2**31)), "rho": draw(_finite),
            "Gamma": draw(st.floats(0.2, 5.0))}
    if draw(st.booleans()):
        M = max(vals["Gamma"], 1 / vals["Gamma"])
        vals["tau"] = 32 * M + 4 + draw(st.floats(0, 50))
    if exp == "renyi_decay":
        vals["q"] = draw(st.floats(1.5, 5.0))
        vals["p"] = draw(st.floats(1.01, vals["q"]))
    if exp == "interpolation_suite":
        vals["phi.b"] = draw(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
        vals["normalize"] = draw(st.booleans())
    if exp == "mc_hypercontractivity":
        vals["n_outer"] = draw(st.integers(2, 5000))
    return resolve(vals)


@settings(max_examples=100, deadline=None)
@given(cfg=configs())
def test_emit_parse_roundtrip(cfg):
    assert parse_config(emit(cfg)) == cfg


def test_every_experiment_has_defaults():
    for exp in EXPERIMENTS:
        cfg = resolve({"experiment": exp})
        assert set(SETTINGS[exp]) <= set(cfg.values)


def test_dispatch_constants(tmp_path):
    status, files = dispatch(parse_config('experiment = "constants"\nGamma = 1\ntau = 36\nrho = 1\n'), tmp_path)
    assert status == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["results"]["constants"]["C_ST"] == 98.0
    assert doc["results"]["constants"]["tau_ST"] == 36.0
    assert (tmp_path / "config.toml") in files
    assert parse_config((tmp_path / "config.toml").read_text()).experiment == "constants"


def test_main_exit_codes(tmp_path, capsys):
    assert main(["interpolation_suite", "--out", str(tmp_path / "a")]) == 0
    cfg = tmp_path / "bad.toml"
    cfg.write_text('experiment = "stlsi"\ntau = 10\n')
    assert main(["stlsi", "--config", str(cfg)]) == 2
    assert "36" in capsys.readouterr().err
    cfg.write_text('experiment = "constants"\n')
    assert main(["stlsi", "--config", str(cfg)]) == 2
    assert main(["nonsense"]) == 2


def test_console_entry_point(tmp_path):
    out = tmp_path / "run"
    proc = subprocess.run([sys.executable, "-m", "hypolsi.cli", "constants", "--out", str(out)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((out / "report.json").read_text())["results"]["constants"]["C_ST"] == 98.0
