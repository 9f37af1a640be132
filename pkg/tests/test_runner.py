"""
Tests for config resolution, the experiment registry and the runner's exit codes.
"""
import io
import json
import logging
import textwrap

import pytest
import yaml

from sbm_lab.core.errors import ConfigError
from sbm_lab.core.experiment_manager import ExperimentManager
from sbm_lab.core.runner import EXPERIMENTS, build_parser, run
from sbm_lab.utils.config_manager import ConfigManager, deep_merge, parse_scalar, set_dotted
from sbm_lab.utils.logging_config import configure_logging

SDE_CONFIG = {
    "defaults": {
        "T": 0.1,
        "dt": 0.01,
        "c_values": [0.5],
        "refinement_dts": [0.02, 0.01],
        "bessel_paths": 50,
        "occupation_eps": [0.0],
        "mc": {"paths": 20, "seed": 0},
    },
    "presets": {"longer": {"T": 0.2, "mc": {"paths": 30}}},
}

FAILING_EXPERIMENTS = '''
from sbm_lab.core.errors import NumericalAbort
from sbm_lab.core.schemas import ExperimentInput
from sbm_lab.utils.experiment_decorator import experiment


class BlowupInput(ExperimentInput):
    mode: str = "abort"


@experiment(name="blowup", description="Always fails", input_model=BlowupInput)
def run_blowup(params, run):
    if params.mode == "abort":
        raise NumericalAbort("state went non-finite", {"step": 7})
    raise RuntimeError("unexpected")
'''


def write_config(config_dir, name, content):
    (config_dir / f"{name}.yaml").write_text(yaml.safe_dump(content))


@pytest.fixture(scope="module")
def manager():
    manager = ExperimentManager()
    manager.load_experiments_from_directory()
    return manager


def test_all_experiments_load(manager):
    assert sorted(manager.functions) == sorted(EXPERIMENTS)
    listed = manager.get_experiment_list()
    assert all(entry["description"] and entry["schema"] for entry in listed)


def test_deep_merge_and_dotted_paths():
    base = {"grid": {"L": 4, "N": 81}, "mc": {"paths": 10}}
    merged = deep_merge(base, {"grid": {"N": 161}})
    assert merged == {"grid": {"L": 4, "N": 161}, "mc": {"paths": 10}}
    assert base["grid"]["N"] == 81
    set_dotted(merged, ["drift", "level"], "inf")
    assert merged["drift"] == {"level": "inf"}
    assert parse_scalar("201") == 201
    assert parse_scalar("true") is True
    assert parse_scalar("inf") == "inf"


def test_resolution_order(lab_dirs, tmp_path, monkeypatch):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    extra = tmp_path / "extra.yaml"
    extra.write_text(yaml.safe_dump({"dt": 0.005, "x0": 0.3}))
    monkeypatch.setenv("SDE__X0", "0.7")
    monkeypatch.setenv("SDE__MC__SEED", "5")

    resolved = ConfigManager().resolve("sde", preset="longer", config_path=extra,
                                       overrides=["mc.seed=9"], paths=40)
    assert resolved["T"] == 0.2
    assert resolved["dt"] == 0.005
    assert resolved["x0"] == 0.7
    assert "X0" not in resolved
    assert resolved["mc"] == {"paths": 40, "seed": 9}


def test_env_keys_reuse_config_spelling(lab_dirs, monkeypatch):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    monkeypatch.setenv("SDE__T", "0.3")
    resolved = ConfigManager().resolve("sde")
    assert resolved["T"] == 0.3
    assert "t" not in resolved


def test_missing_field_names_its_path(manager):
    with pytest.raises(ConfigError) as info:
        manager.get("spde").validate_input({"grid": {"L": 4.0}})
    assert info.value.field_path == "grid.N"


def test_negative_drift_above_zero_is_valid_input(manager):
    params = manager.get("spde").validate_input(
        {"grid": {"L": 4.0, "N": 41}, "drift": {"preset": "step", "b0": 1.0, "b1": -0.5}})
    assert params.drift.b1 == -0.5


@pytest.mark.parametrize("kwargs", [
    {"preset": "missing"},
    {"overrides": ["grid.N"]},
    {"overrides": ["unknown_key=1"]},
])
def test_configuration_errors_exit_2(lab_dirs, manager, kwargs):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    assert run(None, "sde", manager=manager, echo=False, **kwargs) == 2


def test_missing_grid_size_exits_2(lab_dirs, manager, capsys):
    write_config(lab_dirs, "spde", {"defaults": {"grid": {"L": 4.0}}})
    assert run(None, "spde", manager=manager, echo=False) == 2
    assert "grid.N" in capsys.readouterr().err


def test_unknown_experiment_exits_2(lab_dirs, manager):
    assert run(None, "nope", manager=manager, echo=False) == 2


def test_sde_run_writes_artifacts(lab_dirs, manager, tmp_path):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    out = tmp_path / "out"
    assert run(None, "sde", manager=manager, out_dir=out, echo=False) == 0

    (run_dir,) = out.iterdir()
    assert run_dir.name.startswith("sde-") and run_dir.name.endswith("-s0")
    for name in ("resolved_config.json", "summary.json", "two_solutions.csv", "same_law.csv",
                 "nonexistence.csv", "occupation.csv"):
        assert (run_dir / name).exists(), name
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["config"]["mc"] == {"paths": 20, "seed": 0}
    assert run_dir.name.split("-")[1] == resolved["config_hash"][:12]
    header = (run_dir / "same_law.csv").read_text().splitlines()[:3]
    assert "# experiment: sde" in header
    assert "# seed: 0" in header


def test_reruns_are_byte_identical(lab_dirs, manager, tmp_path):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    out = tmp_path / "out"
    assert run(None, "sde", manager=manager, out_dir=out, echo=False) == 0
    (run_dir,) = out.iterdir()
    first = {p.name: p.read_bytes() for p in run_dir.iterdir()}

    assert run(None, "sde", manager=manager, out_dir=out, workers=2, echo=False) == 0
    assert [p.name for p in out.iterdir()] == [run_dir.name]
    assert {p.name: p.read_bytes() for p in run_dir.iterdir()} == first


def test_seed_changes_run_directory(lab_dirs, manager, tmp_path):
    write_config(lab_dirs, "sde", SDE_CONFIG)
    out = tmp_path / "out"
    assert run(None, "sde", manager=manager, out_dir=out, echo=False) == 0
    assert run(None, "sde", manager=manager, out_dir=out, seed=1, echo=False) == 0
    assert sorted(p.name[-3:] for p in out.iterdir()) == ["-s0", "-s1"]


@pytest.fixture
def failing_manager(tmp_path):
    experiments_dir = tmp_path / "experiments"
    experiments_dir.mkdir()
    (experiments_dir / "blowup.py").write_text(textwrap.dedent(FAILING_EXPERIMENTS))
    manager = ExperimentManager(experiments_dir=experiments_dir)
    assert manager.load_experiments_from_directory() == ["blowup"]
    return manager


def test_numerical_abort_exits_3_with_diagnostics(lab_dirs, failing_manager, tmp_path):
    out = tmp_path / "out"
    assert run(None, "blowup", manager=failing_manager, out_dir=out, echo=False) == 3
    (run_dir,) = out.iterdir()
    diagnostics = json.loads((run_dir / "diagnostics.json").read_text())
    assert diagnostics["diagnostics"] == {"step": 7}


def test_unexpected_error_exits_1(lab_dirs, failing_manager, tmp_path):
    out = tmp_path / "out"
    assert run(None, "blowup", ["mode=crash"], manager=failing_manager, out_dir=out, echo=False) == 1
    (run_dir,) = out.iterdir()
    assert "unexpected" in json.loads((run_dir / "summary.json").read_text())["error"]


def test_parser_accepts_repeated_overrides():
    args = build_parser().parse_args(["dual", "--override", "grid.N=121", "--override", "mc.paths=10",
                                      "--seed", "4"])
    assert args.experiment == "dual"
    assert args.override == ["grid.N=121", "mc.paths=10"]
    assert args.seed == 4


def test_logging_goes_to_the_given_stream():
    root = logging.getLogger()
    saved_handlers, saved_level = root.handlers[:], root.level
    stream = io.StringIO()
    try:
        assert configure_logging(debug=True, stream=stream) == logging.DEBUG
        logging.getLogger("sbm_lab.check").info("hello")
    finally:
        root.handlers[:] = saved_handlers
        root.setLevel(saved_level)
        logging.captureWarnings(False)
    assert " - sbm_lab.check - INFO - hello" in stream.getvalue()
