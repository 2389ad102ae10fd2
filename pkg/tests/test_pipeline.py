"""
运行配置、预设、实验流水线与命令行
"""
import filecmp
import json

import pytest

from app.core.errors import ConfigError, ParameterError
from app.pipeline.presets import PRESETS, get_preset, list_presets
from app.pipeline.run_config import config_schema, load_config, merge, validate_config
from app.pipeline.runner import TRAJECTORY_HEADER, run, with_delta, write_artifacts
from app.pipeline.verify import CheckResult, format_results, run_suite
from main import EXIT_CONFIG, EXIT_OK, main

MINIMAL = {"n": 200, "realizations": 2, "seed": 1}


@pytest.mark.parametrize("data", [
    {},
    {"n": 1, "realizations": 2, "seed": 1},
    dict(MINIMAL, colour="blue"),
    dict(MINIMAL, route="microscopic"),
    dict(MINIMAL, envelope=None),
    dict(MINIMAL, density={"kind": "exponential", "rho0": 1.0}),
    dict(MINIMAL, grid={"t_max": 6.0, "points": 1}),
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        validate_config(data)


def test_defaults_are_filled_in():
    cfg = validate_config(MINIMAL)
    assert cfg.route == "synthetic"
    assert cfg.pi.kind == "window_uniform"
    assert cfg.grid.points == 61
    spec = cfg.ensemble_spec()
    assert spec.envelope.delta == 1.0


def test_microscopic_ensemble_spec():
    cfg = validate_config(dict(MINIMAL, route="microscopic", symmetry="unitary",
                               residual={"band_halfwidth": 10, "rms_strength": 0.2}))
    spec = cfg.ensemble_spec()
    assert spec.route == "microscopic"
    assert spec.residual.symmetry == "unitary"
    assert spec.residual.band_halfwidth == 10


def test_load_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_config(path) == MINIMAL
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_merge_is_recursive_and_skips_none():
    base = {"seed": 1, "grid": {"t_max": 6.0, "points": 61}}
    merged = merge(base, {"seed": None, "grid": {"points": 31}, "threads": 2})
    assert merged == {"seed": 1, "grid": {"t_max": 6.0, "points": 31}, "threads": 2}
    assert base["grid"]["points"] == 61


def test_with_delta_fills_nested_windows():
    params = {"windows": [{"window": 3}, {"window": 5, "delta": 2.0}], "weights": [1, 1]}
    resolved = with_delta(params, 0.5)
    assert resolved["windows"] == [{"window": 3, "delta": 0.5}, {"window": 5, "delta": 2.0}]
    assert "delta" not in params["windows"][0]
    assert with_delta({"indices": (1, 4)}, 0.5) == {"indices": (1, 4)}


@pytest.mark.parametrize("name", list(PRESETS))
def test_every_preset_validates(name):
    cfg = validate_config(get_preset(name))
    assert cfg.preset == name


def test_get_preset_returns_a_copy():
    data = get_preset("smoke")
    data["envelope"]["delta"] = 99.0
    assert get_preset("smoke")["envelope"]["delta"] == 1.0
    assert ("smoke", PRESETS["smoke"]["description"]) in list_presets()


def test_unknown_preset():
    with pytest.raises(ParameterError):
        get_preset("boiling")


def test_schema_lists_required_fields():
    schema = config_schema()
    assert set(schema["required"]) == {"n", "realizations", "seed"}


def test_smoke_run_is_thread_independent(tmp_path):
    cfg = validate_config(get_preset("smoke"))
    dirs = []
    for workers in (1, 2):
        report = run(cfg, workers=workers, write=False)
        assert report.verdict.verdict in ("thermalizes", "does_not_thermalize", "inconclusive")
        assert report.correlation is not None
        report.execution = {}
        target = tmp_path / f"w{workers}"
        write_artifacts(report, target)
        dirs.append(target)
    names = ["trajectory.csv", "correlation.csv", "spectra.csv", "strength.csv", "report.json"]
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    assert sorted(match) == sorted(names)
    header = (dirs[0] / "trajectory.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(TRAJECTORY_HEADER)
    rows = (dirs[0] / "trajectory.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert len(rows) == cfg.grid.points


def test_unknown_suite():
    with pytest.raises(ParameterError):
        run_suite("bogus")


def test_format_results():
    text = format_results([CheckResult("a", "1", "1", True), CheckResult("b", "2", "1", False)])
    assert "✅" in text and "❌" in text
    assert text.endswith("通过 1/2")


def test_cli_presets_and_schema(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "smoke" in capsys.readouterr().out
    assert main(["schema"]) == EXIT_OK
    assert "properties" in json.loads(capsys.readouterr().out)


def test_cli_configuration_errors(tmp_path):
    assert main(["run"]) == EXIT_CONFIG
    assert main(["run", "--preset", "boiling"]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["verify", "bogus"]) == EXIT_CONFIG


def test_cli_run_writes_artifacts(tmp_path):
    out = tmp_path / "smoke"
    assert main(["run", "--preset", "smoke", "--threads", "2", "--out", str(out)]) == EXIT_OK
    for name in ("trajectory.csv", "correlation.csv", "spectra.csv", "strength.csv", "report.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["execution"]["out"] == str(out)
    assert report["execution"]["threads"] == 2
    assert "threads" not in report["config"]
