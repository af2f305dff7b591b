"""Configuration files, presets, and the stage-per-subcommand interface."""

import dataclasses
from importlib import resources

import numpy as np
import pytest

from poroscale.arrayio import read_array
from poroscale.cli import build_parser, main, resolve_config
from poroscale.config import (
    PRESET_NAMES,
    PipelineConfig,
    TrainSettings,
    config_from_text,
    config_to_text,
    load_config,
    load_preset,
    save_config,
)
from poroscale.errors import ParameterError
from poroscale.pipeline import RunLayout


def test_round_trip_is_a_fixed_point(tmp_path):
    config = load_preset("desk-mini")
    text = config_to_text(config)
    assert config_from_text(text) == config
    path = tmp_path / "run.cfg"
    save_config(config, path)
    assert load_config(path) == config
    save_config(load_config(path), path)
    assert path.read_text(encoding="utf-8") == text


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_shipped_presets_are_canonical(name):
    # the stored file is exactly the serializer's output for its config
    raw = (
        resources.files("poroscale.presets")
        .joinpath(f"{name}.cfg")
        .read_text(encoding="utf-8")
    )
    assert config_to_text(load_preset(name)) == raw


def test_preset_anchor_values():
    desk = load_preset("desk-test1")
    assert desk.fine_cells == (128, 128)
    assert desk.coarse_cells == (8, 8)
    assert desk.n_realizations == 20
    assert desk.train.epochs == 100
    assert desk.constants.nu_f == 0.05
    assert desk.batch_size() == 64
    full = load_preset("test1")
    assert full.fine_cells == (320, 320)
    assert full.coarse_cells == (10, 10)
    assert full.n_realizations == 100
    cube = load_preset("desk-test3")
    assert cube.dimension == 3
    assert cube.fine_cells == (24, 24, 24)
    surrogate = load_preset("desk-surrogate")
    assert surrogate.coarse_cells == (4, 4)
    assert surrogate.n_realizations == 60
    assert surrogate.n_test_realizations == 10
    assert surrogate.train.epochs == 200
    assert surrogate.train.batch_size == 64


def test_unknown_preset():
    with pytest.raises(ParameterError, match="desk-mini"):
        load_preset("bogus")


def test_realization_seed_and_batch_fallback():
    config = load_preset("desk-mini")
    assert config.realization_seed(5) == (7, 5)
    assert config.n_cells == 16
    assert config.batch_size() == 16
    resized = dataclasses.replace(
        config, train=dataclasses.replace(config.train, batch_size=8)
    )
    assert resized.batch_size() == 8


def test_list_value_spellings():
    base = config_to_text(load_preset("desk-mini"))
    for spelling in ("[32, 32]", "32 32", "32,32"):
        text = base.replace("[32, 32]", spelling)
        assert config_from_text(text).fine_cells == (32, 32)


def test_malformed_text_and_missing_pieces():
    with pytest.raises(ParameterError, match="malformed"):
        config_from_text("[run\nname = x")
    with pytest.raises(ParameterError, match="section"):
        config_from_text("[run]\nname = x\n")
    base = config_to_text(load_preset("desk-mini"))
    with pytest.raises(ParameterError, match="run.name"):
        config_from_text(base.replace("name = desk-mini\n", ""))
    with pytest.raises(ParameterError, match="invalid configuration value"):
        config_from_text(base.replace("epochs = 2", "epochs = soon"))
    with pytest.raises(ParameterError, match="empty list"):
        config_from_text(base.replace("[32, 32]", "[]"))


def test_config_validation():
    config = load_preset("desk-mini")
    with pytest.raises(ParameterError, match="realization"):
        dataclasses.replace(config, n_realizations=0)
    with pytest.raises(ParameterError, match="thread"):
        dataclasses.replace(config, threads=0)
    with pytest.raises(ParameterError, match="dimension"):
        dataclasses.replace(config, coarse_cells=(4, 4, 4))
    with pytest.raises(ParameterError, match="length"):
        dataclasses.replace(config, fine_cells=(32,), coarse_cells=(4,))
    with pytest.raises(ParameterError):
        TrainSettings(epochs=-1)
    with pytest.raises(ParameterError):
        TrainSettings(learning_rate=0.0)


def parse(argv):
    return build_parser().parse_args(argv)


def test_config_xor_preset(capsys, tmp_path):
    assert main(["generate-fields"]) == 1
    assert "exactly one of" in capsys.readouterr().err
    config_path = tmp_path / "c.cfg"
    save_config(load_preset("desk-mini"), config_path)
    both = ["generate-fields", "--config", str(config_path), "--preset", "desk-mini"]
    assert main(both) == 1
    assert "exactly one of" in capsys.readouterr().err


def test_threads_precedence(monkeypatch):
    monkeypatch.delenv("NH_THREADS", raising=False)
    args = parse(["homogenize", "--preset", "desk-mini"])
    assert resolve_config(args).threads == 1
    monkeypatch.setenv("NH_THREADS", "3")
    assert resolve_config(args).threads == 3
    args = parse(["homogenize", "--preset", "desk-mini", "--threads", "2"])
    assert resolve_config(args).threads == 2
    monkeypatch.setenv("NH_THREADS", "many")
    args = parse(["homogenize", "--preset", "desk-mini"])
    with pytest.raises(ParameterError, match="NH_THREADS"):
        resolve_config(args)


def test_workdir_override(tmp_path):
    args = parse(
        ["generate-fields", "--preset", "desk-mini", "--workdir", str(tmp_path)]
    )
    assert resolve_config(args).workdir == str(tmp_path)


def test_missing_upstream_artifacts(capsys, tmp_path):
    argv = ["--preset", "desk-mini", "--workdir", str(tmp_path)]
    assert main(["homogenize"] + argv) == 1
    err = capsys.readouterr().err
    assert "generate-fields" in err and "error" in err
    assert main(["train"] + argv) == 1
    assert "build-dataset" in capsys.readouterr().err
    assert main(["predict"] + argv) == 1
    assert "train" in capsys.readouterr().err


def test_mini_pipeline_end_to_end(capsys, tmp_path):
    argv = ["--preset", "desk-mini", "--workdir", str(tmp_path)]
    stages = [
        ["generate-fields"],
        ["homogenize"],
        ["build-dataset"],
        ["train"],
        ["evaluate"],
        ["predict"],
        ["solve-fine"],
        ["solve-coarse", "--tensors", "direct"],
        ["solve-coarse", "--tensors", "predicted"],
        ["report"],
    ]
    for stage in stages:
        assert main(stage + argv) == 0, stage
        out = capsys.readouterr().out
        assert f"poroscale {stage[0]}: ok" in out

    layout = RunLayout(tmp_path)
    for index in (0, 1, 2):
        assert layout.field_path(index, "perm").exists()
        assert layout.field_path(index, "young").exists()
    perm = read_array(layout.tensor_path(0, "perm"))
    assert perm.shape == (16, 2, 2)
    stiff = read_array(layout.tensor_path(0, "stiff"))
    assert stiff.shape == (16, 3, 3)
    predicted = read_array(layout.tensor_path(2, "perm", "predicted"))
    assert predicted.shape == (16, 2, 2)
    assert np.linalg.eigvalsh(predicted).min() > 0

    for target in ("permeability", "elasticity"):
        assert layout.dataset_path(target).exists()
        assert layout.model_path(target).exists()
        loss = layout.loss_path(target).read_text(encoding="utf-8").splitlines()
        assert loss[0] == "epoch,train_mse,val_mse"
        assert len(loss) == 3  # header + one row per epoch
        metrics = layout.metrics_path(target).read_text(encoding="utf-8").splitlines()
        assert metrics[0] == "split,component,mse,mae_pct,rmse_pct"
        splits = {line.split(",")[0] for line in metrics[1:]}
        assert splits == {"train", "val", "test"}

    for kind in ("fine", "coarse_direct", "coarse_predicted"):
        for part in ("p", "u"):
            states = read_array(layout.state_path(kind, 2, part))
            assert states.ndim == 2
            assert states.shape[0] == 21  # initial state plus 20 steps

    errors = layout.errors_csv.read_text(encoding="utf-8").splitlines()
    assert errors[0] == "test,case,realization,e_p_L2,e_p_en,e_u_L2,e_u_en"
    cases = [line.split(",")[1] for line in errors[1:]]
    assert cases == ["direct", "predicted"]
    for line in errors[1:]:
        values = [float(v) for v in line.split(",")[3:]]
        assert all(np.isfinite(values)) and len(values) == 4

    summary = layout.summary_txt.read_text(encoding="utf-8")
    assert "speedup" in summary
    assert "x76 to x289" in summary
    assert layout.timing_path("homogenize").exists()


def test_stage_summary_is_json(capsys, tmp_path):
    argv = ["generate-fields", "--preset", "desk-mini", "--workdir", str(tmp_path)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert '"kl_terms"' in out
    assert '"n_realizations": 3' in out


def test_rejects_unknown_tensor_source(tmp_path):
    with pytest.raises(SystemExit):
        parse(
            ["solve-coarse", "--tensors", "guessed", "--preset", "desk-mini"]
        )
