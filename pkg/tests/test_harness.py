"""Seed derivation, config parsing, selection, the full protocol, and the CLI."""

import json

import numpy as np
import pytest

from branchwise import harness, nn
from branchwise.checkpoint import load_checkpoint
from branchwise.curriculum import fixed_exponential_pacing, load_scores
from branchwise.datasets import save_text
from branchwise.errors import ConfigError
from branchwise.harness import cli
from branchwise.harness.protocol import (BranchResult, CellResult, ExperimentResult,
                                         OptimizerSelection, StrategySelection,
                                         emit_results, pick_optimizer)
from branchwise.multiexit import MultiExitModel

TINY_CONFIG = """\
schema_version: 1
master_seed: 7
dataset:
  kind: synthetic
  n: 160
  classes: 3
  shape: [1, 6, 6]
  noise: 0.8
  seed: 3
split:
  seed: 1
backbone:
  conv_channels: [4]
  epochs: 2
  batch_size: 16
branches:
  - location: 3
    conv_filters: 4
    dense_units: [8]
    dropout_rate: 0.25
teachers:
  - self
strategies: [vanilla, curriculum, anti_curriculum, random_curriculum]
grid:
  optimizer_kinds: [adam]
  learning_rates: [0.01]
  selection_epochs: 2
  pacing:
    - kind: fixed_exponential
      initial_fraction: 0.3
      growth_factor: 2.0
      batches_per_step: 4
training:
  epochs: 2
  batch_size: 16
  repetitions: 2
"""


@pytest.fixture(scope="module")
def tiny_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return path


# -- seed derivation -----------------------------------------------------------


def test_derive_seed_is_deterministic_and_path_sensitive():
    assert harness.derive_seed(7, "a", 3) == harness.derive_seed(7, "a", 3)
    assert harness.derive_seed(7, "a", 3) != harness.derive_seed(8, "a", 3)
    assert harness.derive_seed(7, "a", 3) != harness.derive_seed(7, "a", 4)
    assert harness.derive_seed(7, "a", 3) != harness.derive_seed(7, "b", 3)
    # the separator keeps adjacent parts from gluing together
    assert harness.derive_seed(7, "ab") != harness.derive_seed(7, "a", "b")
    seed = harness.derive_seed(0, "backbone-init")
    assert 0 <= seed < 2 ** 64


def test_derived_seeds_spread_across_paths():
    seeds = {harness.derive_seed(0, "cell-init", loc, rep)
             for loc in range(5) for rep in range(5)}
    assert len(seeds) == 25


# -- config --------------------------------------------------------------------


def test_load_config_full_yaml(tiny_config_path):
    config = harness.load_config(tiny_config_path)
    assert config.master_seed == 7
    assert config.dataset.kind == "synthetic"
    assert config.dataset.shape == (1, 6, 6)
    assert config.split.seed == 1
    assert config.split.train == 0.6  # untouched default
    assert config.backbone.conv_channels == (4,)
    assert config.backbone.name == "cnn4"
    assert config.branches[0].location == 3
    assert config.branches[0].dense_units == (8,)
    assert config.teachers[0].is_self
    assert config.grid.optimizer_kinds == ("adam",)
    assert config.grid.learning_rates == (0.01,)
    assert config.grid.pacing[0].label() == "FEP(4)"
    assert config.training.repetitions == 2


def test_config_defaults():
    config = harness.config_from_dict({"schema_version": 1})
    assert config.dataset.n == 2000
    assert config.split.validation == 0.15
    assert config.backbone.conv_channels == (8, 16)
    assert config.strategies == ("vanilla", "curriculum", "anti_curriculum",
                                 "random_curriculum")
    assert [p.label() for p in config.grid.pacing] == ["FEP(100)", "FEP(200)",
                                                       "FEP(300)", "SSP(300)"]
    assert config.grid.learning_rates == (0.1, 0.12, 0.01, 0.001, 0.0001, 0.00001)
    assert config.training.epochs == 50
    assert config.training.repetitions == 5


def test_config_rejects_unknown_keys_by_name():
    with pytest.raises(ConfigError, match="unknown key.*momentum"):
        harness.config_from_dict({"schema_version": 1, "dataset": {"momentum": 1}})
    with pytest.raises(ConfigError, match="turbo"):
        harness.config_from_dict({"schema_version": 1, "turbo": True})


def test_config_requires_the_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        harness.config_from_dict({})
    with pytest.raises(ConfigError, match="schema_version"):
        harness.config_from_dict({"schema_version": 2})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError, match="sum to 1"):
        harness.config_from_dict({"schema_version": 1, "split": {"train": 0.9}})
    with pytest.raises(ConfigError, match="unknown strategy"):
        harness.config_from_dict({"schema_version": 1, "strategies": ["sideways"]})
    with pytest.raises(ConfigError, match="needs a 'kind'"):
        harness.config_from_dict({"schema_version": 1,
                                  "grid": {"pacing": [{"initial_fraction": 0.1}]}})
    with pytest.raises(ConfigError, match="at least one training epoch"):
        harness.config_from_dict({"schema_version": 1, "training": {"epochs": 0}})


def test_config_not_valid_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("dataset: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        harness.load_config(path)


def test_named_teacher_requires_a_network_block():
    with pytest.raises(ConfigError, match="network block"):
        harness.config_from_dict({"schema_version": 1, "teachers": [{"name": "weak"}]})
    config = harness.config_from_dict({
        "schema_version": 1,
        "teachers": ["self", {"name": "weak", "network": {"conv_channels": [2],
                                                          "epochs": 1}}],
    })
    assert config.teachers[0].is_self
    assert config.teachers[1].name == "weak"
    assert config.teachers[1].network.conv_channels == (2,)


# -- optimizer pick ------------------------------------------------------------


def test_pick_optimizer_prefers_accuracy_then_low_lr_then_sgd():
    best = OptimizerSelection("adam", 0.1, 0.9)
    assert pick_optimizer([OptimizerSelection("sgd", 0.001, 0.8), best]) is best
    # accuracy tie: lower learning rate wins
    low = OptimizerSelection("adam", 0.001, 0.8)
    high = OptimizerSelection("adam", 0.1, 0.8)
    assert pick_optimizer([high, low]) is low
    # full tie: sgd before adam
    sgd = OptimizerSelection("sgd", 0.01, 0.8)
    adam = OptimizerSelection("adam", 0.01, 0.8)
    assert pick_optimizer([adam, sgd]) is sgd


# -- training loop -------------------------------------------------------------


def test_train_network_learns_the_conftest_task(trained_setup):
    accuracy, loss = nn.evaluate(trained_setup.backbone,
                                 trained_setup.splits.validation.inputs,
                                 trained_setup.splits.validation.labels)
    assert accuracy > 0.5  # 3 classes
    assert np.isfinite(loss)


# -- result emission -----------------------------------------------------------


def _toy_result_and_config():
    config = harness.ExperimentConfig(strategies=("vanilla", "curriculum"))
    pacing = fixed_exponential_pacing(0.04, 1.9, 300)
    branch = BranchResult(
        location=3,
        optimizer=OptimizerSelection("adam", 0.001, 0.81),
        selections={"curriculum": StrategySelection("self", pacing, 0.79)},
        cells={"vanilla": CellResult("vanilla", (0.5, 0.5)),
               "curriculum": CellResult("curriculum", (0.70, 0.72, 0.74, 0.71, 0.73))},
    )
    result = ExperimentResult("synthetic(n=2000)", "cnn8-16", 0.77, branches=[branch])
    return result, config


def test_emit_results_formats_percent_with_sample_std(tmp_path):
    result, config = _toy_result_and_config()
    emit_results(result, str(tmp_path), config)
    table = (tmp_path / "results.txt").read_text()
    assert "72.00%±1.58" in table       # mean 0.72, ddof=1 std 0.0158...
    assert "50.00%±0.00" in table
    assert "FEP(300)" in table
    header = table.splitlines()[0].split()
    assert header[:5] == ["backbone", "dataset", "branch", "vanilla", "curriculum"]


def test_emit_results_csv_and_raw(tmp_path):
    result, config = _toy_result_and_config()
    emit_results(result, str(tmp_path), config)
    csv_lines = (tmp_path / "results.csv").read_text().splitlines()
    assert csv_lines[0] == ("backbone,dataset,branch,vanilla_mean,vanilla_std,"
                            "curriculum_mean,curriculum_std,optimizer,learning_rate,"
                            "teacher,pacing")
    row = csv_lines[1].split(",")
    assert row[0] == "cnn8-16"
    assert row[2] == "3"
    assert float(row[3]) == 0.5
    assert float(row[4]) == 0.0
    assert float(row[5]) == pytest.approx(0.72)
    assert float(row[6]) == pytest.approx(0.01581138830084191, abs=1e-15)
    assert row[7] == "adam"
    raw_lines = (tmp_path / "accuracies_raw.csv").read_text().splitlines()
    assert raw_lines[0] == "branch,strategy,repetition,accuracy"
    assert raw_lines[1] == "3,vanilla,0,0.5"
    assert raw_lines[3] == "3,curriculum,0,0.7"
    assert len(raw_lines) == 1 + 2 + 5
    selections = json.loads((tmp_path / "selections.json").read_text())
    assert selections["backbone_test_accuracy"] == 0.77
    assert selections["branches"][0]["strategies"]["curriculum"]["teacher"] == "self"


def test_emit_results_is_byte_stable(tmp_path):
    result, config = _toy_result_and_config()
    a = tmp_path / "a"
    b = tmp_path / "b"
    emit_results(result, str(a), config)
    emit_results(result, str(b), config)
    for name in ("results.csv", "results.txt", "accuracies_raw.csv", "selections.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# -- the full protocol ---------------------------------------------------------


EXPECTED_FILES = ("results.csv", "results.txt", "accuracies_raw.csv", "selections.json",
                  "backbone.bwck", "model_vanilla.bwck", "model_curriculum.bwck",
                  "model_anti_curriculum.bwck", "model_random_curriculum.bwck")


@pytest.fixture(scope="module")
def tiny_run(tiny_config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    exit_code = cli.main(["grid", "--config", str(tiny_config_path),
                          "--output", str(out)])
    assert exit_code == 0
    return out


def test_grid_cli_writes_every_artifact(tiny_run):
    for name in EXPECTED_FILES:
        assert (tiny_run / name).exists(), name


def test_full_run_is_reproducible_bit_for_bit(tiny_run, tiny_config_path, tmp_path):
    config = harness.load_config(tiny_config_path)
    result = harness.run_experiment(config, output_dir=str(tmp_path))
    for name in EXPECTED_FILES:
        assert (tmp_path / name).read_bytes() == (tiny_run / name).read_bytes(), name
    assert len(result.branches) == 1
    cells = result.branches[0].cells
    assert set(cells) == {"vanilla", "curriculum", "anti_curriculum", "random_curriculum"}
    for cell in cells.values():
        assert len(cell.accuracies) == 2
        assert all(0.0 <= a <= 1.0 for a in cell.accuracies)
    assert result.branches[0].optimizer.kind == "adam"
    assert result.branches[0].selections["random_curriculum"].teacher == "-"
    assert result.branches[0].selections["curriculum"].teacher == "self"


def test_final_checkpoints_reload_as_multi_exit_models(tiny_run):
    backbone = load_checkpoint(tiny_run / "backbone.bwck")
    assert backbone.params.all_frozen()
    model = load_checkpoint(tiny_run / "model_curriculum.bwck")
    assert isinstance(model, MultiExitModel)
    assert model.locations == [3]
    assert model.backbone.params.to_bytes() == backbone.params.to_bytes()


def test_selections_json_reports_the_grid_choices(tiny_run):
    selections = json.loads((tiny_run / "selections.json").read_text())
    branch = selections["branches"][0]
    assert branch["location"] == 3
    assert branch["optimizer"]["kind"] == "adam"
    assert branch["optimizer"]["learning_rate"] == 0.01
    for kind in ("curriculum", "anti_curriculum", "random_curriculum"):
        assert branch["strategies"][kind]["pacing"] == "FEP(4)"
        assert 0.0 <= branch["strategies"][kind]["search_accuracy"] <= 1.0


# -- the other CLI commands ----------------------------------------------------


def test_cli_score_writes_loadable_scores(tiny_config_path, tmp_path, capsys):
    assert cli.main(["score", "--config", str(tiny_config_path),
                     "--output", str(tmp_path)]) == 0
    scores = load_scores(tmp_path / "scores.csv")
    assert len(scores) == 96  # train split of 160 at the default fractions
    assert np.all(scores >= 0.0)
    assert "wrote 96 train-split scores" in capsys.readouterr().out


def test_cli_train_writes_metrics_and_model(tiny_config_path, tmp_path, capsys):
    assert cli.main(["train", "--config", str(tiny_config_path), "--branch", "3",
                     "--strategy", "curriculum", "--output", str(tmp_path)]) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_accuracy,val_loss,learning_rate"
    assert len(lines) == 1 + 2  # two training epochs
    model = load_checkpoint(tmp_path / "model.bwck")
    assert isinstance(model, MultiExitModel)
    assert model.locations == [3]
    assert "test accuracy" in capsys.readouterr().out


def test_cli_train_rejects_unknown_branch(tiny_config_path, tmp_path, capsys):
    assert cli.main(["train", "--config", str(tiny_config_path), "--branch", "9",
                     "--strategy", "vanilla", "--output", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    payload = json.loads(err.split("error: ", 1)[1])
    assert payload["type"] == "ConfigError"
    assert "--branch 9" in payload["message"]


def test_cli_eval_reports_every_exit(tiny_config_path, tiny_run, capsys):
    assert cli.main(["eval", "--checkpoint", str(tiny_run / "model_vanilla.bwck"),
                     "--config", str(tiny_config_path), "--split", "test"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "exit,accuracy,loss"
    assert out[1].startswith("3,")
    assert out[2].startswith("final,")
    accuracy = float(out[2].split(",")[1])
    assert 0.0 <= accuracy <= 1.0


def test_cli_infer_prints_exit_per_sample(tiny_config_path, tiny_run, tmp_path, capsys):
    config = harness.load_config(tiny_config_path)
    data = harness.load_dataset(config.dataset).subset(np.arange(5))
    sample_path = tmp_path / "samples.txt"
    save_text(data, sample_path)
    checkpoint = str(tiny_run / "model_vanilla.bwck")
    assert cli.main(["infer", "--checkpoint", checkpoint, "--input", str(sample_path),
                     "--threshold", "inf"]) == 0
    eager = capsys.readouterr().out.splitlines()
    assert eager[0] == "index,class,exit"
    assert len(eager) == 6
    assert all(line.endswith(",3") for line in eager[1:])
    assert cli.main(["infer", "--checkpoint", checkpoint, "--input", str(sample_path),
                     "--threshold", "0"]) == 0
    lazy = capsys.readouterr().out.splitlines()
    assert all(line.endswith(",final") for line in lazy[1:])


def test_cli_infer_rejects_nan_threshold(tiny_run, tmp_path, capsys):
    assert cli.main(["infer", "--checkpoint", str(tiny_run / "model_vanilla.bwck"),
                     "--input", str(tmp_path / "whatever.txt"),
                     "--threshold", "nan"]) == 1
    assert "must not be NaN" in capsys.readouterr().err


def test_cli_pacing_dump_from_flags_and_env(tmp_path, monkeypatch, capsys):
    assert cli.main(["pacing-dump", "--kind", "single_step", "--initial-fraction", "0.3",
                     "--batches-per-step", "2", "--batches", "4",
                     "--output", str(tmp_path)]) == 0
    lines = (tmp_path / "pacing_SSP(2).csv").read_text().splitlines()
    assert lines[1] == "0,0.3"
    assert lines[3] == "2,1.0"
    env_dir = tmp_path / "from_env"
    env_dir.mkdir()
    monkeypatch.setenv("BRANCHWISE_OUTPUT_DIR", str(env_dir))
    assert cli.main(["pacing-dump", "--kind", "single_step", "--initial-fraction", "0.3",
                     "--batches-per-step", "2", "--batches", "4"]) == 0
    assert (env_dir / "pacing_SSP(2).csv").read_bytes() == \
        (tmp_path / "pacing_SSP(2).csv").read_bytes()
    capsys.readouterr()


def test_cli_pacing_dump_from_config(tiny_config_path, tmp_path, capsys):
    assert cli.main(["pacing-dump", "--config", str(tiny_config_path), "--grid-index", "0",
                     "--batches", "9", "--output", str(tmp_path)]) == 0
    lines = (tmp_path / "pacing_FEP(4).csv").read_text().splitlines()
    assert lines[0] == "batch,fraction"
    assert lines[1] == "0,0.3"
    assert lines[5] == "4,0.6"
    assert len(lines) == 10
    capsys.readouterr()


def test_cli_without_output_location_fails_cleanly(tiny_config_path, monkeypatch, capsys):
    monkeypatch.delenv("BRANCHWISE_OUTPUT_DIR", raising=False)
    assert cli.main(["pacing-dump", "--kind", "single_step", "--initial-fraction", "0.3",
                     "--batches-per-step", "2", "--batches", "4"]) == 1
    err = capsys.readouterr().err
    payload = json.loads(err.split("error: ", 1)[1])
    assert payload["type"] == "ConfigError"
    assert "BRANCHWISE_OUTPUT_DIR" in payload["message"]


def test_cli_missing_config_file_reports_os_error(tmp_path, capsys):
    assert cli.main(["score", "--config", str(tmp_path / "absent.yaml"),
                     "--output", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    payload = json.loads(err.split("error: ", 1)[1])
    assert payload["type"] == "FileNotFoundError"
