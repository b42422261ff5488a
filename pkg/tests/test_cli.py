import os

import pytest
from omegaconf import OmegaConf
from pytorch_lightning.loggers import CSVLogger

from tcavoidsrc.common.cli import build_cli_parser, main
from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.utils import (
    DEFAULT_CONFIG_PATH,
    apply_overrides,
    builtin_config,
    load_config,
    training_logger,
)


def test_parse_bench_dynamic():
    args = build_cli_parser().parse_args(["--seed", "3", "bench", "dynamic", "--method", "apf", "mppi"])
    assert args.command == "bench"
    assert args.bench == "dynamic"
    assert args.method == ["apf", "mppi"]
    assert args.seed == 3
    assert args.config == DEFAULT_CONFIG_PATH
    assert args.mode == "engage"
    assert args.speeds is None


def test_parse_train_stage():
    args = build_cli_parser().parse_args(["train", "encoder", "--epochs", "2"])
    assert args.stage == "encoder"
    assert args.epochs == 2
    with pytest.raises(SystemExit):
        build_cli_parser().parse_args(["train", "critic"])
    with pytest.raises(SystemExit):
        build_cli_parser().parse_args(["bench", "dynamic", "--method", "teleport"])


def test_config_overrides_and_versions(tmp_path):
    config = apply_overrides(builtin_config("desk"), seed=7, out=str(tmp_path))
    assert config.training.seed == 7
    assert config.save_path == str(tmp_path)
    assert builtin_config("full").version == 1

    stale = OmegaConf.merge(config, {"version": 0})
    path = str(tmp_path / "stale.yaml")
    OmegaConf.save(stale, path)
    with pytest.raises(ValueError):
        load_config(path)


def test_memory_bench_from_the_command_line(tmp_path):
    main(["--out", str(tmp_path), "bench", "memory", "--steps", "3", "--every", "1"])
    out = os.path.join(tmp_path, "bench", "memory")
    assert os.path.exists(os.path.join(out, "memory_trace.json"))
    assert os.path.exists(os.path.join(out, "labels_00002.grid"))


def test_training_logger_selection(tmp_path):
    config = builtin_config("desk")
    assert isinstance(training_logger(config, str(tmp_path), "policy"), CSVLogger)
    with pytest.raises(ConfigError):
        training_logger(OmegaConf.merge(config, {"training": {"logger": "tensorboard"}}), str(tmp_path), "policy")
