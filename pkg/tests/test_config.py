import pytest
import yaml

from toothnet.config import EvalConfig, RunConfig, apply_overrides, load_config, write_snapshot
from toothnet.constants import CONFIG_SNAPSHOT
from toothnet.errors import ConfigError


def write_yaml(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults(self):
        config = load_config()
        assert config.pipeline.canvas_width == 768 and config.pipeline.canvas_height == 512
        assert config.train.weights.alpha == 3.0
        assert config.train.weights.beta == 1.5
        assert config.train.weights.gamma == 0.1
        assert config.train.optimizer.kind == "adam"
        assert config.eval.iou_threshold == 0.5

    def test_partial_file(self, tmp_path):
        path = write_yaml(tmp_path, "train:\n  iterations: 10\n  optimizer:\n    learning_rate: 1e-2\n")
        config = load_config(path)
        assert config.train.iterations == 10
        assert config.train.optimizer.learning_rate == 0.01
        assert config.train.optimizer.beta1 == 0.9

    def test_integer_for_float(self, tmp_path):
        config = load_config(write_yaml(tmp_path, "train:\n  weights:\n    alpha: 2\n"))
        assert config.train.weights.alpha == 2.0
        assert isinstance(config.train.weights.alpha, float)

    def test_empty_file(self, tmp_path):
        assert load_config(write_yaml(tmp_path, "")) == RunConfig()

    @pytest.mark.parametrize("text, message", [
        ("trian:\n  iterations: 3\n", "unknown key"),
        ("train:\n  iteration: 3\n", "unknown key"),
        ("train:\n  iterations: many\n", "expected int"),
        ("train:\n  use_dr: 1\n", "expected bool"),
        ("pipeline:\n  backbone: resnet\n", "unknown backbone"),
        ("train: [1, 2]\n", "expected a mapping"),
        ("train:\n  iterations: [\n", "invalid YAML"),
    ])
    def test_invalid(self, tmp_path, text, message):
        with pytest.raises(ConfigError, match=message):
            load_config(write_yaml(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.yaml")


class TestOverrides:
    def test_dotted_keys(self):
        config = apply_overrides(RunConfig(), {"train.use_dr": False, "pipeline.backbone": "tiny", "synth.seed": None})
        assert config.train.use_dr is False
        assert config.pipeline.backbone == "tiny"
        assert config.synth.seed == 0

    def test_revalidated(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"train.iterations": -5})

    @pytest.mark.parametrize("key", ["train.epochs", "model.depth", "train.use_dr.value"])
    def test_unknown(self, key):
        with pytest.raises(ConfigError, match="unknown config"):
            apply_overrides(RunConfig(), {key: 1})


class TestSnapshot:
    def test_reloads_identically(self, tmp_path):
        config = apply_overrides(RunConfig(), {"train.iterations": 7, "eval.max_overlays": 3, "train.seed": 4})
        path = write_snapshot(config, tmp_path / "out")
        assert path.name == CONFIG_SNAPSHOT
        assert load_config(path) == config

    def test_plain_yaml(self, tmp_path):
        path = write_snapshot(RunConfig(), tmp_path)
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
        assert set(document) == {"synth", "pipeline", "train", "eval"}
        assert document["train"]["weights"] == {"alpha": 3.0, "beta": 1.5, "gamma": 0.1}


class TestEvalConfig:
    @pytest.mark.parametrize("kwargs", [{"iou_threshold": 1.5}, {"workers": 0}, {"max_overlays": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            EvalConfig(**kwargs)
