import json
import math

import pytest

from dpc_explain.configuration_utils import ExperimentConfig
from dpc_explain.errors import ConfigError


class TestExperimentConfig:
    def test_json_round_trip(self, tmp_path):
        config = ExperimentConfig(encoder_widths=[8, 4], seeds=[1, 2], out_dir=str(tmp_path))
        config.save_pretrained(str(tmp_path))
        assert ExperimentConfig.from_json_file(str(tmp_path / "config.json")) == config

    def test_infinite_epsilon_is_written_as_text(self):
        config = ExperimentConfig(epsilon=float("inf"))
        assert json.loads(config.to_json_string())["epsilon"] == "inf"
        assert math.isinf(ExperimentConfig.from_dict(config.to_dict()).epsilon_value)

    def test_unknown_key_is_logged(self, caplog):
        ExperimentConfig(ae_epoch=3)
        assert "Unknown configuration key ae_epoch" in caplog.text

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{\"epsilon\": ", encoding="utf-8")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json_file(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json_file(str(tmp_path / "absent.json"))

    def test_update_skips_none_and_rejects_unknown(self):
        config = ExperimentConfig(epsilon=0.5)
        config.update({"epsilon": None, "seeds": [9]})
        assert config.epsilon == 0.5
        assert config.seeds == [9]
        with pytest.raises(ConfigError):
            config.update({"epsilonn": 1.0})

    def test_copy_is_independent(self):
        config = ExperimentConfig()
        other = config.copy(epsilon=0.1)
        assert other.epsilon == 0.1
        assert config.epsilon == 1.0

    @pytest.mark.parametrize("kwargs", [
        {"dataset_kind": "parquet"},
        {"epsilon": 0},
        {"epsilon": "lots"},
        {"seeds": []},
        {"search_preset": "audio"},
        {"encoder_widths": [0]},
        {"ae_loss_reduction": "median"},
        {"dataset_kind": "csv"},
        {"dataset_kind": "idx", "dataset_path": "/nonexistent/images.idx"},
    ])
    def test_validate_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs).validate()

    def test_search_config_overrides_preset(self):
        config = ExperimentConfig(search_preset="image", gamma=3.0, search_iterations=7)
        search = config.search_config(init_noise=0.05)
        assert (search.alpha, search.beta, search.gamma) == (1.0, 0.2, 3.0)
        assert search.iterations == 7
        assert search.init_noise == 0.05
