import json

import pytest

from arstage.config import ConfigError, ServerConfig, load_config


class TestDefaults:
    def test_defaults(self):
        cfg = load_config(env={})
        assert cfg.bind_addr == "127.0.0.1:8000"
        assert cfg.tick_hz == 10.0
        assert cfg.disconnect_timeout_s == 10.0
        assert cfg.fusion.staleness_ms == 500.0
        assert cfg.thresholds.clutter_n == 8
        assert cfg.auth_token is None

    def test_host_port_split(self):
        cfg = ServerConfig(bind_addr="0.0.0.0:9100")
        assert cfg.host == "0.0.0.0"
        assert cfg.port == 9100


class TestFile:
    def test_file_values(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"tick_hz": 20, "fusion": {"near_m": 12.0}}))
        cfg = load_config(p, env={})
        assert cfg.tick_hz == 20.0
        assert cfg.fusion.near_m == 12.0
        # untouched siblings keep defaults
        assert cfg.fusion.staleness_ms == 500.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json", env={})

    def test_invalid_json_names_line(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{\n  broken\n}")
        with pytest.raises(ConfigError, match="line 2"):
            load_config(p, env={})


class TestEnv:
    def test_flat_env_override(self):
        cfg = load_config(env={"ARSTAGE_TICK_HZ": "25"})
        assert cfg.tick_hz == 25.0

    def test_nested_env_override(self):
        cfg = load_config(env={"ARSTAGE_FUSION_STALENESS_MS": "250"})
        assert cfg.fusion.staleness_ms == 250.0

    def test_string_env_value(self):
        cfg = load_config(env={"ARSTAGE_AUTH_TOKEN": "hunter2"})
        assert cfg.auth_token == "hunter2"

    def test_env_beats_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"tick_hz": 20}))
        cfg = load_config(p, env={"ARSTAGE_TICK_HZ": "30"})
        assert cfg.tick_hz == 30.0


class TestOverrides:
    def test_overrides_beat_env(self):
        cfg = load_config(env={"ARSTAGE_TICK_HZ": "30"}, overrides={"tick_hz": 40})
        assert cfg.tick_hz == 40.0

    def test_none_overrides_ignored(self):
        cfg = load_config(env={}, overrides={"tick_hz": None})
        assert cfg.tick_hz == 10.0

    def test_bad_value_names_field(self):
        with pytest.raises(ConfigError, match="tick_hz"):
            load_config(env={}, overrides={"tick_hz": -1})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            load_config(env={}, overrides={"tick_rate": 10})
