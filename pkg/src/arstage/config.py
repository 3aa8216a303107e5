"""Server configuration: JSON file, ARSTAGE_* environment overrides, CLI flags.

Precedence: explicit overrides > environment > config file > defaults.
Environment keys flatten the nesting with underscores, e.g.
ARSTAGE_TICK_HZ=20 or ARSTAGE_FUSION_STALENESS_MS=250.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

ENV_PREFIX = "ARSTAGE_"


class ConfigError(Exception):
    pass


class FusionSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    staleness_ms: float = Field(default=500.0, gt=0)
    transition_ms: float = Field(default=1000.0, gt=0)
    near_m: float = Field(default=30.0, gt=0)
    hysteresis_m: float = Field(default=5.0, ge=0)
    slam_drift_m_per_s: float = Field(default=0.1, ge=0)


class ThresholdSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    rot_deg: float = Field(default=10.0, gt=0)
    pos_m: float = Field(default=5.0, gt=0)
    too_close_m: float = Field(default=0.5, gt=0)
    unreadable_deg: float = Field(default=1.5, gt=0)
    overlap_frac: float = Field(default=0.3, gt=0, le=1)
    clutter_n: int = Field(default=8, gt=0)


class ServerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    bind_addr: str = "127.0.0.1:8000"
    tick_hz: float = Field(default=10.0, gt=0)
    disconnect_timeout_s: float = Field(default=10.0, gt=0)
    eye_height_m: float = 1.6
    avatar_mode: str = "FiveDof"
    autosave_s: float = Field(default=30.0, gt=0)
    auth_token: Optional[str] = None
    fusion: FusionSettings = Field(default_factory=FusionSettings)
    thresholds: ThresholdSettings = Field(default_factory=ThresholdSettings)

    @property
    def host(self) -> str:
        return self.bind_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.bind_addr.rsplit(":", 1)[1])


def _deep_merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _env_overrides(env: Mapping[str, str]) -> dict:
    sections = {"fusion", "thresholds"}
    out: dict[str, Any] = {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :].lower()
        section = next((s for s in sections if name.startswith(s + "_")), None)
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if section:
            out.setdefault(section, {})[name[len(section) + 1 :]] = value
        else:
            out[name] = value
    return out


def load_config(
    path: Optional[Union[str, Path]] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ServerConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    data = _deep_merge(data, _env_overrides(env if env is not None else os.environ))
    if overrides:
        data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    try:
        return ServerConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"bad config value at {loc}: {first['msg']}") from None
