"""Server configuration: one JSON file, explicit defaults.

Only the data directory is mandatory. The token secret should be set for any
real deployment; a missing secret gets a random one, which invalidates tokens
across restarts and is only suitable for throwaway instances.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field
from pathlib import Path

from . import errors


@dataclass(frozen=True)
class Config:
    data_dir: str
    host: str = "127.0.0.1"
    port: int = 8080
    auth_secret: str = field(default_factory=lambda: secrets.token_hex(32), repr=False)
    token_ttl_seconds: int = 86400
    bootstrap_admin_user: str | None = None
    bootstrap_admin_password: str | None = field(default=None, repr=False)
    # model ids re-estimated automatically after each drone upload
    auto_run_model_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.data_dir:
            raise errors.InvalidInput("data_dir must be set")
        if not 1 <= int(self.port) <= 65535:
            raise errors.InvalidInput(f"port out of range: {self.port}")
        if self.token_ttl_seconds <= 0:
            raise errors.InvalidInput("token_ttl_seconds must be positive")
        object.__setattr__(self, "auto_run_model_ids", tuple(self.auto_run_model_ids))

    @property
    def packages_dir(self) -> Path:
        return Path(self.data_dir) / "packages"


_KNOWN_KEYS = {
    "data_dir", "host", "port", "auth_secret", "token_ttl_seconds",
    "bootstrap_admin_user", "bootstrap_admin_password", "auto_run_model_ids",
}


def load_config(path: str | Path) -> Config:
    """Read a JSON config file; unknown keys are an error, not a surprise."""
    raw = Path(path).read_text()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise errors.InvalidInput(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise errors.InvalidInput("config must be a JSON object")
    unknown = sorted(set(data) - _KNOWN_KEYS)
    if unknown:
        raise errors.InvalidInput(f"unknown config keys: {', '.join(unknown)}")
    if "data_dir" not in data:
        raise errors.InvalidInput("config misses data_dir")
    return Config(**data)
