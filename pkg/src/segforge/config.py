"""Flat key-value configuration with environment overrides.

Config files use one ``section.key = value`` assignment per line; ``#``
starts a comment.  Environment variables named ``SEGFORGE_<SECTION>_<KEY>``
(upper-cased, dots replaced by underscores) override file values.
"""

from __future__ import annotations

import os
from pathlib import Path

ENV_PREFIX = "SEGFORGE_"

DEFAULTS: dict[str, str] = {
    "edgar.rate_limit_rps": "8",
    "edgar.user_agent": "segforge/0.1 (research tool; set edgar.user_agent to your contact)",
    "edgar.cache_dir": "cache",
    "edgar.max_retries": "5",
    "edgar.fixture_dir": "",
    "llm.backend": "scripted",
    "llm.model": "gpt-4.1",
    "llm.api_base": "",
    "llm.max_in_flight": "5",
    "llm.script_path": "",
    "llm.api_key": "",
    "retrieval.k1": "1.2",
    "retrieval.b": "0.75",
    "retrieval.min_chunk_chars": "800",
    "retrieval.max_chunk_chars": "1600",
    "retrieval.segment_boost": "1.5",
    "retrieval.len_norm_ref": "200",
    "store.panel_path": "panel.jsonl",
    "extraction.measures": "revenue,profit_or_loss,assets",
}


class Config:
    """Layered configuration: defaults < file < environment."""

    def __init__(self, values: dict[str, str] | None = None, use_env: bool = True):
        self._values = dict(DEFAULTS)
        if values:
            self._values.update(values)
        if use_env:
            self._values.update(_env_overrides(self._values.keys()))

    @classmethod
    def load(cls, path: str | Path | None = None, use_env: bool = True) -> "Config":
        values: dict[str, str] = {}
        if path is not None:
            for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'section.key = value'")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
        return cls(values, use_env=use_env)

    def get(self, key: str, default: str | None = None) -> str:
        if key in self._values:
            return self._values[key]
        if default is not None:
            return default
        raise KeyError(key)

    def get_int(self, key: str) -> int:
        return int(self.get(key))

    def get_float(self, key: str) -> float:
        return float(self.get(key))

    def get_bool(self, key: str) -> bool:
        return self.get(key).strip().lower() in ("1", "true", "yes", "on")

    def get_list(self, key: str) -> list[str]:
        return [part.strip() for part in self.get(key).split(",") if part.strip()]

    def set(self, key: str, value: str) -> None:
        self._values[key] = value

    def as_dict(self) -> dict[str, str]:
        return dict(self._values)


def env_var_name(key: str) -> str:
    return ENV_PREFIX + key.replace(".", "_").upper()


def _env_overrides(keys) -> dict[str, str]:
    found = {}
    for key in keys:
        value = os.environ.get(env_var_name(key))
        if value is not None:
            found[key] = value
    return found
