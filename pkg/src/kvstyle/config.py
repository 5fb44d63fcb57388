"""Process-wide settings taken from the environment."""

from __future__ import annotations

import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass


@dataclass(frozen=True)
class EngineSettings:
    log_level: str = "INFO"
    workers: int = 4

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> EngineSettings:
        env = os.environ if environ is None else environ
        level = env.get("KVSTYLE_LOG_LEVEL", "INFO").upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"KVSTYLE_LOG_LEVEL={level!r} is not a logging level")
        raw_workers = env.get("KVSTYLE_WORKERS", "4")
        try:
            workers = int(raw_workers)
        except ValueError as exc:
            raise ValueError(f"KVSTYLE_WORKERS={raw_workers!r} must be an integer") from exc
        if workers < 1:
            raise ValueError("KVSTYLE_WORKERS must be >= 1")
        return cls(log_level=level, workers=workers)
