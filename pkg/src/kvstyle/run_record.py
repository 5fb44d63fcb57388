"""Self-contained JSON record of one transition run: config echo, tokens, readings and trace."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .decoder import GenerationTrace, TraceEntry
from .transition import TransitionPlan

FORMAT_VERSION = "1.0"

PLAN_KEYS = (
    "t_star",
    "k",
    "window",
    "alpha",
    "steps",
    "beta",
    "window_before_transition",
    "temperature",
    "seed",
)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run from its model file."""

    model: str
    plan: TransitionPlan
    naive: bool = False
    a_src: float = -1.0
    a_tgt: float = 1.0
    segment: int = 32

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["plan"] = self.plan.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        if "model" not in data:
            raise ValueError("Missing config keys: ['model']")
        plan_data = data.get("plan")
        if not isinstance(plan_data, dict):
            raise ValueError("config.plan must be an object")
        missing = sorted(set(PLAN_KEYS).difference(plan_data))
        if missing:
            raise ValueError(f"Missing plan keys: {missing}")
        plan = TransitionPlan(**{key: plan_data[key] for key in PLAN_KEYS})
        return cls(
            model=str(data["model"]),
            plan=plan,
            naive=bool(data.get("naive", False)),
            a_src=float(data.get("a_src", -1.0)),
            a_tgt=float(data.get("a_tgt", 1.0)),
            segment=int(data.get("segment", 32)),
        )


@dataclass(frozen=True)
class RunRecord:
    format_version: str
    engine_version: str
    config: RunConfig
    tokens: list[int]
    readings: dict[str, float]
    swap: dict[str, Any]
    variance_summary: dict[str, list[float]]
    trace: list[dict[str, Any]]

    def generation_trace(self) -> GenerationTrace:
        return trace_from_rows(self.trace)


def trace_rows(trace: GenerationTrace) -> list[dict[str, Any]]:
    return [
        {
            "token": entry.token,
            "cross_weights": entry.cross_weights.astype(np.float64).tolist(),
            "self_allowed": entry.self_allowed,
            "top_logit": entry.top_logit,
        }
        for entry in trace.entries
    ]


def trace_from_rows(rows: list[dict[str, Any]]) -> GenerationTrace:
    trace = GenerationTrace()
    for index, row in enumerate(rows):
        try:
            weights = np.array(row["cross_weights"], dtype=np.float64)
            entry = TraceEntry(
                token=int(row["token"]),
                cross_weights=weights,
                self_allowed=int(row["self_allowed"]),
                top_logit=float(row["top_logit"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"trace entry {index} is malformed") from exc
        if weights.ndim != 2:
            raise ValueError(f"trace entry {index} cross_weights must be layers x style tokens")
        trace.append(entry)
    return trace


def new_record(
    config: RunConfig,
    tokens: list[int],
    readings: dict[str, float],
    swap: dict[str, Any],
    variance_summary: dict[str, list[float]],
    trace: GenerationTrace,
) -> RunRecord:
    return RunRecord(
        format_version=FORMAT_VERSION,
        engine_version=__version__,
        config=config,
        tokens=[int(t) for t in tokens],
        readings=dict(readings),
        swap=dict(swap),
        variance_summary=variance_summary,
        trace=trace_rows(trace),
    )


def to_json(record: RunRecord) -> str:
    data = asdict(record)
    data["config"] = record.config.to_dict()
    return json.dumps(data, indent=2, sort_keys=True)


def from_json(payload: str) -> RunRecord:
    data = json.loads(payload)
    validate_run_dict(data)
    return RunRecord(
        format_version=data["format_version"],
        engine_version=data["engine_version"],
        config=RunConfig.from_dict(data["config"]),
        tokens=[int(t) for t in data["tokens"]],
        readings=data["readings"],
        swap=data["swap"],
        variance_summary=data["variance_summary"],
        trace=data["trace"],
    )


def load_file(path: str | Path) -> RunRecord:
    return from_json(Path(path).read_text(encoding="utf-8"))


def save_file(path: str | Path, record: RunRecord) -> None:
    Path(path).write_text(to_json(record), encoding="utf-8")


def validate_run_dict(data: Any) -> None:
    if not isinstance(data, dict):
        raise ValueError("run record must be a JSON object")
    required_keys = {
        "format_version",
        "engine_version",
        "config",
        "tokens",
        "readings",
        "swap",
        "variance_summary",
        "trace",
    }
    missing = sorted(required_keys.difference(data.keys()))
    if missing:
        raise ValueError(f"Missing run record keys: {missing}")
    if data["format_version"] != FORMAT_VERSION:
        raise ValueError(f"Unsupported format_version={data['format_version']!r}; expected {FORMAT_VERSION!r}")
    if not isinstance(data["config"], dict):
        raise ValueError("config must be an object")
    if not isinstance(data["tokens"], list):
        raise ValueError("tokens must be an array")
    if not isinstance(data["readings"], dict):
        raise ValueError("readings must be an object")
    if not isinstance(data["swap"], dict):
        raise ValueError("swap must be an object")
    if not isinstance(data["variance_summary"], dict):
        raise ValueError("variance_summary must be an object")
    if not isinstance(data["trace"], list) or not data["trace"]:
        raise ValueError("trace must be a non-empty array")
