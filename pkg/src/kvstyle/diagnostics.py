"""Cross-attention variance over style tokens and attention-map CSV export."""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .decoder import GenerationTrace


@dataclass(frozen=True, eq=False)
class VarianceSeries:
    """``values[t - 1, layer]`` is Var(t) for generated position t."""

    values: np.ndarray

    @property
    def steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def layers(self) -> int:
        return int(self.values.shape[1])

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"position": t + 1, "layer": layer, "var": float(self.values[t, layer])}
            for t in range(self.steps)
            for layer in range(self.layers)
        ]


def variance_of_weights(weights: np.ndarray) -> np.ndarray:
    """Population variance over the last axis, (1/|S|) * sum (a_s - mean)^2."""
    a = np.asarray(weights, dtype=np.float64)
    mean = a.mean(axis=-1, keepdims=True)
    return np.mean((a - mean) ** 2, axis=-1)


def attention_variance(trace: GenerationTrace) -> VarianceSeries:
    if len(trace) == 0:
        raise ValueError("trace is empty")
    return VarianceSeries(variance_of_weights(trace.cross_weights()))


def variance_summary(series: VarianceSeries, commit_len: int) -> dict[str, list[float]]:
    """
    Per-layer minimum over steps t <= commit_len and maximum over later steps.

    A run no longer than the commit phase has no late steps; ``late_max`` is empty then.
    """
    if commit_len < 1:
        raise ValueError("commit_len must be >= 1")
    early = series.values[:commit_len]
    late = series.values[commit_len:]
    return {
        "early_min": [float(v) for v in early.min(axis=0)],
        "late_max": [float(v) for v in late.max(axis=0)] if late.shape[0] else [],
    }


def write_csv(path: Path, fieldnames: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def attention_map_path(directory: Path, layer: int) -> Path:
    return directory / f"attention_layer{layer}.csv"


def export_attention_map(trace: GenerationTrace, directory: str | Path) -> list[Path]:
    """
    Write one CSV per layer: a row per style token, a column per generated step.

    Cells carry 6 significant digits.
    """
    weights = trace.cross_weights()
    steps, layers, style_len = weights.shape
    directory = Path(directory)
    header = ["style_token"] + [str(t) for t in range(1, steps + 1)]
    written = []
    for layer in range(layers):
        rows = []
        for s in range(style_len):
            row: dict[str, Any] = {"style_token": s}
            row.update({str(t + 1): f"{weights[t, layer, s]:.6g}" for t in range(steps)})
            rows.append(row)
        path = attention_map_path(directory, layer)
        write_csv(path, header, rows)
        written.append(path)
    return written


def load_attention_map(path: str | Path) -> np.ndarray:
    """Read one exported layer back as a (style tokens x steps) array."""
    with Path(path).open(encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "style_token":
            raise ValueError(f"{path} is not an attention map export")
        data = [[float(cell) for cell in row[1:]] for row in reader]
    return np.array(data, dtype=np.float64).reshape(len(data), len(header) - 1)
