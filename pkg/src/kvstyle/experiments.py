"""Experiment computations behind the cli commands, run on a toy model file."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

from scipy.stats import spearmanr

from .attention import MaskSpec
from .decoder import generate
from .transition import TransitionPlan, TransitionResult, modified_style, run_naive_swap, run_transition
from .toymodel import (
    AttributeReading,
    StyleClass,
    default_text_ids,
    encode_style,
    segment_readings,
    sign_class,
    style_attribute,
)
from .weights_file import ModelFile

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS: tuple[int | None, ...] = (8, 16, 32, None)
DEFAULT_KS: tuple[int, ...] = (0, 2, 4)
DEFAULT_SEGMENT = 32
DEFAULT_STEPS = 128
DEFAULT_T_STAR = 64


def parse_window(text: str) -> int | None:
    """``full`` maps to None (plain causal attention)."""
    if text.strip().lower() == "full":
        return None
    try:
        window = int(text)
    except ValueError as exc:
        raise ValueError("window must be >= 1 or full") from exc
    if window < 1:
        raise ValueError("window must be >= 1 or full")
    return window


def window_label(window: int | None) -> str:
    return "full" if window is None else str(window)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    beta: float | None
    attribute_mean: float
    sign_class: StyleClass

    def as_dict(self) -> dict[str, object]:
        row: dict[str, object] = {
            "alpha": self.alpha,
            "attribute_mean": self.attribute_mean,
            "sign_class": self.sign_class.value,
        }
        if self.beta is not None:
            row["beta"] = self.beta
        return row


@dataclass(frozen=True)
class SweepResult:
    rows: list[SweepRow]
    spearman: dict[float | None, float]

    @property
    def spearman_rho(self) -> float:
        """Rank correlation of the plain sweep, or of the first beta group."""
        return next(iter(self.spearman.values()))


def interpolation_sweep(
    model: ModelFile,
    alphas: Sequence[float],
    a_src: float = -0.5,
    a_tgt: float = 0.5,
    steps: int = DEFAULT_STEPS,
    segment: int = DEFAULT_SEGMENT,
    betas: Sequence[float] | None = None,
    text_ids: Sequence[int] | None = None,
) -> SweepResult:
    """Final-segment attribute of a full-causal generation for every alpha (and beta)."""
    if not alphas:
        raise ValueError("alphas must not be empty")
    cfg = model.config
    text = list(text_ids) if text_ids is not None else default_text_ids(cfg)
    src = encode_style(cfg, a_src, model.encoder)
    tgt = encode_style(cfg, a_tgt, model.encoder)
    positions = sorted(src.attr_positions)
    groups: list[float | None] = list(betas) if betas else [None]

    rows: list[SweepRow] = []
    spearman: dict[float | None, float] = {}
    for beta in groups:
        group: list[SweepRow] = []
        for alpha in alphas:
            style = modified_style(src, tgt, positions, alpha, beta)
            tokens, _ = generate(model.decoder, text, style, steps, MaskSpec.full_causal())
            _, last = segment_readings(tokens, segment, cfg)
            group.append(SweepRow(float(alpha), beta, last.value, sign_class(last, a_tgt)))
            logger.debug("alpha=%s beta=%s attribute=%.4f", alpha, beta, last.value)
        rows.extend(group)
        spearman[beta] = _spearman([r.alpha for r in group], [r.attribute_mean for r in group])
    return SweepResult(rows=rows, spearman=spearman)


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        return float("nan")
    return float(spearmanr(x, y).correlation)


def run_toy_transition(
    model: ModelFile,
    plan: TransitionPlan,
    a_src: float = -1.0,
    a_tgt: float = 1.0,
    naive: bool = False,
    segment: int = DEFAULT_SEGMENT,
    parallel: bool = False,
    text_ids: Sequence[int] | None = None,
) -> TransitionResult:
    """Run one transition between two attribute levels and fill in the segment metrics."""
    cfg = model.config
    text = list(text_ids) if text_ids is not None else default_text_ids(cfg)
    src = encode_style(cfg, a_src, model.encoder)
    tgt = encode_style(cfg, a_tgt, model.encoder)
    positions = sorted(src.attr_positions)
    if naive:
        result = run_naive_swap(model.decoder, text, src, tgt, positions, plan)
    else:
        result = run_transition(model.decoder, text, src, tgt, positions, plan, parallel=parallel)
    first, last = segment_readings(result.tokens, segment, cfg)
    result.metrics.update(_metrics(first, last, a_src, a_tgt))
    result.metrics["style_src"] = style_attribute(src, cfg)
    result.metrics["style_modified"] = style_attribute(result.modified_style, cfg)
    return result


def _metrics(first: AttributeReading, last: AttributeReading, a_src: float, a_tgt: float) -> dict[str, float]:
    return {
        "first_attribute": first.value,
        "last_attribute": last.value,
        "delta_attribute": last.value - first.value,
        "span": abs(a_tgt - a_src),
    }


@dataclass(frozen=True)
class GridRow:
    window: int | None
    k: int
    delta_attribute: float
    sign_class: StyleClass

    def as_dict(self) -> dict[str, object]:
        return {
            "window": window_label(self.window),
            "k": self.k,
            "delta_attribute": self.delta_attribute,
            "sign_class": self.sign_class.value,
        }


def _window_order(window: int | None) -> float:
    return float("inf") if window is None else float(window)


def window_k_grid(
    model: ModelFile,
    windows: Sequence[int | None],
    ks: Sequence[int],
    alpha: float = 2.0,
    t_star: int = DEFAULT_T_STAR,
    steps: int = DEFAULT_STEPS,
    a_src: float = -1.0,
    a_tgt: float = 1.0,
    segment: int = DEFAULT_SEGMENT,
    workers: int = 4,
) -> list[GridRow]:
    """One transition per (window, k) cell; rows sorted by window (full last) then k."""
    if not windows or not ks:
        raise ValueError("windows and ks must not be empty")
    plans = [
        TransitionPlan(t_star=t_star, k=k, window=window, alpha=alpha, steps=steps)
        for window, k in product(windows, ks)
    ]

    def cell(plan: TransitionPlan) -> GridRow:
        result = run_toy_transition(model, plan, a_src=a_src, a_tgt=a_tgt, segment=segment)
        _, last = segment_readings(result.tokens, segment, model.config)
        row = GridRow(plan.window, plan.k, result.metrics["delta_attribute"], sign_class(last, a_tgt))
        logger.info("grid cell window=%s k=%d delta=%.4f", plan.window_label(), plan.k, row.delta_attribute)
        return row

    with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="kvstyle-grid") as pool:
        rows = list(pool.map(cell, plans))
    return sorted(rows, key=lambda r: (_window_order(r.window), r.k))
