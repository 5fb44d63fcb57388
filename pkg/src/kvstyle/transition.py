"""Dual-decoder style transition: prefix KV swap at t* plus the style-only baseline.

Decoder-B runs under the modified style just long enough to hold ``n = n_text + k``
cache rows. Decoder-A generates under the source style up to ``t_star``; its
first ``n`` rows are then overwritten with Decoder-B's and it continues under
the modified style with the sliding mask.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .attention import MaskSpec, swap_prefix
from .decoder import DecoderState, DecoderWeights, GenerationTrace, decode, prefill, replace_style
from .embedding import PromptEmbedding, compute_direction, interpolate, interpolate_full
from .numerics import Vector
from .sampling import Sampler, SamplerConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransitionPlan:
    """Free parameters of one transition run. ``window=None`` means full causal attention."""

    t_star: int
    k: int
    window: int | None
    alpha: float
    steps: int
    beta: float | None = None
    window_before_transition: bool = True
    temperature: float = 0.0
    seed: int = 0

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(temperature=self.temperature, seed=self.seed)

    def swap_length(self, n_text: int) -> int:
        return n_text + self.k

    def mask(self, n_text: int) -> MaskSpec:
        """Mask used after the transition (and before it unless disabled)."""
        if self.window is None:
            return MaskSpec.full_causal()
        return MaskSpec.sliding(self.swap_length(n_text), self.window)

    def mask_before(self, n_text: int) -> MaskSpec:
        if self.window_before_transition:
            return self.mask(n_text)
        return MaskSpec.full_causal()

    def window_label(self) -> str:
        return "full" if self.window is None else str(self.window)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SwapRecord:
    n: int
    t_star: int
    performed: bool


@dataclass
class TransitionResult:
    tokens: list[int]
    trace_a: GenerationTrace
    logits: np.ndarray
    swap_record: SwapRecord
    modified_style: PromptEmbedding
    metrics: dict[str, float] = field(default_factory=dict)


def validate_plan(plan: TransitionPlan, n_text: int) -> int:
    """Return the swap length ``n = n_text + k`` or raise on an invalid plan."""
    if n_text < 1:
        raise ValueError("text prompt must not be empty")
    if plan.k < 0:
        raise ValueError("k must be >= 0")
    if plan.window is not None and plan.window < 1:
        raise ValueError("window must be >= 1 or full")
    n = plan.swap_length(n_text)
    if plan.t_star <= n:
        raise ValueError(f"transition precedes committed prefix (t_star={plan.t_star}, n={n})")
    if plan.steps <= plan.t_star:
        raise ValueError(f"steps must exceed t_star (steps={plan.steps}, t_star={plan.t_star})")
    return n


def modified_style(
    src_prompt: PromptEmbedding,
    tgt_prompt: PromptEmbedding,
    attr_positions: Iterable[int],
    alpha: float,
    beta: float | None = None,
) -> PromptEmbedding:
    """E' from the direction vector; the full-vector variant when ``beta`` is set."""
    positions = tuple(attr_positions)
    if beta is not None:
        return interpolate_full(src_prompt, tgt_prompt, alpha, beta, positions)
    return interpolate(src_prompt, compute_direction(src_prompt, tgt_prompt, positions), alpha)


def run_transition(
    weights: DecoderWeights,
    text_ids: Sequence[int],
    src_prompt: PromptEmbedding,
    tgt_prompt: PromptEmbedding,
    attr_positions: Iterable[int],
    plan: TransitionPlan,
    parallel: bool = False,
) -> TransitionResult:
    """Generate ``plan.steps`` tokens with a prefix KV swap at ``plan.t_star``."""
    n_text = len(text_ids)
    n = validate_plan(plan, n_text)
    spec = plan.mask(n_text)
    spec_before = plan.mask_before(n_text)

    target = modified_style(src_prompt, tgt_prompt, attr_positions, plan.alpha, plan.beta)
    logger.debug("phase 0: modified style ready (alpha=%s, beta=%s)", plan.alpha, plan.beta)

    sampler_a = plan.sampler.build()
    logits: list[Vector] = []

    def donor() -> DecoderState:
        state = prefill(weights, text_ids, target, spec)
        decode(state, plan.k, spec, plan.sampler.build())
        logger.debug("phase 1: donor cache holds %d rows", state.position)
        return state

    def source() -> tuple[DecoderState, list[int], GenerationTrace]:
        state = prefill(weights, text_ids, src_prompt, spec_before)
        tokens, trace = decode(state, plan.t_star, spec_before, sampler_a, logits)
        logger.debug("phase 2: generated %d source-style tokens", len(tokens))
        return state, tokens, trace

    if parallel:
        with ThreadPoolExecutor(max_workers=2, thread_name_prefix="kvstyle-decoder") as pool:
            donor_future = pool.submit(donor)
            source_future = pool.submit(source)
            state_b = donor_future.result()
            state_a, tokens, trace = source_future.result()
    else:
        state_b = donor()
        state_a, tokens, trace = source()

    if state_b.position < n:
        raise RuntimeError(f"donor decoder holds {state_b.position} rows, swap needs {n}")
    swap_prefix(state_a.cache, state_b.cache, n)
    replace_style(state_a, target)
    logger.info("swapped %d cache rows at t*=%d (window=%s)", n, plan.t_star, plan.window_label())

    _continue(state_a, plan, spec, sampler_a, tokens, trace, logits)
    return TransitionResult(
        tokens=tokens,
        trace_a=trace,
        logits=np.stack(logits),
        swap_record=SwapRecord(n=n, t_star=plan.t_star, performed=True),
        modified_style=target,
    )


def run_naive_swap(
    weights: DecoderWeights,
    text_ids: Sequence[int],
    src_prompt: PromptEmbedding,
    tgt_prompt: PromptEmbedding,
    attr_positions: Iterable[int],
    plan: TransitionPlan,
) -> TransitionResult:
    """Baseline: replace the cross-attention style at t* and leave the cache alone."""
    n_text = len(text_ids)
    n = validate_plan(plan, n_text)
    spec = plan.mask(n_text)
    spec_before = plan.mask_before(n_text)
    target = modified_style(src_prompt, tgt_prompt, attr_positions, plan.alpha, plan.beta)

    sampler = plan.sampler.build()
    logits: list[Vector] = []
    state = prefill(weights, text_ids, src_prompt, spec_before)
    tokens, trace = decode(state, plan.t_star, spec_before, sampler, logits)
    replace_style(state, target)
    logger.info("replaced style at t*=%d without cache swap", plan.t_star)

    _continue(state, plan, spec, sampler, tokens, trace, logits)
    return TransitionResult(
        tokens=tokens,
        trace_a=trace,
        logits=np.stack(logits),
        swap_record=SwapRecord(n=n, t_star=plan.t_star, performed=False),
        modified_style=target,
    )


def _continue(
    state: DecoderState,
    plan: TransitionPlan,
    spec: MaskSpec,
    sampler: Sampler,
    tokens: list[int],
    trace: GenerationTrace,
    logits: list[Vector],
) -> None:
    more, more_trace = decode(state, plan.steps - plan.t_star, spec, sampler, logits)
    tokens.extend(more)
    trace.extend(more_trace)
    logger.debug("phase 4: generated %d tokens after the transition", len(more))
