"""
Hand-constructed self-referencing decoder and encoder.

The decoder carries one scalar attribute per position in residual channel ``c``.
During the first ``commit_len`` generated steps a position gate opens the
cross-attention onto the style prompt's attribute token, with a fixed
``COMMIT_LEAK`` of the weight left on the filler rows; afterwards the emitted
attribute is the mean of the attributes carried by the allowed generated cache
rows, so the style is maintained from the decoder's own early tokens.

Residual channels (every channel except ``c``, in order):

    CONST     1 everywhere
    NONAUDIO  1 on text rows; repels audio queries in the averaging layer
    GATE      1 at positions text_len+1 .. text_len+commit_len
    CROSS     style attribute read by cross-attention
    OWN       attribute carried by this row (CROSS when gated, else the input token's)
    MEAN      masked mean of OWN over generated rows
    RESULT    attribute to emit (OWN when gated, else MEAN)

Remaining channels hold sinusoidal position features that nothing reads.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any

import numpy as np

from .attention import mask_allows
from .decoder import DecoderWeights, LayerWeights, sinusoidal_positions
from .embedding import EncoderWeights, PromptEmbedding, encode_prompt
from .numerics import masked_softmax
from .transition import TransitionPlan, validate_plan

LEVELS: tuple[float, ...] = tuple(float(x) for x in np.linspace(-1.0, 1.0, 9))

# Output-head bias per token id; in id units it rounds ties up with this margin.
TIE_BIAS = 4e-3
TIE_MARGIN = TIE_BIAS / 2

GATE_BOUND = 8.0
TEXT_REPULSION = 1e4
ENCODER_SHARPNESS = 12.0
# Extra score a filler row gives the attribute token over other fillers.
ENCODER_SPREAD = 6.0
# Total commit-phase cross-attention weight on the filler rows.
COMMIT_LEAK = 1e-3


@dataclass(frozen=True)
class ToyConfig:
    vocab: int = 64
    dim: int = 16
    layers: int = 2
    commit_len: int = 4
    attr_channel: int = 0
    style_len: int = 8
    attr_pos: int = 3
    text_len: int = 8
    max_len: int = 512

    def __post_init__(self) -> None:
        if self.commit_len < 1:
            raise ValueError("commit_len must be >= 1")
        if not 0 <= self.attr_channel < self.dim:
            raise ValueError(f"attr_channel must be within 0..{self.dim - 1}")
        if not 0 <= self.attr_pos < self.style_len:
            raise ValueError(f"attr_pos must be within 0..{self.style_len - 1}")
        if self.dim < 8:
            raise ValueError("dim must be >= 8 to hold the toy channels")
        if self.layers < 2:
            raise ValueError("layers must be >= 2")
        if self.vocab < len(LEVELS) + 1:
            raise ValueError(f"vocab must be >= {len(LEVELS) + 1} (attribute levels plus a filler)")
        if self.text_len < 1:
            raise ValueError("text_len must be >= 1")
        if self.text_len + self.commit_len >= self.max_len:
            raise ValueError("max_len leaves no room after the commit phase")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToyConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown toy config keys: {unknown}")
        for key, value in data.items():
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{key} must be an integer")
        return cls(**data)

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class ToyLayout:
    const: int
    nonaudio: int
    gate: int
    cross: int
    own: int
    mean: int
    result: int
    position: tuple[int, ...]
    # Encoder roles share the same channel pool.
    marker: int
    filler: int
    ident: int

    @classmethod
    def for_config(cls, cfg: ToyConfig) -> ToyLayout:
        free = [ch for ch in range(cfg.dim) if ch != cfg.attr_channel]
        return cls(
            const=free[0],
            nonaudio=free[1],
            gate=free[2],
            cross=free[3],
            own=free[4],
            mean=free[5],
            result=free[6],
            position=tuple(free[7:]),
            marker=free[0],
            filler=free[1],
            ident=free[2],
        )


def quantize(x: float, vocab: int) -> int:
    """Attribute in [-1, 1] to token id; ties round up."""
    y = (float(x) + 1.0) / 2.0 * (vocab - 1)
    return int(min(max(math.floor(y + 0.5 + TIE_MARGIN), 0), vocab - 1))


def dequantize(token: int, vocab: int) -> float:
    return 2.0 * token / (vocab - 1) - 1.0


def _gated_select(d: int, gate: int, when_open: int, when_closed: int, out: int) -> tuple[np.ndarray, ...]:
    """FFN computing out = gate ? when_open : when_closed for |values| < GATE_BOUND."""
    w1 = np.zeros((d, 4))
    b1 = np.zeros(4)
    w1[when_open, 0], w1[gate, 0], b1[0] = 1.0, GATE_BOUND, -GATE_BOUND
    w1[when_open, 1], w1[gate, 1], b1[1] = -1.0, GATE_BOUND, -GATE_BOUND
    w1[when_closed, 2], w1[gate, 2] = 1.0, -GATE_BOUND
    w1[when_closed, 3], w1[gate, 3] = -1.0, -GATE_BOUND
    w2 = np.zeros((4, d))
    w2[:, out] = (1.0, -1.0, 1.0, -1.0)
    return w1, b1, w2, np.zeros(d)


def _empty_layer(d: int) -> dict[str, np.ndarray]:
    zero = np.zeros((d, d))
    return {
        "wq": zero,
        "wk": zero,
        "wv": zero,
        "wo": zero,
        "cq": zero,
        "ck": zero,
        "cv": zero,
        "co": zero,
        "w1": np.zeros((d, 4)),
        "b1": np.zeros(4),
        "w2": np.zeros((4, d)),
        "b2": np.zeros(d),
    }


def build_toy_model(cfg: ToyConfig) -> DecoderWeights:
    """Closed-form decoder weights realising commit-then-average decoding."""
    d, v_size, c = cfg.dim, cfg.vocab, cfg.attr_channel
    lay = ToyLayout.for_config(cfg)

    commit = _empty_layer(d)
    commit["cq"] = _single(d, lay.gate, 0, commit_sharpness(cfg) * math.sqrt(d))
    commit["ck"] = _single(d, lay.marker, 0, 1.0)
    commit["cv"] = _single(d, c, 0, 1.0)
    commit["co"] = _single(d, 0, lay.cross, 1.0)
    commit["w1"], commit["b1"], commit["w2"], commit["b2"] = _gated_select(d, lay.gate, lay.cross, c, lay.own)

    average = _empty_layer(d)
    average["wq"] = _single(d, lay.const, 0, 1.0)
    average["wk"] = _single(d, lay.nonaudio, 0, -TEXT_REPULSION)
    average["wv"] = _single(d, lay.own, 0, 1.0)
    average["wo"] = _single(d, 0, lay.mean, 1.0)
    average["w1"], average["b1"], average["w2"], average["b2"] = _gated_select(
        d, lay.gate, lay.own, lay.mean, lay.result
    )

    layers = [LayerWeights(**commit), LayerWeights(**average)]
    layers.extend(LayerWeights(**_empty_layer(d)) for _ in range(cfg.layers - 2))

    token_embedding = np.zeros((v_size, d))
    token_embedding[:, lay.const] = 1.0
    token_embedding[:, c] = [dequantize(v, v_size) for v in range(v_size)]

    text_embedding = np.zeros((v_size, d))
    text_embedding[:, lay.const] = 1.0
    text_embedding[:, lay.nonaudio] = 1.0

    start_embedding = np.zeros(d)
    start_embedding[lay.const] = 1.0

    positional = np.zeros((cfg.max_len, d))
    if lay.position:
        positional[:, list(lay.position)] = sinusoidal_positions(cfg.max_len, len(lay.position))
    positional[cfg.text_len : cfg.text_len + cfg.commit_len, lay.gate] = 1.0

    ids = np.arange(v_size, dtype=np.float64)
    head = np.zeros((d, v_size))
    head[lay.result] = ids * (v_size - 1)
    head[lay.const] = ids * (v_size - 1) - ids**2 + TIE_BIAS * ids

    return DecoderWeights(
        layers=tuple(layers),
        token_embedding=token_embedding,
        text_embedding=text_embedding,
        start_embedding=start_embedding,
        positional=positional,
        output_head=head,
    )


def build_toy_encoder(cfg: ToyConfig) -> EncoderWeights:
    """
    Contextual style encoder over a small lexicon.

    Ids ``0..8`` are attribute-level tokens (levels -1..1 in steps of 0.25), the
    rest are filler words. The attribute token attends almost only to itself,
    so it keeps the attribute in channel ``c``. Filler rows favour the attribute
    token by ``ENCODER_SPREAD`` and so carry most of the attribute as well,
    which gives non-attribute rows a direction of their own.
    """
    d, c = cfg.dim, cfg.attr_channel
    lay = ToyLayout.for_config(cfg)
    table = np.zeros((cfg.vocab, d))
    for token, level in enumerate(LEVELS):
        table[token, lay.marker] = 1.0
        table[token, c] = level
    for token in range(len(LEVELS), cfg.vocab):
        table[token, lay.filler] = 1.0
        table[token, lay.ident] = token / cfg.vocab

    scale = math.sqrt(ENCODER_SHARPNESS * math.sqrt(d))
    query = np.zeros((d, d))
    query[lay.marker, lay.marker] = scale
    query[lay.filler, lay.filler] = scale
    key = query.copy()
    key[lay.marker, lay.filler] = scale * (ENCODER_SHARPNESS + ENCODER_SPREAD) / ENCODER_SHARPNESS
    return EncoderWeights(token_embedding=table, wq=query, wk=key, wv=np.eye(d), wo=np.eye(d))


def commit_sharpness(cfg: ToyConfig) -> float:
    """
    Cross-attention sharpness that puts exactly ``COMMIT_LEAK`` of the commit
    read on the filler rows of an encoded style prompt.

    Scores read the marker channel, which is ``1 / (1 + f e^-S)`` at the
    attribute token and ``e^G / (e^G + f)`` at every filler, for ``f`` fillers,
    ``S = ENCODER_SHARPNESS`` and ``G = ENCODER_SPREAD``.
    """
    fillers = cfg.style_len - 1
    if fillers == 0:
        return 1.0
    marker_attr = 1.0 / (1.0 + fillers * math.exp(-ENCODER_SHARPNESS))
    marker_filler = math.exp(ENCODER_SPREAD) / (math.exp(ENCODER_SPREAD) + fillers)
    return math.log(fillers * (1.0 - COMMIT_LEAK) / COMMIT_LEAK) / (marker_attr - marker_filler)


def level_token(level: float) -> int:
    for token, candidate in enumerate(LEVELS):
        if math.isclose(level, candidate, abs_tol=1e-9):
            return token
    raise ValueError(f"attribute level {level} is not one of {LEVELS}")


def style_prompt_ids(cfg: ToyConfig, level: float, context: int = 0) -> list[int]:
    """Prompt with the level token at ``attr_pos``; ``context`` picks the filler words."""
    fillers = cfg.vocab - len(LEVELS)
    ids = [len(LEVELS) + ((i + context) % fillers) for i in range(cfg.style_len)]
    ids[cfg.attr_pos] = level_token(level)
    return ids


def encode_style(
    cfg: ToyConfig, level: float, encoder: EncoderWeights | None = None, context: int = 0
) -> PromptEmbedding:
    encoder = encoder or build_toy_encoder(cfg)
    return encode_prompt(style_prompt_ids(cfg, level, context), {cfg.attr_pos}, encoder)


def contrastive_embeddings(
    cfg: ToyConfig,
    levels: Sequence[float],
    contexts: Sequence[int],
    encoder: EncoderWeights | None = None,
) -> dict[float, list[PromptEmbedding]]:
    """Every level encoded once per filler context."""
    encoder = encoder or build_toy_encoder(cfg)
    return {float(level): [encode_style(cfg, level, encoder, context) for context in contexts] for level in levels}


def style_attribute(embedding: PromptEmbedding, cfg: ToyConfig) -> float:
    """The attribute the commit phase reads from a style memory."""
    lay = ToyLayout.for_config(cfg)
    scores = commit_sharpness(cfg) * embedding.vectors[:, lay.marker].astype(np.float64)
    weights = masked_softmax(scores)
    return float(weights @ embedding.vectors[:, cfg.attr_channel].astype(np.float64))


def default_text_ids(cfg: ToyConfig) -> list[int]:
    return [i % cfg.vocab for i in range(cfg.text_len)]


@dataclass(frozen=True)
class AttributeReading:
    value: float
    start: int
    end: int


def attribute_of(tokens: Sequence[int], segment: range, cfg: ToyConfig) -> AttributeReading:
    """Mean decoded attribute over ``tokens[segment]``."""
    if segment.step != 1:
        raise ValueError("segment must be contiguous")
    if len(segment) == 0:
        raise ValueError("segment is empty")
    if segment.start < 0 or segment.stop > len(tokens):
        raise ValueError(f"segment [{segment.start}, {segment.stop}) outside {len(tokens)} tokens")
    values = [dequantize(int(tokens[i]), cfg.vocab) for i in segment]
    return AttributeReading(value=float(np.mean(values)), start=segment.start, end=segment.stop)


def segment_readings(tokens: Sequence[int], length: int, cfg: ToyConfig) -> tuple[AttributeReading, AttributeReading]:
    """First and last ``length``-token readings."""
    if not 1 <= length <= len(tokens):
        raise ValueError(f"segment length {length} must be within 1..{len(tokens)}")
    first = attribute_of(tokens, range(0, length), cfg)
    last = attribute_of(tokens, range(len(tokens) - length, len(tokens)), cfg)
    return first, last


class StyleClass(str, Enum):
    SOURCE_LIKE = "source_like"
    TARGET_LIKE = "target_like"
    NEUTRAL = "neutral"


NEUTRAL_BAND = 0.1


def sign_class(reading: AttributeReading, a_target: float) -> StyleClass:
    if abs(reading.value) <= NEUTRAL_BAND:
        return StyleClass.NEUTRAL
    if np.sign(reading.value) == np.sign(a_target):
        return StyleClass.TARGET_LIKE
    return StyleClass.SOURCE_LIKE


def oracle_trajectory(
    plan: TransitionPlan,
    cfg: ToyConfig,
    a_src: float,
    a_tgt_effective: float,
    naive: bool = False,
    tokens: Sequence[int] | None = None,
) -> np.ndarray:
    """
    Scalar simulation of the attribute each generated step emits.

    Entry ``t - 1`` is the pre-quantization attribute of generated token ``t``.
    With ``tokens`` given, carried values come from those tokens instead of the
    simulation's own quantized output.
    """
    n_text = cfg.text_len
    validate_plan(plan, n_text)
    m, vocab = cfg.commit_len, cfg.vocab
    spec = plan.mask(n_text)
    spec_before = plan.mask_before(n_text)
    donor = [] if naive else _donor_rows(plan.k, m, a_tgt_effective, vocab)

    carried = np.zeros(plan.steps + 1)
    readout = np.zeros(plan.steps)
    previous = 0
    for t in range(1, plan.steps + 1):
        after = t > plan.t_star
        style = a_tgt_effective if after else a_src
        carried[t] = style if t <= m else dequantize(previous, vocab)
        if t <= m:
            x = style
        else:
            active = spec if after else spec_before
            i = n_text + t
            rows = [j for j in range(1, t + 1) if mask_allows(i, n_text + j, active)]
            x = float(np.mean(carried[rows]))
        readout[t - 1] = x
        previous = int(tokens[t - 1]) if tokens is not None else quantize(x, vocab)
        if t == plan.t_star and donor:
            carried[1 : plan.k + 1] = donor
    return readout


def oracle_tokens(readout: np.ndarray, cfg: ToyConfig) -> list[int]:
    return [quantize(float(x), cfg.vocab) for x in readout]


def _donor_rows(k: int, m: int, a_tgt: float, vocab: int) -> list[float]:
    """Carried values of Decoder-B's first k generated rows; all lie inside its initial region."""
    rows: list[float] = []
    previous = 0
    for j in range(1, k + 1):
        rows.append(a_tgt if j <= m else dequantize(previous, vocab))
        x = a_tgt if j <= m else float(np.mean(rows))
        previous = quantize(x, vocab)
    return rows


def _single(d: int, row: int, col: int, value: float) -> np.ndarray:
    matrix = np.zeros((d, d))
    matrix[row, col] = value
    return matrix
