"""Layered autoregressive decoder with cross-attention to a style memory.

Each layer is single-head self-attention, single-head cross-attention over the
style prompt embedding, and a ReLU feed-forward block, joined by plain residual
adds. Text prompt tokens are prefilled into the first cache positions; step
``g`` then processes the start-of-audio embedding (g = 1) or the previously
emitted token at position ``n_text + g`` and returns the logits of token ``g``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import KVCache, MaskSpec, attend_with_weights, mask_matrix
from .embedding import PromptEmbedding
from .numerics import DTYPE, Matrix, Vector, affine, as_matrix, as_vector, masked_softmax, matmul, relu
from .sampling import GREEDY, Sampler, SamplerConfig

logger = logging.getLogger(__name__)

LAYER_TENSORS = ("wq", "wk", "wv", "wo", "cq", "ck", "cv", "co", "w1", "b1", "w2", "b2")


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Self-attention (wq..wo), cross-attention (cq..co) and feed-forward (w1, b1, w2, b2)."""

    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    cq: Matrix
    ck: Matrix
    cv: Matrix
    co: Matrix
    w1: Matrix
    b1: Vector
    w2: Matrix
    b2: Vector

    def __post_init__(self) -> None:
        for name in LAYER_TENSORS:
            value = getattr(self, name)
            converted = as_vector(value, name) if name in ("b1", "b2") else as_matrix(value, name)
            converted.setflags(write=False)
            object.__setattr__(self, name, converted)
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo", "cq", "ck", "cv", "co"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        hidden = self.w1.shape[1]
        if self.w1.shape != (d, hidden) or self.b1.shape != (hidden,):
            raise ValueError("feed-forward input projection does not match model width")
        if self.w2.shape != (hidden, d) or self.b2.shape != (d,):
            raise ValueError("feed-forward output projection does not match model width")


@dataclass(frozen=True, eq=False)
class DecoderWeights:
    """Immutable decoder parameters; safe to share between threads."""

    layers: tuple[LayerWeights, ...]
    token_embedding: Matrix
    text_embedding: Matrix
    start_embedding: Vector
    positional: Matrix
    output_head: Matrix

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("decoder needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for name in ("token_embedding", "text_embedding", "positional", "output_head"):
            converted = as_matrix(getattr(self, name), name)
            converted.setflags(write=False)
            object.__setattr__(self, name, converted)
        start = as_vector(self.start_embedding, "start_embedding")
        start.setflags(write=False)
        object.__setattr__(self, "start_embedding", start)

        d = self.dim
        widths = {
            "text_embedding": self.text_embedding.shape[1],
            "positional": self.positional.shape[1],
            "output_head": self.output_head.shape[0],
            "start_embedding": self.start_embedding.shape[0],
        }
        widths.update({f"layer {i}": layer.wq.shape[0] for i, layer in enumerate(self.layers)})
        wrong = sorted(name for name, width in widths.items() if width != d)
        if wrong:
            raise ValueError(f"inconsistent model width {d} in: {', '.join(wrong)}")
        if self.output_head.shape[1] != self.vocab:
            raise ValueError("output head must map to the audio vocabulary")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return int(self.token_embedding.shape[1])

    @property
    def vocab(self) -> int:
        return int(self.token_embedding.shape[0])

    @property
    def text_vocab(self) -> int:
        return int(self.text_embedding.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.positional.shape[0])


@dataclass(frozen=True, eq=False)
class TraceEntry:
    """One generated step: token, cross-attention rows (layers x style tokens), allowed-set size."""

    token: int | None
    cross_weights: np.ndarray
    self_allowed: int
    top_logit: float


@dataclass
class GenerationTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: TraceEntry) -> None:
        self.entries.append(entry)

    def extend(self, other: GenerationTrace) -> None:
        self.entries.extend(other.entries)

    @property
    def tokens(self) -> list[int]:
        return [int(e.token) for e in self.entries if e.token is not None]

    def cross_weights(self) -> np.ndarray:
        """Array of shape (steps, layers, style tokens)."""
        if not self.entries:
            raise ValueError("trace is empty")
        return np.stack([e.cross_weights for e in self.entries])


class DecoderState:
    """Single-owner mutable decoding state: caches, style memory and the pending input."""

    def __init__(
        self,
        weights: DecoderWeights,
        cache: KVCache,
        style: PromptEmbedding,
        n_text: int,
        next_token: int | None = None,
    ) -> None:
        if style.dim != weights.dim:
            raise ValueError(f"style dimension {style.dim} does not match model width {weights.dim}")
        if cache.num_layers != weights.num_layers:
            raise ValueError("cache layer count does not match the weights")
        if not 0 < n_text <= cache.length:
            raise ValueError(f"n_text={n_text} must be within 1..{cache.length}")
        self.weights = weights
        self.cache = cache
        self.style = style
        self.n_text = n_text
        self.next_token = next_token

    @property
    def position(self) -> int:
        return self.cache.length

    @property
    def generated(self) -> int:
        return self.position - self.n_text


def sinusoidal_positions(max_len: int, dim: int) -> Matrix:
    """Absolute sinusoidal encodings; row p-1 encodes 1-based position p."""
    position = np.arange(1, max_len + 1, dtype=np.float64)[:, None]
    div_term = np.exp(np.arange(0, dim, 2, dtype=np.float64) * -(math.log(10000.0) / dim))
    table = np.zeros((max_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(position * div_term)
    table[:, 1::2] = np.cos(position * div_term[: dim // 2])
    return table.astype(DTYPE)


def init_decoder_weights(
    vocab: int = 64,
    dim: int = 16,
    num_layers: int = 2,
    max_len: int = 512,
    text_vocab: int | None = None,
    ffn_dim: int | None = None,
    seed: int = 0,
) -> DecoderWeights:
    """Random (untrained) decoder, used where a property must hold for arbitrary weights."""
    rng = np.random.default_rng(seed)
    ffn_dim = ffn_dim or 2 * dim
    scale = 1.0 / math.sqrt(dim)

    def square() -> np.ndarray:
        return rng.normal(0.0, scale, size=(dim, dim))

    layers = tuple(
        LayerWeights(
            wq=square(),
            wk=square(),
            wv=square(),
            wo=square(),
            cq=square(),
            ck=square(),
            cv=square(),
            co=square(),
            w1=rng.normal(0.0, scale, size=(dim, ffn_dim)),
            b1=rng.normal(0.0, 0.1, size=ffn_dim),
            w2=rng.normal(0.0, 1.0 / math.sqrt(ffn_dim), size=(ffn_dim, dim)),
            b2=rng.normal(0.0, 0.1, size=dim),
        )
        for _ in range(num_layers)
    )
    return DecoderWeights(
        layers=layers,
        token_embedding=rng.normal(0.0, 1.0, size=(vocab, dim)),
        text_embedding=rng.normal(0.0, 1.0, size=(text_vocab or vocab, dim)),
        start_embedding=rng.normal(0.0, 1.0, size=dim),
        positional=sinusoidal_positions(max_len, dim),
        output_head=rng.normal(0.0, scale, size=(dim, vocab)),
    )


def sequence_inputs(weights: DecoderWeights, text_ids: Sequence[int], audio_tokens: Sequence[int] = ()) -> Matrix:
    """
    Residual-stream inputs for a whole sequence.

    Rows cover the text prompt, the start-of-audio position and one position per
    token in ``audio_tokens`` except the last (whose row would only be needed to
    predict the next token).
    """
    _check_text(weights, text_ids)
    rows = [weights.text_embedding[int(t)] for t in text_ids]
    rows.append(weights.start_embedding)
    for token in list(audio_tokens)[:-1]:
        rows.append(_audio_row(weights, token))
    length = len(rows)
    if length > weights.max_len:
        raise ValueError(f"sequence of {length} positions exceeds max_len={weights.max_len}")
    return (np.stack(rows).astype(np.float64) + weights.positional[:length].astype(np.float64)).astype(DTYPE)


@dataclass(frozen=True, eq=False)
class BatchOutput:
    logits: Matrix
    keys: tuple[Matrix, ...]
    values: tuple[Matrix, ...]
    cross_weights: np.ndarray


def forward_batch(
    weights: DecoderWeights,
    inputs: np.ndarray,
    style: PromptEmbedding,
    spec: MaskSpec | None = None,
) -> BatchOutput:
    """
    Cache-free evaluation of every position at once.

    Serves as the prefill path and as the full-recompute reference for the
    incremental decoder.
    """
    spec = spec or MaskSpec.full_causal()
    h = as_matrix(inputs, "inputs")
    length = h.shape[0]
    if style.dim != weights.dim:
        raise ValueError(f"style dimension {style.dim} does not match model width {weights.dim}")
    allowed = mask_matrix(length, spec)
    scale = math.sqrt(weights.dim)
    keys: list[Matrix] = []
    values: list[Matrix] = []
    cross_rows: list[np.ndarray] = []
    for layer in weights.layers:
        q = matmul(h, layer.wq)
        k = matmul(h, layer.wk)
        v = matmul(h, layer.wv)
        keys.append(k)
        values.append(v)
        attn = masked_softmax(matmul(q, k.T).astype(np.float64) / scale, allowed)
        h = _residual(h, matmul(matmul(attn, v), layer.wo))
        context, cross = _cross_attend(layer, h, style.vectors)
        cross_rows.append(cross)
        h = _residual(h, context)
        h = _residual(h, _feed_forward(layer, h))
    logits = matmul(h, weights.output_head)
    return BatchOutput(
        logits=logits,
        keys=tuple(keys),
        values=tuple(values),
        cross_weights=np.stack(cross_rows, axis=1),
    )


def prefill(
    weights: DecoderWeights,
    text_ids: Sequence[int],
    style: PromptEmbedding,
    spec: MaskSpec | None = None,
) -> DecoderState:
    """Run the text prompt through the decoder and cache K/V for every text position."""
    if len(text_ids) == 0:
        raise ValueError("text prompt must not be empty")
    _check_text(weights, text_ids)
    if len(text_ids) >= weights.max_len:
        raise ValueError(f"text prompt of {len(text_ids)} tokens leaves no room within max_len={weights.max_len}")
    h = sequence_inputs(weights, text_ids)[: len(text_ids)]
    out = forward_batch(weights, h, style, spec)
    cache = KVCache.from_rows(list(zip(out.keys, out.values)))
    return DecoderState(weights, cache, style, n_text=len(text_ids))


def step(state: DecoderState, spec: MaskSpec) -> tuple[Vector, TraceEntry]:
    """
    Process the pending input at the next position and return logits for the next token.

    The returned trace entry has no token yet; ``emit`` records the chosen one.
    """
    weights = state.weights
    i = state.position + 1
    if i > weights.max_len:
        raise ValueError(f"position {i} would exceed max_len={weights.max_len}")
    row = weights.start_embedding if state.next_token is None else _audio_row(weights, state.next_token)
    h = (row.astype(np.float64) + weights.positional[i - 1].astype(np.float64)).astype(DTYPE)

    cross_rows = []
    allowed_count = 0
    try:
        for index, layer in enumerate(weights.layers):
            q = matmul(h, layer.wq)
            state.cache.append(index, matmul(h, layer.wk), matmul(h, layer.wv))
            context, _, allowed = attend_with_weights(q, state.cache, index, i, spec)
            allowed_count = int(allowed.sum())
            h = _residual(h, matmul(context, layer.wo))
            cross_context, cross = _cross_attend(layer, h[None, :], state.style.vectors)
            cross_rows.append(cross[0])
            h = _residual(h, cross_context[0])
            h = _residual(h, _feed_forward(layer, h[None, :])[0])
        logits = matmul(h, weights.output_head)
    except Exception:
        # A failed step leaves the cache as it was before the step.
        state.cache.truncate(i - 1)
        raise
    entry = TraceEntry(
        token=None,
        cross_weights=np.stack(cross_rows),
        self_allowed=allowed_count,
        top_logit=float(logits.max()),
    )
    return logits, entry


def emit(state: DecoderState, token: int) -> None:
    """Record ``token`` as the input of the next step."""
    if not 0 <= token < state.weights.vocab:
        raise ValueError(f"token {token} outside vocabulary of {state.weights.vocab}")
    state.next_token = int(token)


def decode(
    state: DecoderState,
    steps: int,
    spec: MaskSpec,
    sampler: Sampler,
    logits_out: list[Vector] | None = None,
) -> tuple[list[int], GenerationTrace]:
    """Continue generation on an existing state for ``steps`` tokens."""
    tokens: list[int] = []
    trace = GenerationTrace()
    for _ in range(steps):
        logits, entry = step(state, spec)
        token = sampler.sample(logits)
        emit(state, token)
        tokens.append(token)
        trace.append(replace(entry, token=token))
        if logits_out is not None:
            logits_out.append(logits)
    return tokens, trace


def generate(
    weights: DecoderWeights,
    text_ids: Sequence[int],
    style: PromptEmbedding,
    steps: int,
    spec: MaskSpec,
    sampler: SamplerConfig = GREEDY,
) -> tuple[list[int], GenerationTrace]:
    """Prefill then decode ``steps`` tokens; a pure function of its arguments."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = prefill(weights, text_ids, style, spec)
    return decode(state, steps, spec, sampler.build())


def replace_style(state: DecoderState, new_style: PromptEmbedding) -> None:
    """Swap the cross-attention memory; caches are left untouched."""
    if not state.style.same_shape(new_style):
        raise ValueError(f"new style shape {new_style.vectors.shape} does not match {state.style.vectors.shape}")
    state.style = new_style


def _check_text(weights: DecoderWeights, text_ids: Sequence[int]) -> None:
    bad = [int(t) for t in text_ids if not 0 <= int(t) < weights.text_vocab]
    if bad:
        raise ValueError(f"text ids {bad} outside text vocabulary of {weights.text_vocab}")


def _audio_row(weights: DecoderWeights, token: int) -> np.ndarray:
    if not 0 <= int(token) < weights.vocab:
        raise ValueError(f"token {token} outside vocabulary of {weights.vocab}")
    return weights.token_embedding[int(token)]


def _residual(h: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return (h.astype(np.float64) + delta.astype(np.float64)).astype(DTYPE)


def _cross_attend(layer: LayerWeights, h: np.ndarray, memory: np.ndarray) -> tuple[Matrix, np.ndarray]:
    q = matmul(h, layer.cq)
    k = matmul(memory, layer.ck)
    v = matmul(memory, layer.cv)
    weights = masked_softmax(matmul(q, k.T).astype(np.float64) / math.sqrt(layer.cq.shape[0]))
    return matmul(matmul(weights, v), layer.co), weights


def _feed_forward(layer: LayerWeights, h: np.ndarray) -> Matrix:
    return affine(relu(affine(h, layer.w1, layer.b1)), layer.w2, layer.b2)
