"""KV-cache storage, the initial-region + sliding-window mask, prefix swap and incremental attention.

Cache positions are 1-based: position ``j`` lives in row ``j - 1``.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numerics import DTYPE, Matrix, Vector, as_vector, masked_softmax, matmul


class MaskVariant(str, Enum):
    FULL_CAUSAL = "full_causal"
    SLIDING = "sliding"


@dataclass(frozen=True)
class MaskSpec:
    """Self-attention mask: plain causal, or initial ``n`` positions plus the last ``w``."""

    variant: MaskVariant = MaskVariant.FULL_CAUSAL
    n: int = 0
    w: int = 1

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError("mask initial region n must be >= 0")
        if self.w < 1:
            raise ValueError("mask window w must be >= 1")

    @classmethod
    def full_causal(cls) -> MaskSpec:
        return cls(MaskVariant.FULL_CAUSAL)

    @classmethod
    def sliding(cls, n: int, w: int) -> MaskSpec:
        return cls(MaskVariant.SLIDING, n=n, w=w)

    def describe(self) -> str:
        if self.variant is MaskVariant.FULL_CAUSAL:
            return "full_causal"
        return f"sliding(n={self.n}, w={self.w})"


def mask_allows(i: int, j: int, spec: MaskSpec) -> bool:
    """True when query position ``i`` may attend key position ``j``."""
    if j < 1 or j > i:
        return False
    if spec.variant is MaskVariant.FULL_CAUSAL:
        return True
    return j <= spec.n or i - spec.w <= j


def allowed_positions(i: int, spec: MaskSpec) -> np.ndarray:
    """Boolean vector over key positions 1..i."""
    if i < 1:
        raise ValueError(f"query position must be >= 1, got {i}")
    j = np.arange(1, i + 1)
    if spec.variant is MaskVariant.FULL_CAUSAL:
        return np.ones(i, dtype=bool)
    return (j <= spec.n) | (j >= i - spec.w)


def mask_matrix(length: int, spec: MaskSpec) -> np.ndarray:
    """(length x length) allowed matrix for batch evaluation; row i-1 answers query i."""
    i = np.arange(1, length + 1)[:, None]
    j = np.arange(1, length + 1)[None, :]
    allowed = j <= i
    if spec.variant is MaskVariant.SLIDING:
        allowed &= (j <= spec.n) | (j >= i - spec.w)
    return allowed


class KVCache:
    """
    Per-layer append-only key/value rows.

    Rows change only through ``append`` (at the end) and ``swap_prefix``.
    A cache has a single owner; it is not locked.
    """

    def __init__(self, num_layers: int, d_k: int, d_v: int, capacity: int = 64) -> None:
        if num_layers < 1:
            raise ValueError("cache needs at least one layer")
        self.num_layers = num_layers
        self.d_k = d_k
        self.d_v = d_v
        self._lengths = [0] * num_layers
        capacity = max(1, capacity)
        self._keys = [np.zeros((capacity, d_k), dtype=DTYPE) for _ in range(num_layers)]
        self._values = [np.zeros((capacity, d_v), dtype=DTYPE) for _ in range(num_layers)]

    @property
    def length(self) -> int:
        if len(set(self._lengths)) != 1:
            raise RuntimeError(f"layers are out of step: lengths {self._lengths}")
        return self._lengths[0]

    def layer_length(self, layer: int) -> int:
        self._check_layer(layer)
        return self._lengths[layer]

    def keys(self, layer: int) -> Matrix:
        """Read-only view of the cached key rows of ``layer``."""
        self._check_layer(layer)
        view = self._keys[layer][: self._lengths[layer]]
        view.flags.writeable = False
        return view

    def values(self, layer: int) -> Matrix:
        self._check_layer(layer)
        view = self._values[layer][: self._lengths[layer]]
        view.flags.writeable = False
        return view

    def append(self, layer: int, k_row: np.ndarray, v_row: np.ndarray) -> None:
        self._check_layer(layer)
        k_row = as_vector(k_row, "key row")
        v_row = as_vector(v_row, "value row")
        if k_row.shape != (self.d_k,) or v_row.shape != (self.d_v,):
            raise ValueError(
                f"row widths {k_row.shape[0]}/{v_row.shape[0]} do not match cache widths {self.d_k}/{self.d_v}"
            )
        size = self._lengths[layer]
        if size == self._keys[layer].shape[0]:
            self._keys[layer] = np.concatenate([self._keys[layer], np.zeros_like(self._keys[layer])])
            self._values[layer] = np.concatenate([self._values[layer], np.zeros_like(self._values[layer])])
        self._keys[layer][size] = k_row
        self._values[layer][size] = v_row
        self._lengths[layer] = size + 1

    def truncate(self, length: int) -> None:
        """Drop every row past ``length`` in every layer."""
        if length < 0:
            raise ValueError("length must be >= 0")
        self._lengths = [min(size, length) for size in self._lengths]

    def snapshot(self) -> list[tuple[Matrix, Matrix]]:
        """Independent copies of every layer's (K, V) rows."""
        return [(self.keys(layer).copy(), self.values(layer).copy()) for layer in range(self.num_layers)]

    def checksum(self, layer: int, start: int = 1) -> str:
        """Digest of rows ``start..length`` (1-based) of one layer."""
        keys = self.keys(layer)[start - 1 :]
        values = self.values(layer)[start - 1 :]
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(keys).tobytes())
        digest.update(np.ascontiguousarray(values).tobytes())
        return digest.hexdigest()

    @classmethod
    def from_rows(cls, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> KVCache:
        """Build a cache whose layers hold the given (K, V) row blocks."""
        if not layers:
            raise ValueError("cache needs at least one layer")
        first_k, first_v = layers[0]
        cache = cls(len(layers), first_k.shape[1], first_v.shape[1], capacity=max(1, first_k.shape[0]))
        for layer, (keys, values) in enumerate(layers):
            if keys.shape[0] != values.shape[0]:
                raise ValueError(f"layer {layer} has {keys.shape[0]} key rows but {values.shape[0]} value rows")
            for k_row, v_row in zip(keys, values):
                cache.append(layer, k_row, v_row)
        _ = cache.length
        return cache

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.num_layers:
            raise ValueError(f"layer {layer} outside cache with {self.num_layers} layers")

    def _overwrite_prefix(self, layer: int, keys: np.ndarray, values: np.ndarray) -> None:
        n = keys.shape[0]
        self._keys[layer][:n] = keys
        self._values[layer][:n] = values


def swap_prefix(dst: KVCache, src: KVCache, n: int) -> None:
    """Overwrite rows 1..n of every layer of ``dst`` with the same rows of ``src``."""
    if n < 0:
        raise ValueError("swap length must be >= 0")
    if dst.num_layers != src.num_layers or dst.d_k != src.d_k or dst.d_v != src.d_v:
        raise ValueError("caches differ in layer count or row widths")
    if n > dst.length or n > src.length:
        raise ValueError(f"swap of {n} rows exceeds cache lengths dst={dst.length} src={src.length}")
    if n == 0:
        return
    for layer in range(dst.num_layers):
        dst._overwrite_prefix(layer, src.keys(layer)[:n], src.values(layer)[:n])


def attend_with_weights(
    q: np.ndarray, cache: KVCache, layer: int, i: int, spec: MaskSpec
) -> tuple[Vector, Vector, np.ndarray]:
    """Context vector, attention weights over 1..i, and the allowed mask used."""
    length = cache.layer_length(layer)
    if length == 0:
        raise ValueError("cannot attend over an empty cache")
    if not 1 <= i <= length:
        raise ValueError(f"query position {i} outside cache of length {length}")
    keys = cache.keys(layer)[:i]
    values = cache.values(layer)[:i]
    allowed = allowed_positions(i, spec)
    scores = matmul(keys, np.asarray(q, dtype=DTYPE).reshape(-1, 1))[:, 0].astype(np.float64) / math.sqrt(cache.d_k)
    weights = masked_softmax(scores, allowed)
    context = matmul(weights, values)
    return context, weights, allowed


def attend(q: np.ndarray, cache: KVCache, layer: int, i: int, spec: MaskSpec) -> Vector:
    """Scaled dot-product attention of query position ``i`` over the cached rows 1..i."""
    context, _, _ = attend_with_weights(q, cache, layer, i, spec)
    return context
