"""Toy prompt encoder and direction-vector arithmetic over style prompt embeddings."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .numerics import DTYPE, Matrix, as_matrix, masked_softmax, matmul, require_finite

DEFAULT_ALPHAS: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)
DEFAULT_BETAS: tuple[float, ...] = (-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)


def alpha_grid() -> list[float]:
    return list(DEFAULT_ALPHAS)


def beta_grid() -> list[float]:
    return list(DEFAULT_BETAS)


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    """Encoder output for one style prompt plus the attribute token positions (0-based)."""

    vectors: Matrix
    attr_positions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        vectors = as_matrix(self.vectors, "prompt embedding")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        positions = frozenset(int(p) for p in self.attr_positions)
        bad = sorted(p for p in positions if not 0 <= p < vectors.shape[0])
        if bad:
            raise ValueError(f"attribute positions {bad} outside prompt of length {vectors.shape[0]}")
        object.__setattr__(self, "attr_positions", positions)

    @property
    def length(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def same_shape(self, other: PromptEmbedding) -> bool:
        return self.vectors.shape == other.vectors.shape


@dataclass(frozen=True, eq=False)
class DirectionVector:
    """Half-difference vectors d_i at the attribute positions, keyed by position."""

    positions: tuple[int, ...]
    vectors: Matrix

    def __post_init__(self) -> None:
        vectors = as_matrix(self.vectors, "direction")
        if vectors.shape[0] != len(self.positions):
            raise ValueError("direction needs exactly one vector per position")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def at(self, position: int) -> np.ndarray:
        return self.vectors[self.positions.index(position)]

    def norms(self) -> dict[int, float]:
        return {p: float(np.linalg.norm(v.astype(np.float64))) for p, v in zip(self.positions, self.vectors)}


@dataclass(frozen=True, eq=False)
class EncoderWeights:
    """Token table plus one single-head self-attention projection set."""

    token_embedding: Matrix
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix

    def __post_init__(self) -> None:
        for name in ("token_embedding", "wq", "wk", "wv", "wo"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        d = self.dim
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")

    @property
    def vocab(self) -> int:
        return int(self.token_embedding.shape[0])

    @property
    def dim(self) -> int:
        return int(self.token_embedding.shape[1])


def encode_prompt(token_ids: Sequence[int], attr_positions: Iterable[int], weights: EncoderWeights) -> PromptEmbedding:
    """Embedding lookup followed by one unmasked self-attention mixing pass."""
    ids = [int(t) for t in token_ids]
    if not ids:
        raise ValueError("prompt must contain at least one token")
    bad = [t for t in ids if not 0 <= t < weights.vocab]
    if bad:
        raise ValueError(f"token ids {bad} outside encoder vocabulary of {weights.vocab}")

    x = weights.token_embedding[ids]
    q = matmul(x, weights.wq)
    k = matmul(x, weights.wk)
    v = matmul(x, weights.wv)
    scores = matmul(q, k.T) / math.sqrt(weights.dim)
    mixed = matmul(masked_softmax(scores), v)
    return PromptEmbedding(matmul(mixed, weights.wo), frozenset(attr_positions))


def _check_aligned(src: PromptEmbedding, tgt: PromptEmbedding, positions: Iterable[int]) -> tuple[int, ...]:
    if not src.same_shape(tgt):
        raise ValueError(f"source {src.vectors.shape} and target {tgt.vectors.shape} embeddings differ in shape")
    ordered = tuple(sorted(int(p) for p in positions))
    bad = [p for p in ordered if not 0 <= p < src.length]
    if bad:
        raise ValueError(f"attribute positions {bad} outside prompt of length {src.length}")
    return ordered


def compute_direction(src: PromptEmbedding, tgt: PromptEmbedding, positions: Iterable[int]) -> DirectionVector:
    """d_i = (e_i(t) - e_i(s)) / 2 at every attribute position i."""
    ordered = _check_aligned(src, tgt, positions)
    index = list(ordered)
    diff = tgt.vectors[index].astype(np.float64) - src.vectors[index].astype(np.float64)
    return DirectionVector(ordered, (0.5 * diff).astype(DTYPE))


def interpolate(src: PromptEmbedding, direction: DirectionVector, alpha: float) -> PromptEmbedding:
    """Move attribute positions by alpha * d_i; every other row is copied bit for bit."""
    if direction.dim != src.dim:
        raise ValueError(f"direction dimension {direction.dim} does not match embedding dimension {src.dim}")
    outside = sorted(set(direction.positions) - src.attr_positions)
    if outside:
        raise ValueError(f"direction positions {outside} are not attribute positions of the source")
    require_finite(np.asarray(alpha), "alpha")
    vectors = src.vectors.copy()
    if alpha != 0.0:
        for position, d in zip(direction.positions, direction.vectors):
            shifted = src.vectors[position].astype(np.float64) + float(alpha) * d.astype(np.float64)
            vectors[position] = shifted.astype(DTYPE)
    return PromptEmbedding(vectors, src.attr_positions)


def interpolate_full(
    src: PromptEmbedding,
    tgt: PromptEmbedding,
    alpha: float,
    beta: float,
    positions: Iterable[int],
) -> PromptEmbedding:
    """
    Full-vector interpolation: attribute rows move by alpha, all other rows by beta.

    With ``beta == 0`` the result is exactly ``interpolate(src, d, alpha)``.
    """
    ordered = _check_aligned(src, tgt, positions)
    require_finite(np.asarray([alpha, beta]), "alpha and beta")
    attributes = set(ordered)
    direction = compute_direction(src, tgt, range(src.length))
    vectors = src.vectors.copy()
    for position, d in zip(direction.positions, direction.vectors):
        strength = float(alpha) if position in attributes else float(beta)
        if strength != 0.0:
            shifted = src.vectors[position].astype(np.float64) + strength * d.astype(np.float64)
            vectors[position] = shifted.astype(DTYPE)
    return PromptEmbedding(vectors, frozenset(ordered))


@dataclass(frozen=True)
class ClusterSummary:
    """Mean pairwise distances of attribute rows within and between labelled groups."""

    within: float
    between: float
    per_label: dict[float, float]

    @property
    def separation(self) -> float:
        if self.within == 0.0:
            return math.inf
        return self.between / self.within

    def as_dict(self) -> dict[str, object]:
        return {
            "within": self.within,
            "between": self.between,
            "separation": self.separation,
            "per_label": {str(label): value for label, value in self.per_label.items()},
        }


def attribute_rows(embedding: PromptEmbedding) -> np.ndarray:
    """Attribute-position rows of one prompt, flattened in position order."""
    if not embedding.attr_positions:
        raise ValueError("prompt has no attribute positions")
    return embedding.vectors[sorted(embedding.attr_positions)].astype(np.float64).ravel()


def attribute_clusters(groups: Mapping[float, Sequence[PromptEmbedding]]) -> ClusterSummary:
    """
    How tightly prompts sharing an attribute cluster in embedding space.

    ``groups`` maps an attribute label to prompts that differ only in context.
    ``within`` averages Euclidean distances between prompts of one label and
    ``between`` averages distances across labels.
    """
    if len(groups) < 2:
        raise ValueError("need at least two attribute labels")
    points: dict[float, np.ndarray] = {}
    for label, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"label {label} needs at least two prompts, got {len(members)}")
        points[label] = np.stack([attribute_rows(member) for member in members])
    widths = {block.shape[1] for block in points.values()}
    if len(widths) != 1:
        raise ValueError(f"attribute rows differ in width: {sorted(widths)}")

    per_label = {label: float(pdist(block).mean()) for label, block in points.items()}
    labels = list(points)
    across = [
        cdist(points[a], points[b]).ravel() for index, a in enumerate(labels) for b in labels[index + 1 :]
    ]
    return ClusterSummary(
        within=float(np.mean(list(per_label.values()))),
        between=float(np.concatenate(across).mean()),
        per_label=per_label,
    )
