"""Token samplers: greedy by default, seeded temperature sampling for completeness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import require_finite


@dataclass(frozen=True)
class SamplerConfig:
    """Temperature 0 means greedy. The seed is an unsigned 64-bit integer."""

    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0.0

    def build(self) -> Sampler:
        """Fresh sampler; every sampler built from one config draws the same stream."""
        return Sampler(self)


GREEDY = SamplerConfig()


class Sampler:
    def __init__(self, config: SamplerConfig) -> None:
        self.config = config
        self._rng = np.random.default_rng(config.seed)

    def sample(self, logits: np.ndarray) -> int:
        require_finite(logits, "logits")
        if self.config.greedy:
            return int(np.argmax(logits))
        scaled = logits.astype(np.float64) / self.config.temperature
        scaled -= scaled.max()
        probs = np.exp(scaled)
        probs /= probs.sum()
        return int(self._rng.choice(probs.shape[0], p=probs))
