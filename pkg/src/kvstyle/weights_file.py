"""Versioned JSON model file: toy config, dimension header and named float32 tensors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .decoder import LAYER_TENSORS, DecoderWeights, LayerWeights
from .embedding import EncoderWeights
from .numerics import DTYPE
from .toymodel import ToyConfig, build_toy_encoder, build_toy_model

FORMAT_VERSION = "1.0"

DECODER_TENSORS = ("token_embedding", "text_embedding", "start_embedding", "positional", "output_head")
ENCODER_TENSORS = ("token_embedding", "wq", "wk", "wv", "wo")
HEADER_KEYS = ("layers", "dim", "vocab", "max_len", "style_len")


@dataclass(frozen=True)
class ModelFile:
    config: ToyConfig
    decoder: DecoderWeights
    encoder: EncoderWeights

    @classmethod
    def build(cls, config: ToyConfig) -> ModelFile:
        return cls(config=config, decoder=build_toy_model(config), encoder=build_toy_encoder(config))

    def header(self) -> dict[str, int]:
        return {
            "layers": self.decoder.num_layers,
            "dim": self.decoder.dim,
            "vocab": self.decoder.vocab,
            "max_len": self.decoder.max_len,
            "style_len": self.config.style_len,
        }


def _tensor(array: np.ndarray) -> dict[str, Any]:
    return {"shape": list(array.shape), "data": array.astype(np.float64).ravel().tolist()}


def tensors_of(model: ModelFile) -> dict[str, np.ndarray]:
    named: dict[str, np.ndarray] = {}
    for name in DECODER_TENSORS:
        named[f"decoder.{name}"] = getattr(model.decoder, name)
    for index, layer in enumerate(model.decoder.layers):
        for name in LAYER_TENSORS:
            named[f"decoder.layers.{index}.{name}"] = getattr(layer, name)
    for name in ENCODER_TENSORS:
        named[f"encoder.{name}"] = getattr(model.encoder, name)
    return named


def to_json(model: ModelFile) -> str:
    """Serialize to deterministic JSON; float32 values survive the round trip exactly."""
    payload = {
        "format_version": FORMAT_VERSION,
        "header": model.header(),
        "toy_config": model.config.to_dict(),
        "tensors": {name: _tensor(array) for name, array in tensors_of(model).items()},
    }
    return json.dumps(payload, sort_keys=True)


def from_json(payload: str) -> ModelFile:
    data = json.loads(payload)
    validate_weights_dict(data)
    config = ToyConfig.from_dict(data["toy_config"])
    arrays = {name: _array(name, entry) for name, entry in data["tensors"].items()}
    header = data["header"]
    layers = tuple(
        LayerWeights(**{name: arrays[f"decoder.layers.{i}.{name}"] for name in LAYER_TENSORS})
        for i in range(header["layers"])
    )
    decoder = DecoderWeights(layers=layers, **{name: arrays[f"decoder.{name}"] for name in DECODER_TENSORS})
    encoder = EncoderWeights(**{name: arrays[f"encoder.{name}"] for name in ENCODER_TENSORS})
    model = ModelFile(config=config, decoder=decoder, encoder=encoder)
    if model.header() != header:
        raise ValueError(f"header {header} does not match tensors {model.header()}")
    return model


def load_file(path: str | Path) -> ModelFile:
    return from_json(Path(path).read_text(encoding="utf-8"))


def save_file(path: str | Path, model: ModelFile) -> None:
    Path(path).write_text(to_json(model), encoding="utf-8")


def validate_weights_dict(data: Any) -> None:
    if not isinstance(data, dict):
        raise ValueError("model file must be a JSON object")
    required_keys = {"format_version", "header", "toy_config", "tensors"}
    missing = sorted(required_keys.difference(data.keys()))
    if missing:
        raise ValueError(f"Missing model file keys: {missing}")
    if data["format_version"] != FORMAT_VERSION:
        raise ValueError(f"Unsupported format_version={data['format_version']!r}; expected {FORMAT_VERSION!r}")
    header = data["header"]
    if not isinstance(header, dict):
        raise ValueError("header must be an object")
    for key in HEADER_KEYS:
        if not isinstance(header.get(key), int) or header[key] < 1:
            raise ValueError(f"header.{key} must be a positive integer")
    if not isinstance(data["toy_config"], dict):
        raise ValueError("toy_config must be an object")
    tensors = data["tensors"]
    if not isinstance(tensors, dict):
        raise ValueError("tensors must be an object")
    expected = {f"decoder.{name}" for name in DECODER_TENSORS} | {f"encoder.{name}" for name in ENCODER_TENSORS}
    expected |= {f"decoder.layers.{i}.{name}" for i in range(header["layers"]) for name in LAYER_TENSORS}
    missing = sorted(expected.difference(tensors))
    if missing:
        raise ValueError(f"Missing tensors: {missing}")
    extra = sorted(set(tensors).difference(expected))
    if extra:
        raise ValueError(f"Unexpected tensors: {extra}")
    for name, entry in tensors.items():
        if not isinstance(entry, dict) or not isinstance(entry.get("shape"), list) or not isinstance(entry.get("data"), list):
            raise ValueError(f"tensor {name} must be an object with shape and data arrays")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if count != len(entry["data"]):
            raise ValueError(f"tensor {name} declares shape {entry['shape']} but holds {len(entry['data'])} values")


def _array(name: str, entry: dict[str, Any]) -> np.ndarray:
    try:
        array = np.array(entry["data"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"tensor {name} holds non-numeric data") from exc
    return array.astype(DTYPE).reshape(entry["shape"])
