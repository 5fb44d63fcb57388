from pathlib import Path

import pytest

from kvstyle import weights_file
from kvstyle.toymodel import ToyConfig, default_text_ids
from kvstyle.weights_file import ModelFile


@pytest.fixture(scope="session")
def toy_config() -> ToyConfig:
    return ToyConfig()


@pytest.fixture(scope="session")
def toy_model(toy_config: ToyConfig) -> ModelFile:
    return ModelFile.build(toy_config)


@pytest.fixture(scope="session")
def text_ids(toy_config: ToyConfig) -> list[int]:
    return default_text_ids(toy_config)


@pytest.fixture(scope="session")
def model_path(tmp_path_factory: pytest.TempPathFactory, toy_model: ModelFile) -> Path:
    path = tmp_path_factory.mktemp("model") / "toy.json"
    weights_file.save_file(path, toy_model)
    return path

