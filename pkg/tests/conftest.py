import json
from pathlib import Path

import pytest

from cgforge import dataset_io
from cgforge.schema import load_schema_catalog

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def catalog():
    return load_schema_catalog(FIXTURES / "tables.json")


@pytest.fixture(scope="session")
def airline(catalog):
    return catalog["airline_mini"]


@pytest.fixture(scope="session")
def tennis(catalog):
    return catalog["tennis_mini"]


@pytest.fixture(scope="session")
def shop(catalog):
    return catalog["shop_mini"]


@pytest.fixture(scope="session")
def dialogues(catalog):
    loaded, rejects, skipped = dataset_io.load_dialogues(FIXTURES / "dialogues_50.json", catalog)
    assert not rejects and skipped == 0
    return loaded


@pytest.fixture(scope="session")
def dependence_labels():
    with open(FIXTURES / "dependence_labels.json", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def eval_gold(catalog):
    loaded, rejects, skipped = dataset_io.load_dialogues(FIXTURES / "eval_gold.json", catalog)
    assert not rejects and skipped == 0
    return loaded


@pytest.fixture(scope="session")
def eval_predictions():
    return dataset_io.read_predictions_jsonl(FIXTURES / "eval_predictions.jsonl")


@pytest.fixture(scope="session")
def eval_expected():
    with open(FIXTURES / "eval_expected.json", encoding="utf-8") as f:
        return json.load(f)
