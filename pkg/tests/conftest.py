import pathlib

import pytest

from jere.data import build_vocab, load_dataset

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def news_fixture_path():
    """One sentence carrying two relations over the same entity pair."""
    return FIXTURES / "capital_contains.jsonl"


@pytest.fixture(scope="session")
def news_instance(news_fixture_path):
    instances, report = load_dataset(news_fixture_path)
    assert not report.errors
    return instances[0]


@pytest.fixture(scope="session")
def news_vocab(news_instance):
    return build_vocab([news_instance])
