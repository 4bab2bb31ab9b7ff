from __future__ import annotations

import pytest

from skillblend.core import DEFAULT_ROSTER, EngineConfig

import helpers


@pytest.fixture
def roster():
    return DEFAULT_ROSTER


@pytest.fixture
def cfg():
    return EngineConfig()


@pytest.fixture(scope="session")
def corpus_files(tmp_path_factory):
    """The three synthetic single-skill dataset files, written once."""
    root = tmp_path_factory.mktemp("corpus")
    return helpers.write_corpus(root)
