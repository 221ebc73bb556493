import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from models.config_model import ConfigModel
from models.dataset_data import AD_HOMINEM, NEGATIVE, DatasetInstance
from modules.corpus_processor import CorpusProcessor
from modules.logger_service import LoggerService
from modules.text_processor import TextProcessor

FIXTURE_FOLDER = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")
CORPUS_FIXTURE = os.path.join(FIXTURE_FOLDER, "cmv_fixture.jsonl")

ATTACK_WORDS = ["idiot", "stupid", "troll", "moron", "liar", "clown"]
ARGUMENT_WORDS = ["evidence", "study", "source", "data", "citation", "argument"]


def fixture_path(name):
    return os.path.join(FIXTURE_FOLDER, name)


def separable_instances(n=40, length=8, seed=0):
    """Two classes drawn from disjoint word lists, alternating labels"""
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(n):
        label = AD_HOMINEM if i % 2 == 0 else NEGATIVE
        words = ATTACK_WORDS if label == AD_HOMINEM else ARGUMENT_WORDS
        tokens = [str(word) for word in rng.choice(words, size=length)]
        instances.append(DatasetInstance(f"doc{i:02d}", label, tokens, [f"doc{i:02d}"]))
    return instances


@pytest.fixture
def config():
    settings = ConfigModel()
    settings.threads = 2
    return settings


@pytest.fixture
def logger_service():
    return LoggerService(name="adhominem.test")


@pytest.fixture
def corpus_processor(config, logger_service):
    return CorpusProcessor(config, logger_service)


@pytest.fixture
def text_processor(config, logger_service):
    return TextProcessor(config, logger_service)


@pytest.fixture
def fixture_trees(corpus_processor):
    trees, _ = corpus_processor.ingest_file(CORPUS_FIXTURE)
    return trees
