"""Shared fixtures: a small planted corpus and a vocabulary trained on it."""

import pytest

from bisift.synthbench import CorpusConfig, gen_planted_corpus
from bisift.vocabulary import train_kmeans


@pytest.fixture(scope="session")
def small_corpus():
    """30 base images, 3 queries with 3 planted copies each."""
    return gen_planted_corpus(
        CorpusConfig(base_images=30, queries=3, copies_per_query=3, keypoints=40, seed=7)
    )


@pytest.fixture(scope="session")
def small_vocabulary(small_corpus):
    return train_kmeans(small_corpus.database, k=32, max_iters=15, seed=7)
