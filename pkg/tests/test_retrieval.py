"""Tests for first-stage ranking, re-ranking and index persistence."""

import numpy as np
import pytest
from pydantic import ValidationError

import bisift.retrieval as retrieval
from bisift.descriptor import DESCRIPTOR_DIM, DescriptorSet
from bisift.distance import DistanceKind
from bisift.errors import FormatError, InvalidInputError, SchemeError, VocabularyMismatchError
from bisift.matching import match_images
from bisift.retrieval import (
    Index,
    RankEntry,
    RankList,
    Representation,
    RetrievalConfig,
    Stage,
    build_manifest,
    first_stage_rank,
    full_search_rank,
    load_index,
    query,
    read_rank_lists,
    rerank_top_x,
    write_rank_lists,
)
from bisift.storage import load_descriptors, save_descriptors, save_vocabulary, write_manifest
from bisift.synthbench import CorpusConfig, gen_planted_corpus
from bisift.vocabulary import BovwHistogram, Vocabulary, build_histogram, train_kmeans
from tests.helpers import random_uint8


def histogram_index(histograms: np.ndarray) -> Index:
    """Index over given histograms with empty keypoint sets."""
    k = histograms.shape[1]
    ids = tuple(f"img-{i:03d}" for i in range(histograms.shape[0]))
    return Index(
        image_ids=ids,
        histograms=histograms,
        fingerprints=tuple(DescriptorSet(i, np.zeros((0, DESCRIPTOR_DIM), dtype=np.uint8)) for i in ids),
        vocabulary=Vocabulary(np.zeros((k, DESCRIPTOR_DIM))),
        representation=Representation.SIFT,
    )


class TestFirstStage:
    """Test cases for first_stage_rank."""

    def test_identical_histogram_ranks_first(self, small_corpus, small_vocabulary):
        """Test that an indexed image's own histogram puts it first at distance 0."""
        index = Index.build(small_corpus.database, small_vocabulary)
        target = small_corpus.database[12]

        ranked = first_stage_rank(build_histogram(target, small_vocabulary), index)

        assert ranked.entries[0].image_id == target.image_id
        assert ranked.entries[0].score == 0.0
        assert all(e.stage is Stage.FIRST for e in ranked.entries)
        assert len(ranked) == len(index)

    def test_single_image_index(self):
        """Test that a one-image index gives a one-entry list."""
        index = histogram_index(np.array([[1.0, 0.0, 0.0]]))

        ranked = first_stage_rank(BovwHistogram("q", np.array([0.0, 1.0, 0.0]), 1), index)

        assert ranked.image_ids == ["img-000"]

    def test_matches_sorted_oracle(self):
        """Test the ordering against an independent sort of all distances."""
        rng = np.random.default_rng(91)
        weights = rng.random((50, 20))
        weights /= np.linalg.norm(weights, axis=1, keepdims=True)
        index = histogram_index(weights)
        q = rng.random(20)
        q /= np.linalg.norm(q)

        ranked = first_stage_rank(BovwHistogram("q", q, 10), index)

        expected = sorted(
            (float(np.linalg.norm(weights[i] - q)), f"img-{i:03d}") for i in range(50)
        )
        assert ranked.image_ids == [image_id for _, image_id in expected]
        np.testing.assert_allclose([e.score for e in ranked.entries], [d for d, _ in expected])

    def test_ties_broken_by_image_id(self):
        """Test that equal distances are ordered by id."""
        index = histogram_index(np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))

        ranked = first_stage_rank(BovwHistogram("q", np.array([1.0, 1.0]) / np.sqrt(2), 2), index)

        assert ranked.image_ids == ["img-000", "img-001", "img-002"]

    def test_vocabulary_mismatch(self):
        """Test that a histogram of a different vocabulary size is refused."""
        index = histogram_index(np.eye(4))

        with pytest.raises(VocabularyMismatchError):
            first_stage_rank(BovwHistogram("q", np.ones(5) / np.sqrt(5), 5), index)


class TestRerank:
    """Test cases for rerank_top_x."""

    @pytest.fixture
    def index(self, small_corpus, small_vocabulary):
        return Index.build(small_corpus.database, small_vocabulary, Representation.BISIFT)

    def first(self, small_corpus, small_vocabulary, index, q=0):
        raw = small_corpus.queries[q]
        return raw, first_stage_rank(build_histogram(raw, small_vocabulary), index)

    def test_is_permutation_with_stable_tail(self, small_corpus, small_vocabulary, index):
        """Test that re-ranking permutes the head and keeps the tail order."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        final = rerank_top_x(first, index.representation.represent(raw), index, top_x=10)

        assert sorted(final.image_ids) == sorted(first.image_ids)
        assert sorted(final.image_ids[:10]) == sorted(first.image_ids[:10])
        assert final.entries[10:] == first.entries[10:]
        assert all(e.stage is Stage.RERANKED for e in final.entries[:10])
        assert all(e.stage is Stage.FIRST for e in final.entries[10:])

    def test_head_sorted_by_similarity(self, small_corpus, small_vocabulary, index):
        """Test that the re-ranked block is ordered by count, then total distance."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        final = rerank_top_x(first, index.representation.represent(raw), index, top_x=15)

        keys = [(-e.similarity.match_count, e.similarity.total_dist) for e in final.entries[:15]]
        assert keys == sorted(keys)
        assert [e.score for e in final.entries[:15]] == [float(e.similarity.match_count) for e in final.entries[:15]]

    def test_top_one_only_retags(self, small_corpus, small_vocabulary, index):
        """Test that X = 1 keeps the order and retags the first entry."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        final = rerank_top_x(first, index.representation.represent(raw), index, top_x=1)

        assert final.image_ids == first.image_ids
        assert final.entries[0].stage is Stage.RERANKED
        assert final.entries[1].stage is Stage.FIRST

    def test_x_larger_than_list(self, small_corpus, small_vocabulary, index):
        """Test that an oversized X re-ranks the whole list."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        final = rerank_top_x(first, index.representation.represent(raw), index, top_x=10_000)

        assert len(final) == len(first)
        assert all(e.stage is Stage.RERANKED for e in final.entries)

    def test_exact_duplicate_promoted(self, small_corpus, small_vocabulary):
        """Test that an exact copy of the query moves to rank 1."""
        raw = small_corpus.queries[1]
        duplicate = DescriptorSet("duplicate", raw.values)
        index = Index.build(small_corpus.database + [duplicate], small_vocabulary)
        first = first_stage_rank(build_histogram(raw, small_vocabulary), index)
        ids = [i for i in first.image_ids if i != "duplicate"]
        demoted = RankList(
            raw.image_id,
            tuple(RankEntry(i, 0.0, Stage.FIRST) for i in ids[:3] + ["duplicate"] + ids[3:]),
        )

        final = rerank_top_x(demoted, index.representation.represent(raw), index, top_x=30)

        assert final.image_ids[0] == "duplicate"

    def test_matcher_called_once_per_candidate(self, mocker, small_corpus, small_vocabulary, index):
        """Test that only the top X candidates are matched."""
        raw, first = self.first(small_corpus, small_vocabulary, index)
        spy = mocker.spy(retrieval, "match_images")

        rerank_top_x(first, index.representation.represent(raw), index, top_x=7)

        assert spy.call_count == 7

    def test_workers_do_not_change_result(self, small_corpus, small_vocabulary, index):
        """Test that threaded candidate matching gives the serial order."""
        raw, first = self.first(small_corpus, small_vocabulary, index, q=2)
        q_fp = index.representation.represent(raw)

        assert rerank_top_x(first, q_fp, index, workers=4) == rerank_top_x(first, q_fp, index)

    def test_wrong_query_representation(self, small_corpus, small_vocabulary, index):
        """Test that raw query descriptors cannot re-rank a BiSIFT index."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        with pytest.raises(SchemeError):
            rerank_top_x(first, raw, index)

    def test_invalid_top_x(self, small_corpus, small_vocabulary, index):
        """Test that X must be at least 1."""
        raw, first = self.first(small_corpus, small_vocabulary, index)

        with pytest.raises(InvalidInputError):
            rerank_top_x(first, index.representation.represent(raw), index, top_x=0)


class TestQuery:
    """Test cases for query and full_search_rank."""

    def test_indexed_image_ranks_first(self, small_corpus, small_vocabulary):
        """Test that querying with an indexed image returns it first."""
        index = Index.build(small_corpus.database, small_vocabulary)
        target = small_corpus.database[20]

        ranked = query(target, index)

        assert ranked.image_ids[0] == target.image_id
        assert ranked.elapsed is not None and ranked.elapsed >= 0

    def test_empty_query_keeps_first_stage_order(self, small_corpus, small_vocabulary):
        """Test that a keypoint-free query leaves the re-ranked block in first-stage order."""
        index = Index.build(small_corpus.database, small_vocabulary)
        empty = DescriptorSet("empty", np.zeros((0, DESCRIPTOR_DIM), dtype=np.uint8))

        first = first_stage_rank(build_histogram(empty, small_vocabulary), index)
        ranked = query(empty, index, RetrievalConfig(top_x=30))

        assert ranked.image_ids == first.image_ids
        assert all(e.score == 0.0 for e in ranked.entries[:30])

    def test_planted_copies_found(self):
        """Test that three transformed copies land in the top five of a 20-image corpus."""
        corpus = gen_planted_corpus(
            CorpusConfig(base_images=17, queries=1, copies_per_query=3, keypoints=60, seed=3)
        )
        vocabulary = train_kmeans(corpus.database, k=24, max_iters=15, seed=3)
        copies = corpus.ground_truth.relevant("query-000")

        for representation in Representation:
            index = Index.build(corpus.database, vocabulary, representation)
            ranked = query(corpus.queries[0], index, RetrievalConfig(representation=representation))
            assert copies <= set(ranked.image_ids[:5])

            exhaustive = full_search_rank(representation.represent(corpus.queries[0]), index)
            assert copies <= set(exhaustive.image_ids[:5])
            assert all(e.stage is Stage.FULL for e in exhaustive.entries)

    def test_deterministic(self, small_corpus, small_vocabulary):
        """Test that identical inputs give identical rank lists."""
        index = Index.build(small_corpus.database, small_vocabulary, Representation.PERCELL)

        a = query(small_corpus.queries[0], index, RetrievalConfig(representation="percell"))
        b = query(small_corpus.queries[0], index, RetrievalConfig(representation="percell"))

        assert a == b

    def test_config_representation_must_match_index(self, small_corpus, small_vocabulary):
        """Test that a SIFT configuration cannot query a BiSIFT index."""
        index = Index.build(small_corpus.database, small_vocabulary)

        with pytest.raises(SchemeError):
            query(small_corpus.queries[0], index, RetrievalConfig(representation="sift"))

    def test_config_validation(self):
        """Test that kinds must fit the representation and X must be positive."""
        assert RetrievalConfig().kind is DistanceKind.HAMMING_LOOKUP
        assert RetrievalConfig(representation="sift").kind is DistanceKind.FLOAT_L2
        with pytest.raises(ValidationError):
            RetrievalConfig(representation="sift", kind="hamming-naive")
        with pytest.raises(ValidationError):
            RetrievalConfig(kind="int-l2")
        with pytest.raises(ValidationError):
            RetrievalConfig(top_x=0)

    def test_duplicate_ids_refused(self):
        """Test that an index cannot hold two images with one id."""
        ds = DescriptorSet("same", random_uint8((2, DESCRIPTOR_DIM)))

        with pytest.raises(InvalidInputError):
            Index.build([ds, ds], Vocabulary(np.zeros((2, DESCRIPTOR_DIM))))


class TestPersistence:
    """Test cases for manifests and rank-list files."""

    def test_index_round_trip(self, tmp_path, small_corpus, small_vocabulary):
        """Test that a loaded index equals the in-memory build."""
        db_path, vocab_path = tmp_path / "db.bsft", tmp_path / "vocab.bvoc"
        save_descriptors(db_path, small_corpus.database)
        save_vocabulary(vocab_path, small_vocabulary)
        write_manifest(tmp_path / "index.tsv", build_manifest([db_path], vocab_path, "percell"))

        loaded = load_index(tmp_path / "index.tsv")
        built = Index.build(small_corpus.database, small_vocabulary, Representation.PERCELL)

        assert loaded.image_ids == built.image_ids
        assert loaded.representation is Representation.PERCELL
        assert np.array_equal(loaded.histograms, built.histograms)
        for a, b in zip(loaded.fingerprints, built.fingerprints):
            assert np.array_equal(a.values, b.values)
            assert a.scheme is b.scheme

    def test_relative_paths_resolved_from_manifest(self, tmp_path, small_corpus, small_vocabulary):
        """Test that relative manifest paths are read next to the manifest."""
        save_descriptors(tmp_path / "db.bsft", small_corpus.database[:5])
        save_vocabulary(tmp_path / "vocab.bvoc", small_vocabulary)
        manifest = build_manifest([tmp_path / "db.bsft"], "vocab.bvoc")
        manifest.entries = [e._replace(descriptor_file="db.bsft") for e in manifest.entries]
        write_manifest(tmp_path / "index.tsv", manifest)

        assert len(load_index(tmp_path / "index.tsv")) == 5

    def test_stale_offset(self, tmp_path, small_corpus, small_vocabulary):
        """Test that an entry pointing at no record is a format error."""
        save_descriptors(tmp_path / "db.bsft", small_corpus.database[:2])
        save_vocabulary(tmp_path / "vocab.bvoc", small_vocabulary)
        (tmp_path / "index.tsv").write_text(
            f"# vocabulary\tvocab.bvoc\nbase-00000\t{tmp_path / 'db.bsft'}\t13\n"
        )

        with pytest.raises(FormatError):
            load_index(tmp_path / "index.tsv")

    def test_rank_list_round_trip(self, tmp_path, small_corpus, small_vocabulary):
        """Test that rank-list TSV files survive save, load and save."""
        index = Index.build(small_corpus.database, small_vocabulary)
        lists = [query(raw, index, RetrievalConfig(top_x=5)) for raw in small_corpus.queries]
        first, second = tmp_path / "a.tsv", tmp_path / "b.tsv"

        write_rank_lists(first, lists)
        loaded = read_rank_lists(first)
        write_rank_lists(second, loaded)

        assert first.read_bytes() == second.read_bytes()
        assert [r.query_id for r in loaded] == [r.query_id for r in lists]
        assert loaded[0].image_ids == lists[0].image_ids
        row = first.read_text().splitlines()[0].split("\t")
        assert row[0] == "query-000" and row[1] == "1" and row[4] == "reranked"

    def test_malformed_rank_list(self, tmp_path):
        """Test that bad rows are format errors."""
        path = tmp_path / "r.tsv"
        path.write_text("q\t1\ta\tnot-a-number\tfirst\n")
        with pytest.raises(FormatError):
            read_rank_lists(path)

        path.write_text("q\t2\ta\t1.0\tfirst\n")
        with pytest.raises(FormatError):
            read_rank_lists(path)


class TestPublicDocstrings:
    """Test that the main entry points document their arguments and results."""

    @pytest.mark.parametrize("function", [match_images, train_kmeans, rerank_top_x, load_descriptors])
    def test_args_and_returns_sections(self, function):
        """Test for Google-style Args and Returns sections."""
        doc = function.__doc__

        assert "\n    Args:\n" in doc
        assert "\n    Returns:\n" in doc
