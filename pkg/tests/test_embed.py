import numpy as np
import pytest

from helpers import make_record
from vulnaug.corpus import Corpus
from vulnaug.embed import (
    EmbeddingModel,
    TrainConfig,
    kmeans,
    sentence_vector,
    tokenize,
    train_embeddings,
)
from vulnaug.errors import InsufficientVocabulary


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []

    def test_plain_words(self):
        assert tokenize("Buffer overflow in ToolTalk RPC") == [
            "buffer", "overflow", "in", "tooltalk", "rpc",
        ]

    def test_identifier_preserved(self):
        assert tokenize("CVE-2002-0679") == ["cve-2002-0679"]
        assert tokenize("see CWE-119 for details") == ["see", "cwe-119", "for", "details"]

    def test_punctuation_split(self):
        assert tokenize("heap-based; overflow (v2)") == ["heap", "based", "overflow", "v2"]


def cooccurrence_corpus():
    records = []
    i = 0
    for _ in range(40):
        records.append(make_record(f"CVE-2020-{1000 + i}", "alpha beta shared filler")); i += 1
        records.append(make_record(f"CVE-2020-{1000 + i}", "beta alpha shared other")); i += 1
        records.append(make_record(f"CVE-2020-{1000 + i}", "gamma delta separate words")); i += 1
    return Corpus.from_records(records)


class TestTraining:
    def test_seed_reproducibility_is_bitwise(self):
        corpus = cooccurrence_corpus()
        a = train_embeddings(corpus, TrainConfig(seed=7))
        b = train_embeddings(corpus, TrainConfig(seed=7))
        assert np.array_equal(a.vectors, b.vectors)
        assert a.vocab == b.vocab

    def test_cooccurring_tokens_are_closer(self):
        model = train_embeddings(cooccurrence_corpus(), TrainConfig(seed=7))

        def cos(x, y):
            vx, vy = model.vector(x), model.vector(y)
            return float(np.dot(vx, vy) / (np.linalg.norm(vx) * np.linalg.norm(vy)))

        assert cos("alpha", "beta") > cos("alpha", "gamma")

    def test_vector_shape(self):
        model = train_embeddings(cooccurrence_corpus(), TrainConfig(seed=7), dim=64)
        assert model.dim == 64
        assert model.vectors.shape == (len(model.vocab), 64)
        assert all(model.vector(t).shape == (64,) for t in ("alpha", "never-seen"))

    def test_insufficient_vocabulary(self):
        corpus = Corpus.from_records([make_record("CVE-2020-9000", "word word word")])
        with pytest.raises(InsufficientVocabulary):
            train_embeddings(corpus)


@pytest.fixture(scope="module")
def model():
    return train_embeddings(cooccurrence_corpus(), TrainConfig(seed=7))


class TestSentenceVector:
    def test_empty_text_is_zero(self, model):
        assert np.array_equal(sentence_vector(model, ""), np.zeros(model.dim))

    def test_single_token_is_its_vector(self, model):
        assert np.array_equal(sentence_vector(model, "alpha"), model.vector("alpha"))

    def test_oov_contributes_zero(self, model):
        assert np.array_equal(
            sentence_vector(model, "alpha zzqx"), sentence_vector(model, "alpha")
        )

    def test_concatenation_additivity(self, model):
        a, b = "alpha beta gamma", "delta shared"
        np.testing.assert_allclose(
            sentence_vector(model, a + " " + b),
            sentence_vector(model, a) + sentence_vector(model, b),
            atol=1e-9,
        )

    def test_bag_of_words_permutation_invariance(self, model):
        np.testing.assert_allclose(
            sentence_vector(model, "alpha beta gamma"),
            sentence_vector(model, "gamma alpha beta"),
            atol=1e-9,
        )


class TestPersistence:
    def test_binary_round_trip(self, tmp_path):
        model = train_embeddings(cooccurrence_corpus(), TrainConfig(seed=3), dim=16)
        path = tmp_path / "embed.bin"
        model.save(path)
        loaded = EmbeddingModel.load(path)
        assert loaded.dim == model.dim
        assert loaded.vocab == model.vocab
        assert np.array_equal(loaded.vectors, model.vectors)
        assert loaded.train_config == model.train_config
        loaded.save(tmp_path / "again.bin")
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_text_export(self, tmp_path):
        model = train_embeddings(cooccurrence_corpus(), TrainConfig(seed=3), dim=8)
        path = tmp_path / "embed.txt"
        model.export_text(path)
        lines = path.read_text().splitlines()
        assert lines[0] == f"{len(model.vocab)} 8"
        assert len(lines) == len(model.vocab) + 1

    def test_reject_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError):
            EmbeddingModel.load(path)


class TestKmeans:
    def test_k1_centroid_is_mean(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        result = kmeans(pts, 1, seed=0)
        np.testing.assert_allclose(result.centroids[0], [1.0, 1.0])
        assert set(result.assignments.tolist()) == {0}

    def test_four_point_two_cluster_oracle(self):
        # optimal 2-partition found by exhaustive enumeration: split on y
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        result = kmeans(pts, 2, seed=0)
        a = result.assignments
        assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
        assert result.objective_history[-1] == pytest.approx(1.0)

    def test_k_equals_n_singletons(self):
        pts = np.array([[0.0], [1.0], [2.0]])
        result = kmeans(pts, 3, seed=0)
        assert sorted(result.assignments.tolist()) == [0, 1, 2]
        assert result.medoids == [0, 1, 2]

    def test_k_above_n_warns_and_leaves_empties(self):
        pts = np.array([[0.0], [1.0]])
        with pytest.warns(UserWarning):
            result = kmeans(pts, 5, seed=0)
        assert result.medoids[:2] == [0, 1]
        assert result.medoids[2:] == [None, None, None]

    def test_objective_never_increases(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            n = int(rng.integers(10, 80))
            dim = int(rng.integers(2, 6))
            k = int(rng.integers(2, 8))
            pts = rng.normal(size=(n, dim))
            result = kmeans(pts, min(k, n - 1) or 1, seed=trial)
            history = result.objective_history
            assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_medoid_is_member_closest_to_centroid(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(40, 3))
        result = kmeans(pts, 4, seed=1)
        for c in result.non_empty_clusters():
            members = np.flatnonzero(result.assignments == c)
            dists = np.linalg.norm(pts[members] - result.centroids[c], axis=1)
            assert result.medoids[c] == members[int(np.argmin(dists))]
            assert result.assignments[result.medoids[c]] == c

    def test_deterministic_for_seed(self):
        pts = np.random.default_rng(0).normal(size=(50, 4))
        a = kmeans(pts, 5, seed=9)
        b = kmeans(pts, 5, seed=9)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centroids, b.centroids)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            kmeans(np.empty((0, 2)), 1)
        with pytest.raises(ValueError):
            kmeans(np.ones((3, 2)), 0)
