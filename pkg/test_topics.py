import numpy as np
import pytest

from modules.topic_model import (
    TopicModeler, align_topics, alignment_accuracy, fit_lda, infer_theta, load_lda, save_lda, top_words
)
from utils.error_handler import CheckpointError, EmptyCorpusError

VOCAB_A = [f"alpha{i}" for i in range(10)]
VOCAB_B = [f"beta{i}" for i in range(10)]


def two_topic_corpus(n_docs=20, length=20, seed=0):
    rng = np.random.default_rng(seed)
    docs, truth = [], []
    for d in range(n_docs):
        topic = d % 2
        words = VOCAB_A if topic == 0 else VOCAB_B
        docs.append([str(w) for w in rng.choice(words, size=length)])
        truth.append(np.full(length, topic))
    return docs, truth


@pytest.fixture(scope="module")
def two_topic_model():
    docs, truth = two_topic_corpus()
    return fit_lda(docs, k=2, alpha=0.5, beta=0.01, iterations=100, seed=13), truth


def test_recovers_disjoint_topics(two_topic_model):
    model, truth = two_topic_model
    accuracy = alignment_accuracy(np.concatenate(truth), np.concatenate(model.assignments), 2)
    assert accuracy >= 0.9


def test_phi_rows_are_distributions(two_topic_model):
    model, _ = two_topic_model
    assert model.phi.shape == (2, 20)
    assert np.all(model.phi > 0)
    assert np.allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)


def test_log_likelihood_trace(two_topic_model):
    model, _ = two_topic_model
    sweeps = [sweep for sweep, _ in model.log_likelihood_trace]
    assert sweeps == [0] + list(range(10, 101, 10))
    assert model.log_likelihood_trace[-1][1] > model.log_likelihood_trace[0][1]


def test_fold_in_favours_matching_topic(two_topic_model):
    model, _ = two_topic_model
    a_topic = align_topics(np.array([[1.0] * 10 + [0.0] * 10]), model.phi[:, model.word_ids(VOCAB_A + VOCAB_B)])[0]

    theta = infer_theta(model, VOCAB_A * 2, iterations=50, seed=4)

    assert theta.sum() == pytest.approx(1.0, abs=1e-9)
    assert theta[a_topic] >= 0.8


def test_fold_in_without_known_words_is_uniform(two_topic_model):
    model, _ = two_topic_model
    assert np.array_equal(infer_theta(model, []), [0.5, 0.5])
    assert np.array_equal(infer_theta(model, ["unseen", "<pad>"]), [0.5, 0.5])


def test_single_topic_is_smoothed_unigram():
    docs = [["a", "b", "a"], ["c", "a"]]
    model = fit_lda(docs, k=1, alpha=1.0, beta=0.5, iterations=5)
    counts = np.array([3.0, 1.0, 1.0])
    assert model.vocabulary == ["a", "b", "c"]
    assert np.allclose(model.phi[0], (counts + 0.5) / (5 + 3 * 0.5), atol=1e-12)


def test_fit_is_deterministic():
    docs, _ = two_topic_corpus(n_docs=6, length=8)
    first = fit_lda(docs, k=3, iterations=20, seed=9)
    second = fit_lda(docs, k=3, iterations=20, seed=9)
    assert np.array_equal(first.phi, second.phi)
    assert first.alpha == pytest.approx(50.0 / 3)


def test_fit_rejects_bad_input():
    with pytest.raises(EmptyCorpusError):
        fit_lda([], k=2)
    with pytest.raises(EmptyCorpusError):
        fit_lda([["<pad>", "<oov>"]], k=2)
    with pytest.raises(ValueError):
        fit_lda([["a"]], k=0)


def test_top_words_break_ties_by_word():
    model = fit_lda([["b", "a"]], k=1, iterations=1)
    assert [word for word, _ in top_words(model, 2)[0]] == ["a", "b"]


def test_align_topics_finds_permutation():
    reference = np.array([[0.9, 0.1, 0.0], [0.0, 0.1, 0.9]])
    estimate = np.array([[0.0, 0.2, 0.8], [0.8, 0.2, 0.0]])
    assert align_topics(reference, estimate) == [1, 0]


def test_save_and_load(tmp_path, two_topic_model):
    model, _ = two_topic_model
    path = str(tmp_path / "lda.bin")
    save_lda(model, path)
    loaded = load_lda(path)
    assert loaded.vocabulary == model.vocabulary
    assert (loaded.k, loaded.alpha, loaded.beta) == (model.k, model.alpha, model.beta)
    assert np.array_equal(loaded.phi, model.phi)


def test_load_rejects_foreign_and_truncated_files(tmp_path, two_topic_model):
    foreign = tmp_path / "foreign.bin"
    foreign.write_bytes(b"something else")
    with pytest.raises(CheckpointError):
        load_lda(str(foreign))

    path = tmp_path / "lda.bin"
    save_lda(two_topic_model[0], str(path))
    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CheckpointError):
        load_lda(str(truncated))


def test_modeler_excludes_ids_and_infers_in_parallel(config, logger_service):
    config.lda_k = 2
    config.lda_iterations = 20
    config.lda_alpha = 0.5
    docs, _ = two_topic_corpus(n_docs=8, length=10)
    by_id = {f"doc{i}": doc for i, doc in enumerate(docs)}
    by_id["held"] = ["only", "here"]
    modeler = TopicModeler(config, logger_service)

    model = modeler.fit(by_id, exclude_ids=["held"])
    assert "only" not in model.vocabulary

    config.threads = 1
    serial = modeler.infer_many(model, docs[:4])
    config.threads = 4
    parallel = modeler.infer_many(model, docs[:4])
    assert serial.shape == (4, 2)
    assert np.array_equal(serial, parallel)
    assert np.allclose(serial.sum(axis=1), 1.0, atol=1e-9)
