import numpy as np
import pytest

from conftest import separable_instances
from models.config_model import ModelConfig, TrainConfig
from modules.model_manager import Checkpoint, ModelManager
from modules.model_trainer import ModelTrainer, cross_validate, encode_dataset, predict, score, train
from modules.neural_layers import attention_penalty, cross_entropy, mean_squared_error, softmax
from modules.neural_models import build_model, gradient_check, token_attention
from modules.text_processor import EmbeddingTable, build_vocab
from utils.error_handler import CheckpointError, ModelShapeError, UnsupportedModelError

BATCH = np.array([[3, 4, 5, 6], [7, 3, 0, 0]])
TINY = dict(embedding_dim=4, filter_widths=(2, 3), n_maps=3, conv_activation="tanh", lstm_hidden=3,
            attention_hidden=4, attention_rows=2, dropout=0.3, freeze_embeddings=False)


def tiny_embeddings(seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, size=(8, 4))


@pytest.mark.parametrize("kind, extra", [
    ("cnn", {}),
    ("bilstm", {}),
    ("ssae", {"attention_penalty": 0.5}),
    ("cnn-lda", {"topic_size": 3}),
    ("cnn", {"regression": True}),
    ("ssae", {"regression": True}),
])
def test_analytic_gradients_match_finite_differences(kind, extra):
    config = ModelConfig(kind, **TINY, **extra)
    model = build_model(config, tiny_embeddings(), seed=1)
    targets = np.array([0.7, -0.2]) if config.regression else np.array([1, 0])
    topics = None
    if config.topic_size:
        topics = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])

    errors = gradient_check(model, BATCH, targets, topics)

    assert set(errors) == set(model.trainable_parameters())
    assert "embedding.weight" in errors
    for name, error in errors.items():
        assert error < 1e-4, f"{kind} {name}: {error}"


def test_attention_penalty_gradient():
    rng = np.random.default_rng(3)
    A = softmax(rng.normal(size=(2, 3, 5)), axis=2)
    _, grad = attention_penalty(A)
    numeric = np.zeros_like(A)
    for index in np.ndindex(A.shape):
        shifted = A.copy()
        shifted[index] += 1e-6
        plus, _ = attention_penalty(shifted)
        shifted[index] -= 2e-6
        minus, _ = attention_penalty(shifted)
        numeric[index] = (plus - minus) / 2e-6
    assert np.allclose(grad, numeric, atol=1e-6)


def test_attention_penalty_is_zero_for_orthonormal_rows():
    A = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    value, grad = attention_penalty(A)
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_cross_entropy_accepts_soft_targets():
    probs = np.array([[0.25, 0.75]])
    hard, _ = cross_entropy(probs, np.array([1]))
    soft, dlogits = cross_entropy(probs, np.array([[0.0, 1.0]]))
    assert hard == pytest.approx(soft)
    assert np.allclose(dlogits, [[0.25, -0.25]])


def ssae_config(**overrides):
    settings = dict(embedding_dim=16, lstm_hidden=8, attention_hidden=8, attention_rows=2)
    settings.update(overrides)
    return ModelConfig("ssae", **settings)


def test_token_attention_contract():
    model = build_model(ssae_config(), tiny_embeddings_16(), seed=5)
    weights = token_attention(model, [3, 4, 5, 6, 7])
    padded = token_attention(model, [3, 4, 5, 6, 7, 0, 0, 0])

    assert weights.shape == (5,)
    assert np.all(weights >= 0)
    assert weights.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(weights, padded, atol=1e-9)


def tiny_embeddings_16(rows=10):
    return np.random.default_rng(1).uniform(-0.25, 0.25, size=(rows, 16))


def test_token_attention_needs_attention_model():
    model = build_model(ModelConfig("cnn", embedding_dim=16, n_maps=4), tiny_embeddings_16())
    with pytest.raises(UnsupportedModelError):
        token_attention(model, [3, 4, 5])


def test_empty_sequence_is_rejected():
    model = build_model(ModelConfig("cnn", embedding_dim=16, n_maps=4), tiny_embeddings_16())
    with pytest.raises(ModelShapeError, match="rows \\[1\\]"):
        model.forward(np.array([[3, 4], [0, 0]]))


def test_topic_vectors_are_checked():
    config = ModelConfig("cnn-lda", embedding_dim=16, n_maps=4, topic_size=3)
    model = build_model(config, tiny_embeddings_16())
    with pytest.raises(ModelShapeError):
        model.forward(np.array([[3, 4]]), topics=np.ones((1, 2)))
    with pytest.raises(ModelShapeError):
        build_model(ModelConfig("cnn", embedding_dim=16), tiny_embeddings_16()).forward(
            np.array([[3, 4]]), topics=np.ones((1, 3)))


def test_embedding_dimension_mismatch():
    with pytest.raises(ModelShapeError):
        build_model(ModelConfig("cnn", embedding_dim=8), tiny_embeddings_16())


def separable_setup(dim=16):
    instances = separable_instances()
    vocab = build_vocab(instance.tokens for instance in instances)
    dataset = encode_dataset(instances, vocab)
    table = EmbeddingTable.random(vocab, dim, seed=3)
    return vocab, dataset, table


LEARN = dict(learning_rate=0.01, epochs=30, batch_size=4, heldout_fraction=0.0, seed=13)


@pytest.mark.parametrize("config", [
    ModelConfig("cnn", embedding_dim=16, n_maps=10),
    ssae_config(),
], ids=["cnn", "ssae"])
def test_models_learn_separable_corpus(config):
    _, dataset, table = separable_setup()

    result = train(config, TrainConfig(**LEARN), dataset, table.matrix)

    assert score(result.model, dataset) >= 0.95
    assert len(result.trace) == 30
    assert result.trace[-1]["loss"] < result.trace[0]["loss"]

    cv = cross_validate(config, TrainConfig(**LEARN), dataset, table.matrix, folds=10, threads=2)
    assert cv.mean >= 0.9
    assert sorted(cv.predictions) == sorted(dataset.ids)
    assert sum(row["n_test"] for row in cv.fold_rows) == len(dataset)


def test_training_is_deterministic():
    _, dataset, table = separable_setup()
    config = ModelConfig("cnn", embedding_dim=16, n_maps=4)
    settings = dict(LEARN, epochs=3, heldout_fraction=0.2)

    first = train(config, TrainConfig(**settings), dataset, table.matrix)
    second = train(config, TrainConfig(**settings), dataset, table.matrix)

    assert first.trace == second.trace
    for name, value in first.model.get_state().items():
        assert np.array_equal(value, second.model.get_state()[name])
    assert len(first.train_ids) == 32


def test_early_stopping_restores_best_epoch():
    _, dataset, table = separable_setup()
    config = ModelConfig("cnn", embedding_dim=16, n_maps=4)
    result = train(config, TrainConfig(**dict(LEARN, epochs=40, heldout_fraction=0.25, patience=2)),
                   dataset, table.matrix)
    losses = [row["heldout_loss"] for row in result.trace]
    assert result.best_epoch == int(np.argmin(losses)) + 1
    assert len(result.trace) <= 40


def test_regression_cross_validation_reports_spearman(config, logger_service):
    instances = separable_instances()
    for i, instance in enumerate(instances):
        instance.label = 3.0 if instance.label == "AD_HOMINEM" else 1.0 + 0.01 * i
    vocab = build_vocab(instance.tokens for instance in instances)
    dataset = encode_dataset(instances, vocab, regression=True)
    table = EmbeddingTable.random(vocab, 16)
    trainer = ModelTrainer(config, logger_service)

    cv = trainer.cross_validate(ModelConfig("cnn", embedding_dim=16, n_maps=4, regression=True),
                                TrainConfig(**dict(LEARN, epochs=5, objective="mean_squared_error")),
                                dataset, table.matrix, folds=4)

    assert cv.metric == "spearman"
    assert all(isinstance(value, float) for value in cv.predictions.values())


def test_checkpoint_round_trip(tmp_path, logger_service):
    vocab, dataset, table = separable_setup()
    result = train(ssae_config(), TrainConfig(**dict(LEARN, epochs=2)), dataset, table.matrix)
    manager = ModelManager(logger_service)
    path = str(tmp_path / "ssae.npz")

    manager.save(Checkpoint(result.model, vocab, dataset.label_names, list(dataset.ids), {"best_epoch": 2}), path)
    loaded = manager.load(path)

    assert loaded.vocab.fingerprint() == vocab.fingerprint()
    assert loaded.label_names == dataset.label_names
    assert loaded.train_ids == sorted(dataset.ids)
    assert loaded.metadata == {"best_epoch": 2}
    assert not loaded.regression
    assert np.array_equal(predict(loaded.model, dataset), predict(result.model, dataset))


def test_corrupt_checkpoint(tmp_path, logger_service):
    path = tmp_path / "broken.npz"
    path.write_bytes(b"not a checkpoint")
    manager = ModelManager(logger_service)
    with pytest.raises(CheckpointError):
        manager.load(str(path))
    with pytest.raises(CheckpointError, match="not found"):
        manager.load(str(tmp_path / "missing.npz"))


@pytest.mark.parametrize("kind", ["cnn", "bilstm", "ssae"])
def test_forward_ignores_trailing_padding(kind):
    model = build_model(ModelConfig(kind, **TINY), tiny_embeddings(), seed=2)
    short, _ = model.forward(np.array([[3, 4, 5, 6]]))
    padded, _ = model.forward(np.array([[3, 4, 5, 6, 0, 0, 0]]))
    assert np.allclose(short, padded, atol=1e-12)


def test_cnn_lda_with_zero_topics_matches_cnn():
    cnn = build_model(ModelConfig("cnn", **TINY), tiny_embeddings(), seed=4)
    cnn_lda = build_model(ModelConfig("cnn-lda", **TINY, topic_size=3), tiny_embeddings(), seed=4)
    cnn_lda.topic_weight.value[...] = np.random.default_rng(0).normal(size=(3, 2))

    plain, _ = cnn.forward(BATCH)
    zero_topics, _ = cnn_lda.forward(BATCH, topics=np.zeros((2, 3)))

    assert np.allclose(plain, zero_topics)
    cnn_lda.topic_weight.value[...] = 0.0
    mixed, _ = cnn_lda.forward(BATCH, topics=np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]))
    assert np.allclose(plain, mixed)


def test_uniform_output_costs_log_of_class_count():
    model = build_model(ModelConfig("cnn", **TINY), tiny_embeddings(), seed=1)
    for param in model.head.parameters().values():
        param.value[...] = 0.0

    output, cache = model.forward(BATCH)
    loss, _ = model.loss(output, np.array([1, 0]), cache)

    assert np.allclose(output, 0.5)
    assert loss == pytest.approx(np.log(2))
    uniform, _ = cross_entropy(np.full((3, 4), 0.25), np.array([0, 2, 3]))
    assert uniform == pytest.approx(np.log(4))


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_zero_learning_rate_leaves_parameters_unchanged(optimizer):
    vocab, dataset, table = separable_setup()
    config = ModelConfig("cnn", embedding_dim=16, n_maps=4, freeze_embeddings=False)
    initial = build_model(config, table.matrix, seed=13).get_state()

    result = train(config, TrainConfig(**dict(LEARN, epochs=1, learning_rate=0.0, optimizer=optimizer)),
                   dataset, table.matrix)

    state = result.model.get_state()
    assert set(state) == set(initial)
    for name, value in initial.items():
        assert np.array_equal(state[name], value), name


def test_mean_squared_error_vanishes_at_target():
    scores = np.array([0.5, -1.25, 3.0])
    loss, grad = mean_squared_error(scores, scores.copy())
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_probability_and_attention_rows_sum_to_one():
    vocab, dataset, table = separable_setup()
    model = build_model(ssae_config(attention_rows=3), table.matrix, seed=7)

    probabilities = predict(model, dataset)
    attention = model.attention_matrix(np.array([[3, 4, 5, 0], [6, 7, 8, 9]]))

    assert np.allclose(probabilities.sum(axis=1), 1.0)
    assert attention.shape == (2, 3, 4)
    assert np.allclose(attention.sum(axis=2), 1.0)
    assert np.all(attention[0, :, 3] == 0.0)


def test_objective_must_fit_model_output():
    vocab, dataset, table = separable_setup()
    with pytest.raises(ModelShapeError, match="objective mean_squared_error"):
        train(ModelConfig("cnn", embedding_dim=16, n_maps=4),
              TrainConfig(**dict(LEARN, objective="mean_squared_error")), dataset, table.matrix)

    result = train(ModelConfig("cnn", embedding_dim=16, n_maps=4), TrainConfig(**dict(LEARN, epochs=1)),
                   dataset, table.matrix)
    assert result.best_epoch == 1
