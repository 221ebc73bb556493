import numpy as np
import pytest

from modules.text_processor import (
    COMMENT_BEGIN, OOV, OOV_INDEX, PAD, PAD_INDEX, RESERVED, EmbeddingTable, Vocabulary,
    avg_vector, build_vocab, encode, load_embeddings, pad_sequences, tokenize
)
from utils.error_handler import EmbeddingLoadError


def test_tokenize_splits_clitics():
    assert tokenize("I don't think you're right") == ["I", "do", "n't", "think", "you", "'re", "right"]


def test_tokenize_collapses_urls_and_keeps_markers():
    tokens = tokenize(f"{COMMENT_BEGIN} see https://example.org/a?b=1 now!")
    assert tokens == [COMMENT_BEGIN, "see", OOV, "now", "!"]


def test_tokenize_lowercase_leaves_markers():
    assert tokenize("Hello <pad> World", lowercase=True) == ["hello", PAD, "world"]


def test_build_vocab_order():
    vocab = build_vocab([["b", "a", "c"], ["a", "c"], ["a", OOV]])
    assert vocab.to_list() == list(RESERVED) + ["a", "c", "b"]
    assert vocab.lookup("missing") == OOV_INDEX


def test_build_vocab_min_count():
    vocab = build_vocab([["x", "y", "y"]], min_count=2)
    assert vocab.words() == ["y"]
    with pytest.raises(ValueError):
        build_vocab([["x"]], min_count=0)


def test_fingerprint_tracks_order():
    assert Vocabulary(["a", "b"]).fingerprint() == Vocabulary.from_list(list(RESERVED) + ["a", "b"]).fingerprint()
    assert Vocabulary(["a", "b"]).fingerprint() != Vocabulary(["b", "a"]).fingerprint()


def test_from_list_requires_reserved_prefix():
    with pytest.raises(ValueError):
        Vocabulary.from_list(["a", "b"])


def test_load_embeddings_skips_header(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar 4 5 6\n", encoding="utf-8")
    vocab = Vocabulary(["foo", "baz"])

    table = load_embeddings(str(path), vocab, seed=1)

    assert table.dim == 3
    assert np.array_equal(table.row(vocab.lookup("foo")), [1.0, 2.0, 3.0])
    assert np.all(table.row(PAD_INDEX) == 0.0)
    baz = table.row(vocab.lookup("baz"))
    assert np.all(np.abs(baz) <= 0.25)
    # missing words are seeded, so a reload gives the same row
    assert np.array_equal(baz, load_embeddings(str(path), vocab, seed=1).row(vocab.lookup("baz")))


def test_load_embeddings_dimension_mismatch(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("foo 1 2 3\nbar 4 5\n", encoding="utf-8")
    with pytest.raises(EmbeddingLoadError, match="line 2"):
        load_embeddings(str(path), Vocabulary(["foo"]))


def test_load_embeddings_empty_file(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(EmbeddingLoadError):
        load_embeddings(str(path), Vocabulary(["foo"]))


def test_pad_sequences():
    batch, mask = pad_sequences([[3, 4, 5], [6]])
    assert batch.tolist() == [[3, 4, 5], [6, 0, 0]]
    assert mask.tolist() == [[True, True, True], [True, False, False]]

    batch, _ = pad_sequences([[3]], min_length=4)
    assert batch.shape == (1, 4)


def test_avg_vector_ignores_padding():
    vocab = Vocabulary(["a", "b"])
    table = EmbeddingTable(np.arange(10, dtype=float).reshape(5, 2))
    doc = encode(["a", "b"], vocab)
    assert np.allclose(avg_vector(doc, table), [7.0, 8.0])
    assert np.allclose(avg_vector(encode([], vocab), table), [0.0, 0.0])


def test_text_processor_uses_config(text_processor, config):
    config.lowercase = True
    assert text_processor.tokenize("Hey You") == ["hey", "you"]
    vocab = text_processor.build_vocab([["a"]])
    assert text_processor.embeddings(vocab).dim == config.embedding_dim
