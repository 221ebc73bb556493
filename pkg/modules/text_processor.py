import re
import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from utils.error_handler import EmbeddingLoadError
from utils.file_handler import iter_lines

PAD = "<pad>"
OOV = "<oov>"
COMMENT_BEGIN = "<comment_begin>"
RESERVED = (PAD, OOV, COMMENT_BEGIN)
PAD_INDEX, OOV_INDEX, COMMENT_BEGIN_INDEX = 0, 1, 2

_TOKEN_PATTERN = re.compile(
    r"""
    (?P<special><pad>|<oov>|<comment_begin>)
    | (?P<url>(?:https?://|www\.)\S+)
    | \w+?(?=(?i:n['’]t)\b)
    | (?i:n['’]t)\b
    | ['’](?i:s|m|re|ve|ll|d)\b
    | \w+
    | [^\w\s]
    """,
    re.VERBOSE | re.UNICODE,
)


def tokenize(text: str, lowercase: bool = False) -> List[str]:
    """Rule-based word tokenizer: clitics split, URLs collapsed to the OOV token"""
    tokens = []
    for match in _TOKEN_PATTERN.finditer(text or ""):
        if match.group("url"):
            tokens.append(OOV)
            continue
        token = match.group(0)
        if lowercase and not match.group("special"):
            token = token.lower()
        tokens.append(token)
    return tokens


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.index_to_token: List[str] = list(RESERVED)
        self.token_to_index: Dict[str, int] = {token: i for i, token in enumerate(RESERVED)}
        for token in tokens:
            if token in self.token_to_index:
                continue
            self.token_to_index[token] = len(self.index_to_token)
            self.index_to_token.append(token)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token) -> bool:
        return token in self.token_to_index

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, OOV_INDEX)

    def token(self, index: int) -> str:
        return self.index_to_token[index]

    def words(self) -> List[str]:
        """Non-reserved entries in index order"""
        return self.index_to_token[len(RESERVED):]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.index_to_token).encode("utf-8")).hexdigest()

    def to_list(self) -> List[str]:
        return list(self.index_to_token)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        return cls(tokens[len(RESERVED):])


@dataclass
class TokenizedDoc:
    tokens: List[str]
    indices: List[int]

    def __len__(self) -> int:
        return len(self.indices)


def build_vocab(docs: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Frequency-descending, then lexicographic; reserved tokens always at 0..2"""
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    counts = Counter(token for doc in docs for token in doc if token not in RESERVED)
    kept = [token for token, count in counts.items() if count >= min_count]
    kept.sort(key=lambda token: (-counts[token], token))
    return Vocabulary(kept)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> TokenizedDoc:
    return TokenizedDoc(tokens=list(tokens), indices=[vocab.lookup(token) for token in tokens])


class EmbeddingTable:
    def __init__(self, matrix: np.ndarray):
        if matrix.ndim != 2:
            raise ValueError("embedding matrix must be two-dimensional")
        self.matrix = np.array(matrix, dtype=np.float64)
        self.matrix[PAD_INDEX] = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def row(self, index: int) -> np.ndarray:
        return self.matrix[index]

    @classmethod
    def random(cls, vocab: Vocabulary, dim: int, seed: int = 13) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.25, 0.25, size=(len(vocab), dim)))


def load_embeddings(file_path, vocab: Vocabulary, seed: int = 13) -> EmbeddingTable:
    """Read a textual vector file; words missing from it keep a seeded uniform row"""
    dim: Optional[int] = None
    found: Dict[int, np.ndarray] = {}
    first = True

    for line_number, line in iter_lines(file_path):
        parts = line.rstrip("\n").split()
        if first:
            first = False
            if len(parts) == 2 and all(part.isdigit() for part in parts):
                continue
        word, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise EmbeddingLoadError(f"line {line_number}: no vector values")
        elif len(values) != dim:
            raise EmbeddingLoadError(
                f"line {line_number}: expected {dim} values, found {len(values)}")
        if word not in vocab or word == PAD:
            continue
        index = vocab.lookup(word)
        if index in found:
            continue
        try:
            found[index] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError:
            raise EmbeddingLoadError(f"line {line_number}: non-numeric vector value")

    if dim is None:
        raise EmbeddingLoadError(f"no vectors in {file_path}")

    table = EmbeddingTable.random(vocab, dim, seed)
    for index, vector in found.items():
        table.matrix[index] = vector
    return table


def avg_vector(doc: TokenizedDoc, table: EmbeddingTable) -> np.ndarray:
    indices = [index for index in doc.indices if index != PAD_INDEX]
    if not indices:
        return np.zeros(table.dim)
    return table.matrix[indices].mean(axis=0)


def pad_sequences(sequences: Sequence[Sequence[int]], min_length: int = 1):
    """Right-pad with PAD to the batch maximum; returns (indices, mask)"""
    length = max([min_length] + [len(seq) for seq in sequences])
    batch = np.full((len(sequences), length), PAD_INDEX, dtype=np.int64)
    for row, seq in enumerate(sequences):
        batch[row, :len(seq)] = seq
    return batch, batch != PAD_INDEX


class TextProcessor:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    def tokenize(self, text: str) -> List[str]:
        return tokenize(text, lowercase=self.config.lowercase)

    def build_vocab(self, docs: Iterable[Sequence[str]]) -> Vocabulary:
        vocab = build_vocab(docs, self.config.min_count)
        self.logger.log("INFO", f"vocabulary built: {len(vocab)} entries (min_count={self.config.min_count})")
        return vocab

    def embeddings(self, vocab: Vocabulary, vectors_path=None) -> EmbeddingTable:
        if vectors_path:
            table = load_embeddings(vectors_path, vocab, seed=self.config.seed)
            self.logger.log("INFO", f"loaded {table.dim}-dim vectors from {vectors_path}")
            return table
        return EmbeddingTable.random(vocab, self.config.embedding_dim, seed=self.config.seed)
