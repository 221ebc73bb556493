import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from modules.text_processor import RESERVED
from utils.error_handler import CheckpointError, EmptyCorpusError

MAGIC = b"ADHLDA01"
TRACE_EVERY = 10


@dataclass
class LdaModel:
    k: int
    alpha: float
    beta: float
    vocabulary: List[str]
    phi: np.ndarray                                   # k x V
    log_likelihood_trace: List[Tuple[int, float]] = field(default_factory=list)
    assignments: Optional[List[np.ndarray]] = None    # final token topics of the training docs

    def __post_init__(self):
        self.word_index = {word: i for i, word in enumerate(self.vocabulary)}

    def word_ids(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.word_index[t] for t in tokens if t in self.word_index], dtype=np.int64)


def _vocabulary(docs: Sequence[Sequence[str]]) -> List[str]:
    return sorted({token for doc in docs for token in doc if token not in RESERVED})


def corpus_log_likelihood(n_dk, n_kw, n_k, alpha, beta) -> float:
    """Collapsed log p(w, z)"""
    k, vocab_size = n_kw.shape
    topic_part = (gammaln(vocab_size * beta) - gammaln(n_k + vocab_size * beta)).sum()
    topic_part += (gammaln(n_kw + beta)).sum() - k * vocab_size * gammaln(beta)
    doc_lengths = n_dk.sum(axis=1)
    doc_part = (gammaln(k * alpha) - gammaln(doc_lengths + k * alpha)).sum()
    doc_part += (gammaln(n_dk + alpha)).sum() - n_dk.shape[0] * k * gammaln(alpha)
    return float(topic_part + doc_part)


def _draw(weights: np.ndarray, rng) -> int:
    cumulative = np.cumsum(weights)
    return int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))


def fit_lda(docs: Sequence[Sequence[str]], k: int, alpha: float = None, beta: float = 0.01,
            iterations: int = 500, seed: int = 13, logger=None) -> LdaModel:
    """Collapsed Gibbs sampling over token-topic assignments"""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not docs:
        raise EmptyCorpusError("cannot fit a topic model on zero documents")
    alpha = 50.0 / k if alpha is None else alpha
    vocabulary = _vocabulary(docs)
    if not vocabulary:
        raise EmptyCorpusError("topic model vocabulary is empty")

    word_index = {word: i for i, word in enumerate(vocabulary)}
    doc_words = [np.array([word_index[t] for t in doc if t in word_index], dtype=np.int64) for doc in docs]
    vocab_size = len(vocabulary)

    rng = np.random.default_rng(seed)
    n_dk = np.zeros((len(docs), k))
    n_kw = np.zeros((k, vocab_size))
    n_k = np.zeros(k)
    assignments = []
    for d, words in enumerate(doc_words):
        topics = rng.integers(0, k, size=len(words))
        assignments.append(topics)
        np.add.at(n_dk[d], topics, 1)
        np.add.at(n_kw, (topics, words), 1)
    n_k[:] = n_kw.sum(axis=1)

    trace = [(0, corpus_log_likelihood(n_dk, n_kw, n_k, alpha, beta))]
    beta_total = vocab_size * beta
    for sweep in range(1, iterations + 1):
        for d, words in enumerate(doc_words):
            topics = assignments[d]
            for i, w in enumerate(words):
                old = topics[i]
                n_dk[d, old] -= 1
                n_kw[old, w] -= 1
                n_k[old] -= 1
                weights = (n_dk[d] + alpha) * (n_kw[:, w] + beta) / (n_k + beta_total)
                new = _draw(weights, rng)
                topics[i] = new
                n_dk[d, new] += 1
                n_kw[new, w] += 1
                n_k[new] += 1
        if sweep % TRACE_EVERY == 0 or sweep == iterations:
            trace.append((sweep, corpus_log_likelihood(n_dk, n_kw, n_k, alpha, beta)))
            if logger:
                logger.log_iteration("gibbs", 0, sweep, trace[-1][1])

    phi = (n_kw + beta) / (n_k[:, None] + beta_total)
    return LdaModel(k, alpha, beta, vocabulary, phi, trace, assignments)


def infer_theta(model: LdaModel, tokens: Sequence[str], iterations: int = 50, seed: int = 13) -> np.ndarray:
    """Fold-in Gibbs sampling against the frozen topic-word distributions"""
    words = model.word_ids(tokens)
    if len(words) == 0:
        return np.full(model.k, 1.0 / model.k)

    rng = np.random.default_rng(seed)
    topics = rng.integers(0, model.k, size=len(words))
    n_dk = np.bincount(topics, minlength=model.k).astype(np.float64)
    for _ in range(iterations):
        for i, w in enumerate(words):
            n_dk[topics[i]] -= 1
            new = _draw((n_dk + model.alpha) * model.phi[:, w], rng)
            topics[i] = new
            n_dk[new] += 1
    return (n_dk + model.alpha) / (len(words) + model.k * model.alpha)


def top_words(model: LdaModel, n: int = 10) -> List[List[Tuple[str, float]]]:
    report = []
    for row in model.phi:
        order = sorted(range(len(row)), key=lambda i: (-row[i], model.vocabulary[i]))[:n]
        report.append([(model.vocabulary[i], float(row[i])) for i in order])
    return report


def align_topics(reference: np.ndarray, estimate: np.ndarray) -> List[int]:
    """Permutation p maximising sum_i <reference_i, estimate_p(i)>"""
    similarity = np.asarray(reference) @ np.asarray(estimate).T
    rows, cols = linear_sum_assignment(-similarity)
    return [int(c) for _, c in sorted(zip(rows, cols))]


def alignment_accuracy(true_topics: Sequence[int], assigned: Sequence[int], k: int) -> float:
    """Share of tokens whose topic matches under the best one-to-one relabelling"""
    counts = np.zeros((k, k))
    np.add.at(counts, (np.asarray(true_topics), np.asarray(assigned)), 1)
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum() / counts.sum())


def save_lda(model: LdaModel, file_path):
    words = [word.encode("utf-8") for word in model.vocabulary]
    with open(file_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIdd", model.k, len(words), model.alpha, model.beta))
        for word in words:
            f.write(struct.pack("<I", len(word)))
            f.write(word)
        f.write(np.ascontiguousarray(model.phi, dtype="<f8").tobytes())
    return file_path


def load_lda(file_path) -> LdaModel:
    with open(file_path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{file_path} is not a topic model file")
    offset = len(MAGIC)
    try:
        k, vocab_size, alpha, beta = struct.unpack_from("<IIdd", data, offset)
        offset += struct.calcsize("<IIdd")
        vocabulary = []
        for _ in range(vocab_size):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            vocabulary.append(data[offset:offset + length].decode("utf-8"))
            offset += length
        phi = np.frombuffer(data, dtype="<f8", count=k * vocab_size, offset=offset)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{file_path}: truncated topic model ({e})")
    return LdaModel(k, alpha, beta, vocabulary, phi.reshape(k, vocab_size).astype(np.float64))


class TopicModeler:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    def fit(self, docs_by_id: Dict[str, Sequence[str]], exclude_ids: Iterable[str] = ()) -> LdaModel:
        """Fit on the documents not in exclude_ids (the annotated set stays unseen)"""
        excluded = set(exclude_ids)
        ids = [doc_id for doc_id in docs_by_id if doc_id not in excluded]
        self.logger.log_stage("lda fit", f"{len(ids)} documents, {len(excluded)} excluded, k={self.config.lda_k}")
        model = fit_lda(
            [docs_by_id[doc_id] for doc_id in ids],
            k=self.config.lda_k,
            alpha=self.config.resolved_lda_alpha(),
            beta=self.config.lda_beta,
            iterations=self.config.lda_iterations,
            seed=self.config.seed,
            logger=self.logger,
        )
        self.logger.log("INFO", f"final corpus log-likelihood {model.log_likelihood_trace[-1][1]:.3f}")
        return model

    def infer_many(self, model: LdaModel, docs: Sequence[Sequence[str]], iterations: int = 50) -> np.ndarray:
        """Per-document fold-in, each with its own seed derived from the run seed"""
        if not docs:
            return np.zeros((0, model.k))
        seed = self.config.seed

        def one(position):
            return infer_theta(model, docs[position], iterations, seed=[seed, position])

        with ThreadPoolExecutor(max_workers=max(1, self.config.threads)) as pool:
            return np.vstack(list(pool.map(one, range(len(docs)))))
