import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from models.annotation_data import AnnotationSet, MacePosterior
from utils.error_handler import AnnotationError
from utils.file_handler import read_table


def _arrays(annotations: AnnotationSet):
    item_index = {item: i for i, item in enumerate(annotations.items)}
    annotator_index = {annotator: j for j, annotator in enumerate(annotations.annotators)}
    keys = sorted(annotations.labels, key=lambda key: (item_index[key[0]], annotator_index[key[1]]))
    items = np.array([item_index[item] for item, _ in keys], dtype=np.int64)
    annotators = np.array([annotator_index[annotator] for _, annotator in keys], dtype=np.int64)
    labels = np.array([annotations.labels[key] for key in keys], dtype=np.int64)
    return items, annotators, labels


class _MaceRun:
    """One EM restart over flattened (item, annotator, label) arrays"""

    def __init__(self, items, annotators, labels, n_items, n_annotators, n_labels, smoothing):
        self.items = items
        self.annotators = annotators
        self.labels = labels
        self.n_items = n_items
        self.n_annotators = n_annotators
        self.n_labels = n_labels
        self.smoothing = smoothing
        self.copy_mask = labels[:, None] == np.arange(n_labels)[None, :]   # K x L

    def annotation_probs(self, theta, xi):
        """P(a_k | T = t) for every annotation k and candidate truth t"""
        spam = (theta[self.annotators] * xi[self.annotators, self.labels])[:, None]
        copy = (1.0 - theta[self.annotators])[:, None] * self.copy_mask
        return copy + spam, np.broadcast_to(spam, self.copy_mask.shape)

    def e_step(self, theta, xi):
        probs, spam = self.annotation_probs(theta, xi)
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        joint = np.full((self.n_items, self.n_labels), -math.log(self.n_labels))
        np.add.at(joint, self.items, log_probs)
        item_ll = logsumexp(joint, axis=1)
        posterior = np.exp(joint - item_ll[:, None])
        return posterior, float(item_ll.sum()), probs, spam

    def objective(self, log_likelihood, theta, xi):
        s = self.smoothing
        if s == 0:
            return log_likelihood
        with np.errstate(divide="ignore"):
            prior = s * (np.log(theta) + np.log1p(-theta)).sum() + s * np.log(xi).sum()
        return log_likelihood + float(prior)

    def m_step(self, posterior, probs, spam):
        s = self.smoothing
        with np.errstate(divide="ignore", invalid="ignore"):
            spam_share = np.where(probs > 0, spam / probs, 0.0)
        weights = posterior[self.items]                                   # K x L
        spam_expected = (weights * spam_share).sum(axis=1)               # K
        copy_expected = (weights * (1.0 - spam_share) * self.copy_mask).sum(axis=1)

        spam_counts = np.bincount(self.annotators, spam_expected, self.n_annotators)
        copy_counts = np.bincount(self.annotators, copy_expected, self.n_annotators)
        pref_counts = np.zeros((self.n_annotators, self.n_labels))
        np.add.at(pref_counts, (self.annotators, self.labels), spam_expected)

        denominator = spam_counts + copy_counts + 2 * s
        theta = np.where(denominator > 0, (spam_counts + s) / np.where(denominator > 0, denominator, 1), 0.5)
        pref_total = pref_counts.sum(axis=1, keepdims=True) + self.n_labels * s
        xi = np.where(pref_total > 0, (pref_counts + s) / np.where(pref_total > 0, pref_total, 1),
                      1.0 / self.n_labels)
        return theta, xi

    def run(self, iterations, rng, restart, logger=None):
        theta = rng.uniform(0.0, 1.0, self.n_annotators)
        xi = rng.uniform(0.0, 1.0, (self.n_annotators, self.n_labels))
        xi /= xi.sum(axis=1, keepdims=True)

        trace = []
        for iteration in range(iterations):
            posterior, ll, probs, spam = self.e_step(theta, xi)
            trace.append(self.objective(ll, theta, xi))
            if logger:
                logger.log_iteration("mace", restart, iteration, trace[-1])
            theta, xi = self.m_step(posterior, probs, spam)

        posterior, ll, _, _ = self.e_step(theta, xi)
        trace.append(self.objective(ll, theta, xi))
        return posterior, theta, xi, trace


def mace_em(annotations: AnnotationSet, restarts: int = 10, iterations: int = 50,
            smoothing: float = 0.1, seed: int = 13, threads: int = 1, logger=None) -> MacePosterior:
    """Estimate gold labels and annotator competence; the best restart by final objective wins"""
    if restarts < 1 or iterations < 1:
        raise AnnotationError("mace_em needs at least one restart and one iteration")
    if smoothing < 0:
        raise AnnotationError("smoothing must be non-negative")
    missing = annotations.unannotated_items()
    if missing:
        raise AnnotationError(f"items without annotations: {', '.join(map(str, missing))}")

    items, annotators, labels = _arrays(annotations)
    engine = _MaceRun(items, annotators, labels, len(annotations.items),
                      len(annotations.annotators), annotations.label_count, smoothing)

    def one_restart(restart):
        rng = np.random.default_rng([seed, restart])
        return engine.run(iterations, rng, restart, logger)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one_restart, range(restarts)))

    finals = [result[3][-1] for result in results]
    best = int(np.argmax(finals))
    posterior, theta, xi, trace = results[best]

    if logger:
        logger.log("INFO", f"MACE: {len(annotations.items)} items, {len(annotations.annotators)} annotators, "
                           f"best restart {best} objective {finals[best]:.6f}")

    return MacePosterior(
        items=list(annotations.items),
        annotators=list(annotations.annotators),
        item_posteriors=posterior,
        spamming=theta,
        spam_preferences=xi,
        log_likelihood_trace=trace,
        restart_objectives=finals,
        best_restart=best,
        label_names=list(annotations.label_names),
    )


def select_confident(posterior: MacePosterior, threshold: float) -> List[Tuple[str, int, float]]:
    """Keep the top ceil(threshold * N) items by confidence; ties go to the smaller item id"""
    if not 0.0 < threshold <= 1.0:
        raise AnnotationError("threshold must lie in (0, 1]")
    confidence = posterior.confidence()
    gold = posterior.gold()
    keep = math.ceil(threshold * len(posterior.items) - 1e-9)
    order = sorted(range(len(posterior.items)), key=lambda i: (-confidence[i], posterior.items[i]))
    return [(posterior.items[i], int(gold[i]), float(confidence[i])) for i in order[:keep]]


def label_distribution(annotations: AnnotationSet) -> Dict[str, np.ndarray]:
    distribution = {}
    for item in annotations.items:
        counts = np.bincount(annotations.item_labels(item), minlength=annotations.label_count).astype(float)
        total = counts.sum()
        distribution[item] = counts / total if total else counts
    return distribution


def merge_spans(positions: Sequence[int]) -> List[Tuple[int, int]]:
    spans = []
    for position in sorted(positions):
        if spans and position == spans[-1][1] + 1:
            spans[-1] = (spans[-1][0], position)
        else:
            spans.append((position, position))
    return spans


def span_gold(token_annotations: Dict[str, AnnotationSet], threshold: float = 1.0,
              restarts: int = 10, iterations: int = 50, smoothing: float = 0.1,
              seed: int = 13, logger=None) -> Dict[str, List[Tuple[int, int]]]:
    """Gold token spans per document; items of each set are token positions, label 1 = inside"""
    spans = {}
    for doc_id in sorted(token_annotations):
        annotations = token_annotations[doc_id]
        if annotations.label_count != 2:
            raise AnnotationError(f"span annotations of {doc_id} must be binary")
        posterior = mace_em(annotations, restarts, iterations, smoothing, seed, logger=logger)
        positive = [int(item) for item, gold, _ in select_confident(posterior, threshold) if gold == 1]
        spans[doc_id] = merge_spans(positive)
    return spans


def average_scale(annotations: AnnotationSet) -> Dict[str, float]:
    """Mean of ordinal scale points per item; label names carry the point values"""
    try:
        values = [float(name) for name in annotations.label_names]
    except ValueError:
        raise AnnotationError("average_scale needs numeric label names")
    means = {}
    for item in annotations.items:
        points = [values[label] for label in annotations.item_labels(item)]
        means[item] = float(np.mean(points)) if points else float("nan")
    return means


def split_groups(annotations: AnnotationSet, group_size: int, seed: int = 13):
    """Two disjoint annotator groups of group_size each, drawn with a seeded permutation"""
    if group_size < 1 or 2 * group_size > len(annotations.annotators):
        raise AnnotationError(
            f"cannot draw two groups of {group_size} from {len(annotations.annotators)} annotators")
    rng = np.random.default_rng(seed)
    order = [annotations.annotators[i] for i in rng.permutation(len(annotations.annotators))]
    first, second = order[:group_size], order[group_size:2 * group_size]
    return annotations.restrict_annotators(first), annotations.restrict_annotators(second)


def _shared(gold_a: Dict, gold_b: Dict):
    shared = sorted(set(gold_a) & set(gold_b))
    if not shared:
        raise AnnotationError("no items in common")
    return shared


def gold_agreement(gold_a: Dict[str, int], gold_b: Dict[str, int]) -> float:
    """Cohen's kappa between two gold label maps over their shared items"""
    from modules.statistical_analyzer import cohen_kappa

    shared = _shared(gold_a, gold_b)
    return cohen_kappa([gold_a[item] for item in shared], [gold_b[item] for item in shared])


def accuracy_against(gold: Dict[str, int], reference: Dict[str, int]) -> float:
    shared = _shared(gold, reference)
    return sum(gold[item] == reference[item] for item in shared) / len(shared)


def _label_sort_key(name):
    try:
        return (0, float(name), name)
    except ValueError:
        return (1, 0.0, name)


def load_annotations(file_path, label_names: Optional[List[str]] = None) -> AnnotationSet:
    """Read an (item_id, annotator_id, label) table; label names sort numerically when they can"""
    frame = read_table(file_path)
    required = {"item_id", "annotator_id", "label"}
    if not required.issubset(frame.columns):
        raise AnnotationError(f"{file_path}: expected columns item_id, annotator_id, label")

    if label_names is None:
        label_names = sorted(set(frame["label"]), key=_label_sort_key)
    index_of = {name: i for i, name in enumerate(label_names)}

    triples = []
    for row_number, row in enumerate(frame.itertuples(index=False), 2):
        if row.label not in index_of:
            raise AnnotationError(f"{file_path} row {row_number}: unknown label {row.label!r}")
        triples.append((row.item_id, row.annotator_id, index_of[row.label]))
    try:
        return AnnotationSet.from_triples(triples, label_names=list(label_names))
    except ValueError as e:
        raise AnnotationError(f"{file_path}: {e}")


def load_span_annotations(file_path) -> Dict[str, AnnotationSet]:
    """Rows (doc_id, position, annotator_id, label) with label 0/1 per token"""
    frame = read_table(file_path)
    required = {"doc_id", "position", "annotator_id", "label"}
    if not required.issubset(frame.columns):
        raise AnnotationError(f"{file_path}: expected columns doc_id, position, annotator_id, label")

    per_doc: Dict[str, list] = {}
    for row in frame.itertuples(index=False):
        if row.label not in ("0", "1"):
            raise AnnotationError(f"{file_path}: span labels must be 0 or 1, got {row.label!r}")
        per_doc.setdefault(row.doc_id, []).append((int(row.position), row.annotator_id, int(row.label)))

    result = {}
    for doc_id, rows in per_doc.items():
        rows.sort(key=lambda r: (r[0], r[1]))
        triples = [(str(position), annotator, label) for position, annotator, label in rows]
        result[doc_id] = AnnotationSet.from_triples(triples, label_names=["0", "1"])
    return result


class AnnotationAggregator:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    def mace(self, annotations: AnnotationSet) -> MacePosterior:
        self.logger.log_stage("mace", f"{len(annotations.items)} items")
        return mace_em(
            annotations,
            restarts=self.config.mace_restarts,
            iterations=self.config.mace_iterations,
            smoothing=self.config.mace_smoothing,
            seed=self.config.seed,
            threads=self.config.threads,
            logger=self.logger,
        )

    def gold(self, annotations: AnnotationSet, threshold: float = None):
        posterior = self.mace(annotations)
        threshold = self.config.mace_threshold if threshold is None else threshold
        selected = select_confident(posterior, threshold)
        self.logger.log("INFO", f"kept {len(selected)}/{len(posterior.items)} items at threshold {threshold}")
        return posterior, selected

    def spans(self, token_annotations: Dict[str, AnnotationSet], threshold: float = 1.0):
        return span_gold(
            token_annotations, threshold,
            restarts=self.config.mace_restarts,
            iterations=self.config.mace_iterations,
            smoothing=self.config.mace_smoothing,
            seed=self.config.seed,
            logger=self.logger,
        )

    def group_agreement(self, annotations: AnnotationSet, group_size: int, threshold: float = None):
        """Two-group protocol: independent MACE gold per group, then kappa on items both keep"""
        first, second = split_groups(annotations, group_size, seed=self.config.seed)
        golds = []
        for group in (first, second):
            _, selected = self.gold(_drop_unannotated(group), threshold)
            golds.append({item: label for item, label, _ in selected})
        return gold_agreement(golds[0], golds[1])


def _drop_unannotated(annotations: AnnotationSet) -> AnnotationSet:
    missing = set(annotations.unannotated_items())
    if not missing:
        return annotations
    return AnnotationSet(
        items=[item for item in annotations.items if item not in missing],
        annotators=list(annotations.annotators),
        labels=dict(annotations.labels),
        label_count=annotations.label_count,
        label_names=list(annotations.label_names),
    )
