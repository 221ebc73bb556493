from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import rankdata
from sklearn.metrics import cohen_kappa_score, confusion_matrix

from models.dataset_data import AD_HOMINEM
from utils.error_handler import LeakageError, StatisticsError


@dataclass
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int

    def items(self):
        return [("statistic", self.statistic), ("p_value", self.p_value), ("n1", self.n1), ("n2", self.n2)]


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value"""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise StatisticsError("both samples must be non-empty")

    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    statistic = float(np.max(np.abs(cdf_a - cdf_b)))

    effective_n = a.size * b.size / (a.size + b.size)
    p_value = float(np.clip(kolmogorov(np.sqrt(effective_n) * statistic), 0.0, 1.0))
    return KsResult(statistic, p_value, int(a.size), int(b.size))


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of average ranks"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise StatisticsError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise StatisticsError("spearman needs at least two pairs")

    ranks_a = rankdata(a) - (a.size + 1) / 2.0
    ranks_b = rankdata(b) - (b.size + 1) / 2.0
    denominator = np.sqrt((ranks_a * ranks_a).sum() * (ranks_b * ranks_b).sum())
    if denominator == 0:
        raise StatisticsError("correlation undefined: a sample has zero rank variance")
    return float((ranks_a * ranks_b).sum() / denominator)


def cohen_kappa(labels1: Sequence, labels2: Sequence) -> float:
    if len(labels1) != len(labels2):
        raise StatisticsError(f"length mismatch: {len(labels1)} vs {len(labels2)}")
    if len(labels1) == 0:
        raise StatisticsError("kappa of empty label sequences")

    labels = sorted(set(labels1) | set(labels2), key=str)
    matrix = confusion_matrix(labels1, labels2, labels=labels).astype(np.float64)
    total = matrix.sum()
    expected = float((matrix.sum(axis=1) * matrix.sum(axis=0)).sum() / (total * total))
    if abs(1.0 - expected) < 1e-12:
        raise StatisticsError("kappa undefined: chance agreement is 1")
    return float(cohen_kappa_score(labels1, labels2, labels=labels))


def accuracy(predictions: Sequence, gold: Sequence) -> float:
    if len(predictions) != len(gold):
        raise StatisticsError(f"length mismatch: {len(predictions)} vs {len(gold)}")
    if len(gold) == 0:
        raise StatisticsError("accuracy of an empty set")
    return float(np.mean(np.asarray(predictions) == np.asarray(gold)))


def group_means(scores: Dict[str, Sequence[float]]) -> Dict[str, float]:
    return {group: float(np.mean(values)) if len(values) else float("nan") for group, values in scores.items()}


@dataclass
class ExtrapolationResult:
    scores: Dict[str, List[float]]
    means: Dict[str, float]
    ks: KsResult
    document_scores: List[float]         # one per input document, input order


def extrapolate(model, dataset, groups: Sequence[str], train_ids: Sequence[str]) -> ExtrapolationResult:
    """Score held-out documents, split by group label, and compare the two score samples"""
    from modules.model_trainer import predict

    leaked = sorted(set(dataset.ids) & set(train_ids))
    if leaked:
        shown = ", ".join(leaked[:10])
        raise LeakageError(f"{len(leaked)} held-out ids were used in training: {shown}")
    if len(groups) != len(dataset):
        raise StatisticsError("one group label per document is required")

    names = sorted(set(groups))
    if len(names) != 2:
        raise StatisticsError(f"extrapolation compares exactly two groups, got {names}")

    outputs = predict(model, dataset)
    if outputs.ndim == 1:
        values = outputs
    else:
        # classifiers are scored by their ad hominem probability when they have that class
        label_names = list(dataset.label_names or [])
        column = label_names.index(AD_HOMINEM) if AD_HOMINEM in label_names else outputs.shape[1] - 1
        values = outputs[:, column]
    document_scores = [float(value) for value in values]
    scores = {name: [] for name in names}
    for group, value in zip(groups, document_scores):
        scores[group].append(value)

    return ExtrapolationResult(scores, group_means(scores), ks_two_sample(scores[names[0]], scores[names[1]]),
                               document_scores)


class StatisticalAnalyzer:
    def __init__(self, logger_service):
        self.logger = logger_service

    def ks(self, a, b) -> KsResult:
        result = ks_two_sample(a, b)
        self.logger.log("INFO", f"KS D={result.statistic:.6f} p={result.p_value:.6g} (n={result.n1}/{result.n2})")
        return result

    def kappa(self, labels1, labels2) -> float:
        value = cohen_kappa(labels1, labels2)
        self.logger.log("INFO", f"Cohen's kappa {value:.6f} over {len(labels1)} items")
        return value

    def spearman(self, a, b) -> float:
        value = spearman(a, b)
        self.logger.log("INFO", f"Spearman rho {value:.6f} over {len(a)} pairs")
        return value
