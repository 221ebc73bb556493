import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from models.dataset_data import AD_HOMINEM
from modules.neural_models import token_attention
from modules.text_processor import COMMENT_BEGIN, RESERVED, Vocabulary
from utils.error_handler import StatisticsError

TEMPLATE_FOLDER = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "templates")
BUCKETS = ("TP", "FP", "FN", "TN")


@dataclass
class AttentionReport:
    instance_id: str
    tokens: List[str]
    weights: List[float]
    prediction: str
    gold: str
    bucket: Optional[str] = None

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "tokens": list(self.tokens),
            "weights": [float(w) for w in self.weights],
            "prediction": self.prediction,
            "gold": self.gold,
            "bucket": self.bucket,
        }


def bucket_of(prediction, gold, positive_label=AD_HOMINEM) -> str:
    predicted_positive = prediction == positive_label
    gold_positive = gold == positive_label
    if predicted_positive:
        return "TP" if gold_positive else "FP"
    return "FN" if gold_positive else "TN"


def error_buckets(predictions: Sequence[str], gold: Sequence[str],
                  docs: Sequence[Tuple[str, Sequence[str], Sequence[float]]],
                  positive_label: str = AD_HOMINEM) -> Dict[str, List[AttentionReport]]:
    """Partition (instance_id, tokens, weights) docs into TP/FP/FN/TN reports"""
    if not (len(predictions) == len(gold) == len(docs)):
        raise StatisticsError(
            f"misaligned inputs: {len(predictions)} predictions, {len(gold)} gold labels, {len(docs)} docs")

    buckets = {name: [] for name in BUCKETS}
    for prediction, label, (instance_id, tokens, weights) in zip(predictions, gold, docs):
        if len(tokens) != len(weights):
            raise StatisticsError(f"{instance_id}: {len(tokens)} tokens but {len(weights)} weights")
        bucket = bucket_of(prediction, label, positive_label)
        buckets[bucket].append(AttentionReport(instance_id, list(tokens), [float(w) for w in weights],
                                               prediction, label, bucket))
    return buckets


def intensities(weights: Sequence[float]) -> np.ndarray:
    """Min-max rescaling to [0, 1] within one document; constant weights map to 0"""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        return weights
    low, high = weights.min(), weights.max()
    if high - low <= 0:
        return np.zeros_like(weights)
    return (weights - low) / (high - low)


def _environment():
    return Environment(
        loader=FileSystemLoader(TEMPLATE_FOLDER),
        autoescape=select_autoescape(["html"]),
        keep_trailing_newline=True,
    )


def render_heatmap(report: AttentionReport) -> str:
    """One block per comment; intensities rescale over the rendered tokens only"""
    rendered = [i for i, token in enumerate(report.tokens) if token != COMMENT_BEGIN]
    alphas = dict(zip(rendered, intensities([report.weights[i] for i in rendered])))
    blocks = [[]]
    for position, (token, weight) in enumerate(zip(report.tokens, report.weights)):
        if token == COMMENT_BEGIN:
            if blocks[-1]:
                blocks.append([])
            continue
        blocks[-1].append({"token": token, "alpha": f"{alphas[position]:.4f}", "weight": f"{weight:.6f}"})
    blocks = [block for block in blocks if block]
    return _environment().get_template("heatmap.html").render(report=report, blocks=blocks)


def top_trigger_ngrams(reports: Sequence[AttentionReport], n: int = 1,
                       top_k: int = 20) -> List[Tuple[str, float, int]]:
    """(phrase, score, count): score is the mean over occurrences of the mean member-token weight"""
    if n < 1:
        raise ValueError("n must be at least 1")
    occurrences = defaultdict(list)
    for report in reports:
        tokens, weights = report.tokens, report.weights
        for start in range(len(tokens) - n + 1):
            window = tokens[start:start + n]
            if any(token in RESERVED for token in window):
                continue
            occurrences[" ".join(window)].append(float(np.mean(weights[start:start + n])))

    ranked = sorted(((phrase, float(np.mean(values)), len(values)) for phrase, values in occurrences.items()),
                    key=lambda row: (-row[1], row[0]))
    return ranked[:top_k]


class AttentionExplainer:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    def explain(self, model, instances, vocab: Vocabulary, label_names: Sequence[str]) -> Dict[str, List[AttentionReport]]:
        """Attention reports for every instance, bucketed against the gold labels"""
        predictions, gold, docs = [], [], []
        for position, instance in enumerate(instances):
            indices = np.array([[vocab.lookup(token) for token in instance.tokens]])
            probs, _ = model.forward(indices, train=False)
            weights = token_attention(model, indices[0])
            predictions.append(label_names[int(np.argmax(probs[0]))])
            gold.append(str(instance.label))
            docs.append((instance.instance_id, list(instance.tokens), weights.tolist()))
            self.logger.log_processing_progress("explain", position + 1, len(instances))

        buckets = error_buckets(predictions, gold, docs)
        sizes = ", ".join(f"{name} {len(buckets[name])}" for name in BUCKETS)
        self.logger.log_stage("explain", sizes)
        return buckets
