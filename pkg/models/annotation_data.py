from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


@dataclass
class AnnotationSet:
    """Sparse item x annotator label matrix over a domain of L labels"""
    items: List[str]
    annotators: List[str]
    labels: Dict[Tuple[str, str], int]
    label_count: int
    label_names: Optional[List[str]] = None

    def __post_init__(self):
        if self.label_names is None:
            self.label_names = [str(index) for index in range(self.label_count)]
        if len(self.label_names) != self.label_count:
            raise ValueError("label_names must have one entry per label")
        for (item, annotator), label in self.labels.items():
            if not 0 <= label < self.label_count:
                raise ValueError(f"label {label} of ({item}, {annotator}) outside [0, {self.label_count})")

    @classmethod
    def from_triples(cls, triples, label_names=None, label_count=None):
        """Build from (item_id, annotator_id, label_index) triples; first-seen order is kept"""
        items, annotators, labels = [], [], {}
        seen_items, seen_annotators = set(), set()
        for item, annotator, label in triples:
            if (item, annotator) in labels:
                raise ValueError(f"duplicate annotation for item {item} by {annotator}")
            if item not in seen_items:
                seen_items.add(item)
                items.append(item)
            if annotator not in seen_annotators:
                seen_annotators.add(annotator)
                annotators.append(annotator)
            labels[(item, annotator)] = int(label)
        if label_count is None:
            label_count = len(label_names) if label_names else (max(labels.values()) + 1 if labels else 1)
        return cls(items, annotators, labels, label_count, label_names)

    def item_labels(self, item) -> List[int]:
        return [self.labels[(item, annotator)] for annotator in self.annotators
                if (item, annotator) in self.labels]

    def unannotated_items(self) -> List[str]:
        annotated = {item for item, _ in self.labels}
        return [item for item in self.items if item not in annotated]

    def restrict_annotators(self, annotators) -> "AnnotationSet":
        keep = set(annotators)
        labels = {key: label for key, label in self.labels.items() if key[1] in keep}
        return AnnotationSet(
            items=list(self.items),
            annotators=[a for a in self.annotators if a in keep],
            labels=labels,
            label_count=self.label_count,
            label_names=list(self.label_names),
        )


@dataclass
class MacePosterior:
    items: List[str]
    annotators: List[str]
    item_posteriors: np.ndarray        # N x L
    spamming: np.ndarray               # theta_j, length M
    spam_preferences: np.ndarray       # xi_j, M x L
    log_likelihood_trace: List[float] = field(default_factory=list)
    restart_objectives: List[float] = field(default_factory=list)
    best_restart: int = 0
    label_names: Optional[List[str]] = None

    def confidence(self) -> np.ndarray:
        return self.item_posteriors.max(axis=1)

    def gold(self) -> np.ndarray:
        return self.item_posteriors.argmax(axis=1)

    def posterior_of(self, item) -> np.ndarray:
        return self.item_posteriors[self.items.index(item)]

    def gold_rows(self) -> List[Dict]:
        names = self.label_names
        rows = []
        for item, label, conf in zip(self.items, self.gold(), self.confidence()):
            rows.append({
                "item_id": item,
                "gold_label": names[label] if names else int(label),
                "confidence": float(conf)
            })
        return rows

    def annotator_rows(self) -> List[Dict]:
        return [
            {"annotator_id": annotator, "spamming": float(theta)}
            for annotator, theta in zip(self.annotators, self.spamming)
        ]
