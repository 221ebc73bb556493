import json
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

AD_HOMINEM = "AD_HOMINEM"
DELTA = "DELTA"
NEGATIVE = "NEGATIVE"


@dataclass(frozen=True)
class MatchedPair:
    positive: str
    negative: str
    score: float

    def to_dict(self) -> Dict:
        return {"positive": self.positive, "negative": self.negative, "score": self.score}


@dataclass(frozen=True)
class TripletInstance:
    """Three posts preceding an outcome post, oldest first, each opened by the comment delimiter"""
    outcome_id: str
    context_ids: Tuple[str, str, str]
    tokens: Tuple[str, ...]
    label: str
    thread_id: str

    @property
    def instance_id(self) -> str:
        suffix = "ah" if self.label == AD_HOMINEM else "delta"
        return f"{self.outcome_id}_{suffix}_t1"

    def to_instance(self) -> "DatasetInstance":
        return DatasetInstance(
            instance_id=self.instance_id,
            label=self.label,
            tokens=list(self.tokens),
            post_ids=list(self.context_ids),
            thread_id=self.thread_id,
        )


@dataclass
class DatasetInstance:
    """One line of a dataset file; label is a class name or, for regression, a float"""
    instance_id: str
    label: object
    tokens: List[str]
    post_ids: List[str] = field(default_factory=list)
    thread_id: Optional[str] = None

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def to_dict(self) -> Dict:
        row = {
            "instance_id": self.instance_id,
            "label": self.label,
            "text": self.text,
            "post_ids": list(self.post_ids),
        }
        if self.thread_id is not None:
            row["thread_id"] = self.thread_id
        return row

    @classmethod
    def from_dict(cls, row: Dict) -> "DatasetInstance":
        # text is whitespace-joined tokens, so a split restores them
        return cls(
            instance_id=str(row["instance_id"]),
            label=row["label"],
            tokens=str(row.get("text", "")).split(),
            post_ids=list(row.get("post_ids", [])),
            thread_id=row.get("thread_id"),
        )


@dataclass
class RunManifest:
    command: str
    parameters: Dict
    corpus_hash: Optional[str]
    seed: Optional[int]
    tool_version: str
    timestamp: str
    outputs: List[str] = field(default_factory=list)
    status: str = "completed"
    error: Optional[Dict] = None
    log_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.parameters, sort_keys=True, default=str).encode("utf-8")).hexdigest()
        return f"{self.command.replace(' ', '-')}-{digest[:8]}"

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "parameters": self.parameters,
            "corpus_hash": self.corpus_hash,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "outputs": sorted(self.outputs),
            "status": self.status,
            "error": self.error,
            "log_counts": dict(sorted(self.log_counts.items())),
        }
