import os
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from models.config_model import ModelConfig
from modules.neural_models import NeuralModel, build_model
from modules.text_processor import Vocabulary
from utils.error_handler import CheckpointError, ModelShapeError

FORMAT_VERSION = 1
PARAM_PREFIX = "param/"


@dataclass
class Checkpoint:
    model: NeuralModel
    vocab: Vocabulary
    label_names: Optional[List[str]] = None
    train_ids: List[str] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    @property
    def regression(self) -> bool:
        return bool(self.model.config.regression)


class ModelManager:
    """
    Checkpoint containers for trained networks
    - parameters as little-endian doubles, one array per named parameter
    - model config, vocabulary and its fingerprint, label names, training ids as JSON metadata
    """

    def __init__(self, logger_service):
        self.logger = logger_service

    def save(self, checkpoint: Checkpoint, file_path) -> str:
        meta = {
            "format_version": FORMAT_VERSION,
            "model_config": checkpoint.model.config.to_dict(),
            "vocabulary": checkpoint.vocab.to_list(),
            "vocabulary_fingerprint": checkpoint.vocab.fingerprint(),
            "label_names": checkpoint.label_names,
            "train_ids": sorted(checkpoint.train_ids),
            "metadata": checkpoint.metadata,
        }
        arrays = {PARAM_PREFIX + name: np.ascontiguousarray(param.value, dtype="<f8")
                  for name, param in checkpoint.model.parameters().items()}
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True, ensure_ascii=False))

        os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
        with open(file_path, "wb") as f:
            np.savez(f, **arrays)
        self.logger.log("INFO", f"checkpoint saved: {file_path} ({len(arrays) - 1} parameters)")
        return file_path

    def load(self, file_path) -> Checkpoint:
        if not os.path.exists(file_path):
            raise CheckpointError(f"checkpoint not found: {file_path}")
        try:
            with np.load(file_path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                state = {key[len(PARAM_PREFIX):]: data[key] for key in data.files if key.startswith(PARAM_PREFIX)}
        except (OSError, ValueError, KeyError) as e:
            raise CheckpointError(f"{file_path}: unreadable checkpoint ({e})")

        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{file_path}: unsupported format version {meta.get('format_version')}")

        vocab = Vocabulary.from_list(meta["vocabulary"])
        if vocab.fingerprint() != meta["vocabulary_fingerprint"]:
            raise CheckpointError(f"{file_path}: vocabulary fingerprint mismatch")

        config = ModelConfig.from_dict(meta["model_config"])
        placeholder = np.zeros((len(vocab), config.embedding_dim))
        try:
            model = build_model(config, placeholder)
            model.set_state(state)
        except ModelShapeError as e:
            raise CheckpointError(f"{file_path}: {e}")

        self.logger.log("INFO", f"checkpoint loaded: {file_path} ({config.kind}, {len(vocab)} words)")
        return Checkpoint(model, vocab, meta.get("label_names"), list(meta.get("train_ids", [])),
                          meta.get("metadata", {}))
