from collections import OrderedDict
from typing import Dict, Optional

import numpy as np

from models.config_model import ModelConfig
from modules.neural_layers import (
    BiLSTM, ConvMaxPool, Dropout, Embedding, Linear, Parameter, StructuredAttention,
    attention_penalty, cross_entropy, gather_parameters, mean_squared_error, softmax
)
from modules.text_processor import PAD_INDEX
from utils.error_handler import ModelShapeError, UnsupportedModelError


class NeuralModel:
    """Embedding front end plus an architecture-specific encoder and a linear head"""

    kind = None

    def __init__(self, config: ModelConfig, embedding_matrix: np.ndarray, seed: int = 13):
        config.validate()
        if embedding_matrix.shape[1] != config.embedding_dim:
            raise ModelShapeError(
                f"embedding matrix has dimension {embedding_matrix.shape[1]}, "
                f"config expects {config.embedding_dim}")
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.embedding = Embedding(embedding_matrix, frozen=config.freeze_embeddings)
        self.dropout = Dropout(config.dropout)

    # subclasses define _encode / _encode_backward and self.head

    def parameters(self) -> Dict[str, Parameter]:
        params = OrderedDict()
        params.update(gather_parameters("embedding", self.embedding))
        for prefix, layer in self._layers():
            params.update(gather_parameters(prefix, layer))
        return params

    def trainable_parameters(self) -> Dict[str, Parameter]:
        return OrderedDict((name, p) for name, p in self.parameters().items() if not p.frozen)

    def zero_grad(self):
        for param in self.parameters().values():
            param.zero_grad()

    def get_state(self) -> Dict[str, np.ndarray]:
        return {name: param.value.copy() for name, param in self.parameters().items()}

    def set_state(self, state: Dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ModelShapeError(f"state lacks parameters: {', '.join(sorted(missing))}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ModelShapeError(f"parameter {name}: shape {value.shape} != {param.shape}")
            param.value[...] = value

    def _check_batch(self, indices, topics):
        indices = np.asarray(indices)
        if indices.ndim != 2:
            raise ModelShapeError("batch must be a 2-D array of token indices")
        mask = indices != PAD_INDEX
        empty = np.flatnonzero(mask.sum(axis=1) == 0)
        if indices.shape[1] == 0 or len(empty):
            raise ModelShapeError(f"empty sequence at batch rows {empty.tolist()}")
        k = self.config.topic_size
        if k:
            if topics is None or np.shape(topics) != (indices.shape[0], k):
                raise ModelShapeError(f"topic vectors must have shape ({indices.shape[0]}, {k})")
        elif topics is not None:
            raise ModelShapeError("model takes no topic vectors")
        return indices, mask

    def forward(self, indices, topics=None, train=False, rng=None):
        """Class probabilities (B x C) or regression scores (B,)"""
        indices, mask = self._check_batch(indices, topics)
        x, emb_cache = self.embedding.forward(indices)
        features, enc_cache, extra = self._encode(x, mask)
        dropped, drop_cache = self.dropout.forward(features, train, rng)
        logits, head_cache = self.head.forward(dropped)
        topic_cache = None
        if self.config.topic_size:
            topics = np.asarray(topics, dtype=np.float64)
            logits = logits + topics @ self.topic_weight.value
            topic_cache = topics
        if self.config.regression:
            output = logits[:, 0]
        else:
            output = softmax(logits)
        cache = (emb_cache, enc_cache, drop_cache, head_cache, topic_cache, extra)
        return output, cache

    def loss(self, output, targets, cache):
        targets = np.asarray(targets)
        if self.config.regression:
            loss, doutput = mean_squared_error(output, targets.astype(np.float64))
            dlogits = doutput[:, None]
        else:
            loss, dlogits = cross_entropy(output, targets)
        penalty = self._penalty(cache)
        return loss + penalty, dlogits

    def _penalty(self, cache):
        return 0.0

    def backward(self, dlogits, cache):
        emb_cache, enc_cache, drop_cache, head_cache, topic_cache, extra = cache
        if topic_cache is not None:
            self.topic_weight.grad += topic_cache.T @ dlogits
        ddropped = self.head.backward(dlogits, head_cache)
        dfeatures = self.dropout.backward(ddropped, drop_cache)
        dx = self._encode_backward(dfeatures, enc_cache, extra)
        self.embedding.backward(dx, emb_cache)

    def loss_and_grads(self, indices, targets, topics=None, train=True, rng=None) -> float:
        """Zero gradients, run forward and backward; returns the batch loss"""
        self.zero_grad()
        output, cache = self.forward(indices, topics, train=train, rng=rng)
        loss, dlogits = self.loss(output, targets, cache)
        self.backward(dlogits, cache)
        return loss

    def _topic_head(self):
        if self.config.topic_size:
            self.topic_weight = Parameter(np.zeros((self.config.topic_size, self.config.output_size)))


class CnnModel(NeuralModel):
    kind = "cnn"

    def __init__(self, config, embedding_matrix, seed=13):
        super().__init__(config, embedding_matrix, seed)
        self.conv = ConvMaxPool(config.embedding_dim, config.filter_widths, config.n_maps, self.rng,
                                activation=config.conv_activation)
        self.head = Linear(self.conv.output_dim, config.output_size, self.rng)
        self._topic_head()

    def _layers(self):
        layers = [("conv", self.conv), ("head", self.head)]
        return layers

    def parameters(self):
        params = super().parameters()
        if self.config.topic_size:
            params["topic.weight"] = self.topic_weight
        return params

    def _encode(self, x, mask):
        pooled, cache = self.conv.forward(x, mask)
        return pooled, cache, None

    def _encode_backward(self, dfeatures, cache, extra):
        return self.conv.backward(dfeatures, cache)


class CnnLdaModel(CnnModel):
    """CNN whose logits also receive a linear map of the document's topic mixture"""
    kind = "cnn-lda"


class BiLstmModel(NeuralModel):
    kind = "bilstm"

    def __init__(self, config, embedding_matrix, seed=13):
        super().__init__(config, embedding_matrix, seed)
        self.encoders = []
        input_dim = config.embedding_dim
        for _ in range(config.lstm_layers):
            encoder = BiLSTM(input_dim, config.lstm_hidden, self.rng)
            self.encoders.append(encoder)
            input_dim = encoder.output_dim
        self.head = Linear(input_dim, config.output_size, self.rng)

    def _layers(self):
        layers = [(f"lstm{i + 1}", encoder) for i, encoder in enumerate(self.encoders)]
        layers.append(("head", self.head))
        return layers

    def _encode(self, x, mask):
        caches = []
        final = None
        for encoder in self.encoders:
            x, final, cache = encoder.forward(x, mask)
            caches.append(cache)
        return final, caches, None

    def _encode_backward(self, dfeatures, caches, extra):
        doutputs, dfinal = None, dfeatures
        for encoder, cache in zip(reversed(self.encoders), reversed(caches)):
            doutputs = encoder.backward(doutputs, dfinal, cache)
            dfinal = None
        return doutputs


class SsaeModel(NeuralModel):
    """BiLSTM states pooled by an r-row self-attention matrix, flattened into a linear head"""
    kind = "ssae"

    def __init__(self, config, embedding_matrix, seed=13):
        super().__init__(config, embedding_matrix, seed)
        self.encoder = BiLSTM(config.embedding_dim, config.lstm_hidden, self.rng)
        self.attention = StructuredAttention(self.encoder.output_dim, config.attention_hidden,
                                             config.attention_rows, self.rng)
        self.head = Linear(config.attention_rows * self.encoder.output_dim, config.output_size, self.rng)

    def _layers(self):
        return [("lstm", self.encoder), ("attention", self.attention), ("head", self.head)]

    def _encode(self, x, mask):
        H, _, lstm_cache = self.encoder.forward(x, mask)
        M, A, attention_cache = self.attention.forward(H, mask)
        return M.reshape(M.shape[0], -1), (lstm_cache, attention_cache, M.shape), A

    def _penalty(self, cache):
        if not self.config.attention_penalty:
            return 0.0
        value, _ = attention_penalty(cache[5])
        return self.config.attention_penalty * value

    def _encode_backward(self, dfeatures, cache, A):
        lstm_cache, attention_cache, m_shape = cache
        dA_extra = None
        if self.config.attention_penalty:
            _, grad = attention_penalty(A)
            dA_extra = self.config.attention_penalty * grad
        dH = self.attention.backward(dfeatures.reshape(m_shape), dA_extra, attention_cache)
        return self.encoder.backward(dH, None, lstm_cache)

    def attention_matrix(self, indices) -> np.ndarray:
        indices, mask = self._check_batch(indices, None)
        x, _ = self.embedding.forward(indices)
        H, _, _ = self.encoder.forward(x, mask)
        _, A, _ = self.attention.forward(H, mask)
        return A


MODEL_CLASSES = {
    "cnn": CnnModel,
    "cnn-lda": CnnLdaModel,
    "bilstm": BiLstmModel,
    "ssae": SsaeModel,
}


def build_model(config: ModelConfig, embedding_matrix: np.ndarray, seed: int = 13) -> NeuralModel:
    if config.kind not in MODEL_CLASSES:
        raise UnsupportedModelError(f"unknown model kind: {config.kind}")
    if config.kind == "cnn-lda" and not config.topic_size:
        raise ModelShapeError("cnn-lda needs a positive topic_size")
    return MODEL_CLASSES[config.kind](config, embedding_matrix, seed)


def token_attention(model: NeuralModel, indices) -> np.ndarray:
    """Per-token weights: attention rows summed per position, normalised over real tokens"""
    if not isinstance(model, SsaeModel):
        raise UnsupportedModelError(f"token attention needs an ssae model, got {model.kind}")
    indices = np.asarray(indices)
    row = indices[None, :] if indices.ndim == 1 else indices[:1]
    A = model.attention_matrix(row)[0]                 # r x T
    length = int((row[0] != PAD_INDEX).sum())
    weights = A.sum(axis=0)[:length]
    return weights / weights.sum()


def gradient_check(model: NeuralModel, indices, targets, topics=None, epsilon: float = 1e-4,
                   seed: int = 0, train: bool = True) -> Dict[str, float]:
    """Norm-based relative error between analytic and central-difference gradients per parameter"""

    def fresh_rng():
        return np.random.default_rng(seed)

    def loss_only():
        output, cache = model.forward(indices, topics, train=train, rng=fresh_rng())
        loss, _ = model.loss(output, targets, cache)
        return loss

    model.loss_and_grads(indices, targets, topics, train=train, rng=fresh_rng())
    analytic = {name: param.grad.copy() for name, param in model.trainable_parameters().items()}

    errors = {}
    for name, param in model.trainable_parameters().items():
        numeric = np.zeros_like(param.value)
        flat = param.value.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        # the PAD row never receives gradient
        skip = range(0)
        if name == "embedding.weight":
            skip = range(PAD_INDEX * param.shape[1], (PAD_INDEX + 1) * param.shape[1])
        for position in range(flat.size):
            if position in skip:
                continue
            original = flat[position]
            flat[position] = original + epsilon
            plus = loss_only()
            flat[position] = original - epsilon
            minus = loss_only()
            flat[position] = original
            numeric_flat[position] = (plus - minus) / (2 * epsilon)
        difference = np.linalg.norm(analytic[name] - numeric)
        scale = np.linalg.norm(analytic[name]) + np.linalg.norm(numeric)
        errors[name] = float(difference / scale) if scale > 1e-12 else 0.0
    return errors
