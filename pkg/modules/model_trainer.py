import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold

from models.config_model import ModelConfig, TrainConfig
from models.dataset_data import DatasetInstance
from modules.neural_models import NeuralModel, build_model
from modules.statistical_analyzer import accuracy, spearman
from modules.text_processor import Vocabulary, pad_sequences
from utils.error_handler import DatasetTooSmallError, ModelShapeError, StatisticsError, TrainingDivergenceError


@dataclass
class EncodedDataset:
    ids: List[str]
    sequences: List[List[int]]
    targets: np.ndarray
    topics: Optional[np.ndarray] = None
    label_names: Optional[List[str]] = None

    def __len__(self):
        return len(self.ids)

    @property
    def regression(self) -> bool:
        return self.label_names is None

    def subset(self, positions: Sequence[int]) -> "EncodedDataset":
        positions = list(positions)
        return EncodedDataset(
            ids=[self.ids[i] for i in positions],
            sequences=[self.sequences[i] for i in positions],
            targets=self.targets[positions],
            topics=None if self.topics is None else self.topics[positions],
            label_names=self.label_names,
        )


def encode_dataset(instances: Sequence[DatasetInstance], vocab: Vocabulary, regression: bool = False,
                   label_names: Optional[List[str]] = None, topics: Optional[np.ndarray] = None) -> EncodedDataset:
    """Index the instances; class labels are numbered in sorted order unless label_names is given"""
    sequences = [[vocab.lookup(token) for token in instance.tokens] for instance in instances]
    if regression:
        targets = np.array([float(instance.label) for instance in instances])
        label_names = None
    else:
        if label_names is None:
            label_names = sorted({str(instance.label) for instance in instances})
        index_of = {name: i for i, name in enumerate(label_names)}
        targets = np.array([index_of[str(instance.label)] for instance in instances], dtype=np.int64)
    return EncodedDataset([instance.instance_id for instance in instances], sequences, targets,
                          topics, label_names)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, param in self.params.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * param.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * param.grad * param.grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            param.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr

    def step(self):
        for param in self.params.values():
            param.value -= self.lr * param.grad


def make_optimizer(name, params, lr):
    if name == "sgd":
        return SGD(params, lr)
    return Adam(params, lr)


def _batch(dataset: EncodedDataset, positions):
    indices, _ = pad_sequences([dataset.sequences[i] for i in positions])
    topics = None if dataset.topics is None else dataset.topics[positions]
    return indices, dataset.targets[positions], topics


def predict(model: NeuralModel, dataset: EncodedDataset, batch_size: int = 64) -> np.ndarray:
    """Probabilities (N x C) for classifiers, scores (N,) for regressors"""
    outputs = []
    for start in range(0, len(dataset), batch_size):
        positions = list(range(start, min(start + batch_size, len(dataset))))
        indices, _, topics = _batch(dataset, positions)
        output, _ = model.forward(indices, topics, train=False)
        outputs.append(output)
    if not outputs:
        return np.zeros((0,))
    return np.concatenate(outputs, axis=0)


def evaluate_loss(model: NeuralModel, dataset: EncodedDataset, batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        positions = list(range(start, min(start + batch_size, len(dataset))))
        indices, targets, topics = _batch(dataset, positions)
        output, cache = model.forward(indices, topics, train=False)
        loss, _ = model.loss(output, targets, cache)
        total += loss * len(positions)
    return total / len(dataset)


def score(model: NeuralModel, dataset: EncodedDataset, predictions: np.ndarray = None) -> float:
    """Accuracy for classifiers, Spearman rho for regressors"""
    if predictions is None:
        predictions = predict(model, dataset)
    if dataset.regression:
        return spearman(predictions, dataset.targets)
    return accuracy(predictions.argmax(axis=1), dataset.targets)


@dataclass
class TrainResult:
    model: NeuralModel
    trace: List[Dict] = field(default_factory=list)
    train_ids: List[str] = field(default_factory=list)
    best_epoch: int = 0


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: EncodedDataset,
          embedding_matrix: np.ndarray, logger=None, fold=0) -> TrainResult:
    """Mini-batch training with early stopping on a seeded held-out slice"""
    train_config.validate()
    if len(dataset) == 0:
        raise DatasetTooSmallError("cannot train on an empty dataset")
    if dataset.regression != bool(model_config.regression):
        raise ModelShapeError("dataset targets do not match the model's output type")
    if (train_config.objective == "mean_squared_error") != bool(model_config.regression):
        kind = "regression" if model_config.regression else "classification"
        raise ModelShapeError(f"objective {train_config.objective} does not fit a {kind} model")

    seed = train_config.seed
    model = build_model(model_config, embedding_matrix, seed=seed)

    n_heldout = int(round(train_config.heldout_fraction * len(dataset)))
    if n_heldout >= len(dataset):
        n_heldout = 0
    order = np.random.default_rng([seed, 3]).permutation(len(dataset))
    heldout = dataset.subset(sorted(order[:n_heldout])) if n_heldout else None
    training = dataset.subset(sorted(order[n_heldout:]))

    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    optimizer = make_optimizer(train_config.optimizer, model.trainable_parameters(), train_config.learning_rate)

    trace = []
    best_loss, best_state, best_epoch, waited = np.inf, model.get_state(), 0, 0
    for epoch in range(1, train_config.epochs + 1):
        permutation = shuffle_rng.permutation(len(training))
        losses = []
        for start in range(0, len(training), train_config.batch_size):
            positions = permutation[start:start + train_config.batch_size]
            indices, targets, topics = _batch(training, positions)
            loss = model.loss_and_grads(indices, targets, topics, train=True, rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"loss became {loss} at epoch {epoch} (fold {fold})")
            optimizer.step()
            losses.append(loss * len(positions))

        epoch_loss = float(sum(losses) / len(training))
        heldout_loss = evaluate_loss(model, heldout) if heldout is not None else None
        trace.append({"fold": fold, "epoch": epoch, "loss": epoch_loss, "heldout_loss": heldout_loss})
        if logger:
            logger.log_epoch(fold, epoch, epoch_loss, heldout_loss)

        if heldout is None:
            best_state, best_epoch = None, epoch
            continue
        if heldout_loss < best_loss:
            best_loss, best_state, best_epoch, waited = heldout_loss, model.get_state(), epoch, 0
        else:
            waited += 1
            if waited >= train_config.patience:
                break

    if best_state is not None:
        model.set_state(best_state)
    return TrainResult(model, trace, list(training.ids), best_epoch)


@dataclass
class CrossValidationResult:
    metric: str
    fold_rows: List[Dict]
    mean: float
    predictions: Dict[str, object]
    traces: List[Dict] = field(default_factory=list)

    def metric_rows(self) -> List[Dict]:
        return [{"fold": row["fold"], "metric": self.metric, "value": row["value"]} for row in self.fold_rows]


def fold_splits(dataset: EncodedDataset, folds: int, seed: int):
    if folds < 2:
        raise DatasetTooSmallError("cross-validation needs at least 2 folds")
    if len(dataset) < folds:
        raise DatasetTooSmallError(f"{len(dataset)} instances cannot fill {folds} folds")
    positions = np.arange(len(dataset))
    try:
        if dataset.regression:
            return list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(positions))
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        return list(splitter.split(positions, dataset.targets))
    except ValueError as e:
        raise DatasetTooSmallError(str(e))


def cross_validate(model_config: ModelConfig, train_config: TrainConfig, dataset: EncodedDataset,
                   embedding_matrix: np.ndarray, folds: int = 10, threads: int = 1, logger=None) -> CrossValidationResult:
    """Stratified (classification) or shuffled (regression) k-fold; each instance is tested once"""
    splits = fold_splits(dataset, folds, train_config.seed)
    metric = "spearman" if dataset.regression else "accuracy"

    def run_fold(fold):
        train_positions, test_positions = splits[fold]
        fold_config = copy.deepcopy(train_config)
        fold_config.seed = train_config.seed * 1000 + fold
        result = train(model_config, fold_config, dataset.subset(train_positions), embedding_matrix,
                       logger=logger, fold=fold)
        test = dataset.subset(test_positions)
        outputs = predict(result.model, test)
        try:
            value = score(result.model, test, outputs)
        except StatisticsError:
            value = float("nan")
        return fold, test, outputs, value, result.trace

    if logger:
        logger.log_stage("cross-validate", f"{model_config.kind}, {folds} folds, {len(dataset)} instances")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run_fold, range(folds)))

    rows, predictions, traces = [], {}, []
    for fold, test, outputs, value, trace in results:
        rows.append({"fold": fold, "value": value, "n_test": len(test)})
        traces.extend(trace)
        for instance_id, output in zip(test.ids, outputs):
            predictions[instance_id] = float(output) if dataset.regression else int(np.argmax(output))

    values = np.array([row["value"] for row in rows], dtype=np.float64)
    mean = float(np.nanmean(values)) if np.isfinite(values).any() else float("nan")
    return CrossValidationResult(metric, rows, mean, predictions, traces)


class ModelTrainer:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    def train(self, model_config, train_config, dataset, embedding_matrix) -> TrainResult:
        self.logger.log_stage("train", f"{model_config.kind} on {len(dataset)} instances")
        return train(model_config, train_config, dataset, embedding_matrix, logger=self.logger)

    def cross_validate(self, model_config, train_config, dataset, embedding_matrix, folds=None):
        folds = folds or self.config.cv_folds
        return cross_validate(model_config, train_config, dataset, embedding_matrix,
                              folds=folds, threads=self.config.threads, logger=self.logger)
