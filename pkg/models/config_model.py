import os


def default_thread_count():
    try:
        import psutil
        count = psutil.cpu_count(logical=True)
    except ImportError:
        count = None
    return count or os.cpu_count() or 1


class ConfigModel:
    """Run-wide settings shared by every CLI command"""

    def __init__(self):
        self.seed = 13
        self.threads = default_thread_count()
        self.lowercase = False
        self.min_count = 1
        self.embedding_dim = 50
        self.hostility_rule = 2

        # topic model
        self.lda_k = 50
        self.lda_alpha = None  # None means 50 / k
        self.lda_beta = 0.01
        self.lda_iterations = 500

        # crowd label aggregation
        self.mace_restarts = 10
        self.mace_iterations = 50
        self.mace_smoothing = 0.1
        self.mace_threshold = 0.9

        self.cv_folds = 10

    def reset(self):
        self.__init__()

    def update(self, config_data):
        for key, value in config_data.items():
            if hasattr(self, key) and value is not None:
                setattr(self, key, value)

    def to_dict(self):
        return {
            "seed": self.seed,
            "threads": self.threads,
            "lowercase": self.lowercase,
            "min_count": self.min_count,
            "embedding_dim": self.embedding_dim,
            "hostility_rule": self.hostility_rule,
            "lda_k": self.lda_k,
            "lda_alpha": self.lda_alpha,
            "lda_beta": self.lda_beta,
            "lda_iterations": self.lda_iterations,
            "mace_restarts": self.mace_restarts,
            "mace_iterations": self.mace_iterations,
            "mace_smoothing": self.mace_smoothing,
            "mace_threshold": self.mace_threshold,
            "cv_folds": self.cv_folds
        }

    def resolved_lda_alpha(self):
        return self.lda_alpha if self.lda_alpha is not None else 50.0 / self.lda_k

    def validate(self):
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

        if self.min_count < 1:
            raise ValueError("min_count must be at least 1")

        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be at least 1")

        if self.lda_k < 1:
            raise ValueError("lda_k must be at least 1")

        if self.mace_restarts < 1 or self.mace_iterations < 1:
            raise ValueError("MACE needs at least one restart and one iteration")

        if not (0.0 < self.mace_threshold <= 1.0):
            raise ValueError("mace_threshold must lie in (0, 1]")

        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")

        return True


MODEL_KINDS = ("cnn", "bilstm", "ssae", "cnn-lda")


class ModelConfig:
    """Architecture hyperparameters for the four model families"""

    def __init__(self, kind="cnn", **overrides):
        self.kind = kind
        self.embedding_dim = 50
        self.filter_widths = (3, 4, 5)
        self.n_maps = 100
        self.conv_activation = "relu"
        self.lstm_hidden = 64
        self.lstm_layers = 2
        self.attention_hidden = 64
        self.attention_rows = 8
        self.attention_penalty = 0.0
        self.dropout = 0.5
        self.num_classes = 2
        self.regression = False
        self.topic_size = 0
        self.freeze_embeddings = True

        if kind == "ssae":
            self.lstm_layers = 1

        self.update(overrides)

    def update(self, config_data):
        for key, value in config_data.items():
            if hasattr(self, key) and value is not None:
                if key == "filter_widths":
                    value = tuple(int(w) for w in value)
                setattr(self, key, value)

    @property
    def output_size(self):
        return 1 if self.regression else self.num_classes

    def to_dict(self):
        return {
            "kind": self.kind,
            "embedding_dim": self.embedding_dim,
            "filter_widths": list(self.filter_widths),
            "n_maps": self.n_maps,
            "conv_activation": self.conv_activation,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "attention_hidden": self.attention_hidden,
            "attention_rows": self.attention_rows,
            "attention_penalty": self.attention_penalty,
            "dropout": self.dropout,
            "num_classes": self.num_classes,
            "regression": self.regression,
            "topic_size": self.topic_size,
            "freeze_embeddings": self.freeze_embeddings
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kind = data.pop("kind", "cnn")
        return cls(kind, **data)

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind: {self.kind}")

        sizes = [self.embedding_dim, self.n_maps, self.lstm_hidden,
                 self.attention_hidden, self.attention_rows, self.output_size]
        if any(size < 1 for size in sizes) or any(w < 1 for w in self.filter_widths):
            raise ValueError("all model sizes must be at least 1")

        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")

        if self.topic_size < 0:
            raise ValueError("topic_size must be non-negative")

        if self.kind == "cnn-lda" and self.topic_size < 1:
            raise ValueError("cnn-lda needs topic_size >= 1")

        if self.kind != "cnn-lda" and self.topic_size:
            raise ValueError("only cnn-lda takes topic vectors")

        if self.kind == "bilstm" and self.lstm_layers != 2:
            raise ValueError("the BiLSTM classifier is fixed at 2 stacked layers")

        if self.conv_activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported conv activation: {self.conv_activation}")

        if self.attention_penalty < 0:
            raise ValueError("attention_penalty must be non-negative")

        return True


class TrainConfig:
    """Optimisation settings; the seed fixes init, shuffling and dropout masks"""

    def __init__(self, **overrides):
        self.learning_rate = 1e-3
        self.epochs = 20
        self.batch_size = 32
        self.seed = 13
        self.patience = 3
        self.objective = "cross_entropy"
        self.optimizer = "adam"
        self.heldout_fraction = 0.1

        self.update(overrides)

    def update(self, config_data):
        for key, value in config_data.items():
            if hasattr(self, key) and value is not None:
                setattr(self, key, value)

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "patience": self.patience,
            "objective": self.objective,
            "optimizer": self.optimizer,
            "heldout_fraction": self.heldout_fraction
        }

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")

        if self.objective not in ("cross_entropy", "mean_squared_error"):
            raise ValueError(f"unknown objective: {self.objective}")

        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer: {self.optimizer}")

        if not (0.0 <= self.heldout_fraction < 1.0):
            raise ValueError("heldout_fraction must lie in [0, 1)")

        return True
