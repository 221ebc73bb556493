import os
import logging
import functools
from datetime import datetime, timezone

import click
import numpy as np
from dotenv import dotenv_values

from models.config_model import ConfigModel, MODEL_KINDS, ModelConfig, TrainConfig
from models.dataset_data import DatasetInstance, RunManifest
from models.reference_targets import (
    BINARY_ACCURACY, CROWD_KAPPA, REGRESSION_RHO, TRIPLET_ACCURACY, corpus_reference_items,
    extrapolation_reference_items, reference_rows, taxonomy_sections
)
from modules.logger_service import LoggerService
from modules.corpus_processor import CorpusProcessor
from modules.text_processor import TextProcessor
from modules.annotation_aggregator import (
    AnnotationAggregator, accuracy_against, average_scale, label_distribution, load_annotations, load_span_annotations
)
from modules.dataset_sampler import DatasetSampler
from modules.model_trainer import EncodedDataset, ModelTrainer, encode_dataset, predict
from modules.model_manager import Checkpoint, ModelManager
from modules.topic_model import TopicModeler, load_lda, save_lda, top_words
from modules.statistical_analyzer import StatisticalAnalyzer, extrapolate
from modules.attention_explainer import BUCKETS, AttentionExplainer, render_heatmap, top_trigger_ngrams
from utils.error_handler import CheckpointError, ErrorHandler, StatisticsError
from utils.file_handler import FileHandler, content_hash, format_key_values, iter_lines, read_jsonl, read_table

TOOL_VERSION = "1.0.0"

# data and processing errors; click exits 2 on usage errors
EXIT_FAILURE = 1

# option values that name input files; manifests record their base names
PATH_PARAMS = {"corpus", "data", "vectors", "annotations", "model", "lda", "exclude", "a", "b", "reference_labels"}

config = ConfigModel()
error_handler = ErrorHandler()
logger_service = LoggerService()

corpus_processor = CorpusProcessor(config, logger_service)
text_processor = TextProcessor(config, logger_service)
annotation_aggregator = AnnotationAggregator(config, logger_service)
dataset_sampler = DatasetSampler(config, logger_service, text_processor)
model_trainer = ModelTrainer(config, logger_service)
model_manager = ModelManager(logger_service)
topic_modeler = TopicModeler(config, logger_service)
statistical_analyzer = StatisticalAnalyzer(logger_service)
attention_explainer = AttentionExplainer(config, logger_service)

_run_log_handler = None


def _coerce(current, raw):
    """Convert a key=value string to the type of the setting it overrides"""
    if isinstance(current, bool):
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float) or current is None:
        return float(raw)
    return raw


def _default_map(command, values):
    mapping = dict(values)
    for name, sub in getattr(command, "commands", {}).items():
        mapping[name] = _default_map(sub, values)
    return mapping


def _attach_run_log(out_dir):
    global _run_log_handler
    root = logging.getLogger()
    if _run_log_handler is not None:
        root.removeHandler(_run_log_handler)
        _run_log_handler.close()
    _run_log_handler = logging.FileHandler(os.path.join(out_dir, "run.log"), encoding="utf-8")
    _run_log_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    root.addHandler(_run_log_handler)


def manifest_timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


class Run:
    """One CLI invocation: output layout, trace id and the manifest written at the end"""

    def __init__(self, command, params, primary_input, file_handler):
        self.command = command
        self.file_handler = file_handler
        self.seed = config.seed
        self.outputs = []
        parameters = {}
        for key, value in sorted(params.items()):
            if key in PATH_PARAMS and value:
                value = os.path.basename(str(value))
            elif isinstance(value, tuple):
                value = list(value)
            parameters[key] = value
        parameters["config"] = config.to_dict()
        parameters["config"].pop("threads")
        self.manifest = RunManifest(
            command=command,
            parameters=parameters,
            corpus_hash=content_hash(primary_input) if primary_input and os.path.isfile(primary_input) else None,
            seed=self.seed,
            tool_version=TOOL_VERSION,
            timestamp=manifest_timestamp(),
        )

    @property
    def run_id(self):
        return self.manifest.run_id

    def record(self, file_path):
        self.outputs.append(os.path.relpath(file_path, self.file_handler.output_folder).replace(os.sep, "/"))
        return file_path

    def text(self, subfolder, filename, content):
        return self.record(self.file_handler.write_text(subfolder, filename, content))

    def table(self, subfolder, filename, rows, columns=None):
        return self.record(self.file_handler.write_table(subfolder, filename, rows, columns))

    def jsonl(self, subfolder, filename, rows):
        return self.record(self.file_handler.write_jsonl(subfolder, filename, rows))

    def finish(self, error=None):
        """Write the manifest; a failed run records the error instead of a complete output list"""
        self.manifest.outputs = list(self.outputs)
        self.manifest.log_counts = logger_service.get_log_stats()["by_level"]
        if error is not None:
            self.manifest.status = "failed"
            self.manifest.error = {"error_type": error["error_type"], "message": error["message"]}
        logger_service.export_logs(os.path.join(self.file_handler.output_folder, "run.jsonl"), append=True)
        return self.file_handler.write_json("manifests", f"{self.run_id}.json", self.manifest.to_dict())


def workflow(command, primary=None):
    """Wrap a command body: set up the run, map failures to exit 1, write the manifest"""

    def decorator(func):
        @functools.wraps(func)
        @click.pass_context
        def wrapper(ctx, **params):
            state = ctx.find_root().obj
            if params.get("seed") is not None:
                config.seed = params["seed"]
            if params.get("threads") is not None:
                config.threads = params["threads"]
            run = None
            try:
                config.validate()
                file_handler = FileHandler(state["out"])
                file_handler.create_output_layout()
                _attach_run_log(state["out"])
                run = Run(command, params, params.get(primary) if primary else None, file_handler)
                logger_service.begin_run(run.run_id)
                logger_service.log_stage(command, f"run {run.run_id}")
                func(run, **params)
            except click.ClickException:
                raise
            except Exception as e:
                message = error_handler.handle_error(e, command)
                click.echo(message, err=True)
                if run is not None:
                    run.finish(error_handler.last_error())
                ctx.exit(EXIT_FAILURE)
            run.finish()

        return wrapper

    return decorator


def seed_option(func):
    func = click.option("--threads", type=int, default=None, help="Worker cap (default: machine parallelism)")(func)
    return click.option("--seed", type=int, default=None, help="Master seed for every stochastic step")(func)


def _read_instances(file_path):
    return [DatasetInstance.from_dict(row) for row in read_jsonl(file_path)]


def _read_values(file_path):
    return [line.strip() for _, line in iter_lines(file_path)]


def _read_numbers(file_path):
    values = []
    for line_number, line in iter_lines(file_path):
        try:
            values.append(float(line))
        except ValueError:
            raise StatisticsError(f"{file_path} line {line_number}: not a number: {line.strip()!r}")
    return values


@click.group(context_settings={"auto_envvar_prefix": "ADHOM", "help_option_names": ["-h", "--help"]})
@click.version_option(version=TOOL_VERSION, prog_name="adhominem")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="key=value file; explicit flags win over its entries")
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False),
              help="Output directory (manifests/, datasets/, models/, reports/, heatmaps/)")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.pass_context
def cli(ctx, config_file, out, seed, threads):
    """Ad hominem dynamics toolkit: corpus statistics, crowd labels, neural models, analysis"""
    config.reset()
    flags = {"seed": seed, "threads": threads}
    if config_file:
        # root flags beat file entries, including the per-command defaults built from them
        values = {key: value for key, value in dotenv_values(config_file).items()
                  if value is not None and flags.get(key) is None}
        settings = config.to_dict()
        config.update({key: _coerce(settings[key], value) for key, value in values.items() if key in settings})
        ctx.default_map = _default_map(ctx.command, values)
    config.update(flags)
    ctx.obj = {"out": out}


# ---- corpus ----

@cli.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@workflow("ingest", primary="corpus")
def ingest(run, corpus):
    """Rebuild discussion trees and quarantine bad records"""
    trees, report = corpus_processor.ingest_file(corpus)
    rows = [post.to_dict() for tree, post in corpus_processor.corpus_order(trees)]
    run.jsonl("datasets", "posts.jsonl", rows)
    run.table("reports", "quarantine.tsv", [entry.to_dict() for entry in report.entries],
              ["line_number", "record_id", "reason", "detail"])
    items = [("lines_read", report.lines_read), ("posts", len(rows)), ("trees", len(trees)),
             ("quarantined", len(report))]
    items += [(f"quarantined_{reason.replace(' ', '_')}", count) for reason, count in sorted(report.reasons().items())]
    run.text("reports", "ingest.txt", format_key_values(items))
    click.echo(format_key_values(items), nl=False)


@cli.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@seed_option
@workflow("stats", primary="corpus")
def stats(run, corpus, seed, threads):
    """Corpus dynamics statistics"""
    trees, _ = corpus_processor.ingest_file(corpus)
    result = corpus_processor.compute_stats(trees)
    report = format_key_values(result.scalar_items()) + "[reference corpus]\n" + format_key_values(
        corpus_reference_items())
    run.text("reports", "stats.txt", report)
    run.table("reports", "stats_histogram.tsv", result.histogram_rows(), ["bin_start", "bin_end", "count"])
    run.table("reports", "stats_per_submission.tsv",
              [{"submission_id": key, "ad_hominem_count": value}
               for key, value in result.per_submission_ah_counts.items()],
              ["submission_id", "ad_hominem_count"])
    click.echo(report, nl=False)


# ---- sampling ----

@cli.group()
def sample():
    """Build datasets from an ingested corpus"""


def _corpus_vocab(trees):
    docs = [text_processor.tokenize(post.text) for tree, post in corpus_processor.corpus_order(trees)]
    return text_processor.build_vocab(docs)


@sample.command("binary")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vectors", type=click.Path(exists=True, dir_okay=False), help="Textual word vectors")
@click.option("--name", default="binary", show_default=True)
@seed_option
@workflow("sample binary", primary="corpus")
def sample_binary(run, corpus, vectors, name, seed, threads):
    """Ad hominem replies with similarity-matched negatives"""
    trees, _ = corpus_processor.ingest_file(corpus)
    vocab = _corpus_vocab(trees)
    table = text_processor.embeddings(vocab, vectors)
    instances, pairs = dataset_sampler.sample_binary_dataset(trees, table, vocab)
    run.jsonl("datasets", f"{name}.jsonl", [instance.to_dict() for instance in instances])
    run.table("reports", f"{name}_pairs.tsv", [pair.to_dict() for pair in pairs], ["positive", "negative", "score"])


@sample.command("op-groups")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--name", default="op_groups", show_default=True)
@workflow("sample op-groups", primary="corpus")
def sample_op_groups(run, corpus, name):
    """Submissions whose discussions hold ad hominem replies versus awarded deltas"""
    trees, _ = corpus_processor.ingest_file(corpus)
    instances = dataset_sampler.op_group_instances(trees)
    run.jsonl("datasets", f"{name}.jsonl", [instance.to_dict() for instance in instances])


@sample.command("triplets")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vectors", type=click.Path(exists=True, dir_okay=False))
@click.option("--name", default="triplets", show_default=True)
@seed_option
@workflow("sample triplets", primary="corpus")
def sample_triplets(run, corpus, vectors, name, seed, threads):
    """Three-post contexts of two-person threads ending in ad hominem or delta"""
    trees, _ = corpus_processor.ingest_file(corpus)
    vocab = _corpus_vocab(trees)
    table = text_processor.embeddings(vocab, vectors)
    triplets = dataset_sampler.sample_triplets(trees, table, vocab)
    run.jsonl("datasets", f"{name}.jsonl", [triplet.to_instance().to_dict() for triplet in triplets])


# ---- annotation ----

@cli.group()
def annotate():
    """Aggregate crowd annotations"""


@annotate.command("mace")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Table with item_id, annotator_id, label columns")
@click.option("--threshold", type=float, default=None, help="Share of most confident items kept")
@click.option("--reference", "reference_labels", type=click.Path(exists=True, dir_okay=False),
              help="Table with item_id, label columns (e.g. moderator decisions) to score the gold labels against")
@seed_option
@workflow("annotate mace", primary="annotations")
def annotate_mace(run, annotations, threshold, reference_labels, seed, threads):
    """Gold labels and annotator competence"""
    data = load_annotations(annotations)
    posterior, selected = annotation_aggregator.gold(data, threshold)
    kept = {item for item, _, _ in selected}
    rows = [dict(row, selected=row["item_id"] in kept) for row in posterior.gold_rows()]
    run.table("reports", "mace_gold.tsv", rows, ["item_id", "gold_label", "confidence", "selected"])
    run.table("reports", "mace_annotators.tsv", posterior.annotator_rows(), ["annotator_id", "spamming"])
    items = [("items", len(posterior.items)), ("annotators", len(posterior.annotators)),
             ("best_restart", posterior.best_restart), ("objective", posterior.restart_objectives[posterior.best_restart]),
             ("selected", len(selected))]
    if reference_labels:
        frame = read_table(reference_labels)
        reference = dict(zip(frame["item_id"], frame["label"]))
        names = posterior.label_names or [str(index) for index in range(posterior.item_posteriors.shape[1])]
        gold = {item: names[label] for item, label, _ in selected}
        items += [("reference_accuracy", accuracy_against(gold, reference)),
                  ("reference_human_accuracy", BINARY_ACCURACY["human"])]
    report = format_key_values(items)
    run.text("reports", "mace.txt", report)
    click.echo(report, nl=False)


@annotate.command("distribution")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@workflow("annotate distribution", primary="annotations")
def annotate_distribution(run, annotations):
    """Per-item share of each label"""
    data = load_annotations(annotations)
    rows = []
    for item, shares in label_distribution(data).items():
        row = {"item_id": item}
        row.update({name: float(share) for name, share in zip(data.label_names, shares)})
        rows.append(row)
    run.table("reports", "label_distribution.tsv", rows, ["item_id"] + list(data.label_names))


@annotate.command("spans")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Table with doc_id, position, annotator_id, label columns")
@click.option("--threshold", type=float, default=1.0, show_default=True)
@seed_option
@workflow("annotate spans", primary="annotations")
def annotate_spans(run, annotations, threshold, seed, threads):
    """Gold token spans from per-token crowd labels"""
    spans = annotation_aggregator.spans(load_span_annotations(annotations), threshold)
    rows = [{"doc_id": doc_id, "start": start, "end": end}
            for doc_id, doc_spans in spans.items() for start, end in doc_spans]
    run.table("reports", "spans.tsv", rows, ["doc_id", "start", "end"])


@annotate.command("scale")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, dir_okay=False),
              help="Dataset whose instances receive the averaged scores as regression labels")
@click.option("--name", default="scale", show_default=True)
@workflow("annotate scale", primary="annotations")
def annotate_scale(run, annotations, data, name):
    """Average ordinal scale annotations per item"""
    means = average_scale(load_annotations(annotations))
    run.table("reports", f"{name}.tsv", [{"item_id": item, "mean": value} for item, value in means.items()],
              ["item_id", "mean"])
    if data:
        instances = []
        for instance in _read_instances(data):
            if instance.instance_id in means:
                instance.label = means[instance.instance_id]
                instances.append(instance)
        run.jsonl("datasets", f"{name}.jsonl", [instance.to_dict() for instance in instances])


@annotate.command("agreement")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--group-size", type=int, required=True)
@click.option("--threshold", type=float, default=None)
@seed_option
@workflow("annotate agreement", primary="annotations")
def annotate_agreement(run, annotations, group_size, threshold, seed, threads):
    """Cohen's kappa between the gold labels of two disjoint annotator groups"""
    kappa = annotation_aggregator.group_agreement(load_annotations(annotations), group_size, threshold)
    report = format_key_values([("group_size", group_size), ("kappa", kappa), ("reference_kappa", CROWD_KAPPA)])
    run.text("reports", "agreement.txt", report)
    click.echo(report, nl=False)


# ---- topics ----

@cli.group()
def lda():
    """Topic model over held-out documents"""


@lda.command("fit")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--exclude", type=click.Path(exists=True, dir_okay=False),
              help="Dataset whose instance ids must stay out of the fit")
@click.option("--k", "lda_k", type=int, default=None)
@click.option("--iterations", "lda_iterations", type=int, default=None)
@click.option("--top", type=int, default=10, show_default=True)
@seed_option
@workflow("lda fit", primary="data")
def lda_fit(run, data, exclude, lda_k, lda_iterations, top, seed, threads):
    config.update({"lda_k": lda_k, "lda_iterations": lda_iterations})
    config.validate()
    docs = {instance.instance_id: instance.tokens for instance in _read_instances(data)}
    excluded = [instance.instance_id for instance in _read_instances(exclude)] if exclude else []
    model = topic_modeler.fit(docs, excluded)
    run.record(save_lda(model, run.file_handler.path("models", "lda.bin")))
    lines = []
    for topic, words in enumerate(top_words(model, top)):
        lines.append(f"topic {topic}: " + " ".join(f"{word}({weight:.4f})" for word, weight in words))
    run.text("reports", "lda_top_words.txt", "\n".join(lines) + "\n")
    run.table("reports", "lda_trace.tsv", [{"sweep": s, "log_likelihood": ll} for s, ll in model.log_likelihood_trace],
              ["sweep", "log_likelihood"])


@lda.command("infer")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--name", default="topics", show_default=True)
@seed_option
@workflow("lda infer", primary="data")
def lda_infer(run, model, data, name, seed, threads):
    topic_model = load_lda(model)
    instances = _read_instances(data)
    theta = topic_modeler.infer_many(topic_model, [instance.tokens for instance in instances])
    columns = [f"topic_{t}" for t in range(topic_model.k)]
    rows = [dict({"instance_id": instance.instance_id}, **dict(zip(columns, map(float, row))))
            for instance, row in zip(instances, theta)]
    run.table("datasets", f"{name}.tsv", rows, ["instance_id"] + columns)


# ---- neural ----

def model_options(func):
    options = [
        click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--vectors", type=click.Path(exists=True, dir_okay=False)),
        click.option("--lda", type=click.Path(exists=True, dir_okay=False), help="Topic model file (cnn-lda)"),
        click.option("--regression", is_flag=True, default=False, help="Labels are real-valued scores"),
        click.option("--epochs", type=int, default=None),
        click.option("--lr", "learning_rate", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--patience", type=int, default=None),
        click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default=None),
        click.option("--heldout-fraction", type=float, default=None),
        click.option("--dropout", type=float, default=None),
        click.option("--filter-widths", default=None, help="Comma-separated, e.g. 3,4,5"),
        click.option("--n-maps", type=int, default=None),
        click.option("--activation", "conv_activation", type=click.Choice(["relu", "tanh"]), default=None),
        click.option("--hidden", "lstm_hidden", type=int, default=None),
        click.option("--attention-hidden", type=int, default=None),
        click.option("--attention-rows", type=int, default=None),
        click.option("--attention-penalty", type=float, default=None),
        click.option("--train-embeddings", is_flag=True, default=False),
    ]
    for option in reversed(options):
        func = option(func)
    return seed_option(func)


def _configs(kind, params, embedding_dim, label_names, topic_size):
    model_config = ModelConfig(
        kind,
        embedding_dim=embedding_dim,
        regression=params["regression"],
        num_classes=len(label_names) if label_names else 2,
        topic_size=topic_size,
        dropout=params["dropout"],
        filter_widths=params["filter_widths"].split(",") if params["filter_widths"] else None,
        n_maps=params["n_maps"],
        conv_activation=params["conv_activation"],
        lstm_hidden=params["lstm_hidden"],
        attention_hidden=params["attention_hidden"],
        attention_rows=params["attention_rows"],
        attention_penalty=params["attention_penalty"],
        freeze_embeddings=not params["train_embeddings"],
    )
    train_config = TrainConfig(
        learning_rate=params["learning_rate"],
        epochs=params["epochs"],
        batch_size=params["batch_size"],
        patience=params["patience"],
        optimizer=params["optimizer"],
        heldout_fraction=params["heldout_fraction"],
        seed=config.seed,
        objective="mean_squared_error" if params["regression"] else "cross_entropy",
    )
    model_config.validate()
    train_config.validate()
    return model_config, train_config


def _topics_for(kind, lda_path, instances):
    if kind != "cnn-lda":
        return None, 0
    if not lda_path:
        raise click.UsageError("cnn-lda needs --lda")
    topic_model = load_lda(lda_path)
    return topic_modeler.infer_many(topic_model, [instance.tokens for instance in instances]), topic_model.k


def _prepare(kind, params):
    instances = _read_instances(params["data"])
    vocab = text_processor.build_vocab(instance.tokens for instance in instances)
    table = text_processor.embeddings(vocab, params["vectors"])
    topics, topic_size = _topics_for(kind, params["lda"], instances)
    dataset = encode_dataset(instances, vocab, regression=params["regression"], topics=topics)
    model_config, train_config = _configs(kind, params, table.dim, dataset.label_names, topic_size)
    return instances, vocab, table, dataset, model_config, train_config


@cli.group()
def train():
    """Train one model family on a dataset file"""


def _train_command(kind):
    @train.command(kind, help=f"Train a {kind} model")
    @model_options
    @workflow(f"train {kind}", primary="data")
    def command(run, **params):
        _, vocab, table, dataset, model_config, train_config = _prepare(kind, params)
        result = model_trainer.train(model_config, train_config, dataset, table.matrix)
        checkpoint = Checkpoint(result.model, vocab, dataset.label_names, list(dataset.ids),
                                {"best_epoch": result.best_epoch, "train_config": train_config.to_dict()})
        run.record(model_manager.save(checkpoint, run.file_handler.path("models", f"{kind}.npz")))
        run.table("reports", f"train_{kind}_trace.tsv", result.trace, ["fold", "epoch", "loss", "heldout_loss"])

    return command


for _kind in MODEL_KINDS:
    _train_command(_kind)


def _reference_task(regression, task):
    if task:
        return task
    return "controversy" if regression else "binary"


@cli.command()
@click.option("--model", "kind", required=True, type=click.Choice(MODEL_KINDS))
@click.option("--folds", type=int, default=None)
@click.option("--task", type=click.Choice(["binary", "triplets", "controversy", "reasonableness"]), default=None,
              help="Which published table to print next to the local metric")
@model_options
@workflow("cv", primary="data")
def cv(run, kind, folds, task, **params):
    """k-fold cross-validation"""
    _, _, table, dataset, model_config, train_config = _prepare(kind, params)
    result = model_trainer.cross_validate(model_config, train_config, dataset, table.matrix, folds=folds)

    task = _reference_task(params["regression"], task)
    references = reference_rows(kind, task)
    items = [("model", kind), ("metric", result.metric), ("folds", len(result.fold_rows)), ("mean", result.mean)]
    items += [(f"fold_{row['fold']}", row["value"]) for row in result.fold_rows]
    lines = [format_key_values(items), f"[reference {task}]\n"]
    lines.append(format_key_values([(row["system"], row["reference"]) for row in references]))
    report = "".join(lines)

    run.text("reports", f"cv_{kind}.txt", report)
    run.table("reports", f"cv_{kind}_folds.tsv", result.metric_rows(), ["fold", "metric", "value"])
    run.table("reports", f"cv_{kind}_reference.tsv", references, ["system", "reference", "matches_model"])
    run.table("reports", f"cv_{kind}_predictions.tsv",
              [{"instance_id": key, "prediction": value} for key, value in result.predictions.items()],
              ["instance_id", "prediction"])
    click.echo(report, nl=False)


def _unlabelled(checkpoint, instances, lda_path):
    topics, _ = _topics_for(checkpoint.model.kind, lda_path, instances)
    sequences = [[checkpoint.vocab.lookup(token) for token in instance.tokens] for instance in instances]
    return EncodedDataset([instance.instance_id for instance in instances], sequences,
                          np.zeros(len(instances)), topics, checkpoint.label_names)


@cli.command("predict")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--lda", type=click.Path(exists=True, dir_okay=False))
@click.option("--name", default="predictions", show_default=True)
@workflow("predict", primary="data")
def predict_command(run, model, data, lda, name):
    """Score a dataset with a saved model"""
    checkpoint = model_manager.load(model)
    instances = _read_instances(data)
    outputs = predict(checkpoint.model, _unlabelled(checkpoint, instances, lda))
    rows = []
    for instance, output in zip(instances, outputs):
        if checkpoint.regression:
            rows.append({"instance_id": instance.instance_id, "gold": instance.label, "score": float(output)})
        else:
            row = {"instance_id": instance.instance_id, "gold": instance.label,
                   "prediction": checkpoint.label_names[int(np.argmax(output))]}
            row.update({f"p_{label}": float(p) for label, p in zip(checkpoint.label_names, output)})
            rows.append(row)
    run.table("reports", f"{name}.tsv", rows)


@cli.command("extrapolate")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Held-out documents; the label field names each document's group")
@click.option("--lda", type=click.Path(exists=True, dir_okay=False))
@workflow("extrapolate", primary="data")
def extrapolate_command(run, model, data, lda):
    """Score two held-out groups and compare the score distributions"""
    checkpoint = model_manager.load(model)
    instances = _read_instances(data)
    result = extrapolate(checkpoint.model, _unlabelled(checkpoint, instances, lda),
                         [str(instance.label) for instance in instances], checkpoint.train_ids)
    items = [(f"mean_{group}", value) for group, value in sorted(result.means.items())]
    items += [(f"ks_{key}", value) for key, value in result.ks.items()]
    report = format_key_values(items) + "[reference]\n" + format_key_values(extrapolation_reference_items())
    run.text("reports", "extrapolate.txt", report)
    run.table("reports", "extrapolate_scores.tsv",
              [{"instance_id": instance.instance_id, "group": str(instance.label), "score": score}
               for instance, score in zip(instances, result.document_scores)],
              ["instance_id", "group", "score"])
    click.echo(report, nl=False)


# ---- statistics ----

@cli.command()
@click.option("--a", required=True, type=click.Path(exists=True, dir_okay=False), help="One number per line")
@click.option("--b", required=True, type=click.Path(exists=True, dir_okay=False))
@workflow("kstest", primary="a")
def kstest(run, a, b):
    """Two-sample Kolmogorov-Smirnov test"""
    result = statistical_analyzer.ks(_read_numbers(a), _read_numbers(b))
    report = format_key_values(result.items())
    run.text("reports", "kstest.txt", report)
    click.echo(report, nl=False)


@cli.command()
@click.option("--a", required=True, type=click.Path(exists=True, dir_okay=False), help="One label per line")
@click.option("--b", required=True, type=click.Path(exists=True, dir_okay=False))
@workflow("kappa", primary="a")
def kappa(run, a, b):
    """Cohen's kappa between two label sequences"""
    labels_a, labels_b = _read_values(a), _read_values(b)
    report = format_key_values([("n", len(labels_a)), ("kappa", statistical_analyzer.kappa(labels_a, labels_b))])
    run.text("reports", "kappa.txt", report)
    click.echo(report, nl=False)


@cli.command()
@click.option("--a", required=True, type=click.Path(exists=True, dir_okay=False), help="One number per line")
@click.option("--b", required=True, type=click.Path(exists=True, dir_okay=False))
@workflow("spearman", primary="a")
def spearman(run, a, b):
    """Spearman rank correlation"""
    values_a, values_b = _read_numbers(a), _read_numbers(b)
    report = format_key_values([("n", len(values_a)), ("rho", statistical_analyzer.spearman(values_a, values_b))])
    run.text("reports", "spearman.txt", report)
    click.echo(report, nl=False)


# ---- attention ----

@cli.command()
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False), help="ssae checkpoint")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ngram", "max_n", type=int, default=3, show_default=True)
@click.option("--top-k", type=int, default=20, show_default=True)
@workflow("explain", primary="data")
def explain(run, model, data, max_n, top_k):
    """Attention heat maps, error buckets and trigger n-grams"""
    checkpoint = model_manager.load(model)
    if checkpoint.regression:
        raise CheckpointError("explain needs a classifier checkpoint")
    buckets = attention_explainer.explain(checkpoint.model, _read_instances(data), checkpoint.vocab,
                                          checkpoint.label_names)
    bucket_rows, trigger_rows = [], []
    for bucket in BUCKETS:
        for report in buckets[bucket]:
            run.text("heatmaps", f"{report.instance_id}.html", render_heatmap(report))
            bucket_rows.append({"instance_id": report.instance_id, "bucket": bucket,
                                "prediction": report.prediction, "gold": report.gold})
        if not buckets[bucket]:
            continue
        for n in range(1, max_n + 1):
            for phrase, score, count in top_trigger_ngrams(buckets[bucket], n, top_k):
                trigger_rows.append({"bucket": bucket, "n": n, "phrase": phrase, "score": score, "count": count})
    bucket_rows.sort(key=lambda row: row["instance_id"])
    run.table("reports", "explain_buckets.tsv", bucket_rows, ["instance_id", "bucket", "prediction", "gold"])
    run.table("reports", "explain_triggers.tsv", trigger_rows, ["bucket", "n", "phrase", "score", "count"])


@cli.command()
@workflow("reference")
def reference(run):
    """Published reference numbers and annotation taxonomies"""
    lines = ["[binary accuracy]\n", format_key_values(BINARY_ACCURACY.items()),
             "[triplet accuracy]\n", format_key_values(TRIPLET_ACCURACY.items())]
    for task, table in REGRESSION_RHO.items():
        lines += [f"[{task} rho]\n", format_key_values(table.items())]
    lines += ["[crowd agreement]\n", format_key_values([("kappa", CROWD_KAPPA)]),
              "[corpus]\n", format_key_values(corpus_reference_items()),
              "[extrapolation]\n", format_key_values(extrapolation_reference_items())]
    for title, entries in taxonomy_sections():
        lines.append(f"[{title}]\n" + "".join(f"- {entry}\n" for entry in entries))
    report = "".join(lines)
    run.text("reports", "reference.txt", report)
    click.echo(report, nl=False)
