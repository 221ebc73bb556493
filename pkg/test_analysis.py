import numpy as np
import pytest

from models.config_model import ModelConfig
from models.dataset_data import AD_HOMINEM, DatasetInstance
from modules.attention_explainer import (
    AttentionExplainer, AttentionReport, bucket_of, error_buckets, intensities, render_heatmap, top_trigger_ngrams
)
from modules.model_trainer import EncodedDataset
from modules.neural_models import build_model
from modules.statistical_analyzer import (
    StatisticalAnalyzer, accuracy, cohen_kappa, extrapolate, ks_two_sample, spearman
)
from modules.text_processor import COMMENT_BEGIN, Vocabulary
from utils.error_handler import LeakageError, StatisticsError


def test_ks_golden_values():
    result = ks_two_sample([1, 2, 3, 4], [2, 3, 4, 5])
    assert result.statistic == 0.25
    assert result.p_value == pytest.approx(0.9996, abs=1e-3)
    assert (result.n1, result.n2) == (4, 4)

    same = ks_two_sample([1.5, 2.5, 9.0], [1.5, 2.5, 9.0])
    assert same.statistic == 0.0
    assert same.p_value == 1.0


def test_ks_is_symmetric_and_separates():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=50), rng.normal(loc=0.3, size=70)
    assert ks_two_sample(a, b).statistic == ks_two_sample(b, a).statistic
    apart = ks_two_sample(np.arange(30), np.arange(100, 130))
    assert apart.statistic == 1.0
    assert apart.p_value < 1e-6


def test_ks_needs_data():
    with pytest.raises(StatisticsError):
        ks_two_sample([], [1.0])


def test_kappa_golden_values():
    assert cohen_kappa(["A", "A", "B", "B"], ["A", "B", "B", "A"]) == pytest.approx(0.0, abs=1e-12)
    assert cohen_kappa(["A", "A", "A", "B"], ["A", "A", "B", "B"]) == pytest.approx(0.5)
    assert cohen_kappa([1, 0, 1], [1, 0, 1]) == pytest.approx(1.0)


def test_kappa_undefined_when_chance_agreement_is_one():
    with pytest.raises(StatisticsError, match="undefined"):
        cohen_kappa(["A", "A"], ["A", "A"])
    with pytest.raises(StatisticsError):
        cohen_kappa(["A"], ["A", "B"])


def test_spearman_golden_values():
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    assert spearman([1, 2, 2, 3], [1, 2, 2, 3]) == pytest.approx(1.0)


def test_spearman_ignores_monotone_transforms():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=20), rng.normal(size=20)
    assert spearman(np.exp(a), b ** 3) == pytest.approx(spearman(a, b), abs=1e-12)


def test_spearman_rejects_constant_and_short_input():
    with pytest.raises(StatisticsError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(StatisticsError):
        spearman([1], [1])
    with pytest.raises(StatisticsError):
        spearman([1, 2], [1, 2, 3])


def test_accuracy():
    assert accuracy([1, 0, 1, 1], [1, 1, 1, 1]) == 0.75
    with pytest.raises(StatisticsError):
        accuracy([], [])


class ThresholdScorer:
    """Scores 1 for documents opening with an index of at least 5"""

    def forward(self, indices, topics=None, train=False, rng=None):
        high = (np.asarray(indices)[:, 0] >= 5).astype(np.float64)
        return np.stack([1.0 - high, high], axis=1), None


def heldout_dataset():
    sequences = [[5, 3], [6], [7, 4], [3], [4, 4], [3, 9]]
    ids = [f"sub{i}" for i in range(6)]
    return EncodedDataset(ids, sequences, np.zeros(6, dtype=np.int64), label_names=["NEGATIVE", AD_HOMINEM])


def test_extrapolate_separates_groups():
    groups = [AD_HOMINEM] * 3 + ["DELTA"] * 3
    result = extrapolate(ThresholdScorer(), heldout_dataset(), groups, train_ids=["other"])

    assert result.means == {AD_HOMINEM: 1.0, "DELTA": 0.0}
    assert result.ks.statistic == 1.0
    assert result.scores["DELTA"] == [0.0, 0.0, 0.0]
    assert result.document_scores == [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]


def test_extrapolate_reads_the_ad_hominem_column():
    dataset = heldout_dataset()
    dataset.label_names = [AD_HOMINEM, "NEGATIVE"]
    groups = [AD_HOMINEM] * 3 + ["DELTA"] * 3

    result = extrapolate(ThresholdScorer(), dataset, groups, train_ids=[])

    assert result.means == {AD_HOMINEM: 0.0, "DELTA": 1.0}
    assert result.document_scores == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]


def test_extrapolate_refuses_training_documents():
    groups = [AD_HOMINEM] * 3 + ["DELTA"] * 3
    with pytest.raises(LeakageError, match="sub2"):
        extrapolate(ThresholdScorer(), heldout_dataset(), groups, train_ids=["sub2"])


def test_extrapolate_needs_two_groups():
    with pytest.raises(StatisticsError):
        extrapolate(ThresholdScorer(), heldout_dataset(), ["a"] * 6, train_ids=[])


def test_analyzer_logs_results(logger_service):
    analyzer = StatisticalAnalyzer(logger_service)
    analyzer.ks([1, 2], [3, 4])
    analyzer.kappa([0, 1], [0, 1])
    analyzer.spearman([1, 2, 3], [3, 2, 1])
    messages = [entry["message"] for entry in logger_service.get_logs()]
    assert any(message.startswith("KS D=1.000000") for message in messages)
    assert any("Spearman rho -1.000000" in message for message in messages)


def test_bucket_of():
    assert bucket_of(AD_HOMINEM, AD_HOMINEM) == "TP"
    assert bucket_of(AD_HOMINEM, "DELTA") == "FP"
    assert bucket_of("DELTA", AD_HOMINEM) == "FN"
    assert bucket_of("DELTA", "DELTA") == "TN"


def test_error_buckets_partition():
    docs = [(f"d{i}", ["x", "y"], [0.5, 0.5]) for i in range(4)]
    predictions = [AD_HOMINEM, AD_HOMINEM, "DELTA", "DELTA"]
    gold = [AD_HOMINEM, "DELTA", AD_HOMINEM, "DELTA"]

    buckets = error_buckets(predictions, gold, docs)

    assert {name: [r.instance_id for r in reports] for name, reports in buckets.items()} == {
        "TP": ["d0"], "FP": ["d1"], "FN": ["d2"], "TN": ["d3"]}


def test_error_buckets_checks_alignment():
    assert error_buckets([], [], []) == {"TP": [], "FP": [], "FN": [], "TN": []}
    with pytest.raises(StatisticsError):
        error_buckets([AD_HOMINEM], [], [])
    with pytest.raises(StatisticsError, match="d0"):
        error_buckets([AD_HOMINEM], [AD_HOMINEM], [("d0", ["x"], [0.5, 0.5])])


def test_intensities():
    assert np.allclose(intensities([0.2, 0.4, 0.6]), [0.0, 0.5, 1.0])
    assert np.array_equal(intensities([0.25, 0.25]), [0.0, 0.0])


def report(tokens, weights, instance_id="a04_ah_t1"):
    return AttentionReport(instance_id, tokens, weights, AD_HOMINEM, AD_HOMINEM, "TP")


def test_heatmap_uniform_weights_have_no_highlight():
    html = render_heatmap(report(["you", "are", "wrong"], [1 / 3] * 3))
    assert html.count("rgba(255, 0, 0, 0.0000)") == 3
    assert 'title="0.333333"' in html


def test_heatmap_highlights_the_maximum():
    html = render_heatmap(report(["you", "troll"], [0.1, 0.9]))
    assert "rgba(255, 0, 0, 1.0000)\" title=\"0.900000\">troll</span>" in html
    assert "rgba(255, 0, 0, 0.0000)\" title=\"0.100000\">you</span>" in html


def test_heatmap_escapes_tokens():
    html = render_heatmap(report(["<script>", "&"], [0.5, 0.5]))
    assert "<script>" not in html
    assert "&lt;script&gt;" in html
    assert "&amp;" in html


def test_heatmap_one_block_per_comment():
    tokens = [COMMENT_BEGIN, "first", "post", COMMENT_BEGIN, "second", COMMENT_BEGIN, "third"]
    html = render_heatmap(report(tokens, [0.1] * len(tokens)))
    assert html.count('<div class="comment">') == 3
    assert COMMENT_BEGIN not in html
    assert "&lt;comment_begin&gt;" not in html


@pytest.mark.parametrize("marker_weight", [0.0, 0.9])
def test_heatmap_rescale_skips_comment_markers(marker_weight):
    html = render_heatmap(report([COMMENT_BEGIN, "you", "troll"], [marker_weight, 0.2, 0.6]))
    assert "rgba(255, 0, 0, 0.0000)\" title=\"0.200000\">you</span>" in html
    assert "rgba(255, 0, 0, 1.0000)\" title=\"0.600000\">troll</span>" in html


def test_heatmap_is_byte_stable():
    tokens = [COMMENT_BEGIN, "did", "you", "even", "read", COMMENT_BEGIN, "stupid", "troll"]
    weights = [0.0, 0.05, 0.1, 0.05, 0.1, 0.0, 0.4, 0.3]
    first = render_heatmap(report(tokens, weights)).encode("utf-8")
    second = render_heatmap(report(list(tokens), list(weights))).encode("utf-8")
    assert first == second
    assert first.endswith(b"</html>\n")


def test_top_trigger_ngrams_ranking():
    reports = [
        report(["you", "troll", "ok"], [0.2, 0.7, 0.1], "r1"),
        report([COMMENT_BEGIN, "troll", "you"], [0.0, 0.5, 0.5], "r2"),
    ]
    unigrams = top_trigger_ngrams(reports, n=1)
    assert unigrams[0] == ("troll", pytest.approx(0.6), 2)
    assert [phrase for phrase, _, _ in unigrams] == ["troll", "you", "ok"]

    bigrams = top_trigger_ngrams(reports, n=2, top_k=2)
    # n-grams touching the comment marker are skipped
    assert [(phrase, count) for phrase, _, count in bigrams] == [("troll you", 1), ("you troll", 1)]
    with pytest.raises(ValueError):
        top_trigger_ngrams(reports, n=0)


def test_explainer_buckets_every_instance(config, logger_service):
    vocab = Vocabulary(["you", "troll", "study", "data"])
    model = build_model(ModelConfig("ssae", embedding_dim=4, lstm_hidden=3, attention_hidden=3, attention_rows=2),
                        np.random.default_rng(0).normal(size=(len(vocab), 4)))
    instances = [
        DatasetInstance("i1", AD_HOMINEM, [COMMENT_BEGIN, "you", "troll"]),
        DatasetInstance("i2", "DELTA", [COMMENT_BEGIN, "study", "data", "unknown"]),
    ]

    buckets = AttentionExplainer(config, logger_service).explain(model, instances, vocab, ["AD_HOMINEM", "DELTA"])

    reports = [r for name in ("TP", "FP", "FN", "TN") for r in buckets[name]]
    assert sorted(r.instance_id for r in reports) == ["i1", "i2"]
    for r in reports:
        assert len(r.weights) == len(r.tokens)
        assert sum(r.weights) == pytest.approx(1.0, abs=1e-6)
