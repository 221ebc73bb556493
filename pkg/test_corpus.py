import json

import numpy as np
import pytest

from conftest import CORPUS_FIXTURE
from models.corpus_data import ThreadPath
from modules.corpus_processor import RecordFormatError, first_ah_bin, parse_record
from utils.error_handler import EmptyCorpusError


def record(post_id, parent_id=None, submission_id="s1", author="u", rules=(), delta=False, created_at=1):
    return {
        "id": post_id,
        "parent_id": parent_id,
        "submission_id": submission_id,
        "author": author,
        "body": f"body of {post_id}",
        "created_at": created_at,
        "violated_rules": list(rules),
        "delta_awarded": delta,
    }


def test_fixture_quarantines_dangling_and_duplicate(corpus_processor):
    trees, report = corpus_processor.ingest_file(CORPUS_FIXTURE)

    assert [tree.id for tree in trees] == ["a00", "b00", "c00", "d00"]
    assert report.lines_read == 62
    assert [(e.line_number, e.record_id, e.reason) for e in report.entries] == [
        (61, "z01", "dangling parent"),
        (62, "a03", "duplicate id"),
    ]
    # the first a03 is kept
    assert "Edited" not in trees[0].posts["a03"].body


def test_fixture_stats(corpus_processor, fixture_trees):
    stats = corpus_processor.compute_stats(fixture_trees)

    assert stats.post_count == 60
    assert stats.ad_hominem_count == 3
    assert stats.ad_hominem_rate == pytest.approx(0.05)
    assert stats.delta_count == 6
    assert stats.threads_total == 25
    assert stats.threads_with_ah == 3
    assert stats.threads_with_single_ah == 3
    assert stats.threads_with_multiple_ah == 0
    assert stats.single_ah_last_fraction == pytest.approx(2 / 3)
    assert stats.ah_reply_to_ah_fraction == 0.0
    assert stats.attacker_out_of_blue_fraction == pytest.approx(1 / 3)
    assert stats.attacker_with_prior_normal_argument_fraction == pytest.approx(2 / 3)
    assert stats.op_committed_ah_fraction == pytest.approx(1 / 3)
    assert stats.two_person_interplay_fraction == pytest.approx(1 / 3)
    assert stats.submissions_with_ah == 3
    assert stats.submissions_one_or_two_ah_fraction == 1.0
    assert stats.first_level_ah_submissions == 0
    assert stats.max_ah_per_submission == 1
    assert stats.per_submission_ah_counts == {"a00": 1, "b00": 1, "c00": 1, "d00": 0}

    histogram = stats.first_ah_relative_position_histogram
    assert sum(histogram) == stats.threads_with_ah
    assert histogram[3] == 1
    assert histogram[7] == 2


def test_stats_do_not_depend_on_thread_count(config, logger_service, fixture_trees):
    from modules.corpus_processor import CorpusProcessor

    config.threads = 1
    single = CorpusProcessor(config, logger_service).compute_stats(fixture_trees)
    config.threads = 4
    many = CorpusProcessor(config, logger_service).compute_stats(fixture_trees)
    assert single == many


def test_threads_and_corpus_order(corpus_processor, fixture_trees):
    threads = [t for tree in fixture_trees for t in corpus_processor.enumerate_threads(tree)]
    assert len(threads) == 25
    assert threads[0].ids == ("a00", "a01", "a02", "a03", "a04")
    assert all(t.posts[0].is_submission for t in threads)

    order = [post.id for _, post in corpus_processor.corpus_order(fixture_trees)]
    assert order[:7] == ["a00", "a01", "a02", "a03", "a04", "a05", "a06"]
    assert len(order) == len(set(order)) == 60


def test_stats_do_not_depend_on_record_order(corpus_processor):
    with open(CORPUS_FIXTURE, encoding="utf-8") as f:
        lines = f.read().splitlines()[:60]
    trees, _ = corpus_processor.ingest(lines)
    shuffled = [lines[i] for i in np.random.default_rng(5).permutation(len(lines))]
    shuffled_trees, report = corpus_processor.ingest(shuffled)

    assert len(report) == 0
    assert corpus_processor.compute_stats(shuffled_trees) == corpus_processor.compute_stats(trees)


def test_leaves_end_the_threads(corpus_processor, fixture_trees):
    for tree in fixture_trees:
        threads = corpus_processor.enumerate_threads(tree)
        assert [thread.last.id for thread in threads] == tree.leaves()


def test_seven_leaves_give_seven_threads(corpus_processor):
    # s1 -> p1 -> (l1, l2, p2 -> (l3, l4)), s1 -> p3 -> l5, s1 -> l6, s1 -> p4 -> p5 -> l7
    edges = [("p1", "s1"), ("l1", "p1"), ("l2", "p1"), ("p2", "p1"), ("l3", "p2"), ("l4", "p2"),
             ("p3", "s1"), ("l5", "p3"), ("l6", "s1"), ("p4", "s1"), ("p5", "p4"), ("l7", "p5")]
    lines = [record("s1", submission_id="s1")]
    lines += [record(post_id, parent_id=parent, created_at=i) for i, (post_id, parent) in enumerate(edges, 2)]
    trees, _ = corpus_processor.ingest(lines)

    threads = corpus_processor.enumerate_threads(trees[0])

    assert len(threads) == 7
    assert [thread.last.id for thread in threads] == ["l1", "l2", "l3", "l4", "l5", "l6", "l7"]
    assert threads[3].ids == ("s1", "p1", "p2", "l4")


def test_parse_record_rejects_bool_timestamp():
    raw = record("p1")
    raw["created_at"] = True
    with pytest.raises(RecordFormatError):
        parse_record(raw)


def test_parse_record_rejects_unknown_field():
    raw = record("p1")
    raw["score"] = 3
    with pytest.raises(RecordFormatError, match="unknown fields"):
        parse_record(raw)


def test_parse_record_accepts_json_line():
    post = parse_record(json.dumps(record("p1", rules=[2, 5])))
    assert post.is_ad_hominem()
    assert post.violates_other_rule()


def test_malformed_line_is_quarantined(corpus_processor):
    trees, report = corpus_processor.ingest([json.dumps(record("s1", submission_id="s1")), "{not json"])
    assert len(trees) == 1
    assert report.reasons() == {"malformed": 1}


def test_cycle_is_unreachable(corpus_processor):
    lines = [
        record("s1", submission_id="s1"),
        record("p1", parent_id="p2"),
        record("p2", parent_id="p1"),
    ]
    trees, report = corpus_processor.ingest(lines)
    assert len(trees[0]) == 1
    assert sorted(e.record_id for e in report.entries) == ["p1", "p2"]
    assert set(report.reasons()) == {"unreachable"}


def test_missing_submission_and_mismatch(corpus_processor):
    lines = [
        record("s1", submission_id="s1"),
        record("s2", submission_id="other"),
        record("p1", parent_id="s1", submission_id="s9"),
        record("s3", submission_id="s3"),
        record("p2", parent_id="s1", submission_id="s3"),
    ]
    trees, report = corpus_processor.ingest(lines)
    reasons = {e.record_id: e.reason for e in report.entries}
    assert reasons == {
        "s2": "submission mismatch",
        "p1": "missing submission",
        "p2": "submission mismatch",
    }
    assert [tree.id for tree in trees] == ["s1", "s3"]


def test_children_ordered_by_time_then_id(corpus_processor):
    lines = [
        record("s1", submission_id="s1"),
        record("c", parent_id="s1", created_at=5),
        record("b", parent_id="s1", created_at=3),
        record("a", parent_id="s1", created_at=5),
    ]
    trees, _ = corpus_processor.ingest(lines)
    assert trees[0].children["s1"] == ["b", "a", "c"]


def test_empty_corpus_stats(corpus_processor):
    with pytest.raises(EmptyCorpusError):
        corpus_processor.compute_stats([])


def test_first_ah_bin():
    posts = [parse_record(record(f"p{i}", parent_id=None if i == 0 else f"p{i - 1}",
                                 rules=[2] if i == 10 else [])) for i in range(11)]
    assert first_ah_bin(ThreadPath(tuple(posts)), 2) == 9
    assert first_ah_bin(ThreadPath(tuple(posts[:10])), 2) is None

    attack_first = [posts[0], parse_record(record("x", parent_id="p0", rules=[2]))]
    assert first_ah_bin(ThreadPath(tuple(attack_first)), 2) == 0
