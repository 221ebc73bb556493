import json
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Tuple, Union

from models.corpus_data import (
    HISTOGRAM_BINS, CorpusStats, DiscussionTree, PostRecord, QuarantineReport, ThreadPath
)
from utils.error_handler import EmptyCorpusError
from utils.file_handler import iter_lines

REQUIRED_FIELDS = {
    "id": str,
    "submission_id": str,
    "author": str,
    "body": str,
    "created_at": int,
    "violated_rules": list,
    "delta_awarded": bool,
}
OPTIONAL_FIELDS = {"parent_id": str, "title": str}


class RecordFormatError(ValueError):
    pass


def parse_record(raw: Union[str, Dict]) -> PostRecord:
    """Validate one corpus line (or already-decoded object) into a PostRecord"""
    if isinstance(raw, str):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise RecordFormatError(f"not a JSON object: {e.msg}")
    else:
        data = raw

    if not isinstance(data, dict):
        raise RecordFormatError("not a JSON object")

    unknown = set(data) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
    if unknown:
        raise RecordFormatError(f"unknown fields: {', '.join(sorted(unknown))}")

    for name, expected in REQUIRED_FIELDS.items():
        if name not in data:
            raise RecordFormatError(f"missing field '{name}'")
        value = data[name]
        # bool is an int subclass; keep the two apart
        if expected is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise RecordFormatError(f"field '{name}' must be an integer")
        if not isinstance(value, expected):
            raise RecordFormatError(f"field '{name}' must be {expected.__name__}")

    for name, expected in OPTIONAL_FIELDS.items():
        value = data.get(name)
        if value is not None and not isinstance(value, expected):
            raise RecordFormatError(f"field '{name}' must be {expected.__name__} or null")

    rules = data["violated_rules"]
    if any(isinstance(rule, bool) or not isinstance(rule, int) for rule in rules):
        raise RecordFormatError("violated_rules must hold integers")

    return PostRecord(
        id=data["id"],
        parent_id=data.get("parent_id"),
        submission_id=data["submission_id"],
        author=data["author"],
        body=data["body"],
        title=data.get("title"),
        created_at=data["created_at"],
        violated_rules=frozenset(rules),
        delta_awarded=data["delta_awarded"],
    )


def enumerate_threads(tree: DiscussionTree) -> List[ThreadPath]:
    """One root-to-leaf path per leaf, in pre-order"""
    return [ThreadPath(tuple(tree.path_to(leaf))) for leaf in tree.leaves()]


def first_ah_bin(thread: ThreadPath, hostility_rule: int):
    """Decile of the first ad hominem's relative position, or None"""
    for index, post in enumerate(thread.posts):
        if post.is_ad_hominem(hostility_rule):
            length = len(thread)
            if length < 2:
                return 0
            # index 0 is the submission, so replies before the attack = index - 1
            replies_before = max(index - 1, 0)
            return min((HISTOGRAM_BINS * replies_before) // (length - 1), HISTOGRAM_BINS - 1)
    return None


def _ratio(numerator, denominator):
    return numerator / denominator if denominator else 0.0


class CorpusProcessor:
    def __init__(self, config, logger_service):
        self.config = config
        self.logger = logger_service

    @property
    def hostility_rule(self):
        return self.config.hostility_rule

    def ingest_file(self, file_path) -> Tuple[List[DiscussionTree], QuarantineReport]:
        self.logger.log_stage("ingest", str(file_path))
        return self.ingest(line for _, line in iter_lines(file_path))

    def ingest(self, record_stream: Iterable) -> Tuple[List[DiscussionTree], QuarantineReport]:
        """Rebuild discussion trees; bad records go to the quarantine report"""
        report = QuarantineReport()
        records: Dict[str, PostRecord] = {}
        line_of: Dict[str, int] = {}

        for line_number, raw in enumerate(record_stream, 1):
            report.lines_read += 1
            try:
                record = parse_record(raw)
            except RecordFormatError as e:
                report.add(line_number, None, "malformed", str(e))
                continue

            if record.id in records:
                report.add(line_number, record.id, "duplicate id",
                           f"first seen on line {line_of[record.id]}")
                continue

            records[record.id] = record
            line_of[record.id] = line_number

        accepted: Dict[str, PostRecord] = {}
        for record in records.values():
            if record.is_submission:
                if record.submission_id != record.id:
                    report.add(line_of[record.id], record.id, "submission mismatch",
                               f"submission declares submission_id {record.submission_id}")
                    continue
                accepted[record.id] = record

        for record in records.values():
            if record.is_submission:
                continue
            if record.submission_id not in accepted:
                report.add(line_of[record.id], record.id, "missing submission",
                           f"submission {record.submission_id} not found")
            elif record.parent_id not in records:
                report.add(line_of[record.id], record.id, "dangling parent",
                           f"parent {record.parent_id} not found")
            elif records[record.parent_id].submission_id != record.submission_id:
                report.add(line_of[record.id], record.id, "submission mismatch",
                           f"parent {record.parent_id} belongs to another submission")
            else:
                accepted[record.id] = record

        children: Dict[str, List[str]] = {}
        for record in accepted.values():
            if record.parent_id is not None and record.parent_id in accepted:
                children.setdefault(record.parent_id, []).append(record.id)
        for kids in children.values():
            kids.sort(key=lambda post_id: (accepted[post_id].created_at, post_id))

        trees = []
        reached = set()
        submissions = sorted((r for r in accepted.values() if r.is_submission),
                             key=lambda r: (r.created_at, r.id))
        for submission in submissions:
            posts = {}
            stack = [submission.id]
            while stack:
                post_id = stack.pop()
                if post_id in posts:
                    continue
                posts[post_id] = accepted[post_id]
                stack.extend(children.get(post_id, []))
            reached.update(posts)
            tree_children = {post_id: list(children[post_id]) for post_id in posts if post_id in children}
            trees.append(DiscussionTree(submission=submission, posts=posts, children=tree_children))

        for post_id, record in accepted.items():
            if post_id not in reached:
                report.add(line_of[post_id], post_id, "unreachable",
                           "ancestor quarantined or parent chain forms a cycle")

        report.entries.sort(key=lambda entry: entry.line_number)

        self.logger.log("INFO", f"ingested {len(reached)} posts into {len(trees)} trees, "
                                f"{len(report)} records quarantined")
        return trees, report

    def enumerate_threads(self, tree: DiscussionTree) -> List[ThreadPath]:
        return enumerate_threads(tree)

    def corpus_order(self, trees: List[DiscussionTree]) -> List[Tuple[DiscussionTree, PostRecord]]:
        return [(tree, tree.posts[post_id]) for tree in trees for post_id in tree.preorder()]

    def _tree_partial(self, tree: DiscussionTree) -> Dict:
        rule = self.hostility_rule
        part = {
            "posts": len(tree.posts),
            "ah": 0,
            "deltas": 0,
            "threads": 0,
            "threads_with_ah": 0,
            "single": 0,
            "single_last": 0,
            "multiple": 0,
            "more_than_three": 0,
            "two_person": 0,
            "histogram": [0] * HISTOGRAM_BINS,
            "ah_with_parent": 0,
            "ah_reply_to_ah": 0,
            "out_of_blue": 0,
            "prior_normal": 0,
            "op_committed": 0,
            "first_level": False,
        }
        op = tree.submission.author

        for post_id in tree.preorder():
            post = tree.posts[post_id]
            if post.delta_awarded:
                part["deltas"] += 1
            if not post.is_ad_hominem(rule):
                continue
            part["ah"] += 1
            ancestors = tree.path_to(post_id)[:-1]
            if ancestors:
                part["ah_with_parent"] += 1
                if ancestors[-1].is_ad_hominem(rule):
                    part["ah_reply_to_ah"] += 1
                if ancestors[-1].is_submission:
                    part["first_level"] = True
            own_earlier = [a for a in ancestors if a.author == post.author]
            if not own_earlier:
                part["out_of_blue"] += 1
            if any(not a.is_ad_hominem(rule) for a in own_earlier):
                part["prior_normal"] += 1
            if post.author == op:
                part["op_committed"] += 1

        for thread in enumerate_threads(tree):
            part["threads"] += 1
            ah_flags = [post.is_ad_hominem(rule) for post in thread.posts]
            n_ah = sum(ah_flags)
            if n_ah == 0:
                continue
            part["threads_with_ah"] += 1
            if n_ah == 1:
                part["single"] += 1
                if ah_flags[-1]:
                    part["single_last"] += 1
            else:
                part["multiple"] += 1
            if n_ah > 3:
                part["more_than_three"] += 1
            authors = {post.author for post in thread.posts}
            if len(authors) == 2:
                part["two_person"] += 1
            part["histogram"][first_ah_bin(thread, rule)] += 1

        return part

    def compute_stats(self, trees: List[DiscussionTree]) -> CorpusStats:
        """Corpus dynamics statistics, fanned out per tree and reduced in tree order"""
        if not trees:
            raise EmptyCorpusError("cannot compute statistics of an empty corpus")

        self.logger.log_stage("stats", f"{len(trees)} trees")
        with ThreadPoolExecutor(max_workers=max(1, self.config.threads)) as pool:
            partials = list(pool.map(self._tree_partial, trees))

        total = {key: 0 for key in partials[0] if key not in ("histogram", "first_level")}
        histogram = [0] * HISTOGRAM_BINS
        per_submission = {}
        first_level = 0
        for tree, part in zip(trees, partials):
            for key in total:
                total[key] += part[key]
            histogram = [a + b for a, b in zip(histogram, part["histogram"])]
            per_submission[tree.id] = part["ah"]
            first_level += int(part["first_level"])

        ah_submissions = [count for count in per_submission.values() if count > 0]

        return CorpusStats(
            post_count=total["posts"],
            ad_hominem_count=total["ah"],
            ad_hominem_rate=_ratio(total["ah"], total["posts"]),
            delta_count=total["deltas"],
            threads_total=total["threads"],
            threads_with_ah=total["threads_with_ah"],
            threads_with_single_ah=total["single"],
            threads_with_multiple_ah=total["multiple"],
            threads_with_more_than_three_ah=total["more_than_three"],
            single_ah_last_fraction=_ratio(total["single_last"], total["single"]),
            ah_reply_to_ah_fraction=_ratio(total["ah_reply_to_ah"], total["ah_with_parent"]),
            first_ah_relative_position_histogram=histogram,
            attacker_out_of_blue_fraction=_ratio(total["out_of_blue"], total["ah"]),
            attacker_with_prior_normal_argument_fraction=_ratio(total["prior_normal"], total["ah"]),
            op_committed_ah_fraction=_ratio(total["op_committed"], total["ah"]),
            two_person_interplay_fraction=_ratio(total["two_person"], total["threads_with_ah"]),
            submissions_with_ah=len(ah_submissions),
            submissions_one_or_two_ah_fraction=_ratio(
                sum(1 for count in ah_submissions if count <= 2), len(ah_submissions)),
            first_level_ah_submissions=first_level,
            max_ah_per_submission=max(per_submission.values()),
            per_submission_ah_counts=per_submission,
        )
