from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

HOSTILITY_RULE = 2


@dataclass(frozen=True)
class PostRecord:
    id: str
    parent_id: Optional[str]
    submission_id: str
    author: str
    body: str
    created_at: int
    violated_rules: FrozenSet[int] = frozenset()
    delta_awarded: bool = False
    title: Optional[str] = None

    @property
    def is_submission(self) -> bool:
        return self.parent_id is None

    def is_ad_hominem(self, hostility_rule: int = HOSTILITY_RULE) -> bool:
        return hostility_rule in self.violated_rules

    def violates_other_rule(self, hostility_rule: int = HOSTILITY_RULE) -> bool:
        return any(rule != hostility_rule for rule in self.violated_rules)

    @property
    def text(self) -> str:
        if self.title:
            return f"{self.title}\n{self.body}"
        return self.body

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "submission_id": self.submission_id,
            "author": self.author,
            "body": self.body,
            "title": self.title,
            "created_at": self.created_at,
            "violated_rules": sorted(self.violated_rules),
            "delta_awarded": self.delta_awarded
        }


@dataclass
class DiscussionTree:
    """A submission and its replies; children lists are ordered by (created_at, id)"""
    submission: PostRecord
    posts: Dict[str, PostRecord]
    children: Dict[str, List[str]]

    @property
    def id(self) -> str:
        return self.submission.id

    def __len__(self) -> int:
        return len(self.posts)

    def parent(self, post: PostRecord) -> Optional[PostRecord]:
        if post.parent_id is None:
            return None
        return self.posts[post.parent_id]

    def path_to(self, post_id: str) -> List[PostRecord]:
        """Posts from the submission down to post_id, inclusive"""
        path = []
        current = self.posts[post_id]
        while current is not None:
            path.append(current)
            current = self.parent(current)
        path.reverse()
        return path

    def leaves(self) -> List[str]:
        return [post_id for post_id in self.preorder() if not self.children.get(post_id)]

    def preorder(self) -> List[str]:
        order = []
        stack = [self.submission.id]
        while stack:
            post_id = stack.pop()
            order.append(post_id)
            stack.extend(reversed(self.children.get(post_id, [])))
        return order


@dataclass(frozen=True)
class ThreadPath:
    posts: Tuple[PostRecord, ...]

    def __len__(self) -> int:
        return len(self.posts)

    @property
    def last(self) -> PostRecord:
        return self.posts[-1]

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(post.id for post in self.posts)

    @property
    def thread_id(self) -> str:
        return f"{self.posts[0].id}:{self.posts[-1].id}"


@dataclass
class QuarantineEntry:
    line_number: int
    record_id: Optional[str]
    reason: str
    detail: str = ""

    def to_dict(self) -> Dict:
        return {
            "line_number": self.line_number,
            "record_id": self.record_id,
            "reason": self.reason,
            "detail": self.detail
        }


@dataclass
class QuarantineReport:
    entries: List[QuarantineEntry] = field(default_factory=list)
    lines_read: int = 0

    def add(self, line_number, record_id, reason, detail=""):
        self.entries.append(QuarantineEntry(line_number, record_id, reason, detail))

    def __len__(self) -> int:
        return len(self.entries)

    def reasons(self) -> Dict[str, int]:
        counts = {}
        for entry in self.entries:
            counts[entry.reason] = counts.get(entry.reason, 0) + 1
        return counts


HISTOGRAM_BINS = 10


@dataclass
class CorpusStats:
    post_count: int = 0
    ad_hominem_count: int = 0
    ad_hominem_rate: float = 0.0
    delta_count: int = 0
    threads_total: int = 0
    threads_with_ah: int = 0
    threads_with_single_ah: int = 0
    threads_with_multiple_ah: int = 0
    threads_with_more_than_three_ah: int = 0
    single_ah_last_fraction: float = 0.0
    ah_reply_to_ah_fraction: float = 0.0
    first_ah_relative_position_histogram: List[int] = field(
        default_factory=lambda: [0] * HISTOGRAM_BINS)
    attacker_out_of_blue_fraction: float = 0.0
    attacker_with_prior_normal_argument_fraction: float = 0.0
    op_committed_ah_fraction: float = 0.0
    two_person_interplay_fraction: float = 0.0
    submissions_with_ah: int = 0
    submissions_one_or_two_ah_fraction: float = 0.0
    first_level_ah_submissions: int = 0
    max_ah_per_submission: int = 0
    per_submission_ah_counts: Dict[str, int] = field(default_factory=dict)

    def histogram_rows(self) -> List[Dict]:
        width = 1.0 / HISTOGRAM_BINS
        return [
            {"bin_start": round(i * width, 10), "bin_end": round((i + 1) * width, 10), "count": count}
            for i, count in enumerate(self.first_ah_relative_position_histogram)
        ]

    def scalar_items(self) -> List[Tuple[str, object]]:
        skip = {"first_ah_relative_position_histogram", "per_submission_ah_counts"}
        return [(key, value) for key, value in self.__dict__.items() if key not in skip]
