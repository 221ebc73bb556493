from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

from models.corpus_data import DiscussionTree, PostRecord
from models.dataset_data import AD_HOMINEM, DELTA, NEGATIVE, DatasetInstance, MatchedPair, TripletInstance
from modules.text_processor import COMMENT_BEGIN, EmbeddingTable, TokenizedDoc, Vocabulary, avg_vector, encode
from utils.error_handler import SamplingError

CONTEXT_POSTS = 3


def score_matrix(positives: Sequence[TokenizedDoc], candidates: Sequence[TokenizedDoc],
                 table: EmbeddingTable, threads: int = 1) -> np.ndarray:
    """cosine(avg vectors) x 1 / (1 + |length difference|)"""
    candidate_vectors = np.vstack([avg_vector(doc, table) for doc in candidates])
    candidate_lengths = np.array([len(doc) for doc in candidates], dtype=np.float64)

    def score_chunk(chunk):
        vectors = np.vstack([avg_vector(doc, table) for doc in chunk])
        lengths = np.array([len(doc) for doc in chunk], dtype=np.float64)
        cosine = cosine_similarity(vectors, candidate_vectors)
        penalty = 1.0 / (1.0 + np.abs(lengths[:, None] - candidate_lengths[None, :]))
        return cosine * penalty

    chunks = [list(positives[i::max(1, threads)]) for i in range(max(1, threads))]
    chunks = [chunk for chunk in chunks if chunk]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        scored = list(pool.map(score_chunk, chunks))

    # undo the strided split so rows follow the positives' order
    scores = np.empty((len(positives), len(candidates)))
    for offset, block in enumerate(scored):
        scores[offset::len(chunks)] = block
    return scores


def match_negatives(positives: Sequence[Tuple[str, TokenizedDoc]],
                    candidates: Sequence[Tuple[str, TokenizedDoc]],
                    table: EmbeddingTable, threads: int = 1) -> List[MatchedPair]:
    """Greedy 1:1 assignment: each positive, in order, takes its best unused candidate"""
    if len(candidates) < len(positives):
        raise SamplingError(
            f"{len(positives)} positives but only {len(candidates)} candidates "
            f"(short by {len(positives) - len(candidates)})")
    if not positives:
        return []

    scores = score_matrix([doc for _, doc in positives], [doc for _, doc in candidates], table, threads)
    used = np.zeros(len(candidates), dtype=bool)
    pairs = []
    for row, (positive_id, _) in enumerate(positives):
        masked = np.where(used, -np.inf, scores[row])
        best = int(np.argmax(masked))
        used[best] = True
        pairs.append(MatchedPair(positive_id, candidates[best][0], float(scores[row, best])))
    return pairs


def context_tokens(posts: Sequence[PostRecord], tokenize) -> List[str]:
    tokens = []
    for post in posts:
        tokens.append(COMMENT_BEGIN)
        tokens.extend(tokenize(post.text))
    return tokens


def two_person_context(tree: DiscussionTree, post: PostRecord):
    """The path to post if its last four posts come from exactly two authors, else None"""
    path = tree.path_to(post.id)
    if len(path) < CONTEXT_POSTS + 1:
        return None
    window = path[-(CONTEXT_POSTS + 1):]
    if len({p.author for p in window}) != 2:
        return None
    return path


class DatasetSampler:
    def __init__(self, config, logger_service, text_processor):
        self.config = config
        self.logger = logger_service
        self.text_processor = text_processor

    @property
    def rule(self):
        return self.config.hostility_rule

    def _posts(self, trees: List[DiscussionTree]):
        for tree in trees:
            for post_id in tree.preorder():
                yield tree, tree.posts[post_id]

    def _encode(self, post: PostRecord, vocab: Vocabulary) -> TokenizedDoc:
        return encode(self.text_processor.tokenize(post.text), vocab)

    def sample_binary_dataset(self, trees: List[DiscussionTree], table: EmbeddingTable,
                              vocab: Vocabulary) -> Tuple[List[DatasetInstance], List[MatchedPair]]:
        """All ad hominem replies plus one similarity-matched negative each"""
        positives, candidates = [], []
        for _, post in self._posts(trees):
            if post.is_submission:
                continue
            if post.is_ad_hominem(self.rule):
                positives.append(post)
            elif post.violates_other_rule(self.rule) or post.delta_awarded:
                candidates.append(post)

        if not positives:
            raise SamplingError("corpus has no ad hominem posts")

        self.logger.log_stage("sample binary", f"{len(positives)} positives, {len(candidates)} candidates")
        docs = {post.id: self._encode(post, vocab) for post in positives + candidates}
        pairs = match_negatives(
            [(post.id, docs[post.id]) for post in positives],
            [(post.id, docs[post.id]) for post in candidates],
            table, self.config.threads)

        instances = []
        for pair in pairs:
            for post_id, label in ((pair.positive, AD_HOMINEM), (pair.negative, NEGATIVE)):
                instances.append(DatasetInstance(post_id, label, docs[post_id].tokens, [post_id]))
        return instances, pairs

    def sample_op_groups(self, trees: List[DiscussionTree]) -> Tuple[List[PostRecord], List[PostRecord]]:
        """(ad hominem group, delta group) submissions; a submission with both joins neither"""
        ah_group, delta_group = [], []
        for tree in trees:
            has_ah = any(post.is_ad_hominem(self.rule) for post in tree.posts.values())
            has_delta = any(post.delta_awarded for post in tree.posts.values())
            if has_ah and not has_delta:
                ah_group.append(tree.submission)
            elif has_delta and not has_ah:
                delta_group.append(tree.submission)
        self.logger.log_stage("sample op-groups", f"{len(ah_group)} ad hominem, {len(delta_group)} delta")
        return ah_group, delta_group

    def op_group_instances(self, trees: List[DiscussionTree]) -> List[DatasetInstance]:
        ah_group, delta_group = self.sample_op_groups(trees)
        instances = []
        for label, group in ((AD_HOMINEM, ah_group), (DELTA, delta_group)):
            for submission in group:
                tokens = self.text_processor.tokenize(submission.text)
                instances.append(DatasetInstance(submission.id, label, tokens, [submission.id]))
        return instances

    def triplet_candidates(self, trees: List[DiscussionTree]) -> Tuple[List[TripletInstance], List[TripletInstance]]:
        """Context triplets for ad hominem outcomes and delta outcomes, one per outcome post"""
        positives, negatives = [], []
        for tree, post in self._posts(trees):
            if post.is_submission:
                continue
            is_ah = post.is_ad_hominem(self.rule)
            if not (is_ah or post.delta_awarded):
                continue
            path = two_person_context(tree, post)
            if path is None:
                continue
            context = path[-(CONTEXT_POSTS + 1):-1]
            instance = TripletInstance(
                outcome_id=post.id,
                context_ids=tuple(p.id for p in context),
                tokens=tuple(context_tokens(context, self.text_processor.tokenize)),
                label=AD_HOMINEM if is_ah else DELTA,
                thread_id=f"{tree.id}:{post.id}",
            )
            (positives if is_ah else negatives).append(instance)
        return positives, negatives

    def sample_triplets(self, trees: List[DiscussionTree], table: EmbeddingTable,
                        vocab: Vocabulary) -> List[TripletInstance]:
        positives, negatives = self.triplet_candidates(trees)
        if not positives:
            raise SamplingError("no two-person thread ends in an ad hominem with three posts of context")

        self.logger.log_stage("sample triplets", f"{len(positives)} positives, {len(negatives)} candidates")
        by_id: Dict[str, TripletInstance] = {t.outcome_id: t for t in positives + negatives}
        pairs = match_negatives(
            [(t.outcome_id, encode(t.tokens, vocab)) for t in positives],
            [(t.outcome_id, encode(t.tokens, vocab)) for t in negatives],
            table, self.config.threads)

        triplets = []
        for pair in pairs:
            triplets.append(by_id[pair.positive])
            triplets.append(by_id[pair.negative])
        return triplets
