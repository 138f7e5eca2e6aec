"""Minimum-added-regret calibration of a block partition to a group template.

Given an ordered block partition (cross-block orders all certain) and a
group placement template for the top-k slots, the calibrator segments the
template by block sizes and walks the segments in order. Whenever the
current block lacks documents of a required group, it promotes exactly the
shortfall from the nearest lower blocks; documents squeezed out of the
block form a new block inserted just before the next one, keeping their
known superiority over everything below. Promotions merge documents of
different original blocks into one block, and the randomized within-block
presentation then no longer preserves their known relative order; the
output realizes that loss explicitly by placing promoted documents above
the block members they joined, so the reported added regret is the exact,
deterministic cost of the calibration structure.

Added regret is the count of certain pairs displayed in inverted order,
restricted to the top-k since lower positions receive no exposure.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .fairness import GroupTemplate
from .ranker import BlockPartition


class InfeasibleTemplateError(ValueError):
    """Raised when the candidate pool cannot satisfy a template's group usage."""


class MalformedPartitionError(ValueError):
    """Raised when the input blocks are not a partition of distinct documents."""


@dataclass
class SwapEvent:
    """Diagnostics for one promotion event during calibration.

    ``donors_per_block`` and the per-block counts are indexed by position
    in the queue of lower blocks as it stood when the promotion happened
    (0 = nearest). ``blocks_b_counts`` counts group-B members per lower
    block and ``blocks_sizes`` their total sizes.
    """

    host_block: int
    group: str
    shortage: int
    donors_per_block: dict[int, int]
    host_members: int
    displaced: int
    blocks_b_counts: list[int]
    blocks_sizes: list[int]

    def describe(self) -> str:
        return (
            f"host={self.host_block} group={self.group} shortage={self.shortage} "
            f"donors={self.donors_per_block} host_members={self.host_members} "
            f"displaced={self.displaced} b_counts={self.blocks_b_counts} "
            f"sizes={self.blocks_sizes}"
        )


@dataclass
class CalibratedRanking:
    """A template-satisfying display order and its calibration cost."""

    order: list[int]
    added_regret: int
    template: GroupTemplate
    partition_after: BlockPartition
    events: list[SwapEvent] = field(default_factory=list)


def added_regret(order, certain) -> int:
    """Count certain pairs (winner, loser) whose loser precedes the winner."""
    position = {doc: p for p, doc in enumerate(order)}
    count = 0
    for winner, loser in certain:
        pw = position.get(winner)
        pl = position.get(loser)
        if pw is not None and pl is not None and pl < pw:
            count += 1
    return count


def _within_block_wins(partition: BlockPartition, certain) -> dict[int, int]:
    origin = {doc: bi for bi, block in enumerate(partition.blocks) for doc in block}
    wins = {doc: 0 for doc in origin}
    for winner, loser in certain:
        if winner in origin and origin.get(loser) == origin[winner]:
            wins[winner] += 1
    return wins


def _donor_sort_key(doc: int, wins, scores):
    # promotion prefers documents likely to deserve it: most certain wins
    # inside their own block, then higher score, then stable index
    return (-wins[doc], -scores.get(doc, 0.0), doc)


def fair_swap(
    partition: BlockPartition,
    template: GroupTemplate,
    certain,
    groups: dict[int, str],
    rng: np.random.Generator,
    scores: dict[int, float] | None = None,
    respect_certain: bool = True,
) -> CalibratedRanking:
    """Calibrate the partition to one template with minimum added regret.

    ``groups`` maps document ids to group labels and ``scores`` (optional)
    to relevance scores used for deterministic tie-breaking. With
    ``respect_certain`` (default), certain orders between documents of the
    same original block are followed where the slot pattern allows;
    disabling it recovers pure seeded shuffling within blocks.
    """
    docs_all = [doc for block in partition.blocks for doc in block]
    if len(set(docs_all)) != len(docs_all):
        raise MalformedPartitionError("blocks contain duplicate documents")
    k = len(template)
    if k > len(docs_all):
        raise InfeasibleTemplateError(f"template length {k} exceeds {len(docs_all)} documents")
    need_total = Counter(template.placement)
    have_total = Counter(groups[doc] for doc in docs_all)
    for g, n in need_total.items():
        if n > have_total.get(g, 0):
            raise InfeasibleTemplateError(
                f"template needs {n} documents of group {g}, only {have_total.get(g, 0)} available"
            )
    scores = scores or {}
    origin = {doc: bi for bi, block in enumerate(partition.blocks) for doc in block}
    wins = _within_block_wins(partition, certain)
    certain_set = set(certain)

    work: deque[list[int]] = deque(list(block) for block in partition.blocks)
    out_blocks: list[list[int]] = []
    order: list[int] = []
    events: list[SwapEvent] = []
    pos = 0
    host_index = 0
    while pos < k:
        if not work:
            raise MalformedPartitionError("ran out of blocks before filling the template")
        block = work.popleft()
        seg = template.placement[pos : min(pos + len(block), k)]
        seg_need = Counter(seg)
        members_by_group: dict[str, list[int]] = {}
        for doc in block:
            members_by_group.setdefault(groups[doc], []).append(doc)

        donors: list[int] = []
        for g, needed in seg_need.items():
            shortage = needed - len(members_by_group.get(g, []))
            if shortage <= 0:
                continue
            b_counts = [sum(1 for d in blk if groups[d] == "B") for blk in work]
            sizes = [len(blk) for blk in work]
            taken, per_block = _promote(work, g, shortage, groups, wins, scores)
            if len(taken) < shortage:
                raise InfeasibleTemplateError(
                    f"could not promote {shortage} documents of group {g}"
                )
            donors.extend(taken)
            events.append(
                SwapEvent(
                    host_block=host_index,
                    group=g,
                    shortage=shortage,
                    donors_per_block=per_block,
                    host_members=len(block),
                    displaced=max(len(block) + len(taken) - len(seg), 0),
                    blocks_b_counts=b_counts,
                    blocks_sizes=sizes,
                )
            )

        # keep the strongest members for display; the rest are displaced
        displayed: list[int] = list(donors)
        displaced: list[int] = []
        for g, members in members_by_group.items():
            keep = min(len(members), seg_need.get(g, 0))
            ranked = sorted(members, key=lambda d: _donor_sort_key(d, wins, scores))
            displayed.extend(ranked[:keep])
            displaced.extend(ranked[keep:])

        order.extend(
            _fill_segment(seg, displayed, origin, certain_set, groups, rng, respect_certain)
        )
        out_blocks.append(sorted(displayed))
        if displaced:
            work.appendleft(sorted(displaced))
        pos += len(seg)
        host_index += 1

    partition_after = BlockPartition(blocks=out_blocks + [sorted(b) for b in work])
    return CalibratedRanking(
        order=order,
        added_regret=added_regret(order, certain_set),
        template=template,
        partition_after=partition_after,
        events=events,
    )


def _promote(
    work: deque, group: str, shortage: int, groups, wins, scores
) -> tuple[list[int], dict[int, int]]:
    """Take the shortfall from the nearest lower blocks, best candidates first."""
    taken: list[int] = []
    per_block: dict[int, int] = {}
    for bi, block in enumerate(work):
        if len(taken) == shortage:
            break
        candidates = sorted(
            (d for d in block if groups[d] == group),
            key=lambda d: _donor_sort_key(d, wins, scores),
        )
        chosen = candidates[: shortage - len(taken)]
        if chosen:
            per_block[bi] = len(chosen)
            for d in chosen:
                block.remove(d)
            taken.extend(chosen)
    # drop blocks emptied by promotion
    empty = [i for i, blk in enumerate(work) if not blk]
    for i in reversed(empty):
        del work[i]
    return taken, per_block


def _fill_segment(
    seg,
    displayed: list[int],
    origin: dict[int, int],
    certain_set: set,
    groups,
    rng: np.random.Generator,
    respect_certain: bool,
) -> list[int]:
    """Assign the block's displayed documents to the segment's slots.

    Documents promoted from farther blocks go first among their group's
    slots: the merge already forfeited their known inferiority, and
    realizing it keeps the reported regret equal to the structural cost.
    Among documents of one original block, certain orders are respected
    greedily when the heuristic is on; remaining ties are random.
    """
    remaining: dict[str, list[int]] = {}
    for doc in displayed:
        remaining.setdefault(groups[doc], []).append(doc)
    filled: list[int] = []
    placed: set[int] = set()
    for g in seg:
        cands = remaining[g]
        if respect_certain:
            top_origin = max(origin[d] for d in cands)
            pool = [d for d in cands if origin[d] == top_origin]
            if len(pool) > 1:
                unplaced_same_origin = [
                    d for d in displayed if d not in placed and origin[d] == top_origin
                ]

                def dominators(doc: int) -> int:
                    return sum(
                        1
                        for other in unplaced_same_origin
                        if other != doc and (other, doc) in certain_set
                    )

                best = min(dominators(d) for d in pool)
                pool = [d for d in pool if dominators(d) == best]
        else:
            pool = cands
        choice = pool[int(rng.integers(len(pool)))] if len(pool) > 1 else pool[0]
        cands.remove(choice)
        placed.add(choice)
        filled.append(choice)
    return filled


def select_ranking(
    partition: BlockPartition,
    templates: list[GroupTemplate],
    certain,
    groups: dict[int, str],
    rng: np.random.Generator,
    projections: list[float] | None = None,
    scores: dict[int, float] | None = None,
    respect_certain: bool = True,
) -> CalibratedRanking:
    """Calibrate every qualified template and keep the cheapest ranking.

    Ties on added regret break toward the smaller projected unfairness
    magnitude (when given), then the lexicographically smallest placement,
    so concurrent evaluation can never change the outcome. Each template
    gets an independently derived seed.
    """
    if not templates:
        raise InfeasibleTemplateError("no templates to select from")
    if projections is None:
        projections = [0.0] * len(templates)
    child_rngs = rng.spawn(len(templates))
    best: CalibratedRanking | None = None
    best_key = None
    for template, projection, child in zip(templates, projections, child_rngs):
        result = fair_swap(
            partition,
            template,
            certain,
            groups,
            child,
            scores=scores,
            respect_certain=respect_certain,
        )
        key = (result.added_regret, abs(projection), template.placement)
        if best is None or key < best_key:
            best, best_key = result, key
    return best
