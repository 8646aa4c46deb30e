"""Quality-aware pseudo-label memory: match, merge, vote, persist.

Each scene keeps a set of pseudo-boxes across self-training rounds.  A round
update matches the incoming proxy labels against the stored ones (three
interchangeable matching strategies), merges matched pairs, and routes the
unmatched ones through a counter-based vote that caches, ignores, or discards
them.

Matching strategies
-------------------
* consistency: each stored box claims its highest-IoU proxy box; conflicting
  claims are resolved greedily by descending IoU and losers stay unmatched.
* nms: stored and proxy boxes are pooled and suppressed jointly at IoU 0.1; a
  survivor pairs with the best box it suppressed from the opposite pool.
  Boxes suppressed by their own pool are duplicates and are dropped outright
  (they bypass voting); the dropped_* fields record them.
* bipartite: an exact minimum-cost assignment on -IoU.

All pairings at IoU below 0.1 are treated as unmatched.  Matched entries
always re-enter the memory with their counter reset to 0.

Concurrency: updates mutate nothing (new SceneMemory objects are returned);
different scenes may be updated concurrently as long as each scene has a
single writer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
import math
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Box3D, iou_3d, nms_indices, pairwise_iou_matrix
from .pseudo_label import BoxState, PseudoBox

# Pairs below this IoU never count as matched, in any strategy.
MATCH_IOU_CUTOFF = 0.1


class EnsembleVariant(str, Enum):
    CONSISTENCY = "consistency"
    NMS = "nms"
    BIPARTITE = "bipartite"


class MergeRule(str, Enum):
    MAX = "max"
    AVG = "avg"


@dataclass(frozen=True)
class VotingThresholds:
    """Counter thresholds: ignore at t_ign misses, remove at t_rm."""

    t_ign: int
    t_rm: int

    def __post_init__(self) -> None:
        if not (0 < self.t_ign <= self.t_rm):
            raise ValueError(f"need 0 < t_ign <= t_rm, got ({self.t_ign}, {self.t_rm})")


DEFAULT_VOTING = VotingThresholds(t_ign=2, t_rm=3)


@dataclass(frozen=True)
class SceneMemory:
    """Pseudo-labels for one scene at round k; round 0 is always empty."""

    scene_id: str
    round: int
    entries: tuple[PseudoBox, ...]

    def __post_init__(self) -> None:
        if not self.scene_id:
            raise ValueError("scene_id must be non-empty")
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.round == 0 and self.entries:
            raise ValueError("round-0 memory must be empty")


@dataclass(frozen=True)
class MemoryBank:
    """All per-scene memories plus the update policy they were built with."""

    scenes: Mapping[str, SceneMemory]
    round: int
    voting: VotingThresholds = DEFAULT_VOTING
    variant: EnsembleVariant = EnsembleVariant.CONSISTENCY

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenes", dict(self.scenes))
        object.__setattr__(self, "variant", EnsembleVariant(self.variant))
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round!r}")
        for scene_id, mem in self.scenes.items():
            if scene_id != mem.scene_id:
                raise ValueError(f"bank key {scene_id!r} != scene id {mem.scene_id!r}")
            if mem.round != self.round:
                raise ValueError(
                    f"scene {scene_id!r} at round {mem.round}, bank at round {self.round}"
                )
            for e in mem.entries:
                if e.cnt >= self.voting.t_rm:
                    raise ValueError("persisted entry with cnt >= t_rm")


@dataclass(frozen=True)
class MatchResult:
    """One-to-one pairing between stored and proxy boxes.

    ``matched`` holds (memory_index, proxy_index, iou) triples; every other
    index lands in exactly one of the unmatched or dropped lists.  The
    dropped lists are only populated by the nms strategy (same-pool
    duplicates that leave the bank entirely, skipping the vote).
    """

    matched: tuple[tuple[int, int, float], ...]
    unmatched_memory: tuple[int, ...]
    unmatched_proxy: tuple[int, ...]
    dropped_memory: tuple[int, ...] = ()
    dropped_proxy: tuple[int, ...] = ()


def _match_result(
    matched: list[tuple[int, int, float]],
    n_memory: int,
    n_proxy: int,
    dropped_memory: Sequence[int] = (),
    dropped_proxy: Sequence[int] = (),
) -> MatchResult:
    matched = sorted(matched)
    taken_m = {j for j, _, _ in matched} | set(dropped_memory)
    taken_p = {v for _, v, _ in matched} | set(dropped_proxy)
    return MatchResult(
        matched=tuple(matched),
        unmatched_memory=tuple(j for j in range(n_memory) if j not in taken_m),
        unmatched_proxy=tuple(v for v in range(n_proxy) if v not in taken_p),
        dropped_memory=tuple(sorted(dropped_memory)),
        dropped_proxy=tuple(sorted(dropped_proxy)),
    )


def consistency_match(memory: SceneMemory, proxy: Sequence[PseudoBox]) -> MatchResult:
    """Match each stored box to its argmax-IoU proxy box, greedily one-to-one.

    Candidate pairs are ordered by IoU descending (ties: lower memory index,
    then lower proxy index); a proxy box already claimed leaves the later
    claimant unmatched.  Pairs under the cutoff are unmatched.
    """
    n_m = len(memory.entries)
    n_p = len(proxy)
    if n_m == 0 or n_p == 0:
        return _match_result([], n_m, n_p)
    iou = pairwise_iou_matrix([e.box for e in memory.entries], [p.box for p in proxy])
    candidates = []
    for j in range(n_m):
        v = int(np.argmax(iou[j]))
        candidates.append((-iou[j, v], j, v))
    candidates.sort()
    matched = []
    taken_proxy: set[int] = set()
    for neg, j, v in candidates:
        a = -neg
        if a < MATCH_IOU_CUTOFF or v in taken_proxy:
            continue
        taken_proxy.add(v)
        matched.append((j, v, a))
    return _match_result(matched, n_m, n_p)


def nms_match(memory: SceneMemory, proxy: Sequence[PseudoBox]) -> MatchResult:
    """Match by pooled NMS at the cutoff IoU.

    Stored and proxy boxes are concatenated (memory first) with their u
    scores and suppressed greedily.  Each survivor pairs with the
    highest-scored box it suppressed from the opposite pool; any further
    cross-pool boxes it suppressed stay unmatched, while same-pool losers are
    dropped.  Survivors that suppressed nothing from the opposite pool are
    unmatched.
    """
    n_m = len(memory.entries)
    n_p = len(proxy)
    entries = list(memory.entries) + list(proxy)
    boxes = [e.box for e in entries]
    scores = [e.u for e in entries]
    kept, suppressed_by = nms_indices(boxes, scores, MATCH_IOU_CUTOFF)
    victims: dict[int, list[int]] = {k: [] for k in kept}
    order = sorted(suppressed_by, key=lambda i: (-scores[i], i))
    for i in order:
        victims[suppressed_by[i]].append(i)
    matched = []
    dropped_m: list[int] = []
    dropped_p: list[int] = []
    for s in kept:
        partner = None
        for i in victims[s]:
            same_pool = (s < n_m) == (i < n_m)
            if same_pool:
                (dropped_m if i < n_m else dropped_p).append(i)
            elif partner is None:
                partner = i
        if partner is None:
            continue
        mem_idx, prox_idx = (s, partner - n_m) if s < n_m else (partner, s - n_m)
        box_m = entries[mem_idx].box
        box_p = entries[n_m + prox_idx].box
        matched.append((mem_idx, prox_idx, iou_3d(box_m, box_p)))
    return _match_result(matched, n_m, n_p, dropped_m, dropped_p)


def assignment_max_total(iou: np.ndarray) -> list[tuple[int, int]]:
    """Exact assignment maximizing total IoU on a (possibly rectangular) matrix."""
    if iou.size == 0:
        return []
    rows, cols = linear_sum_assignment(-iou)
    return list(zip(rows.tolist(), cols.tolist()))


def bipartite_match(memory: SceneMemory, proxy: Sequence[PseudoBox]) -> MatchResult:
    """Match by exact minimum-cost assignment with cost -IoU.

    Assigned pairs under the cutoff are demoted to unmatched on both sides.
    """
    n_m = len(memory.entries)
    n_p = len(proxy)
    if n_m == 0 or n_p == 0:
        return _match_result([], n_m, n_p)
    iou = pairwise_iou_matrix([e.box for e in memory.entries], [p.box for p in proxy])
    matched = []
    for j, v in assignment_max_total(iou):
        if iou[j, v] >= MATCH_IOU_CUTOFF:
            matched.append((j, v, float(iou[j, v])))
    return _match_result(matched, n_m, n_p)


_MATCHERS = {
    EnsembleVariant.CONSISTENCY: consistency_match,
    EnsembleVariant.NMS: nms_match,
    EnsembleVariant.BIPARTITE: bipartite_match,
}


def merge_matched(mem_entry: PseudoBox, proxy_entry: PseudoBox) -> PseudoBox:
    """Keep whichever entry has the higher u, counter reset to 0.

    The winner's box, score, and state all transfer together; geometry is
    never averaged.  Ties keep the proxy (newer) entry.
    """
    winner = proxy_entry if mem_entry.u <= proxy_entry.u else mem_entry
    return replace(winner, cnt=0)


def weighted_avg_merge(mem_entry: PseudoBox, proxy_entry: PseudoBox) -> PseudoBox:
    """u-weighted average of the two boxes (ablation-only merge rule).

    Centers and sizes average linearly; yaw averages on the circle through
    weighted unit vectors, which keeps near-pi headings near pi.  The merged
    u is the max of the two and the state follows the higher-u entry.
    """
    wm = mem_entry.u
    wp = proxy_entry.u
    total = wm + wp
    if total <= 0.0:
        wm = wp = 0.5
        total = 1.0
    a = mem_entry.box
    b = proxy_entry.box
    yaw = math.atan2(
        wm * math.sin(a.yaw) + wp * math.sin(b.yaw),
        wm * math.cos(a.yaw) + wp * math.cos(b.yaw),
    )
    box = Box3D(
        cx=(wm * a.cx + wp * b.cx) / total,
        cy=(wm * a.cy + wp * b.cy) / total,
        cz=(wm * a.cz + wp * b.cz) / total,
        l=(wm * a.l + wp * b.l) / total,
        w=(wm * a.w + wp * b.w) / total,
        h=(wm * a.h + wp * b.h) / total,
        yaw=yaw,
    )
    winner = proxy_entry if mem_entry.u <= proxy_entry.u else mem_entry
    return PseudoBox(box, max(mem_entry.u, proxy_entry.u), winner.state, 0)


_MERGERS = {MergeRule.MAX: merge_matched, MergeRule.AVG: weighted_avg_merge}


def memory_voting(
    unmatched_memory: Sequence[PseudoBox],
    unmatched_proxy: Sequence[PseudoBox],
    thresholds: VotingThresholds = DEFAULT_VOTING,
) -> tuple[list[PseudoBox], list[PseudoBox], int]:
    """Route unmatched boxes by their miss counter.

    Unmatched stored boxes get cnt+1, unmatched proxy boxes start at cnt=0;
    then cnt >= t_rm discards, t_ign <= cnt < t_rm stores as ignored, and
    cnt < t_ign caches the entry with its state untouched.  Returns
    (cached, ignored, discarded_count).
    """
    cached: list[PseudoBox] = []
    ignored: list[PseudoBox] = []
    discarded = 0
    staged = [(e, e.cnt + 1) for e in unmatched_memory] + [(e, 0) for e in unmatched_proxy]
    for entry, cnt in staged:
        if cnt >= thresholds.t_rm:
            discarded += 1
        elif cnt >= thresholds.t_ign:
            ignored.append(replace(entry, state=BoxState.IGNORED, cnt=cnt))
        else:
            cached.append(replace(entry, cnt=cnt))
    return cached, ignored, discarded


def update_memory(
    memory: SceneMemory,
    proxy: Sequence[PseudoBox],
    variant: EnsembleVariant = EnsembleVariant.CONSISTENCY,
    merge: MergeRule = MergeRule.MAX,
    thresholds: VotingThresholds = DEFAULT_VOTING,
    scene_id: str | None = None,
) -> SceneMemory:
    """One round of memory update: match, merge, vote; round advances by 1."""
    if scene_id is not None and scene_id != memory.scene_id:
        raise ValueError(f"scene id mismatch: memory {memory.scene_id!r}, proxy batch {scene_id!r}")
    variant = EnsembleVariant(variant)
    merge = MergeRule(merge)
    result = _MATCHERS[variant](memory, proxy)
    merge_fn = _MERGERS[merge]
    merged = [merge_fn(memory.entries[j], proxy[v]) for j, v, _ in result.matched]
    cached, ignored, _ = memory_voting(
        [memory.entries[j] for j in result.unmatched_memory],
        [proxy[v] for v in result.unmatched_proxy],
        thresholds,
    )
    return SceneMemory(memory.scene_id, memory.round + 1, tuple(merged + cached + ignored))


def update_bank(
    bank: MemoryBank,
    proxies: Mapping[str, Sequence[PseudoBox]],
    merge: MergeRule = MergeRule.MAX,
    voting: VotingThresholds | None = None,
    variant: EnsembleVariant | None = None,
) -> MemoryBank:
    """Update every scene in the union of bank scenes and proxy batches.

    Scene ids present only in the proxy batch bootstrap from an empty memory;
    scenes absent from the batch are updated with an empty proxy list (their
    entries go through voting as unmatched).  ``voting`` and ``variant``
    override the bank's recorded policy for this update and are recorded in
    the result.
    """
    voting = bank.voting if voting is None else voting
    variant = bank.variant if variant is None else EnsembleVariant(variant)
    scene_ids = sorted(set(bank.scenes) | set(proxies))
    scenes = {}
    for scene_id in scene_ids:
        memory = bank.scenes.get(scene_id)
        if memory is None:
            memory = SceneMemory(scene_id, bank.round, ())
        scenes[scene_id] = update_memory(
            memory,
            list(proxies.get(scene_id, ())),
            variant=variant,
            merge=merge,
            thresholds=voting,
            scene_id=scene_id,
        )
    return MemoryBank(scenes, bank.round + 1, voting, variant)


def save_snapshot(bank: MemoryBank, path) -> None:
    """Write the bank to a versioned snapshot file (atomic replace)."""
    from . import serialize

    serialize.write_text_atomic(path, serialize.dump_snapshot(bank))


def load_snapshot(path) -> MemoryBank:
    """Read a snapshot file; wrong version and malformed content raise
    distinct error types (SnapshotVersionError / SnapshotFormatError)."""
    from . import serialize

    with open(path, "r", encoding="utf-8") as fh:
        return serialize.parse_snapshot(fh.read())
