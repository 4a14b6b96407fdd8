"""Per-episode partitions and the fixed-capacity global replay buffer.

Scores are normalized per dataset, so entries are only ever ranked against
other entries of the same partition (and the same category).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import (
    BufferEmpty,
    CorruptState,
    KTooLarge,
    NoValidSamples,
    NonMonotonicEpisode,
    SchemaMismatch,
)
from .prng import SplitMix64
from .scoring import SampleScores

STATE_VERSION = "1.0"
REPRESENTATIVE = "representative"
DIFFICULT = "difficult"
CATEGORIES = (REPRESENTATIVE, DIFFICULT)


@dataclass(frozen=True)
class BufferEntry:
    sample_id: str
    episode: int
    category: str
    stored_score: float
    prob_path: str | None = None
    gt_path: str | None = None
    modalities: dict[str, str] = field(default_factory=dict)

    def rank_key(self):
        # best first: higher score, then ascending sample_id
        return (-self.stored_score, self.sample_id)


@dataclass(frozen=True)
class Partition:
    episode: int
    entries: tuple[BufferEntry, ...] = ()
    name: str | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def of(self, category: str) -> list[BufferEntry]:
        return [e for e in self.entries if e.category == category]


@dataclass(frozen=True)
class GlobalBuffer:
    beta: int
    partitions: tuple[Partition, ...] = ()

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")

    @property
    def sizes(self) -> list[int]:
        return [len(p) for p in self.partitions]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def entries(self) -> list[BufferEntry]:
        return [e for p in self.partitions for e in p.entries]


@dataclass
class UpdateReport:
    buffer: GlobalBuffer
    base_quotas: list[int]
    quotas: list[int]
    evicted: list[BufferEntry]


def select_partition(
    scores: Sequence[SampleScores],
    n: int,
    episode: int,
    sources: dict[str, dict] | None = None,
    name: str | None = None,
) -> Partition:
    """Top ceil(n/2) samples by r_rep and floor(n/2) by r_diff.

    A sample already taken as representative is skipped in the difficult
    ranking. When fewer than ``n`` valid samples exist all of them are taken,
    still split ceil/floor. ``sources`` maps sample_id to
    ``{"prob": ..., "gt": ..., "modalities": {...}}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    valid = [s for s in scores if s.valid]
    if not valid:
        raise NoValidSamples("no valid scored samples to select from")
    ids = [s.sample_id for s in valid]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in score list")

    take = min(n, len(valid))
    n_rep = (take + 1) // 2
    n_diff = take // 2

    by_rep = sorted(valid, key=lambda s: (-s.r_rep, s.sample_id))
    reps = by_rep[:n_rep]
    chosen = {s.sample_id for s in reps}
    by_diff = sorted(valid, key=lambda s: (-s.r_diff, s.sample_id))
    diffs = [s for s in by_diff if s.sample_id not in chosen][:n_diff]

    sources = sources or {}

    def entry(s: SampleScores, category: str, score: float) -> BufferEntry:
        src = sources.get(s.sample_id, {})
        return BufferEntry(
            sample_id=s.sample_id,
            episode=episode,
            category=category,
            stored_score=float(score),
            prob_path=src.get("prob"),
            gt_path=src.get("gt"),
            modalities=dict(src.get("modalities", {})),
        )

    entries = [entry(s, REPRESENTATIVE, s.r_rep) for s in reps]
    entries += [entry(s, DIFFICULT, s.r_diff) for s in diffs]
    return Partition(episode=episode, entries=tuple(entries), name=name)


def base_quotas(beta: int, t: int) -> list[int]:
    """floor(beta/t) each, remainder slots to the most recent partitions."""
    q, r = divmod(beta, t)
    return [q + (1 if i >= t - r else 0) for i in range(t)]


def fit_quotas(beta: int, sizes: Sequence[int]) -> tuple[list[int], list[int]]:
    """Final per-partition targets given current sizes.

    Undersized partitions keep what they have; their unused quota is handed
    out one slot at a time, newest partition first, cycling, to partitions
    that still hold more entries than their target.
    """
    base = base_quotas(beta, len(sizes))
    final = [min(q, s) for q, s in zip(base, sizes)]
    surplus = sum(base) - sum(final)
    while surplus > 0:
        granted = False
        for i in reversed(range(len(sizes))):
            if surplus == 0:
                break
            if final[i] < sizes[i]:
                final[i] += 1
                surplus -= 1
                granted = True
        if not granted:
            break
    return base, final


def evict_to(partition: Partition, quota: int) -> tuple[Partition, list[BufferEntry]]:
    """Drop lowest-ranked entries until ``quota`` remain.

    Each step evicts from the larger category (difficult on a tie, since the
    representative side holds the odd slot), so the split stays within one.
    """
    pools = {c: sorted(partition.of(c), key=BufferEntry.rank_key) for c in CATEGORIES}
    evicted = []
    while sum(len(p) for p in pools.values()) > quota:
        n_rep, n_diff = len(pools[REPRESENTATIVE]), len(pools[DIFFICULT])
        category = REPRESENTATIVE if n_rep > n_diff else DIFFICULT
        evicted.append(pools[category].pop())
    if not evicted:
        return partition, []
    gone = {id(e) for e in evicted}
    kept = tuple(e for e in partition.entries if id(e) not in gone)
    return replace(partition, entries=kept), evicted


def apply_update(buffer: GlobalBuffer, new_partition: Partition) -> UpdateReport:
    if buffer.partitions and new_partition.episode <= buffer.partitions[-1].episode:
        raise NonMonotonicEpisode(
            f"episode {new_partition.episode} does not follow {buffer.partitions[-1].episode}"
        )
    parts = list(buffer.partitions) + [new_partition]
    base, final = fit_quotas(buffer.beta, [len(p) for p in parts])
    evicted: list[BufferEntry] = []
    for i, quota in enumerate(final):
        parts[i], gone = evict_to(parts[i], quota)
        evicted += gone
    return UpdateReport(
        buffer=GlobalBuffer(buffer.beta, tuple(parts)),
        base_quotas=base,
        quotas=final,
        evicted=evicted,
    )


def update_global(buffer: GlobalBuffer, new_partition: Partition) -> GlobalBuffer:
    return apply_update(buffer, new_partition).buffer


def sample_replay_batch(buffer: GlobalBuffer, k: int, rng_seed: int) -> list[BufferEntry]:
    """Uniform draw of ``k`` entries without replacement, in draw order."""
    entries = buffer.entries()
    if not entries:
        raise BufferEmpty("replay buffer is empty")
    if k < 1 or k > len(entries):
        raise KTooLarge(f"k={k} outside 1..{len(entries)}")
    return SplitMix64(rng_seed).shuffle_prefix(entries, k)


def check_invariants(report: UpdateReport, previous: GlobalBuffer) -> list[str]:
    """Return human-readable violations of the buffer protocol (empty = healthy)."""
    buf = report.buffer
    problems = []
    if buf.total > buf.beta:
        problems.append(f"capacity: total {buf.total} > beta {buf.beta}")
    sizes = buf.sizes
    # parity is only promised when nobody fell short of its base quota
    if all(s >= q for s, q in zip(sizes, report.base_quotas)):
        if sizes and max(sizes) - min(sizes) > 1:
            problems.append(f"parity: sizes {sizes}")
    for p in buf.partitions:
        n_rep, n_diff = len(p.of(REPRESENTATIVE)), len(p.of(DIFFICULT))
        if abs(n_rep - n_diff) > 1:
            problems.append(f"split: episode {p.episode} has {n_rep} rep / {n_diff} diff")
        if len({e.sample_id for e in p.entries}) != len(p):
            problems.append(f"duplicate sample ids in episode {p.episode}")
    for e in report.evicted:
        part = next((p for p in buf.partitions if p.episode == e.episode), None)
        if part is None:
            continue
        for kept in part.of(e.category):
            if kept.rank_key() > e.rank_key():
                problems.append(
                    f"eviction order: {e.sample_id} ({e.stored_score}) evicted while "
                    f"{kept.sample_id} ({kept.stored_score}) kept in episode {e.episode}"
                )
    prev_eps = [p.episode for p in previous.partitions]
    if [p.episode for p in buf.partitions][: len(prev_eps)] != prev_eps:
        problems.append("partition order changed")
    return problems


def buffer_to_dict(buffer: GlobalBuffer) -> dict:
    partitions = []
    for p in buffer.partitions:
        part = {
            "episode": p.episode,
            "entries": [
                {
                    "sample_id": e.sample_id,
                    "category": e.category,
                    "stored_score": e.stored_score,
                    "prob_path": e.prob_path,
                    "gt_path": e.gt_path,
                    "modalities": dict(e.modalities),
                }
                for e in p.entries
            ],
        }
        if p.name is not None:
            part["name"] = p.name
        partitions.append(part)
    return {"version": STATE_VERSION, "beta": buffer.beta, "partitions": partitions}


def buffer_from_dict(doc: dict) -> GlobalBuffer:
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptState("buffer state has no version field")
    major = str(doc["version"]).split(".")[0]
    if major != STATE_VERSION.split(".")[0]:
        raise SchemaMismatch(f"unsupported buffer state version {doc['version']!r}")
    try:
        parts = []
        for p in doc["partitions"]:
            episode = int(p["episode"])
            entries = []
            for e in p["entries"]:
                if e["category"] not in CATEGORIES:
                    raise CorruptState(f"unknown category {e['category']!r}")
                score = float(e["stored_score"])
                if not 0.0 <= score <= 1.0:
                    raise CorruptState(f"stored_score {score} outside [0, 1]")
                entries.append(
                    BufferEntry(
                        sample_id=str(e["sample_id"]),
                        episode=episode,
                        category=e["category"],
                        stored_score=score,
                        prob_path=e.get("prob_path"),
                        gt_path=e.get("gt_path"),
                        modalities=dict(e.get("modalities") or {}),
                    )
                )
            parts.append(Partition(episode, tuple(entries), p.get("name")))
        buffer = GlobalBuffer(int(doc["beta"]), tuple(parts))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptState):
            raise
        raise CorruptState(f"malformed buffer state: {exc}") from exc
    episodes = [p.episode for p in buffer.partitions]
    if episodes != sorted(set(episodes)):
        raise CorruptState("partitions are not in strictly increasing episode order")
    if buffer.total > buffer.beta:
        raise CorruptState(f"state holds {buffer.total} entries, beta is {buffer.beta}")
    return buffer


def save_state(buffer: GlobalBuffer) -> str:
    return json.dumps(buffer_to_dict(buffer), indent=2, sort_keys=True) + "\n"


def load_state(text: str) -> GlobalBuffer:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptState(f"buffer state is not valid JSON: {exc}") from exc
    return buffer_from_dict(doc)
