import json
import math
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from replay_forge.buffer import (
    DIFFICULT,
    REPRESENTATIVE,
    BufferEntry,
    GlobalBuffer,
    Partition,
    apply_update,
    base_quotas,
    buffer_from_dict,
    buffer_to_dict,
    check_invariants,
    evict_to,
    fit_quotas,
    load_state,
    sample_replay_batch,
    save_state,
    select_partition,
    update_global,
)
from replay_forge.errors import (
    BufferEmpty,
    CorruptState,
    KTooLarge,
    NonMonotonicEpisode,
    NoValidSamples,
    SchemaMismatch,
)
from replay_forge.scoring import SampleScores

FIXTURES = Path(__file__).parent / "fixtures"


def scored(r_rep: dict, r_diff: dict):
    return [SampleScores(k, r_rep=r_rep[k], r_diff=r_diff[k]) for k in r_rep]


def random_scores(rng, n, prefix="s"):
    # coarse values so score ties (and the sample_id tie-break) actually occur
    return [
        SampleScores(f"{prefix}{i:03d}", r_rep=float(rng.integers(0, 6)) / 5, r_diff=float(rng.integers(0, 6)) / 5)
        for i in range(n)
    ]


def cats(p: Partition):
    return {e.sample_id: e.category for e in p.entries}


class TestSelect:
    def test_dedup_example(self):
        s = scored({"s1": 0.9, "s2": 0.8, "s3": 0.2, "s4": 0.1}, {"s1": 0.95, "s2": 0.1, "s3": 0.9, "s4": 0.2})
        assert cats(select_partition(s, 2, 0)) == {"s1": REPRESENTATIVE, "s3": DIFFICULT}

    def test_n_one(self):
        s = scored({"a": 0.1, "b": 0.7}, {"a": 0.9, "b": 0.0})
        assert cats(select_partition(s, 1, 0)) == {"b": REPRESENTATIVE}

    def test_exhaustion(self, rng):
        s = random_scores(rng, 7)
        p = select_partition(s, 50, 0)
        assert len(p) == 7
        assert len(p.of(REPRESENTATIVE)) == 4 and len(p.of(DIFFICULT)) == 3

    def test_ties_by_id(self):
        s = scored({"b": 0.5, "a": 0.5, "c": 0.5}, {"b": 0.5, "a": 0.5, "c": 0.5})
        assert cats(select_partition(s, 2, 0)) == {"a": REPRESENTATIVE, "b": DIFFICULT}

    def test_skips_excluded(self):
        s = scored({"a": 0.1, "b": 0.2}, {"a": 0.1, "b": 0.2})
        s.append(SampleScores("x", excluded=True, exclusion_reason="EmptyLesion"))
        assert set(cats(select_partition(s, 10, 0))) == {"a", "b"}

    def test_no_valid(self):
        with pytest.raises(NoValidSamples):
            select_partition([SampleScores("x", excluded=True)], 3, 0)

    def test_sources_copied(self):
        s = scored({"a": 0.5}, {"a": 0.5})
        src = {"a": {"prob": "p.vol1", "gt": "g.vol1", "modalities": {"T1": "t1.vol1"}}}
        (e,) = select_partition(s, 1, 4, src).entries
        assert (e.episode, e.prob_path, e.gt_path, e.modalities) == (4, "p.vol1", "g.vol1", {"T1": "t1.vol1"})

    def test_stored_score_is_category_score(self):
        s = scored({"a": 0.9, "b": 0.1}, {"a": 0.2, "b": 0.6})
        p = select_partition(s, 2, 0)
        assert {e.sample_id: e.stored_score for e in p.entries} == {"a": 0.9, "b": 0.6}

    def test_against_brute_force(self, rng):
        for _ in range(100):
            s = random_scores(rng, int(rng.integers(1, 15)))
            n = int(rng.integers(1, 20))
            take = min(n, len(s))
            rep = sorted(s, key=lambda x: (-x.r_rep, x.sample_id))[: math.ceil(take / 2)]
            ids = {x.sample_id for x in rep}
            diff = [x for x in sorted(s, key=lambda x: (-x.r_diff, x.sample_id)) if x.sample_id not in ids]
            expected = {x.sample_id: REPRESENTATIVE for x in rep}
            expected.update({x.sample_id: DIFFICULT for x in diff[: take // 2]})
            assert cats(select_partition(s, n, 0)) == expected


class TestQuotas:
    def test_examples(self):
        assert base_quotas(10, 1) == [10]
        assert base_quotas(10, 2) == [5, 5]
        assert base_quotas(10, 3) == [3, 3, 4]
        assert base_quotas(10, 4) == [2, 2, 3, 3]

    def test_redistribution_newest_first(self):
        # episode 1 only has 1 entry: its 4 spare slots go round-robin from the newest
        base, final = fit_quotas(12, [6, 1, 6, 6])
        assert base == [3, 3, 3, 3]
        assert final == [3, 1, 4, 4]

    def test_nothing_to_redistribute_into(self):
        assert fit_quotas(10, [1, 2])[1] == [1, 2]


def entry(sid, cat, score, ep=0):
    return BufferEntry(sid, ep, cat, score)


class TestEvict:
    def test_larger_category_first(self):
        p = Partition(0, (
            entry("r1", REPRESENTATIVE, 0.9),
            entry("r2", REPRESENTATIVE, 0.8),
            entry("r3", REPRESENTATIVE, 0.7),
            entry("d1", DIFFICULT, 0.9),
            entry("d2", DIFFICULT, 0.1),
        ))
        kept, gone = evict_to(p, 3)
        assert [e.sample_id for e in gone] == ["r3", "d2"]
        assert [e.sample_id for e in kept.entries] == ["r1", "r2", "d1"]

    def test_tie_breaks_on_id(self):
        p = Partition(0, (entry("a", DIFFICULT, 0.5), entry("b", DIFFICULT, 0.5), entry("c", REPRESENTATIVE, 1.0)))
        _, gone = evict_to(p, 2)
        assert [e.sample_id for e in gone] == ["b"]

    def test_noop(self):
        p = Partition(0, (entry("a", DIFFICULT, 0.5),))
        kept, gone = evict_to(p, 3)
        assert kept is p and gone == []


def stream(rng, beta, episodes, max_samples=25):
    buf = GlobalBuffer(beta)
    for t in range(episodes):
        s = random_scores(rng, int(rng.integers(1, max_samples)), prefix=f"e{t}_")
        part = select_partition(s, beta, t)
        report = apply_update(buf, part)
        yield buf, report
        buf = report.buffer


class TestUpdate:
    def full_partition(self, ep, n=20):
        rng = np.random.default_rng(ep)
        return select_partition(random_scores(rng, n, f"e{ep}_"), 10, ep)

    def test_first_fill(self):
        b = update_global(GlobalBuffer(10), self.full_partition(0))
        assert b.sizes == [10]
        assert sum(e.category == REPRESENTATIVE for e in b.entries()) == 5

    def test_sequence_sizes(self):
        b = GlobalBuffer(10)
        sizes = []
        for ep in range(3):
            b = update_global(b, self.full_partition(ep))
            sizes.append(b.sizes)
        assert sizes == [[10], [5, 5], [3, 3, 4]]

    def test_non_monotonic(self):
        b = update_global(GlobalBuffer(10), self.full_partition(1))
        with pytest.raises(NonMonotonicEpisode):
            update_global(b, self.full_partition(1))

    def test_invariants_on_random_streams(self, rng):
        for _ in range(200):
            beta = int(rng.choice([10, 20, 30, 40]))
            for prev, report in stream(rng, beta, int(rng.integers(1, 7))):
                assert check_invariants(report, prev) == []

    def test_invariant_checker_catches_breaches(self):
        good = update_global(GlobalBuffer(4), self.full_partition(0))
        over = GlobalBuffer(2, good.partitions)
        report = apply_update(GlobalBuffer(4), self.full_partition(0))
        report.buffer = over
        assert any(p.startswith("capacity") for p in check_invariants(report, GlobalBuffer(4)))

        lopsided = Partition(0, tuple(entry(f"r{i}", REPRESENTATIVE, 0.5) for i in range(3)))
        report = apply_update(GlobalBuffer(10), lopsided)
        assert any(p.startswith("split") for p in check_invariants(report, GlobalBuffer(10)))

        # an eviction that kept a worse entry
        report.buffer = GlobalBuffer(10, (Partition(0, (entry("lo", DIFFICULT, 0.1),)),))
        report.evicted = [entry("hi", DIFFICULT, 0.9)]
        assert any(p.startswith("eviction order") for p in check_invariants(report, GlobalBuffer(10)))


class TestReplayBatch:
    def buffer(self, n=10):
        return GlobalBuffer(n, (Partition(0, tuple(entry(f"s{i}", REPRESENTATIVE, 0.5) for i in range(n))),))

    def test_whole_buffer(self):
        b = self.buffer()
        batch = sample_replay_batch(b, 10, 3)
        assert sorted(e.sample_id for e in batch) == sorted(e.sample_id for e in b.entries())

    def test_deterministic(self):
        b = self.buffer()
        assert sample_replay_batch(b, 4, 99) == sample_replay_batch(b, 4, 99)
        assert len({e.sample_id for e in sample_replay_batch(b, 4, 99)}) == 4

    def test_uniform(self):
        b = self.buffer()
        counts = Counter(sample_replay_batch(b, 1, seed)[0].sample_id for seed in range(10_000))
        sigma = math.sqrt(10_000 * 0.1 * 0.9)
        assert len(counts) == 10
        for c in counts.values():
            assert abs(c - 1000) <= 3 * sigma

    def test_errors(self):
        with pytest.raises(BufferEmpty):
            sample_replay_batch(GlobalBuffer(3), 1, 0)
        with pytest.raises(KTooLarge):
            sample_replay_batch(self.buffer(3), 4, 0)
        with pytest.raises(KTooLarge):
            sample_replay_batch(self.buffer(3), 0, 0)


class TestState:
    def test_round_trip(self, rng):
        for _ in range(20):
            beta = int(rng.choice([10, 20]))
            buf = GlobalBuffer(beta)
            for _, report in stream(rng, beta, int(rng.integers(1, 5))):
                buf = report.buffer
            text = save_state(buf)
            assert load_state(text) == buf
            assert save_state(load_state(text)) == text

    def test_schema_mismatch(self):
        doc = buffer_to_dict(GlobalBuffer(5))
        doc["version"] = "2.0"
        with pytest.raises(SchemaMismatch):
            buffer_from_dict(doc)

    def test_minimal_fixture(self):
        buf = load_state((FIXTURES / "minimal_state.json").read_text())
        assert buf.beta == 10 and buf.total == 1
        (e,) = buf.entries()
        assert (e.sample_id, e.category, e.stored_score, e.episode) == ("case_001", REPRESENTATIVE, 0.75, 0)

    @pytest.mark.parametrize("mutate", [
        lambda d: d.pop("version"),
        lambda d: d.pop("beta"),
        lambda d: d["partitions"][0]["entries"][0].update(category="other"),
        lambda d: d["partitions"][0]["entries"][0].update(stored_score=1.5),
        lambda d: d.update(beta=0),
        lambda d: d["partitions"].append(dict(d["partitions"][0])),
    ])
    def test_corrupt(self, mutate):
        doc = json.loads((FIXTURES / "minimal_state.json").read_text())
        mutate(doc)
        with pytest.raises(CorruptState):
            buffer_from_dict(doc)

    def test_not_json(self):
        with pytest.raises(CorruptState):
            load_state("{nope")

    def test_over_capacity(self):
        doc = json.loads((FIXTURES / "minimal_state.json").read_text())
        doc["beta"] = 1
        doc["partitions"][0]["entries"].append(dict(doc["partitions"][0]["entries"][0], sample_id="x"))
        with pytest.raises(CorruptState):
            buffer_from_dict(doc)
