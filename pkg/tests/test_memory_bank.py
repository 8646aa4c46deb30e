import math

import numpy as np
import pytest

from boxlab import (
    Box3D,
    BoxState,
    EnsembleVariant,
    MemoryBank,
    PseudoBox,
    SceneMemory,
    VotingThresholds,
    bipartite_match,
    consistency_match,
    iou_3d,
    load_snapshot,
    memory_voting,
    merge_matched,
    nms_match,
    pairwise_iou_matrix,
    save_snapshot,
    update_memory,
    weighted_avg_merge,
)
from boxlab.memory_bank import assignment_max_total
from boxlab.serialize import (
    SnapshotFormatError,
    SnapshotVersionError,
    dump_snapshot,
    format_sig9,
    parse_snapshot,
)
from conftest import overlapping_box_pair, random_box
from oracles import brute_force_max_assignment

VOTE = VotingThresholds(2, 3)


def pb(box, u, state=BoxState.POSITIVE, cnt=0):
    return PseudoBox(box, u, state, cnt)


def mem(entries, scene_id="s0", rnd=None):
    rnd = (1 if entries else 0) if rnd is None else rnd
    return SceneMemory(scene_id, rnd, tuple(entries))


def shifted(box, dx=0.0, dy=0.0):
    return Box3D(box.cx + dx, box.cy + dy, box.cz, box.l, box.w, box.h, box.yaw)


class TestConsistencyMatch:
    def test_empty_memory_bootstrap(self, rng):
        proxy = [pb(random_box(rng), 0.7) for _ in range(3)]
        result = consistency_match(mem([]), proxy)
        assert result.matched == ()
        assert result.unmatched_proxy == (0, 1, 2)

    def test_identical_sets(self, rng):
        boxes = [random_box(rng) for _ in range(4)]
        memory = mem([pb(b, 0.5) for b in boxes])
        proxy = [pb(b, 0.8) for b in boxes]
        result = consistency_match(memory, proxy)
        assert [(j, v) for j, v, _ in result.matched] == [(0, 0), (1, 1), (2, 2), (3, 3)]
        assert all(iou == pytest.approx(1.0, abs=1e-9) for _, _, iou in result.matched)

    def test_conflict_resolved_by_iou(self):
        proxy_box = Box3D(0, 0, 0, 4, 2, 1.5, 0.0)
        near = shifted(proxy_box, dx=0.2)   # high IoU with proxy_box
        far = shifted(proxy_box, dx=0.9)    # lower IoU with proxy_box
        memory = mem([pb(far, 0.9), pb(near, 0.5)])
        proxy = [pb(proxy_box, 0.6)]
        result = consistency_match(memory, proxy)
        assert [(j, v) for j, v, _ in result.matched] == [(1, 0)]
        assert result.unmatched_memory == (0,)
        # Brute force over one-to-one assignments of this instance agrees:
        # only one proxy box exists, and (near -> proxy) has the higher IoU.
        iou = pairwise_iou_matrix([e.box for e in memory.entries], [proxy_box])
        assert iou[1, 0] > iou[0, 0]

    def test_low_iou_pairs_unmatched(self, rng):
        a = Box3D(0, 0, 0, 2, 2, 2, 0)
        b = Box3D(1.9, 1.9, 0, 2, 2, 2, 0)  # tiny overlap, IoU < 0.1
        assert 0 < iou_3d(a, b) < 0.1
        result = consistency_match(mem([pb(a, 0.5)]), [pb(b, 0.5)])
        assert result.matched == ()

    def test_one_to_one(self, rng):
        memory = mem([pb(random_box(rng), 0.5) for _ in range(6)])
        proxy = [pb(b.box, 0.6) for b in memory.entries[:3]]
        result = consistency_match(memory, proxy)
        mems = [j for j, _, _ in result.matched]
        proxies = [v for _, v, _ in result.matched]
        assert len(set(mems)) == len(mems)
        assert len(set(proxies)) == len(proxies)
        accounted = set(mems) | set(result.unmatched_memory)
        assert accounted == set(range(6))


class TestNmsMatch:
    def test_disjoint_all_unmatched(self):
        a = Box3D(0, 0, 0, 2, 2, 2, 0)
        b = Box3D(50, 0, 0, 2, 2, 2, 0)
        result = nms_match(mem([pb(a, 0.5)]), [pb(b, 0.9)])
        assert result.matched == ()
        assert result.unmatched_memory == (0,)
        assert result.unmatched_proxy == (0,)

    def test_pair_matches_with_higher_proxy_score(self):
        a = Box3D(0, 0, 0, 4, 2, 1.5, 0.0)
        b = shifted(a, dx=0.1)
        assert iou_3d(a, b) > 0.9
        result = nms_match(mem([pb(a, 0.5)]), [pb(b, 0.8)])
        assert len(result.matched) == 1
        j, v, iou = result.matched[0]
        assert (j, v) == (0, 0)
        assert iou == pytest.approx(iou_3d(a, b))
        merged = merge_matched(pb(a, 0.5), pb(b, 0.8))
        assert merged.box == b

    def test_three_way_overlap_single_pair(self):
        # One memory box overlapping two proxy boxes; the memory box has the
        # top score, so it survives and pairs with the better-scored proxy.
        m = Box3D(0, 0, 0, 4, 4, 2, 0.0)
        p1 = shifted(m, dx=0.3)
        p2 = shifted(m, dx=-0.3)
        memory = mem([pb(m, 0.9)])
        proxy = [pb(p1, 0.7), pb(p2, 0.6)]
        result = nms_match(memory, proxy)
        assert [(j, v) for j, v, _ in result.matched] == [(0, 0)]
        assert result.unmatched_proxy == (1,)
        assert result.dropped_memory == () and result.dropped_proxy == ()

    def test_same_pool_duplicate_dropped(self):
        # Two near-identical memory boxes: the lower-scored one is a
        # duplicate and leaves the bank without going through voting.
        m1 = Box3D(0, 0, 0, 4, 2, 1.5, 0.0)
        m2 = shifted(m1, dx=0.05)
        p = shifted(m1, dx=0.1)
        memory = mem([pb(m1, 0.9), pb(m2, 0.4)])
        result = nms_match(memory, [pb(p, 0.7)])
        assert [(j, v) for j, v, _ in result.matched] == [(0, 0)]
        assert result.dropped_memory == (1,)
        assert result.unmatched_memory == ()


class TestBipartiteMatch:
    def test_identical_sets_identity_assignment(self, rng):
        boxes = [random_box(rng) for _ in range(5)]
        memory = mem([pb(b, 0.5) for b in boxes])
        result = bipartite_match(memory, [pb(b, 0.6) for b in boxes])
        assert [(j, v) for j, v, _ in result.matched] == [(i, i) for i in range(5)]
        assert sum(iou for _, _, iou in result.matched) == pytest.approx(5.0)

    def test_two_by_two_matrix(self):
        iou = np.array([[0.9, 0.3], [0.4, 0.8]])
        assert assignment_max_total(iou) == [(0, 0), (1, 1)]
        # both permutations by hand: 0.9 + 0.8 > 0.3 + 0.4
        assert brute_force_max_assignment(iou) == pytest.approx(1.7)

    def test_all_below_cutoff_unmatched(self):
        a = Box3D(0, 0, 0, 2, 2, 2, 0)
        b = Box3D(1.9, 1.9, 0, 2, 2, 2, 0)
        result = bipartite_match(mem([pb(a, 0.5)]), [pb(b, 0.5)])
        assert result.matched == ()

    def test_matches_brute_force_total(self, rng):
        for _ in range(30):
            n_m = int(rng.integers(1, 6))
            n_p = int(rng.integers(1, 6))
            base = [random_box(rng) for _ in range(max(n_m, n_p))]
            memory = mem([pb(base[i % len(base)], 0.5) for i in range(n_m)])
            proxy = []
            for i in range(n_p):
                src = base[i % len(base)]
                proxy.append(pb(shifted(src, dx=float(rng.uniform(-1, 1))), 0.6))
            iou = pairwise_iou_matrix(
                [e.box for e in memory.entries], [p.box for p in proxy]
            )
            got = assignment_max_total(iou)
            total = sum(iou[j, v] for j, v in got)
            assert total == pytest.approx(brute_force_max_assignment(iou), abs=1e-12)

    def test_beats_greedy_on_crossing_case(self):
        # Greedy gives both memory boxes the same favorite; optimal reroutes.
        target = Box3D(0, 0, 0, 4, 2, 1.5, 0.0)
        other = shifted(target, dx=0.8)
        memory = mem([pb(target, 0.5), pb(shifted(target, dx=0.1), 0.5)])
        proxy = [pb(target, 0.6), pb(other, 0.6)]
        greedy = consistency_match(memory, proxy)
        optimal = bipartite_match(memory, proxy)
        total_greedy = sum(iou for _, _, iou in greedy.matched)
        total_optimal = sum(iou for _, _, iou in optimal.matched)
        assert total_optimal >= total_greedy
        assert len(optimal.matched) == 2


class TestMatchingInvariants:
    VARIANTS = {
        EnsembleVariant.CONSISTENCY: consistency_match,
        EnsembleVariant.NMS: nms_match,
        EnsembleVariant.BIPARTITE: bipartite_match,
    }

    def test_one_to_one_and_fully_accounted(self, rng):
        for _ in range(25):
            n_m = int(rng.integers(0, 7))
            n_p = int(rng.integers(0, 7))
            anchors = [random_box(rng) for _ in range(max(n_m, n_p, 1))]

            def near(i):
                src = anchors[i % len(anchors)]
                return shifted(src, dx=float(rng.uniform(-1, 1)), dy=float(rng.uniform(-1, 1)))

            memory = mem([pb(near(i), float(rng.uniform(0, 1))) for i in range(n_m)], rnd=min(n_m, 1))
            proxy = [pb(near(i), float(rng.uniform(0, 1))) for i in range(n_p)]
            for fn in self.VARIANTS.values():
                result = fn(memory, proxy)
                mems = [j for j, _, _ in result.matched]
                proxies = [v for _, v, _ in result.matched]
                assert len(set(mems)) == len(mems)
                assert len(set(proxies)) == len(proxies)
                assert all(iou >= 0.1 for _, _, iou in result.matched)
                assert sorted(mems + list(result.unmatched_memory) + list(result.dropped_memory)) == list(range(n_m))
                assert sorted(proxies + list(result.unmatched_proxy) + list(result.dropped_proxy)) == list(range(n_p))


class TestMergeRules:
    def test_higher_proxy_wins(self, rng):
        a, b = overlapping_box_pair(rng)
        merged = merge_matched(pb(a, 0.5), pb(b, 0.8, BoxState.IGNORED))
        assert merged.box == b
        assert merged.u == 0.8
        assert merged.state is BoxState.IGNORED
        assert merged.cnt == 0

    def test_higher_memory_wins(self, rng):
        a, b = overlapping_box_pair(rng)
        merged = merge_matched(pb(a, 0.9, cnt=2), pb(b, 0.4))
        assert merged.box == a
        assert merged.u == 0.9
        assert merged.cnt == 0

    def test_tie_keeps_proxy(self, rng):
        a, b = overlapping_box_pair(rng)
        merged = merge_matched(pb(a, 0.6), pb(b, 0.6))
        assert merged.box == b

    def test_state_transfers_with_winner(self, rng):
        a, b = overlapping_box_pair(rng)
        merged = merge_matched(pb(a, 0.5, BoxState.IGNORED), pb(b, 0.8, BoxState.POSITIVE))
        assert merged.state is BoxState.POSITIVE

    def test_avg_identical_boxes(self, rng):
        box = random_box(rng)
        merged = weighted_avg_merge(pb(box, 0.5), pb(box, 0.5))
        assert merged.box.cx == pytest.approx(box.cx)
        assert merged.box.yaw == pytest.approx(box.yaw)

    def test_avg_equal_weights_yaw_quarter(self):
        a = Box3D(0, 0, 0, 2, 2, 2, 0.0)
        b = Box3D(1, 0, 0, 2, 2, 2, math.pi / 2)
        merged = weighted_avg_merge(pb(a, 0.5), pb(b, 0.5))
        assert merged.box.yaw == pytest.approx(math.pi / 4, abs=1e-12)
        assert merged.box.cx == pytest.approx(0.5)
        assert merged.u == 0.5

    def test_avg_near_pi_headings_stay_near_pi(self):
        a = Box3D(0, 0, 0, 2, 2, 2, math.pi - 0.1)
        b = Box3D(0, 0, 0, 2, 2, 2, -math.pi + 0.1)
        merged = weighted_avg_merge(pb(a, 0.5), pb(b, 0.5))
        assert abs(merged.box.yaw) > 3.0  # circular mean, not the naive 0


class TestMemoryVoting:
    def test_fresh_proxy_cached(self, rng):
        entry = pb(random_box(rng), 0.7)
        cached, ignored, discarded = memory_voting([], [entry], VOTE)
        assert [e.cnt for e in cached] == [0]
        assert ignored == [] and discarded == 0
        assert cached[0].state is BoxState.POSITIVE

    def test_miss_counts_up_to_ignore(self, rng):
        entry = pb(random_box(rng), 0.7, cnt=1)
        cached, ignored, discarded = memory_voting([entry], [], VOTE)
        assert cached == [] and discarded == 0
        assert [e.cnt for e in ignored] == [2]
        assert ignored[0].state is BoxState.IGNORED

    def test_miss_counts_up_to_discard(self, rng):
        entry = pb(random_box(rng), 0.7, cnt=2)
        cached, ignored, discarded = memory_voting([entry], [], VOTE)
        assert cached == [] and ignored == []
        assert discarded == 1

    def test_single_miss_survives(self, rng):
        entry = pb(random_box(rng), 0.7, cnt=0)
        cached, ignored, discarded = memory_voting([entry], [], VOTE)
        assert [e.cnt for e in cached] == [1]
        assert cached[0].state is BoxState.POSITIVE


class TestUpdateMemory:
    def test_bootstrap_equals_proxy(self, rng):
        proxy = [pb(random_box(rng), 0.7), pb(random_box(rng), 0.4, BoxState.IGNORED)]
        out = update_memory(mem([], rnd=0), proxy)
        assert out.round == 1
        assert list(out.entries) == proxy

    def test_self_match_fixed_point(self, rng):
        boxes = [random_box(rng) for _ in range(4)]
        memory = mem([pb(b, 0.8) for b in boxes])
        for variant in EnsembleVariant:
            out = update_memory(memory, list(memory.entries), variant=variant)
            assert out.round == memory.round + 1
            assert sorted((e.box.cx, e.u) for e in out.entries) == sorted(
                (e.box.cx, e.u) for e in memory.entries
            )
            assert all(e.cnt == 0 for e in out.entries)

    def test_absent_for_three_rounds_discarded(self, rng):
        memory = mem([pb(random_box(rng), 0.9)])
        states = []
        for _ in range(3):
            memory = update_memory(memory, [])
            states.append([_short(e) for e in memory.entries])
        assert [len(s) for s in states] == [1, 1, 0]
        assert states[0][0][1] == (BoxState.POSITIVE, 1)
        assert states[1][0][1] == (BoxState.IGNORED, 2)

    def test_intermittent_detection_survives(self, rng):
        box = random_box(rng)
        memory = mem([pb(box, 0.8)])
        hit = [pb(box, 0.8)]
        for present in [True, False, True, False, True]:
            memory = update_memory(memory, hit if present else [])
            assert len(memory.entries) == 1
            assert memory.entries[0].state is BoxState.POSITIVE
        assert memory.entries[0].cnt == 0

    def test_scene_id_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            update_memory(mem([], rnd=0), [], scene_id="other")

    def test_ignored_memory_promoted_by_strong_proxy(self, rng):
        box = random_box(rng)
        memory = mem([pb(box, 0.4, BoxState.IGNORED, cnt=1)])
        out = update_memory(memory, [pb(box, 0.9, BoxState.POSITIVE)])
        assert len(out.entries) == 1
        assert out.entries[0].state is BoxState.POSITIVE
        assert out.entries[0].cnt == 0

    def test_max_merge_never_fabricates_geometry(self, rng):
        memory = mem([pb(random_box(rng), float(rng.uniform(0, 1))) for _ in range(5)])
        proxy = [
            pb(shifted(e.box, dx=float(rng.uniform(-0.5, 0.5))), float(rng.uniform(0, 1)))
            for e in memory.entries
        ]
        out = update_memory(memory, proxy)
        source_boxes = {id(e.box) for e in memory.entries} | {id(p.box) for p in proxy}
        pool = [e.box for e in memory.entries] + [p.box for p in proxy]
        for e in out.entries:
            assert any(e.box == b for b in pool)

    def test_order_independence_as_multiset(self, rng):
        memory = mem([pb(random_box(rng), float(rng.uniform(0.3, 1))) for _ in range(5)])
        proxy = [
            pb(shifted(e.box, dx=float(rng.uniform(-0.4, 0.4))), float(rng.uniform(0.3, 1)))
            for e in memory.entries
        ] + [pb(random_box(rng), 0.7)]
        base = update_memory(memory, proxy)
        for _ in range(4):
            perm = list(rng.permutation(len(proxy)))
            out = update_memory(memory, [proxy[i] for i in perm])
            assert sorted(_key(e) for e in out.entries) == sorted(_key(e) for e in base.entries)

    def test_no_entry_reaches_removal_count(self, rng):
        memory = mem([pb(random_box(rng), 0.8, cnt=c) for c in (0, 1, 2)])
        out = update_memory(memory, [])
        assert all(e.cnt < VOTE.t_rm for e in out.entries)


def _short(e):
    return (round(e.u, 6), (e.state, e.cnt))


def _key(e):
    return (e.box.cx, e.box.cy, e.box.cz, e.box.l, e.box.w, e.box.h, e.box.yaw, e.u, e.state.value, e.cnt)


def _quantized_box(rng):
    raw = random_box(rng)
    vals = [float(format_sig9(v)) for v in (raw.cx, raw.cy, raw.cz, raw.l, raw.w, raw.h, raw.yaw)]
    return Box3D(*vals)


class TestSnapshots:
    def make_bank(self, rng, n_scenes=100):
        scenes = {}
        for i in range(n_scenes):
            sid = f"scene_{i:04d}"
            entries = tuple(
                PseudoBox(
                    _quantized_box(rng),
                    float(format_sig9(float(rng.uniform(0, 1)))),
                    BoxState.POSITIVE if rng.random() < 0.7 else BoxState.IGNORED,
                    int(rng.integers(0, 3)),
                )
                for _ in range(int(rng.integers(0, 5)))
            )
            scenes[sid] = SceneMemory(sid, 4, entries)
        return MemoryBank(scenes, 4, VOTE, EnsembleVariant.NMS)

    def test_round_trip_bit_exact(self, rng, tmp_path):
        bank = self.make_bank(rng)
        path = tmp_path / "bank.json"
        save_snapshot(bank, path)
        loaded = load_snapshot(path)
        assert loaded == bank
        # And the serialized form is a fixed point.
        assert dump_snapshot(loaded) == path.read_text()

    def test_empty_bank_round_trips(self, tmp_path):
        bank = MemoryBank({}, 0)
        path = tmp_path / "empty.json"
        save_snapshot(bank, path)
        assert load_snapshot(path) == bank

    def test_unknown_version_rejected(self):
        with pytest.raises(SnapshotVersionError):
            parse_snapshot('{"format_version":99,"round":0,"voting_thresholds":{"t_ign":2,"t_rm":3},"variant":"consistency","scenes":[]}')

    def test_malformed_rejected(self):
        with pytest.raises(SnapshotFormatError):
            parse_snapshot("{not json")
        with pytest.raises(SnapshotFormatError):
            parse_snapshot('{"format_version":1,"round":-1,"voting_thresholds":{"t_ign":2,"t_rm":3},"variant":"consistency","scenes":[]}')
        with pytest.raises(SnapshotFormatError):
            parse_snapshot('{"format_version":1,"round":0,"voting_thresholds":{"t_ign":2,"t_rm":3},"variant":"nope","scenes":[]}')

    def test_version_error_is_not_format_error(self):
        doc = '{"format_version":2,"round":0,"voting_thresholds":{"t_ign":2,"t_rm":3},"variant":"consistency","scenes":[]}'
        with pytest.raises(SnapshotVersionError):
            parse_snapshot(doc)
        try:
            parse_snapshot(doc)
        except SnapshotFormatError:
            pytest.fail("version mismatch must raise the version error kind")
        except SnapshotVersionError:
            pass

    def test_persisted_cnt_below_removal(self):
        doc = (
            '{"format_version":1,"round":1,"voting_thresholds":{"t_ign":2,"t_rm":3},'
            '"variant":"consistency","scenes":[{"scene_id":"s","entries":'
            '[{"cx":0,"cy":0,"cz":0,"l":1,"w":1,"h":1,"yaw":0,"u":0.5,"state":"positive","cnt":3}]}]}'
        )
        with pytest.raises(SnapshotFormatError):
            parse_snapshot(doc)


class TestBankValidation:
    def test_round_zero_must_be_empty(self, rng):
        with pytest.raises(ValueError):
            SceneMemory("s", 0, (pb(random_box(rng), 0.5),))

    def test_scene_round_must_match_bank(self, rng):
        with pytest.raises(ValueError):
            MemoryBank({"s": mem([pb(random_box(rng), 0.5)], scene_id="s", rnd=2)}, 1)

    def test_voting_threshold_order(self):
        with pytest.raises(ValueError):
            VotingThresholds(3, 2)
        with pytest.raises(ValueError):
            VotingThresholds(0, 3)
