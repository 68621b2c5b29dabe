import numpy as np
import pytest

from dsgl.data import EventLog, InteractionEvent, SynthConfig, synth_generate
from dsgl.graphs import (DsgSpec, batch_dsgs, build_dsg, build_index, dump_batch,
                         load_batch, node_side)
from oracles import nodes_to_tuples, oracle_dsg, oracle_neighbors


def ev(u, i, c, t, y=1):
    return InteractionEvent(u, i, c, t, y)


THREE_EVENTS = EventLog.from_events([ev(1, 1, 0, 1), ev(2, 2, 0, 2), ev(1, 2, 0, 3)])


def random_log(rng, n_events=None):
    n = int(rng.integers(5, 500)) if n_events is None else n_events
    events = [ev(int(rng.integers(8)), int(rng.integers(9)), int(rng.integers(3)),
                 int(rng.integers(60))) for _ in range(n)]
    return EventLog.from_events(events)


class TestDsgSpec:
    def test_item_depth_is_one_less(self):
        spec = DsgSpec(3, (4, 3, 2), (3, 2))
        assert spec.item_depth == 2
        assert spec.user_plan == (4, 3, 2)
        assert spec.item_plan == (3, 2)

    def test_extra_fanouts_ignored(self):
        spec = DsgSpec(1, (4, 3, 2), (9, 9))
        assert spec.user_plan == (4,)
        assert spec.item_plan == ()

    def test_missing_fanouts_rejected(self):
        with pytest.raises(ValueError):
            DsgSpec(3, (4, 3), (3, 2))
        with pytest.raises(ValueError):
            DsgSpec(2, (4, 3), ())

    def test_zero_fanout_rejected(self):
        with pytest.raises(ValueError):
            DsgSpec(2, (4, 0), (3,))


class TestBehaviorIndex:
    def test_both_maps(self):
        index = build_index(EventLog.from_events([ev(1, 1, 5, 1), ev(1, 2, 6, 3)]))
        assert index.items_before(1, 10, 5) == [(1, 5, 1), (2, 6, 3)]
        assert index.users_before(1, 10, 5) == [(1, 1)]
        assert index.users_before(2, 10, 5) == [(1, 3)]

    def test_empty_log(self):
        index = build_index(EventLog.from_events([]))
        assert index.items_before(0, 10, 3) == []

    def test_negatives_excluded(self):
        index = build_index(EventLog.from_events([ev(1, 1, 0, 1, y=0)]))
        assert index.items_before(1, 10, 3) == []
        assert index.users_before(1, 10, 3) == []

    def test_sequence_before_windows(self):
        log = EventLog.from_events([ev(1, 1, 0, 1), ev(1, 2, 0, 3), ev(1, 3, 0, 7)])
        index = build_index(log)
        # t equal to an interaction time excludes it, then the last m remain
        assert index.items_before(1, 7, 2) == [(1, 0, 1), (2, 0, 3)]
        assert index.items_before(1, 100, 2) == [(2, 0, 3), (3, 0, 7)]
        assert index.items_before(1, 1, 2) == []

    def test_matches_oracle_scan(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            log = random_log(rng, n_events=120)
            index = build_index(log)
            entity = int(rng.integers(8))
            t = int(rng.integers(70))
            m = int(rng.integers(1, 6))
            got = [(i, c, tau) for i, c, tau in index.items_before(entity, t, m)]
            assert got == oracle_neighbors(log.events, entity, "user", t, m)


class TestBuildDsg:
    def test_three_event_example(self):
        index = build_index(THREE_EVENTS)
        nodes = build_dsg(index, 1, "user", 5, DsgSpec(2, (2, 2), (2,)))
        got = nodes_to_tuples(nodes)
        # level 1: items (i1, delta 4), (i2, delta 2); i1 has no earlier users,
        # i2 was touched by u2 at tau=2 -> delta 1
        assert got == [(1, 0, 4, []), (2, 0, 2, [(2, None, 1, [])])]

    def test_cold_root(self):
        index = build_index(THREE_EVENTS)
        assert build_dsg(index, 5, "user", 10, DsgSpec(2, (2, 2), (2,))) == []

    def test_descendants_strictly_older(self):
        rng = np.random.default_rng(1)
        log = random_log(rng, n_events=200)
        index = build_index(log)

        def check(nodes, parent_time):
            for n in nodes:
                node_time = parent_time - n.delta
                assert node_time < parent_time
                check(n.children, node_time)

        for _ in range(20):
            t = int(rng.integers(70))
            check(build_dsg(index, int(rng.integers(8)), "user", t,
                            DsgSpec(3, (3, 2, 2), (2, 2))), t)

    def test_oracle_equivalence_randomized(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            log = random_log(rng)
            index = build_index(log)
            side = "user" if rng.random() < 0.5 else "item"
            depth = int(rng.integers(1, 4))
            fanouts = tuple(int(rng.integers(1, 5)) for _ in range(3))
            spec = DsgSpec(depth, fanouts, fanouts[:2])
            root = int(rng.integers(9))
            t = int(rng.integers(70))
            plan = spec.user_plan if side == "user" else spec.item_plan
            if not plan:
                continue
            got = nodes_to_tuples(build_dsg(index, root, side, t, spec))
            want = oracle_dsg(log.events, root, side, t, plan)
            assert got == want


class TestBatchDsgs:
    def test_right_alignment_example(self):
        index = build_index(THREE_EVENTS)
        spec = DsgSpec(2, (2, 2), (2,))
        batch = batch_dsgs(index, [(1, 2, 0, 5)], spec)
        l1, l2 = batch.user_levels
        np.testing.assert_array_equal(l1.node_ids, [[1, 2]])
        np.testing.assert_array_equal(l1.valid_mask, [[1, 1]])
        np.testing.assert_array_equal(l1.time_decays, [[4, 2]])
        # children of i1 empty; children of i2 = [pad, u2]
        np.testing.assert_array_equal(l2.node_ids, [[[0, 0], [0, 2]]])
        np.testing.assert_array_equal(l2.valid_mask, [[[0, 0], [0, 1]]])
        np.testing.assert_array_equal(l2.time_decays, [[[0, 0], [0, 1]]])
        # item-rooted side: users of item 2 before t=5 -> u2 then u1
        il1 = batch.item_levels[0]
        np.testing.assert_array_equal(il1.node_ids, [[2, 1]])
        np.testing.assert_array_equal(il1.time_decays, [[3, 2]])

    def test_all_cold_batch(self):
        index = build_index(EventLog.from_events([]))
        spec = DsgSpec(2, (2, 2), (2,))
        batch = batch_dsgs(index, [(0, 0, 0, 5), (1, 1, 0, 9)], spec)
        for lv in batch.user_levels + batch.item_levels:
            assert lv.valid_mask.sum() == 0
            assert lv.node_ids.sum() == 0
            assert lv.time_decays.sum() == 0

    def test_permuting_samples_permutes_rows(self):
        rng = np.random.default_rng(3)
        log = random_log(rng, n_events=150)
        index = build_index(log)
        spec = DsgSpec(2, (3, 2), (2,))
        samples = [(int(rng.integers(8)), int(rng.integers(9)), 0, int(rng.integers(60)))
                   for _ in range(6)]
        fwd = batch_dsgs(index, samples, spec)
        perm = [4, 0, 5, 2, 1, 3]
        back = batch_dsgs(index, [samples[p] for p in perm], spec)
        for lf, lb in zip(fwd.user_levels, back.user_levels):
            np.testing.assert_array_equal(lf.node_ids[perm], lb.node_ids)
            np.testing.assert_array_equal(lf.valid_mask[perm], lb.valid_mask)

    def test_matches_nested_build(self):
        rng = np.random.default_rng(4)
        log = random_log(rng, n_events=200)
        index = build_index(log)
        spec = DsgSpec(3, (3, 2, 2), (2, 2))
        u, i, t = 3, 4, 50
        batch = batch_dsgs(index, [(u, i, 0, t)], spec)

        def collect(levels, nodes, prefix):
            for offset, n in enumerate(nodes):
                lv = levels[len(prefix)]
                m = lv.node_ids.shape[len(prefix) + 1]
                pos = (0, *prefix, m - len(nodes) + offset)
                assert lv.node_ids[pos] == n.node_id
                assert lv.time_decays[pos] == n.delta
                assert lv.valid_mask[pos] == 1
                collect(levels, n.children, prefix + (pos[-1],))

        collect(batch.user_levels, build_dsg(index, u, "user", t, spec), ())
        collect(batch.item_levels, build_dsg(index, i, "item", t, spec), ())

    def test_empty_sample_list(self):
        index = build_index(THREE_EVENTS)
        batch = batch_dsgs(index, [], DsgSpec(2, (2, 2), (2,)))
        assert batch.batch_size == 0
        assert batch.user_levels[0].node_ids.shape == (0, 2)


class TestInvariants:
    def test_causality_fuzz_and_no_leak(self):
        rng = np.random.default_rng(5)
        checked = 0
        for _ in range(40):
            log = random_log(rng, n_events=200)
            index = build_index(log)
            spec = DsgSpec(3, (3, 3, 3), (3, 3))
            for _ in range(25):
                e = log.events[int(rng.integers(len(log)))]
                batch = batch_dsgs(index, [e], spec)
                for lv in batch.user_levels + batch.item_levels:
                    valid = lv.valid_mask.astype(bool)
                    assert np.all(lv.time_decays[valid] >= 1)
                    assert np.all(lv.time_decays[~valid] == 0)
                # no-leak: the scored pair cannot appear at its own timestamp
                l1u = batch.user_levels[0]
                leak = (l1u.node_ids == e.item_id) & (l1u.time_decays == 0) & \
                       (l1u.valid_mask == 1)
                assert not leak.any()
                checked += 1
        assert checked == 1000

    def test_mask_monotonicity(self):
        rng = np.random.default_rng(6)
        log = random_log(rng, n_events=300)
        index = build_index(log)
        spec = DsgSpec(3, (3, 2, 2), (2, 2))
        samples = [(int(rng.integers(8)), int(rng.integers(9)), 0, int(rng.integers(60)))
                   for _ in range(10)]
        batch = batch_dsgs(index, samples, spec)
        for levels in (batch.user_levels, batch.item_levels):
            for parent, child in zip(levels, levels[1:]):
                child_any = child.valid_mask.max(axis=-1)
                assert np.all(child_any <= parent.valid_mask)

    def test_truncation_takes_latest(self):
        events = [ev(0, i, 0, t) for i, t in enumerate(range(10))]
        index = build_index(EventLog.from_events(events))
        spec = DsgSpec(1, (4,), ())
        batch = batch_dsgs(index, [(0, 0, 0, 100)], spec)
        l1 = batch.user_levels[0]
        assert l1.valid_mask.sum() == 4
        np.testing.assert_array_equal(l1.node_ids, [[6, 7, 8, 9]])

    def test_side_alternation(self):
        spec = DsgSpec(3, (2, 2, 2), (2, 2))
        batch = batch_dsgs(build_index(THREE_EVENTS), [(1, 2, 0, 5)], spec)
        assert [lv.side for lv in batch.user_levels] == ["item", "user", "item"]
        assert [lv.side for lv in batch.item_levels] == ["user", "item"]
        assert node_side("user", 0) == "user"
        assert node_side("item", 1) == "user"


class TestBatchDump:
    def test_round_trip(self, tmp_path):
        log = synth_generate(SynthConfig(num_users=6, num_items=5, num_events=80, seed=8))
        index = build_index(log)
        spec = DsgSpec(2, (3, 2), (2,))
        batch = batch_dsgs(index, log.events[-3:], spec)
        path = tmp_path / "batch.txt"
        dump_batch(batch, path)
        again = load_batch(path)
        np.testing.assert_array_equal(again.user_ids, batch.user_ids)
        for a, b in zip(again.user_levels + again.item_levels,
                        batch.user_levels + batch.item_levels):
            np.testing.assert_array_equal(a.node_ids, b.node_ids)
            np.testing.assert_array_equal(a.time_decays, b.time_decays)
            np.testing.assert_array_equal(a.valid_mask, b.valid_mask)

    def test_golden_layout(self, tmp_path):
        index = build_index(THREE_EVENTS)
        batch = batch_dsgs(index, [(1, 2, 0, 5)], DsgSpec(2, (2, 2), (2,)))
        path = tmp_path / "batch.txt"
        dump_batch(batch, path)
        text = path.read_text()
        assert text.splitlines()[0] == "batch=1 user_depth=2 user_fanouts=2,2 item_fanouts=2"
        assert "user.1.node_ids 1 2" in text
        assert "user.2.node_ids 0 0 0 2" in text
        assert "item.1.node_ids 2 1" in text
