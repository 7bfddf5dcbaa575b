"""The per-batch update cycle: expansion, sampling, allocation, storage."""
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodstream.errors import BacklogOverflow, SpillOverflow
from lodstream.octree import pack_rgba
from lodstream.update import (
    UpdateConfig,
    UpdateState,
    chunks_needed,
    insert_batch,
    run_frame_updates,
)
from conftest import cloud, make_state, make_tree, partition
import oracles

RED = pack_rgba(255, 0, 0)
GREEN = pack_rgba(0, 255, 0)
BLUE = pack_rgba(0, 0, 255)


def ingest(tree, xyz, rgba, state=None, batch_size=None):
    state = state or make_state()
    if batch_size is None:
        insert_batch(tree, xyz, rgba, state)
    else:
        for bx, bc in partition(xyz, rgba, batch_size):
            insert_batch(tree, bx, bc, state)
    return state


def assert_cycle_hygiene(tree, state):
    assert len(state.spill) == 0
    assert state.backlog.length == 0
    n = tree.num_nodes
    assert not tree.final[:n].any()
    assert not tree.pending[:n].any()


# -- chunks_needed -------------------------------------------------------


def test_chunks_needed():
    assert chunks_needed(0, 1000) == 0
    assert chunks_needed(1000, 1000) == 1
    assert chunks_needed(1001, 1000) == 2
    assert chunks_needed(1, 1) == 1


# -- canonical tiny set --------------------------------------------------


def canonical_points():
    xyz = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.8, 0.8, 0.8]], np.float32)
    rgba = np.array([RED, GREEN, BLUE], np.uint32)
    return xyz, rgba


def test_canonical_tiny_set():
    tree = make_tree(chunk_capacity=2, grid_res=4, leaf_threshold=2)
    xyz, rgba = canonical_points()
    state = ingest(tree, xyz, rgba)

    assert tree.inner[0]
    assert tree.num_nodes == 9
    assert tree.splits_total == 1
    child0 = int(tree.children[0, 0])
    child7 = int(tree.children[0, 7])

    # root voxels: p0 claims cell 0 first (p1 maps there too and loses),
    # p2 claims cell 63
    assert tree.count[0] == 2
    assert tree.grid_popcount(0) == 2
    vx, vc = tree.gather_samples(0)
    np.testing.assert_array_equal(vc, [RED, BLUE])
    np.testing.assert_allclose(vx[0], [0.125, 0.125, 0.125])
    np.testing.assert_allclose(vx[1], [0.875, 0.875, 0.875])

    # leaves keep input order
    lx, lc = tree.gather_samples(child0)
    np.testing.assert_array_equal(lc, [RED, GREEN])
    np.testing.assert_array_equal(lx, xyz[:2])
    _, c7 = tree.gather_samples(child7)
    np.testing.assert_array_equal(c7, [BLUE])

    # one chunk each at C=2
    assert tree.chunk_count[0] == 1
    assert tree.chunk_count[child0] == 1
    assert tree.chunk_count[child7] == 1
    assert state.stats.voxels_created == 2
    assert_cycle_hygiene(tree, state)
    tree.validate()


def test_canonical_set_one_point_at_a_time():
    tree = make_tree(chunk_capacity=2, grid_res=4, leaf_threshold=2)
    xyz, rgba = canonical_points()
    ingest(tree, xyz, rgba, batch_size=1)
    assert tree.inner[0]
    _, vc = tree.gather_samples(0)
    np.testing.assert_array_equal(vc, [RED, BLUE])
    lx, lc = tree.gather_samples(int(tree.children[0, 0]))
    np.testing.assert_array_equal(lc, [RED, GREEN])


# -- the ten-point split story -------------------------------------------


def ten_points():
    """Five points deep in octant 0 (four of them in its first sub-octant,
    one in its last), five spread through octant 7."""
    lo = [(0.05, 0.05, 0.05), (0.1, 0.1, 0.1), (0.15, 0.15, 0.15), (0.2, 0.2, 0.2)]
    mid = [(0.3, 0.3, 0.3)]
    hi = [(0.6, 0.6, 0.6), (0.7, 0.65, 0.8), (0.9, 0.9, 0.55), (0.8, 0.8, 0.8), (0.55, 0.95, 0.7)]
    xyz = np.array(lo + mid + hi, np.float32)
    rgba = np.arange(10, dtype=np.uint32) + 1
    return xyz, rgba


def test_ten_points_split_root_once():
    tree = make_tree(chunk_capacity=4, grid_res=4, leaf_threshold=5)
    xyz, rgba = ten_points()
    state = ingest(tree, xyz, rgba)
    assert tree.splits_total == 1
    assert tree.num_nodes == 9
    child0 = int(tree.children[0, 0])
    child7 = int(tree.children[0, 7])
    assert tree.count[child0] == 5
    assert tree.count[child7] == 5
    n = tree.num_nodes
    leaf_counts = tree.count[:n][~tree.inner[:n]]
    assert (leaf_counts <= 5).all()
    assert_cycle_hygiene(tree, state)


def test_two_point_followup_spills_one_leaf():
    tree = make_tree(chunk_capacity=4, grid_res=4, leaf_threshold=5)
    xyz, rgba = ten_points()
    state = ingest(tree, xyz, rgba)
    child0 = int(tree.children[0, 0])
    before_chunks = tree.pool.allocated_total

    more = np.array([[0.28, 0.29, 0.3], [0.31, 0.27, 0.26]], np.float32)
    more_c = np.array([100, 101], np.uint32)
    insert_batch(tree, more, more_c, state)

    # child0 went from 5 stored + 2 pending over the threshold: it split,
    # its five points spilled and re-landed below it
    assert tree.splits_total == 2
    assert tree.inner[child0]
    g0 = int(tree.children[child0, 0])
    g7 = int(tree.children[child0, 7])
    assert tree.count[g0] == 4
    assert tree.count[g7] == 3  # one spilled + the two new arrivals
    _, g7c = tree.gather_samples(g7)
    np.testing.assert_array_equal(g7c, [5, 100, 101])  # spill precedes batch
    n = tree.num_nodes
    assert (tree.count[:n][~tree.inner[:n]] <= 5).all()
    # three new chunk needs (two grandchild leaves + child0's voxels), two
    # covered by child0's released point chunks: exactly one arena acquire
    assert tree.pool.allocated_total == before_chunks + 1
    tree.pool.check_ledger()
    assert_cycle_hygiene(tree, state)
    tree.validate()


# -- expansion behavior --------------------------------------------------


def test_batch_into_settled_leaves_splits_nothing():
    tree = make_tree(grid_res=4, leaf_threshold=5)
    xyz, rgba = ten_points()
    ingest(tree, xyz, rgba)
    splits = tree.splits_total
    # room remains everywhere: no splits, no new nodes
    more = np.array([[0.9, 0.1, 0.1]], np.float32)
    insert_batch(tree, more, np.array([7], np.uint32), make_state())
    assert tree.splits_total == splits
    assert tree.num_nodes == 9


def test_colocated_chain_expands_level_by_level():
    tree = make_tree(grid_res=4, leaf_threshold=5, max_depth=12)
    rng = np.random.default_rng(3)
    # ten points inside one tiny corner region: every split dumps them all
    # into the next level's octant 0 until the cluster finally separates
    xyz = (rng.random((10, 3)) * 0.02).astype(np.float32)
    rgba = np.arange(10, dtype=np.uint32)
    ingest(tree, xyz, rgba)
    assert tree.splits_total >= 3
    assert tree.max_level >= 3
    n = tree.num_nodes
    assert (tree.count[:n][~tree.inner[:n]] <= 5).all()
    tree.validate()


def test_identical_points_stop_at_depth_cap():
    tree = make_tree(grid_res=4, leaf_threshold=2, max_depth=3)
    xyz = np.full((7, 3), 0.3, np.float32)
    rgba = np.arange(7, dtype=np.uint32)
    state = ingest(tree, xyz, rgba)
    # a chain of splits down to the cap, then one overfull leaf
    assert tree.splits_total == 3
    assert tree.max_level == 3
    n = tree.num_nodes
    leaves = np.flatnonzero(~tree.inner[:n])
    occupied = leaves[tree.count[leaves] > 0]
    assert len(occupied) == 1
    deep = int(occupied[0])
    assert tree.level[deep] == 3
    assert tree.count[deep] == 7  # depth cap permits exceeding the threshold
    assert_cycle_hygiene(tree, state)
    tree.validate()


# -- voxel sampling ------------------------------------------------------


def test_reinsert_creates_no_new_voxels():
    tree = make_tree(grid_res=8, leaf_threshold=100)
    xyz, rgba = cloud(150, seed=5)
    state = ingest(tree, xyz, rgba)
    assert tree.inner[0]
    voxels_before = tree.total_voxels()
    created_before = state.stats.voxels_created
    insert_batch(tree, xyz[:50], rgba[:50], state)
    assert state.stats.voxels_created == created_before
    assert tree.total_voxels() == voxels_before
    tree.validate()


def test_no_inner_nodes_no_voxels():
    tree = make_tree(grid_res=4, leaf_threshold=100)
    xyz, rgba = cloud(50, seed=6)
    state = ingest(tree, xyz, rgba)
    assert not tree.inner[0]
    assert state.stats.voxels_created == 0
    assert tree.total_voxels() == 0


def test_voxel_colors_follow_global_first_come():
    tree = make_tree(grid_res=4, leaf_threshold=2)
    xyz, rgba = canonical_points()
    # one point per batch: the dim cell-0 winner is still p0
    ingest(tree, xyz, rgba, batch_size=1)
    _, vc = tree.gather_samples(0)
    np.testing.assert_array_equal(vc, [RED, BLUE])


# -- allocation ----------------------------------------------------------


def test_full_chunk_then_one_more():
    tree = make_tree(chunk_capacity=1000, grid_res=4, leaf_threshold=5000)
    xyz, rgba = cloud(999, seed=7)
    state = ingest(tree, xyz, rgba)
    assert tree.chunk_count[0] == 1
    insert_batch(tree, *cloud(1, seed=8), state)
    assert tree.count[0] == 1000
    assert tree.chunk_count[0] == 1
    insert_batch(tree, *cloud(1, seed=9), state)
    assert tree.count[0] == 1001
    assert tree.chunk_count[0] == 2
    # the 1001st record sits at chunk 1, offset 0
    second = tree.pool.next[tree.chunk_head[0]]
    assert tree.pool.occupied[second] == 1
    tree.validate()


def test_conservation_across_batches():
    tree = make_tree(grid_res=8, leaf_threshold=64)
    xyz, rgba = cloud(3000, seed=10)
    state = make_state()
    for bx, bc in partition(xyz, rgba, 257):
        insert_batch(tree, bx, bc, state)
        tree.validate()
        assert tree.total_points() == state.stats.points
    assert tree.total_points() == 3000
    # every stored point sits in a leaf whose bounds contain it
    n = tree.num_nodes
    for nid in np.flatnonzero(~tree.inner[:n]):
        pts, _ = tree.gather_samples(int(nid))
        if not len(pts):
            continue
        bx, by, bz = tree.bmin[nid]
        s = tree.node_size(int(nid))
        assert (pts[:, 0] >= bx).all() and (pts[:, 0] <= bx + s).all()
        assert (pts[:, 1] >= by).all() and (pts[:, 1] <= by + s).all()
        assert (pts[:, 2] >= bz).all() and (pts[:, 2] <= bz + s).all()


# -- budget and frames ---------------------------------------------------


def test_tiny_budget_still_makes_progress():
    tree = make_tree(grid_res=4, leaf_threshold=1000)
    state = make_state(budget_ms=0.001)
    batches = deque(partition(*cloud(50, seed=11), 10))
    assert len(batches) == 5
    frames = 0
    while batches:
        processed = run_frame_updates(tree, batches, state)
        assert processed == 1  # budget is instantly spent, progress anyway
        frames += 1
    assert frames == 5
    assert state.stats.frames == 5
    assert tree.total_points() == 50


def test_generous_budget_drains_queue_in_one_frame():
    tree = make_tree(grid_res=4, leaf_threshold=1000)
    state = make_state(budget_ms=10_000.0)
    batches = deque(partition(*cloud(50, seed=12), 10))
    assert run_frame_updates(tree, batches, state) == 5
    assert not batches
    assert state.stats.frames == 1


def test_empty_queue_is_a_noop():
    tree = make_tree(grid_res=4)
    state = make_state()
    assert run_frame_updates(tree, deque(), state) == 0
    assert state.stats.frames == 0
    assert state.stats.batches == 0


# -- failure modes -------------------------------------------------------


def test_spill_overflow_is_fatal():
    tree = make_tree(grid_res=4, leaf_threshold=2)
    state = UpdateState(UpdateConfig(spill_capacity=1))
    xyz, rgba = canonical_points()
    # first batch splits only the empty root: nothing stored, nothing spilled
    insert_batch(tree, xyz, rgba, state)
    # overflowing child0 must spill its 2 stored points, past capacity 1
    more = np.array([[0.15, 0.15, 0.15]], np.float32)
    with pytest.raises(SpillOverflow):
        insert_batch(tree, more, np.array([9], np.uint32), state)


def test_backlog_overflow_is_fatal():
    tree = make_tree(grid_res=4, leaf_threshold=2)
    state = UpdateState(UpdateConfig(backlog_capacity=1))
    xyz, rgba = canonical_points()
    with pytest.raises(BacklogOverflow):
        insert_batch(tree, xyz, rgba, state)


# -- determinism against the references ----------------------------------


def test_matches_reference_rebuild():
    xyz, rgba = cloud(2000, seed=13)
    ref = oracles.build_reference(
        xyz, rgba, (0.0, 0.0, 0.0), 1.0,
        grid_res=8, leaf_threshold=50, max_depth=12,
    )
    for bs in (2000, 333, 31):
        tree = make_tree(grid_res=8, leaf_threshold=50)
        ingest(tree, xyz, rgba, batch_size=bs)
        oracles.assert_matches_reference(tree, ref)


def test_matches_sequential_replay():
    xyz, rgba = cloud(300, seed=14)
    tree = make_tree(grid_res=4, leaf_threshold=10, max_depth=6)
    ingest(tree, xyz, rgba, batch_size=37)
    root = oracles.simulate_sequential(
        xyz, rgba, (0.0, 0.0, 0.0), 1.0,
        grid_res=4, leaf_threshold=10, max_depth=6,
    )
    sim = oracles.sim_paths(root)
    live = oracles.tree_paths(tree)
    assert set(sim) == set(live)
    for path, nid in live.items():
        node = sim[path]
        got_xyz, got_rgba = tree.gather_samples(nid)
        if tree.inner[nid]:
            assert node.children is not None
            cells = list(node.cells)
            np.testing.assert_array_equal(got_rgba, [node.cells[c] for c in cells])
            assert tree.grid_popcount(nid) == len(cells)
        else:
            assert node.children is None
            np.testing.assert_array_equal(got_rgba, [q[3] for q in node.points])
            np.testing.assert_array_equal(
                got_xyz, np.array([q[:3] for q in node.points], np.float32).reshape(-1, 3)
            )


unit_coord = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False, width=32)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(unit_coord, unit_coord, unit_coord), min_size=0, max_size=60))
def test_any_point_set_matches_reference(points):
    xyz = np.array(points, np.float32).reshape(-1, 3)
    rgba = (np.arange(len(points)) + 1).astype(np.uint32)
    tree = make_tree(grid_res=4, leaf_threshold=3, max_depth=6)
    if len(points):
        ingest(tree, xyz, rgba, batch_size=7)
    ref = oracles.build_reference(
        xyz, rgba, (0.0, 0.0, 0.0), 1.0,
        grid_res=4, leaf_threshold=3, max_depth=6,
    )
    oracles.assert_matches_reference(tree, ref)
    tree.validate()
