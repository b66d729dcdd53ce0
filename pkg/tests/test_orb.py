import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gravfarm.bodies import Body, BodySet
from gravfarm.errors import ForeignNodeOutsideRoot, InvalidRankCount, OutOfDomain
from gravfarm.orb import (EssentialNodeSet, collect_essential_nodes, decode_essential,
                          encode_essential, locate_rank, merge_essential, orb_partition,
                          rank_targets)
from gravfarm.tree import BoundingBox, build_tree, compute_mass_moments, root_box
from gravfarm.walk import build_interaction_lists

from conftest import random_bodies, walk_oracle


def local_trees(bs, p):
    part, ranks = orb_partition(bs, p)
    trees = [compute_mass_moments(build_tree(bs.subset(ranks == r), box=part.box)) for r in range(p)]
    return part, ranks, trees


def test_single_rank():
    bs = random_bodies(20, seed=1)
    part, ranks = orb_partition(bs, 1)
    assert part.root.is_leaf and part.root.rank == 0
    assert np.all(ranks == 0)
    assert part.domains[0] == part.box


def test_four_bodies_on_a_line():
    bs = BodySet.from_arrays(1.0, [[x, 0, 0] for x in (1, 2, 3, 4)])
    part, ranks = orb_partition(bs, 2)
    assert part.root.axis == 0 and 2 < part.root.split < 3
    assert ranks.tolist() == [0, 0, 1, 1]
    assert locate_rank(part, (1.5, 0, 0)) == 0
    assert locate_rank(part, (3.5, 0, 0)) == 1


def test_1000_bodies_8_ranks_exact_balance():
    _, ranks = orb_partition(random_bodies(1000, seed=2), 8)
    assert np.bincount(ranks).tolist() == [125] * 8


def test_three_ranks_split_two_to_one():
    part, ranks = orb_partition(random_bodies(30, seed=3), 3)
    low, high = part.root.low, part.root.high
    assert len(low.box.min) == 3 and not low.is_leaf and high.is_leaf
    assert np.bincount(ranks).tolist() == [10, 10, 10]


@pytest.mark.parametrize("p", [0, 11])
def test_invalid_rank_count(p):
    with pytest.raises(InvalidRankCount):
        orb_partition(random_bodies(10), p)


def test_out_of_domain():
    part, _ = orb_partition(random_bodies(10), 2)
    with pytest.raises(OutOfDomain):
        locate_rank(part, (5.0, 5.0, 5.0))


def test_locate_matches_assignment_512():
    bs = random_bodies(512, seed=4)
    part, ranks = orb_partition(bs, 4)
    assert all(locate_rank(part, bs.pos[i]) == ranks[i] for i in range(512))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 12), st.integers(0, 1000))
def test_balance_and_tiling_property(n, p, seed):
    p = min(p, n)
    bs = random_bodies(n, seed=seed)
    part, ranks = orb_partition(bs, p)
    counts = np.bincount(ranks, minlength=p)
    assert counts.tolist() == rank_targets(n, p).tolist()
    assert counts.max() - counts.min() <= 1
    assert sorted(leaf.rank for leaf in part.leaves()) == list(range(p))
    for node in part.splits():
        if len({leaf.rank for leaf in _leaves(node.low)}) == len({leaf.rank for leaf in _leaves(node.high)}):
            nl = sum(counts[leaf.rank] for leaf in _leaves(node.low))
            nh = sum(counts[leaf.rank] for leaf in _leaves(node.high))
            assert abs(nl - nh) <= 1
    vol = sum(np.prod(d.max - d.min) for d in part.domains)
    assert vol == pytest.approx(np.prod(part.box.max - part.box.min), rel=1e-9)
    for i in range(n):
        assert locate_rank(part, bs.pos[i]) == ranks[i]
        assert part.domains[ranks[i]].contains(bs.pos[i])


def _leaves(node):
    return [node] if node.is_leaf else _leaves(node.low) + _leaves(node.high)


def test_random_points_locate_to_exactly_one_domain():
    part, _ = orb_partition(random_bodies(200, seed=5), 6)
    rng = np.random.default_rng(0)
    pts = part.box.min + rng.random((500, 3)) * (part.box.max - part.box.min)
    for q in pts:
        r = locate_rank(part, q)
        inside = [d for d in part.domains if np.all(q >= d.min) and np.all(q < d.max)]
        assert len(inside) == 1 and inside[0] is part.domains[r]


def test_self_domain_yields_only_raw_bodies():
    bs = random_bodies(100, seed=6)
    tree = compute_mass_moments(build_tree(bs))
    es = collect_essential_nodes(tree, root_box(bs.pos), 0.5)
    assert es.n_summaries == 0 and len(es.bodies) == 100


def test_far_domain_gets_root_summary_only():
    rng = np.random.default_rng(1)
    tree = compute_mass_moments(build_tree(BodySet.from_arrays(0.1, rng.random((10, 3)))))
    es = collect_essential_nodes(tree, BoundingBox((100, 0, 0), (101, 1, 1)), 0.5)
    assert len(es) == 1 and es.cells.tolist() == [0]
    assert es.summary_mass[0] == pytest.approx(1.0)
    assert es.summary_side[0] == tree.side[0]


def d_min(com, box):
    return box.distance_to(com)


@pytest.mark.parametrize("n,p", [(64, 2), (128, 2), (128, 4), (100, 4)])
@pytest.mark.parametrize("theta", [0.5, 0.3])
def test_essential_sets_sound_and_complete(n, p, theta):
    bs = random_bodies(n, seed=n + p)
    part, ranks, trees = local_trees(bs, p)
    for src in range(p):
        tree = trees[src]
        for dst in range(p):
            if dst == src:
                continue
            dom = part.domains[dst]
            es = collect_essential_nodes(tree, dom, theta, src, dst)
            emitted = set(es.cells.tolist())
            raw = set(es.bodies.ids.tolist())
            for k in emitted:
                assert tree.side[k] / d_min(tree.com[k], dom) < theta
                parent = tree.parent[k]
                if parent >= 0:
                    dp = d_min(tree.com[parent], dom)
                    assert dp == 0 or tree.side[parent] / dp >= theta
                assert part.domains[src].contains(tree.com[k])
            # completeness: every item a destination body's own walk accepts is present
            covered = _covered_cells(tree, emitted, raw)
            for b in np.flatnonzero(ranks == dst):
                for j in walk_oracle(tree, bs.pos[b], theta):
                    if j >= tree.n_nodes:
                        assert int(tree.body_ids[j - tree.n_nodes]) in raw
                    else:
                        assert j in covered


def _covered_cells(tree, emitted, raw):
    """Cells represented either by their own summary or by a full decomposition."""
    covered = set()
    for k in range(tree.n_nodes - 1, -1, -1):
        if k in emitted:
            covered.add(k)
        elif tree.leaf[k]:
            if all(int(tree.body_ids[r]) in raw for r in tree.leaf_bodies(k)):
                covered.add(k)
        elif all(int(j) in covered for j in tree.children(k)):
            covered.add(k)
    return covered


def test_merge_empty_is_identity():
    tree = compute_mass_moments(build_tree(random_bodies(30)))
    assert merge_essential(tree, []) is tree


def test_merge_far_summary_adds_one_entry_per_list():
    bs = random_bodies(40, seed=8)
    box = BoundingBox((0, 0, 0), (200, 200, 200))
    tree = compute_mass_moments(build_tree(bs, box=box))
    before = build_interaction_lists(tree, 0.5)
    es = EssentialNodeSet(1, 0, np.array([3.0]), np.array([[150.0, 150.0, 150.0]]),
                          np.array([10.0]), BodySet.empty())
    merged = merge_essential(tree, [es])
    after = build_interaction_lists(merged, 0.5)
    assert np.all(after.lengths() == before.lengths() + 1)
    m, p = merged.points()
    for i in range(len(after)):
        tail = after.indices(i)[-1]
        assert m[tail] == 3.0 and np.array_equal(p[tail], [150.0, 150.0, 150.0])
        assert np.array_equal(after.indices(i)[:-1], before.indices(i))
    assert after.foreign_mac_failures == 0


def test_merge_inserts_raw_bodies_as_non_targets():
    bs = random_bodies(60, seed=11)
    part, ranks, trees = local_trees(bs, 2)
    es = collect_essential_nodes(trees[1], part.domains[0], 0.5, 1, 0)
    merged = merge_essential(trees[0], [es])
    n0 = trees[0].n_bodies
    assert merged.n_local == n0 and merged.n_bodies == n0 + len(es.bodies)
    assert merged.n_foreign == es.n_summaries
    assert np.isclose(merged.mass[0], trees[0].mass[0] + es.bodies.mass.sum())
    lists = build_interaction_lists(merged, 0.5)
    assert sorted(lists.rows.tolist()) == list(range(n0))


def test_merge_rejects_items_outside_root():
    tree = compute_mass_moments(build_tree(random_bodies(10)))
    es = EssentialNodeSet(1, 0, np.array([1.0]), np.array([[50.0, 0, 0]]), np.array([1.0]),
                          BodySet.empty())
    with pytest.raises(ForeignNodeOutsideRoot):
        merge_essential(tree, [es])


def test_merge_records_attachment_cells():
    bs = random_bodies(50, seed=9)
    part, ranks, trees = local_trees(bs, 2)
    es = collect_essential_nodes(trees[1], part.domains[0], 0.5, 1, 0)
    merged = merge_essential(trees[0], [es])
    for f in range(merged.n_foreign):
        k = merged.foreign_attach[f]
        assert merged.cell_box(k).contains(merged.foreign_pos[f])


def test_encoding_round_trip():
    bs = random_bodies(80, seed=10)
    part, ranks, trees = local_trees(bs, 2)
    es = collect_essential_nodes(trees[0], part.domains[1], 0.5, 0, 1, local_bodies=bs.subset(ranks == 0))
    assert es.n_summaries > 0 and len(es.bodies) > 0
    back = decode_essential(encode_essential(es))
    assert (back.source, back.dest) == (0, 1)
    assert np.array_equal(back.summary_mass, es.summary_mass)
    assert np.array_equal(back.summary_com, es.summary_com)
    assert np.array_equal(back.summary_side, es.summary_side)
    assert back.bodies.equals(es.bodies)


def test_encoding_layout():
    es = EssentialNodeSet(2, 3, np.array([1.5]), np.array([[1.0, 2.0, 3.0]]), np.array([0.25]),
                          BodySet.from_bodies([Body(7, 2.0, (0.5, 0, 0), (0, 1, 0))]))
    data = encode_essential(es)
    assert data[:12] == bytes([2, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0])
    assert data[12] == 0x00 and int.from_bytes(data[13:21], "little") == 7
    assert np.frombuffer(data[21:29], "<f8")[0] == 2.0
    assert data[77] == 0x01
    assert np.frombuffer(data[78:118], "<f8").tolist() == [1.5, 1.0, 2.0, 3.0, 0.25]
    assert len(data) == 12 + 65 + 41


def test_decoding_rejects_garbage():
    from gravfarm.errors import ProtocolError
    good = encode_essential(EssentialNodeSet(0, 1, np.array([1.0]), np.zeros((1, 3)),
                                             np.array([1.0]), BodySet.empty()))
    with pytest.raises(ProtocolError):
        decode_essential(good[:-3])
    with pytest.raises(ProtocolError):
        decode_essential(good[:12] + b"\x07" + good[13:])
    with pytest.raises(ProtocolError):
        decode_essential(good + b"\x00")
