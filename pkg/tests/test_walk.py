import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gravfarm.bodies import Body, BodySet
from gravfarm.tree import build_tree, compute_mass_moments
from gravfarm.walk import build_interaction_list, build_interaction_lists

from conftest import random_bodies, walk_oracle


def moment_tree(bodies, cap=1):
    return compute_mass_moments(build_tree(bodies, leaf_capacity=cap))


def test_theta_zero_lists_every_other_body(bodies64):
    tree = moment_tree(bodies64)
    lists = build_interaction_lists(tree, 0.0)
    assert np.all(lists.lengths() == len(bodies64) - 1)
    for i in range(len(lists)):
        ix = lists.indices(i)
        assert np.all(ix >= tree.n_nodes)
        assert tree.n_nodes + lists.rows[i] not in ix


def test_far_body_sees_cluster_as_one_entry():
    rng = np.random.default_rng(0)
    cluster = BodySet.from_arrays(rng.uniform(0.5, 1.0, 10), rng.random((10, 3)))
    tree = moment_tree(cluster)
    ilist = build_interaction_list(tree, Body(99, 1.0, (100, 0, 0)), 0.5)
    assert len(ilist) == 1
    assert ilist.mass[0] == pytest.approx(cluster.mass.sum(), rel=1e-15)
    assert np.allclose(ilist.pos[0], tree.com[0])


def test_body_excluded_from_own_list(bodies64):
    tree = moment_tree(bodies64)
    b = bodies64[5]
    full = build_interaction_list(tree, b, 0.0)
    assert len(full) == 63
    assert not np.any(np.all(full.pos == b.pos, axis=1))


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7, 1.0])
@pytest.mark.parametrize("cap", [1, 4])
def test_lists_match_recursive_oracle(theta, cap):
    bs = random_bodies(64, seed=7)
    tree = moment_tree(bs, cap)
    lists = build_interaction_lists(tree, theta)
    for i, row in enumerate(lists.rows):
        assert sorted(lists.indices(i).tolist()) == walk_oracle(tree, tree.body_pos[row], theta, row)


def mac_ok(tree, pos, k, theta):
    d = np.linalg.norm(pos - tree.com[k])
    return d > 0 and tree.side[k] / d < theta


def contains(tree, k, pos):
    return bool(np.all(pos >= tree.lo[k]) and np.all(pos < tree.lo[k] + tree.side[k]))


def check_mac_soundness(tree, lists, theta):
    for i, row in enumerate(lists.rows):
        pos = tree.body_pos[row]
        for j in lists.indices(i):
            if j < tree.n_nodes:
                assert mac_ok(tree, pos, j, theta)
                cell = j
            else:
                cell = next(k for k in tree.leaves() if j - tree.n_nodes in tree.leaf_bodies(k))
            p = tree.parent[cell]
            if p >= 0:
                # a parent was opened: failed the criterion or holds the target
                assert not mac_ok(tree, pos, p, theta) or contains(tree, p, pos)


def test_mac_soundness_64_bodies(bodies64):
    tree = moment_tree(bodies64)
    check_mac_soundness(tree, build_interaction_lists(tree, 0.5), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 80), st.floats(0.1, 1.2), st.integers(0, 10_000))
def test_mac_soundness_property(n, theta, seed):
    bs = random_bodies(n, seed=seed)
    tree = moment_tree(bs)
    lists = build_interaction_lists(tree, theta)
    check_mac_soundness(tree, lists, theta)
    # every list accounts for the total mass minus the target's own
    m, _ = tree.points()
    for i, row in enumerate(lists.rows):
        assert m[lists.indices(i)].sum() == pytest.approx(tree.mass[0] - tree.body_mass[row], rel=1e-12)


def test_list_buffer_growth_keeps_results():
    bs = random_bodies(3000, seed=2)
    tree = moment_tree(bs)
    lists = build_interaction_lists(tree, 0.0)
    assert lists.total == 3000 * 2999
    assert np.all(lists.lengths() == 2999)
