import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treebound.errors import InvalidGraphError, NoSpanningTreeError
from treebound.graphs import (
    Graph,
    SpanningTree,
    UnionFind,
    complete,
    count_components,
    count_spanning_trees,
    custom,
    cycle,
    enumerate_spanning_trees,
    grid,
    is_spanning_tree,
    max_weight_spanning_tree,
    parse_graph_spec,
    spanning_tree_count_exact,
    uniform_tree_edge_marginals,
)

from conftest import random_connected_graph


def brute_force_mwst_weight(g, w):
    return max(sum(w[e] for e in t.edges) for t in enumerate_spanning_trees(g))


class TestBuilders:
    def test_grid_edge_order(self):
        g = grid(2, 3)
        assert g.edges == ((0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (4, 5))
        assert g.edge_count == 2 * 3 * 2 - 2 - 3

    def test_complete_and_cycle(self):
        assert complete(4).edges == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
        assert cycle(4).edges == ((0, 1), (1, 2), (2, 3), (3, 0))

    @pytest.mark.parametrize("spec, n, m", [("grid:3x3", 9, 12), ("complete:9", 9, 36), ("cycle:5", 5, 5)])
    def test_parse(self, spec, n, m):
        g = parse_graph_spec(spec)
        assert (g.node_count, g.edge_count) == (n, m)
        assert g.name == spec

    @pytest.mark.parametrize("spec", ["grid:3", "torus:4", "complete:x", "cycle:2"])
    def test_parse_rejects(self, spec):
        with pytest.raises(InvalidGraphError):
            parse_graph_spec(spec)

    def test_validation(self):
        with pytest.raises(InvalidGraphError):
            custom(3, [(0, 0)])
        with pytest.raises(InvalidGraphError):
            custom(3, [(0, 1), (1, 0)])
        with pytest.raises(InvalidGraphError):
            custom(3, [(0, 5)])

    def test_neighbors_and_index(self):
        g = cycle(4)
        assert sorted(g.neighbors(0)) == [(1, 0), (3, 3)]
        assert g.edge_index(0, 3) == 3 and g.edge_index(3, 0) == 3


class TestUnionFind:
    def test_components(self):
        assert count_components(5, [(0, 1), (2, 3)]) == 3
        uf = UnionFind(3)
        assert uf.union(0, 1) and not uf.union(1, 0)


class TestSpanningTrees:
    def test_is_spanning_tree(self):
        g = cycle(4)
        assert is_spanning_tree(g, [0, 1, 2])
        assert not is_spanning_tree(g, [0, 1])
        assert not is_spanning_tree(g, [0, 1, 2, 3])

    def test_mwst_tie_prefers_lower_index(self):
        # Edges 1 and 2 tie at weight 1 after edges 3 and 0; index 2 is dropped.
        tree = max_weight_spanning_tree(cycle(4), [1.0, 1.0, 1.0, 3.0])
        assert tree.edges == (0, 1, 3)

    def test_mwst_disconnected(self):
        with pytest.raises(NoSpanningTreeError):
            max_weight_spanning_tree(custom(4, [(0, 1), (2, 3)]), [1.0, 1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 6), st.integers(0, 2**31 - 1))
    def test_mwst_matches_enumeration(self, n, seed):
        rng = np.random.default_rng(seed)
        g = random_connected_graph(n, 0.5, rng)
        w = rng.normal(size=g.edge_count)
        tree = max_weight_spanning_tree(g, w)
        assert is_spanning_tree(g, tree.edges)
        assert sum(w[e] for e in tree.edges) == pytest.approx(brute_force_mwst_weight(g, w), abs=1e-12)

    def test_enumeration_counts(self):
        assert len(list(enumerate_spanning_trees(cycle(5)))) == 5
        assert len(list(enumerate_spanning_trees(complete(4)))) == 16

    def test_indicator(self):
        t = SpanningTree((2, 0, 1))
        assert t.edges == (0, 1, 2)
        np.testing.assert_array_equal(t.indicator(4), [1, 1, 1, 0])


class TestTreeCounts:
    def test_cayley(self):
        for n in range(2, 10):
            assert spanning_tree_count_exact(complete(n)) == n ** (n - 2)
        assert spanning_tree_count_exact(complete(9)) == 4_782_969

    def test_grid_9x9(self):
        log_count = count_spanning_trees(grid(9, 9))
        assert abs(log_count - math.log(8.33e33)) / math.log(8.33e33) < 0.01
        assert str(spanning_tree_count_exact(grid(9, 9))).startswith("83266")

    def test_disconnected(self):
        g = custom(4, [(0, 1), (2, 3)])
        assert count_spanning_trees(g) is None
        assert spanning_tree_count_exact(g) == 0

    def test_single_node(self):
        assert count_spanning_trees(Graph(1, ())) == 0.0

    def test_all_small_graphs_exhaustive(self):
        # Every labelled graph on 4 nodes plus random graphs on 5 and 6 nodes.
        pairs = list(itertools.combinations(range(4), 2))
        graphs = [custom(4, sub) for r in range(len(pairs) + 1) for sub in itertools.combinations(pairs, r)]
        rng = np.random.default_rng(7)
        graphs += [random_connected_graph(n, p, rng) for n in (5, 6) for p in (0.2, 0.5, 0.8) for _ in range(5)]
        for g in graphs:
            enumerated = len(list(enumerate_spanning_trees(g)))
            assert spanning_tree_count_exact(g) == enumerated
            log_count = count_spanning_trees(g)
            if enumerated == 0:
                assert log_count is None
            else:
                assert log_count == pytest.approx(math.log(enumerated), abs=1e-9)


class TestUniformTreeMarginals:
    @pytest.mark.parametrize("g", [cycle(5), complete(5), grid(2, 3)], ids=lambda g: g.name)
    def test_matches_enumeration(self, g):
        trees = list(enumerate_spanning_trees(g))
        expected = np.mean([t.indicator(g.edge_count) for t in trees], axis=0)
        np.testing.assert_allclose(uniform_tree_edge_marginals(g), expected, atol=1e-12)

    def test_sums_to_n_minus_one(self):
        g = grid(6, 6)
        assert uniform_tree_edge_marginals(g).sum() == pytest.approx(35.0, abs=1e-9)

    def test_bridge_has_probability_one(self):
        g = custom(4, [(0, 1), (1, 2), (2, 0), (2, 3)])
        assert uniform_tree_edge_marginals(g)[3] == pytest.approx(1.0)
