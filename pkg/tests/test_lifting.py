"""Tests for the domain lifting constructors."""
import numpy as np
import pytest

from topounet.complexes import incidence, validate_complex
from topounet.lifting import (
    ALL_TRIANGLES,
    MAXIMAL_ONLY,
    GraphInput,
    GridInput,
    HypergraphInput,
    LiftError,
    PointCloudInput,
    enumerate_triangles,
    lift_graph,
    lift_grid,
    lift_hypergraph,
    lift_point_cloud,
)


def brute_force_triangles(num_nodes, edges):
    es = {frozenset(e) for e in edges}
    out = []
    for a in range(num_nodes):
        for b in range(a + 1, num_nodes):
            for c in range(b + 1, num_nodes):
                if all(frozenset(p) in es for p in [(a, b), (a, c), (b, c)]):
                    out.append((a, b, c))
    return out


def random_graph(rng, n, p):
    edges = [
        (u, v)
        for u in range(n)
        for v in range(u + 1, n)
        if rng.random() < p
    ]
    return GraphInput(n, edges)


class TestGraphLift:
    def test_path_graph_has_no_triangles(self):
        g = GraphInput(3, [(0, 1), (1, 2)])
        cc = lift_graph(g, with_triangles=True)
        assert (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2)) == (3, 2, 0)

    def test_k3(self):
        g = GraphInput(3, [(0, 1), (1, 2), (0, 2)])
        cc = lift_graph(g, with_triangles=True)
        assert (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2)) == (3, 3, 1)
        b12 = incidence(cc, 1, 2).pattern.to_dense()
        assert b12[:, 0].sum() == 3

    def test_edge_cleaning(self):
        g = GraphInput(3, [(1, 0), (0, 1), (2, 2), (1, 2)])
        assert g.edges == [(0, 1), (1, 2)]

    def test_global_requires_triangles(self):
        g = GraphInput(3, [(0, 1), (1, 2), (0, 2)])
        with pytest.raises(ValueError, match="with_triangles"):
            lift_graph(g, with_triangles=False, with_global=True)

    def test_global_without_any_triangle_fails(self):
        g = GraphInput(3, [(0, 1), (1, 2)])
        with pytest.raises(LiftError, match="no triangles"):
            lift_graph(g, with_triangles=True, with_global=True)

    def test_global_cell_covers_all_triangles(self):
        # two triangles sharing an edge plus a pendant vertex
        g = GraphInput(5, [(0, 1), (1, 2), (0, 2), (1, 3), (2, 3), (3, 4)])
        cc = lift_graph(g, with_triangles=True, with_global=True)
        assert cc.num_cells(3) == 1
        assert cc.cells(3)[0] == frozenset({0, 1, 2, 3})
        b23 = incidence(cc, 2, 3).pattern.to_dense()
        assert b23.sum() == cc.num_cells(2)

    def test_maximal_only_drops_triangles_inside_k4(self):
        k4 = GraphInput(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
        assert len(enumerate_triangles(4, k4.edges, ALL_TRIANGLES)) == 4
        assert enumerate_triangles(4, k4.edges, MAXIMAL_ONLY) == []

    def test_triangle_count_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            g = random_graph(rng, int(rng.integers(4, 20)), 0.3)
            got = enumerate_triangles(g.num_nodes, g.edges)
            assert got == brute_force_triangles(g.num_nodes, g.edges)

    def test_lifted_graphs_validate(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(4, 15)), 0.4)
            tris = enumerate_triangles(g.num_nodes, g.edges)
            cc = lift_graph(g, with_triangles=True, with_global=len(tris) >= 2)
            assert validate_complex(cc) == []

    def test_deterministic(self):
        g1 = GraphInput(5, [(0, 1), (1, 2), (0, 2), (3, 4)])
        g2 = GraphInput(5, [(3, 4), (0, 2), (1, 2), (0, 1)])
        assert lift_graph(g1, True).to_json() == lift_graph(g2, True).to_json()


class TestHypergraphLift:
    def test_three_pairwise_overlapping_hyperedges(self):
        h = HypergraphInput(3, [{0, 1}, {1, 2}, {2, 0}])
        cc = lift_hypergraph(h, with_rank2=True, min_pairwise_overlap=1)
        assert cc.num_cells(2) == 1
        assert cc.cells(2)[0] == frozenset({0, 1, 2})

    def test_disjoint_hyperedges_no_rank2(self):
        h = HypergraphInput(6, [{0, 1}, {2, 3}, {4, 5}])
        cc = lift_hypergraph(h, with_rank2=True)
        assert cc.num_cells(2) == 0

    def test_incidence_reproduces_native_matrix(self):
        hyperedges = [{0, 1, 2}, {2, 3}, {0, 3, 4}]
        h = HypergraphInput(5, hyperedges)
        cc = lift_hypergraph(h)
        b = incidence(cc, 0, 1).pattern.to_dense()
        ordered = sorted(h.hyperedges, key=lambda e: tuple(sorted(e)))
        native = np.zeros((5, len(ordered)))
        for j, he in enumerate(ordered):
            for v in he:
                native[v, j] = 1.0
        assert np.array_equal(b, native)

    def test_singleton_hyperedges_dropped_with_warning(self):
        h = HypergraphInput(3, [{0}, {0, 1}])
        with pytest.warns(UserWarning, match="size-1"):
            cc = lift_hypergraph(h)
        assert cc.num_cells(1) == 1

    def test_union_inside_hyperedge_dropped(self):
        h = HypergraphInput(4, [{0, 1, 2, 3}, {0, 1}, {1, 2}, {2, 0}])
        with pytest.warns(UserWarning, match="contained"):
            cc = lift_hypergraph(h, with_rank2=True)
        assert validate_complex(cc) == []

    def test_min_overlap_filter(self):
        h = HypergraphInput(6, [{0, 1, 2}, {1, 2, 3}, {2, 3, 4}, {4, 5}])
        cc1 = lift_hypergraph(h, with_rank2=True, min_pairwise_overlap=1)
        cc2 = lift_hypergraph(h, with_rank2=True, min_pairwise_overlap=2)
        assert cc1.num_cells(2) >= cc2.num_cells(2)
        # only the first three pairwise share >= 1 vertex; overlap-2 needs
        # |{1,2}|, |{2,3}|, |{2}| >= 2 which fails on the last pair
        assert cc2.num_cells(2) == 0

    def test_lifted_hypergraphs_validate(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            n = int(rng.integers(4, 10))
            hes = []
            for _ in range(rng.integers(3, 8)):
                size = int(rng.integers(2, 5))
                hes.append(set(rng.choice(n, size=size, replace=False).tolist()))
            h = HypergraphInput(n, hes)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cc = lift_hypergraph(h, with_rank2=True)
            assert validate_complex(cc) == []


class TestGridLift:
    def test_28x28_counts(self):
        cc = lift_grid(GridInput(28, 28))
        assert (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2)) == (784, 1512, 729)

    def test_2x2(self):
        cc = lift_grid(GridInput(2, 2))
        assert (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2)) == (4, 4, 1)

    def test_3x3(self):
        cc = lift_grid(GridInput(3, 3))
        assert (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2)) == (9, 12, 4)

    def test_closed_forms_all_small_grids(self):
        for h in range(2, 11):
            for w in range(2, 11):
                cc = lift_grid(GridInput(h, w))
                assert cc.num_cells(0) == h * w
                assert cc.num_cells(1) == h * (w - 1) + w * (h - 1)
                assert cc.num_cells(2) == (h - 1) * (w - 1)
                assert validate_complex(cc) == []

    def test_1xn_warns_and_has_no_patches(self):
        with pytest.warns(UserWarning, match="2x2"):
            cc = lift_grid(GridInput(1, 4))
        assert cc.num_cells(1) == 3
        assert cc.num_cells(2) == 0


class TestPointCloudLift:
    def test_square_corners_k1(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        cc = lift_point_cloud(PointCloudInput(pts, k=1))
        # each corner's nearest neighbor is an adjacent corner (tie -> lower
        # index); symmetrization yields edges but no 3-cliques
        assert cc.num_cells(1) > 0
        assert cc.num_cells(2) == 0

    def test_three_collinear_points_k2(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        cc = lift_point_cloud(PointCloudInput(pts, k=2))
        assert cc.num_cells(1) == 3
        assert cc.num_cells(2) == 1

    def test_full_k_gives_complete_graph(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((6, 3))
        cc = lift_point_cloud(PointCloudInput(pts, k=5))
        assert cc.num_cells(1) == 15
        assert cc.num_cells(2) == 20  # C(6, 3)

    def test_k_too_large_rejected(self):
        pts = np.zeros((3, 3))
        with pytest.raises(ValueError, match="k=3"):
            PointCloudInput(pts, k=3)

    def test_validates(self):
        rng = np.random.default_rng(21)
        pts = rng.standard_normal((10, 3))
        cc = lift_point_cloud(PointCloudInput(pts, k=3))
        assert validate_complex(cc) == []
