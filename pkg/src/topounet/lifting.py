"""Lift raw domains (graphs, hypergraphs, image grids, point clouds) to complexes.

Each constructor is deterministic: identical inputs produce identical complexes,
with cells in canonical lexicographic order per rank.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .complexes import CombinatorialComplex

ALL_TRIANGLES = "all_triangles"
MAXIMAL_ONLY = "maximal_only"


class LiftError(ValueError):
    """A lifting recipe could not produce a valid complex from its input."""


@dataclass
class GraphInput:
    """Undirected graph; edges are cleaned (self-loops dropped, deduplicated)."""

    num_nodes: int
    edges: list[tuple[int, int]]
    node_features: np.ndarray | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.num_nodes < 0:
            raise ValueError("num_nodes must be nonnegative")
        cleaned = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u}, {v}) out of range for {self.num_nodes} nodes")
            if u == v:
                continue
            cleaned.add((min(u, v), max(u, v)))
        self.edges = sorted(cleaned)
        if self.node_features is not None:
            self.node_features = np.asarray(self.node_features, dtype=np.float64)
            if self.node_features.shape[0] != self.num_nodes:
                raise ValueError("node_features row count must equal num_nodes")
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
            if self.node_labels.shape[0] != self.num_nodes:
                raise ValueError("node_labels length must equal num_nodes")


@dataclass
class HypergraphInput:
    """Hypergraph given by vertex sets; hyperedges are deduplicated."""

    num_nodes: int
    hyperedges: list[frozenset[int]]
    node_features: np.ndarray | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        seen = set()
        cleaned = []
        for he in self.hyperedges:
            he = frozenset(int(v) for v in he)
            if not he:
                raise ValueError("empty hyperedge")
            if any(v < 0 or v >= self.num_nodes for v in he):
                raise ValueError(f"hyperedge {sorted(he)} out of range")
            if he not in seen:
                seen.add(he)
                cleaned.append(he)
        self.hyperedges = cleaned


@dataclass
class GridInput:
    """Rectangular pixel grid with row-major vertex ids."""

    height: int
    width: int
    pixel_values: np.ndarray | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")
        if self.pixel_values is not None:
            self.pixel_values = np.asarray(self.pixel_values, dtype=np.float64)
            if self.pixel_values.shape[:2] != (self.height, self.width):
                raise ValueError("pixel_values must be height x width (x channels)")


@dataclass
class PointCloudInput:
    """3-D point cloud with a kNN neighborhood size."""

    points: np.ndarray
    k: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be a (num_points, 3) matrix")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.k >= len(self.points):
            raise ValueError(f"k={self.k} must be below num_points={len(self.points)}")


def _adjacency_sets(num_nodes, edges):
    adj = [set() for _ in range(num_nodes)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj


def enumerate_triangles(num_nodes, edges, mode=ALL_TRIANGLES):
    """All 3-cliques of an undirected graph, as sorted vertex triples.

    ``maximal_only`` keeps a 3-clique only when no fourth vertex is adjacent
    to all three (the clique is maximal in the graph).
    """
    adj = _adjacency_sets(num_nodes, edges)
    triangles = []
    for u, v in edges:
        for w in sorted(adj[u] & adj[v]):
            if w > v:
                if mode == MAXIMAL_ONLY and (adj[u] & adj[v] & adj[w]):
                    continue
                triangles.append((u, v, w))
    return sorted(triangles)


def lift_graph(g: GraphInput, with_triangles: bool = False, with_global: bool = False,
               triangle_mode: str = ALL_TRIANGLES) -> CombinatorialComplex:
    """Nodes at rank 0, edges at rank 1, optional 3-clique triangles at rank 2
    and a single global rank-3 cell covering every triangle."""
    if triangle_mode not in (ALL_TRIANGLES, MAXIMAL_ONLY):
        raise ValueError(f"unknown triangle_mode {triangle_mode!r}")
    if with_global and not with_triangles:
        raise ValueError("with_global requires with_triangles")
    cells = {1: [set(e) for e in g.edges]}
    triangles = []
    if with_triangles:
        triangles = enumerate_triangles(g.num_nodes, g.edges, triangle_mode)
        cells[2] = [set(t) for t in triangles]
    if with_global:
        if not triangles:
            raise LiftError("global cell requested but the graph has no triangles")
        covered = set()
        for t in triangles:
            covered.update(t)
        if len(triangles) == 1:
            raise LiftError(
                "global cell over a single triangle would coincide with the rank-2 cell"
            )
        cells[3] = [covered]
    cells = {r: cs for r, cs in cells.items() if cs}
    return CombinatorialComplex.from_cells(g.num_nodes, cells)


def lift_hypergraph(h: HypergraphInput, with_rank2: bool = False,
                    min_pairwise_overlap: int = 1) -> CombinatorialComplex:
    """Hyperedges become rank-1 cells; overlapping hyperedge triples induce
    rank-2 cells equal to the union of the triple.

    Size-1 hyperedges collide with the rank-0 singleton of the same vertex set
    and are dropped with a warning.  Rank-2 unions contained in (or equal to)
    a rank-1 hyperedge would break containment monotonicity and are likewise
    dropped.
    """
    if min_pairwise_overlap < 1:
        raise ValueError("min_pairwise_overlap must be positive")
    rank1 = []
    for he in h.hyperedges:
        if len(he) == 1:
            warnings.warn(
                f"dropping size-1 hyperedge {sorted(he)}: it coincides with a rank-0 cell",
                stacklevel=2,
            )
            continue
        rank1.append(he)
    cells = {1: rank1} if rank1 else {}
    if with_rank2 and len(rank1) >= 3:
        rank1_set = set(rank1)
        unions = set()
        for a, b, c in combinations(rank1, 3):
            if (len(a & b) >= min_pairwise_overlap
                    and len(a & c) >= min_pairwise_overlap
                    and len(b & c) >= min_pairwise_overlap):
                u = a | b | c
                if any(u <= e for e in rank1_set):
                    warnings.warn(
                        f"dropping rank-2 union {sorted(u)}: contained in a hyperedge",
                        stacklevel=2,
                    )
                    continue
                unions.add(u)
        if unions:
            cells[2] = sorted(unions, key=lambda c: tuple(sorted(c)))
    return CombinatorialComplex.from_cells(h.num_nodes, cells)


def lift_grid(g: GridInput) -> CombinatorialComplex:
    """Pixels at rank 0, 4-connected adjacencies at rank 1, overlapping
    2x2 windows at rank 2 (stride 1, row-major vertex ids)."""
    h, w = g.height, g.width
    if min(h, w) < 2:
        warnings.warn(f"{h}x{w} grid has no 2x2 windows; rank 2 will be empty", stacklevel=2)

    def vid(r, c):
        return r * w + c

    edges = []
    for r in range(h):
        for c in range(w):
            if c + 1 < w:
                edges.append({vid(r, c), vid(r, c + 1)})
            if r + 1 < h:
                edges.append({vid(r, c), vid(r + 1, c)})
    patches = [
        {vid(r, c), vid(r, c + 1), vid(r + 1, c), vid(r + 1, c + 1)}
        for r in range(h - 1)
        for c in range(w - 1)
    ]
    cells = {}
    if edges:
        cells[1] = edges
    if patches:
        cells[2] = patches
    return CombinatorialComplex.from_cells(h * w, cells)


def knn_edges(points: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Symmetrized k-nearest-neighbor edges; ties broken by point index."""
    n = len(points)
    diffs = points[:, None, :] - points[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(-1))
    edges = set()
    for i in range(n):
        order = sorted((dists[i, j], j) for j in range(n) if j != i)
        for _, j in order[:k]:
            edges.add((min(i, j), max(i, j)))
    return sorted(edges)


def lift_point_cloud(p: PointCloudInput) -> CombinatorialComplex:
    """Points at rank 0, symmetric kNN edges at rank 1, and every 3-clique of
    the kNN graph at rank 2."""
    edges = knn_edges(p.points, p.k)
    triangles = enumerate_triangles(len(p.points), edges)
    cells = {}
    if edges:
        cells[1] = [set(e) for e in edges]
    if triangles:
        cells[2] = [set(t) for t in triangles]
    return CombinatorialComplex.from_cells(len(p.points), cells)
