"""Bundled synthetic data so verification and ablations run with no downloads.

The heterophilic node benchmark plants same-class 4-cliques on top of a
cross-class-dominated random graph: the clique triangles carry denoised
class prototypes that edge-level aggregation dilutes, so rank-2 paths see
strictly more signal than the node-edge path, while the single global rank-3
cell compresses support to 1/n0 (< 0.01).  Small random lifted complexes
drive the equivariance/gradient suites, and smooth toy images feed the
reconstruction head.
"""
from __future__ import annotations

import numpy as np

from .complexes import CombinatorialComplex
from .lifting import GraphInput, HypergraphInput, enumerate_triangles, lift_graph
from .model import RefinementSpec, TopoUNetConfig
from .training import Dataset

# Frozen recipe for the bundled ablation experiment (skip and rank-path
# criteria are asserted against exactly these settings).
ABLATION_PATHS = ((0, 1), (0, 1, 2), (0, 1, 2, 3))
ABLATION_SEEDS = tuple(range(10))
ABLATION_HIDDEN = 16
ABLATION_EPOCHS = 500
ABLATION_PATIENCE = 100
ABLATION_LR = 5e-3
ABLATION_WEIGHT_DECAY = 5e-4


def planted_partition(num_classes: int, size_per_class: int, p_intra: float,
                      p_inter: float, seed: int = 0,
                      pair_probs: np.ndarray | None = None
                      ) -> tuple[GraphInput, np.ndarray]:
    """Random graph whose edge probability depends on class co-membership.

    ``pair_probs`` overrides the two-level scheme with a full symmetric
    class-pair probability matrix.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 6)))
    n = num_classes * size_per_class
    labels = np.repeat(np.arange(num_classes), size_per_class)
    if pair_probs is None:
        pair_probs = np.full((num_classes, num_classes), p_inter)
        np.fill_diagonal(pair_probs, p_intra)
    else:
        pair_probs = np.asarray(pair_probs, dtype=np.float64)
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < pair_probs[labels[u], labels[v]]:
                edges.append((u, v))
    return GraphInput(n, edges), labels


def class_features(labels: np.ndarray, num_classes: int, signal: float,
                   noise: float, extra_dims: int, seed: int = 0) -> np.ndarray:
    """Noisy one-hot class prototypes plus uninformative extra columns."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    n = len(labels)
    x = rng.normal(0.0, noise, size=(n, num_classes + extra_dims))
    x[np.arange(n), labels] += signal
    return x


def heterophilic_node_dataset(seed: int = 0, num_classes: int = 3,
                              size_per_class: int = 80, p_intra: float = 0.01,
                              p_cross: float = 0.04, clique_size: int = 4,
                              signal: float = 0.7, noise: float = 1.0,
                              extra_dims: int = 2) -> Dataset:
    """Cross-class edges dominate; each class is tiled by planted same-class
    4-cliques whose triangles carry the class signal.

    Every class plants the same number of cliques, so triangle participation
    alone is uninformative: the signal is the feature content routed through
    rank 2, which a no-skip pass through the global rank-3 cell destroys.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 9)))
    n = num_classes * size_per_class
    labels = np.repeat(np.arange(num_classes), size_per_class)
    edges = set()
    for u in range(n):
        for v in range(u + 1, n):
            p = p_intra if labels[u] == labels[v] else p_cross
            if rng.random() < p:
                edges.add((u, v))
    for c in range(num_classes):
        members = rng.permutation(
            np.arange(c * size_per_class, (c + 1) * size_per_class)
        )
        for i in range(0, size_per_class - clique_size + 1, clique_size):
            chunk = sorted(int(v) for v in members[i:i + clique_size])
            for a in range(len(chunk)):
                for b in range(a + 1, len(chunk)):
                    edges.add((chunk[a], chunk[b]))
    g = GraphInput(n, sorted(edges))
    cc = lift_graph(g, with_triangles=True, with_global=True)
    x = class_features(labels, num_classes, signal, noise, extra_dims, seed)
    return Dataset(
        kind="node_task",
        complexes=[cc],
        features=[x],
        labels=labels,
        num_classes=num_classes,
    )


def homophilic_node_dataset(seed: int = 0, num_classes: int = 3,
                            size_per_class: int = 40) -> Dataset:
    """Same-class edges dominate; the node-edge path suffices here."""
    g, labels = planted_partition(num_classes, size_per_class,
                                  p_intra=0.16, p_inter=0.02, seed=seed)
    tris = enumerate_triangles(g.num_nodes, g.edges)
    if len(tris) < 2:
        raise RuntimeError("generator produced too few triangles; adjust probabilities")
    cc = lift_graph(g, with_triangles=True, with_global=True)
    x = class_features(labels, num_classes, signal=1.0, noise=1.6, extra_dims=2,
                       seed=seed)
    return Dataset(
        kind="node_task",
        complexes=[cc],
        features=[x],
        labels=labels,
        num_classes=num_classes,
    )


def ablation_config(dataset: Dataset, path, use_skips: bool = True,
                    hidden: int = ABLATION_HIDDEN) -> TopoUNetConfig:
    """Canonical model configuration for the bundled ablation experiment.

    Refinement-free transports keep the relu chain short enough that the deep
    global-cell path still optimizes reliably at desk scale.
    """
    d0 = dataset.features[0].shape[1]
    return TopoUNetConfig(
        path=tuple(path),
        dims=(d0,) + (hidden,) * (len(path) - 1),
        transport="normalized_incidence",
        refinement=RefinementSpec(kind="none"),
        bottleneck=RefinementSpec(kind="none"),
        use_skips=use_skips,
        head="node_classify",
        head_out_dim=dataset.num_classes,
        dropout=0.0,
        seed=0,
    )


def toy_hypergraph() -> HypergraphInput:
    """Three pairwise overlapping hyperedges over five vertices."""
    return HypergraphInput(5, [{0, 1, 2}, {2, 3}, {0, 3, 4}])


def toy_grid_images(height: int, width: int, count: int, seed: int = 0) -> np.ndarray:
    """Smooth low-frequency images, shape (count, height*width, 1)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 8)))
    ys, xs = np.mgrid[0:height, 0:width]
    images = []
    for _ in range(count):
        img = np.zeros((height, width))
        for _ in range(3):
            fy, fx = rng.uniform(0.2, 1.2, size=2)
            py, px = rng.uniform(0, 2 * np.pi, size=2)
            img += rng.uniform(0.3, 1.0) * np.sin(fy * ys + py) * np.cos(fx * xs + px)
        img = (img - img.min()) / (img.max() - img.min() + 1e-12)
        images.append(img.reshape(-1, 1))
    return np.stack(images)


def random_test_complex(rng: np.random.Generator, max_cells_per_rank: int = 12):
    """Small random lifted complex plus a usable rank path starting at rank 0.

    Used by the equivariance, structural-compatibility, and gradient suites.
    """
    while True:
        n = int(rng.integers(4, 9))
        p = rng.uniform(0.35, 0.75)
        edges = [
            (u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p
        ]
        g = GraphInput(n, edges)
        if not g.edges:
            continue
        tris = enumerate_triangles(n, g.edges)
        with_global = len(tris) >= 2 and bool(rng.integers(0, 2))
        cc = lift_graph(g, with_triangles=bool(tris), with_global=with_global)
        if any(cc.num_cells(r) > max_cells_per_rank for r in cc.ranks):
            continue
        ranks = [r for r in cc.ranks if r > 0]
        if not ranks:
            continue
        keep = [r for r in ranks if rng.random() < 0.8]
        path = (0,) + tuple(keep if keep else ranks[:1])
        return cc, path


def random_permutations(cc: CombinatorialComplex, rng: np.random.Generator) -> dict:
    return {r: list(rng.permutation(cc.num_cells(r))) for r in cc.ranks}
