"""Combinatorial complexes, incidence/adjacency operators, and rank-path analysis.

A combinatorial complex stores nonempty vertex subsets ("cells") grouped by an
integer rank, with rank 0 reserved for the vertex singletons and containment
monotone in rank.  Incidence matrices between two ranks encode strict
containment of lower-rank cells in higher-rank cells and are the transport
operators used by the network layers; adjacency operators derived from them
connect same-rank cells through a shared cell at another rank.
"""
from __future__ import annotations

import json
import math
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

Cell = frozenset

RAW = "raw"
MEAN = "row_mean_down_col_mean_up"
NORMALIZATIONS = (RAW, MEAN)


class SparseMatrix:
    """Immutable sparse matrix held as (row, col, value) triplets in (i, j) order.

    Products and applications are delegated to a cached CSR view; the triplet
    form is the canonical serialization (triplets sorted by row then column).
    """

    def __init__(self, shape, rows, cols, vals):
        self.shape = (int(shape[0]), int(shape[1]))
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have equal length")
        order = np.lexsort((cols, rows))
        self.rows = rows[order]
        self.cols = cols[order]
        self.vals = vals[order]
        self._csr = None

    @classmethod
    def from_triplets(cls, shape, triplets):
        rows = [t[0] for t in triplets]
        cols = [t[1] for t in triplets]
        vals = [t[2] for t in triplets]
        return cls(shape, rows, cols, vals)

    @classmethod
    def from_dense(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        rows, cols = np.nonzero(arr)
        return cls(arr.shape, rows, cols, arr[rows, cols])

    @property
    def nnz(self):
        return len(self.vals)

    def csr(self):
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.vals, (self.rows, self.cols)), shape=self.shape
            )
        return self._csr

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        out[self.rows, self.cols] = self.vals
        return out

    def apply(self, x: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Return self @ x, or self.T @ x when ``transpose`` is set."""
        x = np.asarray(x, dtype=np.float64)
        m = self.csr().T if transpose else self.csr()
        if m.shape[1] != x.shape[0]:
            raise ValueError(
                f"shape mismatch: operator {m.shape} applied to {x.shape}"
            )
        return np.asarray(m @ x)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix((self.shape[1], self.shape[0]), self.cols, self.rows, self.vals)

    def matmul(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"shape mismatch: {self.shape} @ {other.shape}")
        prod = (self.csr() @ other.csr()).tocoo()
        prod.eliminate_zeros()
        return SparseMatrix(prod.shape, prod.row, prod.col, prod.data)

    def scale_rows(self, factors: np.ndarray) -> "SparseMatrix":
        factors = np.asarray(factors, dtype=np.float64)
        return SparseMatrix(self.shape, self.rows, self.cols, self.vals * factors[self.rows])

    def scale_cols(self, factors: np.ndarray) -> "SparseMatrix":
        factors = np.asarray(factors, dtype=np.float64)
        return SparseMatrix(self.shape, self.rows, self.cols, self.vals * factors[self.cols])

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.shape[0])
        np.add.at(out, self.rows, self.vals)
        return out

    def col_sums(self) -> np.ndarray:
        out = np.zeros(self.shape[1])
        np.add.at(out, self.cols, self.vals)
        return out

    def triplets(self):
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.vals)]

    def same_pattern(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
        )

    def allclose(self, other: "SparseMatrix", tol: float = 0.0) -> bool:
        return self.shape == other.shape and np.allclose(
            self.to_dense(), other.to_dense(), atol=tol, rtol=0.0
        )

    def to_dict(self):
        return {"shape": list(self.shape), "triplets": [[i, j, v] for i, j, v in self.triplets()]}

    @classmethod
    def from_dict(cls, d):
        return cls.from_triplets(tuple(d["shape"]), d["triplets"])

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _canonical_cell(cell: Iterable[int]) -> Cell:
    c = frozenset(int(v) for v in cell)
    return c


def _sort_key(cell: Cell):
    return tuple(sorted(cell))


class CombinatorialComplex:
    """Ranked collection of vertex-subset cells over ``vertex_count`` vertices.

    Cells within a rank keep the order they were constructed with; the
    canonical constructors sort lexicographically by vertex set so that equal
    inputs serialize identically.  Instances are immutable and safe to share
    across workers.
    """

    def __init__(self, vertex_count: int, cells_by_rank: Mapping[int, Sequence[Iterable[int]]],
                 sort_cells: bool = True):
        if vertex_count < 0:
            raise ValueError("vertex_count must be nonnegative")
        self.vertex_count = int(vertex_count)
        by_rank = {}
        for rank, cells in cells_by_rank.items():
            rank = int(rank)
            cells = [_canonical_cell(c) for c in cells]
            if sort_cells:
                cells.sort(key=_sort_key)
            by_rank[rank] = tuple(cells)
        self._cells = {r: by_rank[r] for r in sorted(by_rank)}
        self._index_cache: dict[int, dict[Cell, int]] = {}

    @classmethod
    def from_cells(cls, vertex_count: int,
                   higher_cells: Mapping[int, Sequence[Iterable[int]]] | None = None
                   ) -> "CombinatorialComplex":
        """Build a complex whose rank-0 cells are the vertex singletons."""
        cells = {0: [{v} for v in range(vertex_count)]}
        for rank, cs in (higher_cells or {}).items():
            if int(rank) == 0:
                raise ValueError("rank 0 is reserved for vertex singletons")
            cells[int(rank)] = list(cs)
        return cls(vertex_count, cells)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Active ranks in increasing order."""
        return tuple(r for r in self._cells if self._cells[r])

    @property
    def dim(self) -> int:
        return max(self.ranks)

    def cells(self, rank: int) -> tuple[Cell, ...]:
        return self._cells.get(rank, ())

    def num_cells(self, rank: int) -> int:
        return len(self._cells.get(rank, ()))

    def has_rank(self, rank: int) -> bool:
        return self.num_cells(rank) > 0

    def cell_index(self, rank: int) -> dict[Cell, int]:
        if rank not in self._index_cache:
            self._index_cache[rank] = {c: i for i, c in enumerate(self.cells(rank))}
        return self._index_cache[rank]

    def reindex(self, permutations: Mapping[int, Sequence[int]]):
        """Reorder cells per rank; ``permutations[r][i]`` is the old index of
        the cell placed at new position ``i``.

        Incidence matrices rebuilt from the result equal ``P_r B P_{r'}^T``
        where ``P_r[i, permutations[r][i]] = 1``.  Returns the new complex and
        the applied permutation record (identity for unlisted ranks).
        """
        record = {}
        new_cells = {}
        for rank, cells in self._cells.items():
            perm = permutations.get(rank)
            if perm is None:
                perm = tuple(range(len(cells)))
            else:
                perm = tuple(int(p) for p in perm)
                if sorted(perm) != list(range(len(cells))):
                    raise ValueError(
                        f"permutation for rank {rank} is not a bijection on "
                        f"[0, {len(cells)})"
                    )
            record[rank] = perm
            new_cells[rank] = [cells[p] for p in perm]
        extra = set(permutations) - set(self._cells)
        if extra:
            raise ValueError(f"permutation given for inactive rank {sorted(extra)[0]}")
        return CombinatorialComplex(self.vertex_count, new_cells, sort_cells=False), record

    def same_structure(self, other: "CombinatorialComplex") -> bool:
        return (
            self.vertex_count == other.vertex_count
            and self._cells == other._cells
        )

    def to_dict(self):
        return {
            "vertex_count": self.vertex_count,
            "cells": {str(r): [sorted(c) for c in cs] for r, cs in self._cells.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d) -> "CombinatorialComplex":
        cells = {int(r): cs for r, cs in d["cells"].items()}
        return cls(d["vertex_count"], cells, sort_cells=False)

    @classmethod
    def from_json(cls, text: str) -> "CombinatorialComplex":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        counts = " ".join(f"n{r}={self.num_cells(r)}" for r in self.ranks)
        return f"CombinatorialComplex({counts})"


class Cochain:
    """Feature matrix with one row per cell of a fixed rank."""

    def __init__(self, rank: int, data: np.ndarray, cc: CombinatorialComplex | None = None):
        self.rank = int(rank)
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("cochain data must be a 2-D matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cochain data must be finite")
        if cc is not None and self.data.shape[0] != cc.num_cells(rank):
            raise ValueError(
                f"cochain at rank {rank} has {self.data.shape[0]} rows but the "
                f"complex has {cc.num_cells(rank)} cells"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def feature_dim(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"Cochain(rank={self.rank}, shape={self.shape})"


def validate_complex(cc: CombinatorialComplex) -> list[str]:
    """Check the complex axioms; returns a list of violation messages.

    An empty list means the complex is valid.  Violations name the offending
    cells or ranks; they are data, not exceptions.
    """
    violations = []
    singles = {frozenset([v]) for v in range(cc.vertex_count)}
    rank0 = set(cc.cells(0))
    for v in sorted(singles - rank0, key=_sort_key):
        violations.append(f"rank 0 is missing singleton {sorted(v)}")
    for c in sorted(rank0 - singles, key=_sort_key):
        violations.append(f"rank 0 contains non-singleton or out-of-range cell {sorted(c)}")

    all_ranks = sorted(r for r in cc._cells)
    for rank in all_ranks:
        if rank < 0:
            violations.append(f"negative rank {rank}")
        seen = {}
        for cell in cc.cells(rank):
            if not cell:
                violations.append(f"empty cell at rank {rank}")
                continue
            if any(v < 0 or v >= cc.vertex_count for v in cell):
                violations.append(f"cell {sorted(cell)} at rank {rank} has out-of-range vertices")
            if cell in seen:
                violations.append(f"duplicate cell {sorted(cell)} at rank {rank}")
            seen[cell] = True

    # Containment monotonicity: x subseteq y requires rank(x) <= rank(y).
    for ri in all_ranks:
        for rj in all_ranks:
            if rj >= ri:
                continue
            for x in cc.cells(ri):
                for y in cc.cells(rj):
                    if x <= y:
                        violations.append(
                            "containment monotonicity: "
                            f"{sorted(x)} (rank {ri}) is contained in {sorted(y)} (rank {rj})"
                        )
    return violations


class IncidenceOperator:
    """Strict-containment incidence between a lower and an upper rank.

    In ``raw`` mode both directions use the 0/1 matrix B (down) and its
    transpose (up).  In mean-normalized mode the downward matrix averages each
    lower cell over its incident upper cells (row-normalized B) and the upward
    matrix averages each upper cell over its incident lower cells
    (column-normalized B, transposed); the sparsity pattern is unchanged.
    """

    def __init__(self, lower_rank: int, upper_rank: int, pattern: SparseMatrix,
                 normalization: str = RAW):
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {normalization!r}")
        self.lower_rank = lower_rank
        self.upper_rank = upper_rank
        self.pattern = pattern
        self.normalization = normalization

    @property
    def shape(self):
        return self.pattern.shape

    def down_matrix(self) -> SparseMatrix:
        """Matrix of shape (n_lower, n_upper) applied to upper-rank cochains."""
        if self.normalization == RAW:
            return self.pattern
        deg = self.pattern.row_sums()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return self.pattern.scale_rows(inv)

    def up_matrix(self) -> SparseMatrix:
        """Matrix of shape (n_upper, n_lower) applied to lower-rank cochains."""
        if self.normalization == RAW:
            return self.pattern.transpose()
        deg = self.pattern.col_sums()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return self.pattern.scale_cols(inv).transpose()

    def apply_up(self, x: np.ndarray) -> np.ndarray:
        return self.up_matrix().apply(x)

    def apply_down(self, x: np.ndarray) -> np.ndarray:
        return self.down_matrix().apply(x)

    def to_dict(self):
        d = self.pattern.to_dict()
        d.update(
            lower_rank=self.lower_rank,
            upper_rank=self.upper_rank,
            normalization=self.normalization,
        )
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower_rank"], d["upper_rank"], SparseMatrix.from_dict(d),
                   d.get("normalization", RAW))

    def __repr__(self):
        return (f"IncidenceOperator(B_{{{self.lower_rank},{self.upper_rank}}}, "
                f"shape={self.shape}, nnz={self.pattern.nnz}, {self.normalization})")


class AdjacencyOperator:
    """Same-rank adjacency through a shared cell at ``via_rank`` (B B^T or B^T B)."""

    def __init__(self, rank: int, via_rank: int, matrix: SparseMatrix):
        self.rank = rank
        self.via_rank = via_rank
        self.matrix = matrix

    @property
    def shape(self):
        return self.matrix.shape

    def to_dict(self):
        d = self.matrix.to_dict()
        d.update(rank=self.rank, via_rank=self.via_rank)
        return d

    def __repr__(self):
        return f"AdjacencyOperator(A_{{{self.rank}|{self.via_rank}}}, shape={self.shape})"


def _require_active(cc: CombinatorialComplex, rank: int):
    if not cc.has_rank(rank):
        raise ValueError(f"rank {rank} is not active in the complex")


def incidence(cc: CombinatorialComplex, lower_rank: int, upper_rank: int,
              normalization: str = RAW) -> IncidenceOperator:
    """Incidence operator between two active ranks, lower_rank < upper_rank.

    Entry (i, j) is nonzero iff the i-th lower cell is a strict subset of the
    j-th upper cell.
    """
    if lower_rank >= upper_rank:
        raise ValueError(f"lower_rank {lower_rank} must be below upper_rank {upper_rank}")
    _require_active(cc, lower_rank)
    _require_active(cc, upper_rank)
    lower = cc.cells(lower_rank)
    upper = cc.cells(upper_rank)
    index = cc.cell_index(lower_rank)
    rows, cols = [], []
    n_lower = len(lower)
    for j, y in enumerate(upper):
        # Enumerating subsets beats scanning all lower cells for small y.
        if 2 ** len(y) <= 4 * n_lower:
            members = sorted(y)
            for sub in _proper_subsets(members):
                i = index.get(sub)
                if i is not None:
                    rows.append(i)
                    cols.append(j)
        else:
            for i, x in enumerate(lower):
                if x < y:
                    rows.append(i)
                    cols.append(j)
    pattern = SparseMatrix((n_lower, len(upper)), rows, cols, np.ones(len(rows)))
    return IncidenceOperator(lower_rank, upper_rank, pattern, normalization)


def _proper_subsets(members):
    n = len(members)
    for mask in range(1, (1 << n) - 1):
        yield frozenset(members[k] for k in range(n) if mask >> k & 1)


def adjacency(cc: CombinatorialComplex, rank: int, via_rank: int) -> AdjacencyOperator:
    """Adjacency of rank ``rank`` cells through shared ``via_rank`` cells.

    For via_rank > rank this is B_{rank,via} B^T; for via_rank < rank it is
    B_{via,rank}^T B_{via,rank}.  Entries count shared cells; the diagonal is
    kept.
    """
    if rank == via_rank:
        raise ValueError("rank and via_rank must differ")
    _require_active(cc, rank)
    _require_active(cc, via_rank)
    if via_rank > rank:
        b = incidence(cc, rank, via_rank).pattern
        mat = b.matmul(b.transpose())
    else:
        b = incidence(cc, via_rank, rank).pattern
        mat = b.transpose().matmul(b)
    return AdjacencyOperator(rank, via_rank, mat)


class RankPath:
    """Strictly increasing sequence of active ranks bound to a complex."""

    def __init__(self, cc: CombinatorialComplex, ranks: Sequence[int]):
        ranks = tuple(int(r) for r in ranks)
        if not ranks:
            raise ValueError("rank path must contain at least one rank")
        if any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise ValueError(f"rank path {ranks} is not strictly increasing")
        for r in ranks:
            _require_active(cc, r)
        self.cc = cc
        self.ranks = ranks

    @property
    def depth(self) -> int:
        """Number of upward transport steps (L)."""
        return len(self.ranks) - 1

    @property
    def cell_counts(self) -> tuple[int, ...]:
        return tuple(self.cc.num_cells(r) for r in self.ranks)

    @property
    def support_ratios(self) -> tuple[Fraction, ...]:
        counts = self.cell_counts
        return tuple(Fraction(b, a) for a, b in zip(counts, counts[1:]))

    @property
    def rho_bot(self) -> Fraction:
        counts = self.cell_counts
        return Fraction(counts[-1], counts[0])

    def __repr__(self):
        return f"RankPath({'<'.join(map(str, self.ranks))})"


class SupportProfile:
    """Per-rank cell counts and support ratios along a rank path."""

    def __init__(self, path: RankPath):
        self.ranks = path.ranks
        self.cell_counts = path.cell_counts
        self.ratios = path.support_ratios
        self.rho_bot = path.rho_bot

    def rows(self):
        """(rank, n_cells, ratio-to-next) tuples; the last ratio is None."""
        ratios = list(self.ratios) + [None]
        return [
            (r, n, ratios[i])
            for i, (r, n) in enumerate(zip(self.ranks, self.cell_counts))
        ]


def support_profile(cc: CombinatorialComplex, path: RankPath | Sequence[int]) -> SupportProfile:
    if not isinstance(path, RankPath):
        path = RankPath(cc, path)
    elif path.cc is not cc:
        path = RankPath(cc, path.ranks)
    return SupportProfile(path)


def min_bottleneck_width(d0: int, path: RankPath) -> int:
    """Smallest bottleneck feature width not ruled out for exact reconstruction.

    For a compressive path this is ceil(d0 / rho_bot) = ceil(d0 n_{s_0} / n_{s_L});
    a non-compressive path (rho_bot >= 1) needs no inflation and returns d0.
    """
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    rho = path.rho_bot
    if rho >= 1:
        return d0
    n0, nl = path.cell_counts[0], path.cell_counts[-1]
    return -(-d0 * n0 // nl)


def reindex(cc: CombinatorialComplex, permutations: Mapping[int, Sequence[int]]):
    """Functional wrapper around :meth:`CombinatorialComplex.reindex`."""
    return cc.reindex(permutations)


def permutation_matrix(perm: Sequence[int]) -> np.ndarray:
    """Dense P with P[i, perm[i]] = 1, matching the reindex convention."""
    n = len(perm)
    p = np.zeros((n, n))
    p[np.arange(n), list(perm)] = 1.0
    return p
