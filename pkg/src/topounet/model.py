"""Rank-path encoder-decoder networks over combinatorial complexes.

The encoder transports features upward along a strictly increasing rank path
via incidence operators, a bottleneck map acts at the top rank, and the
decoder transports back down, optionally merging encoder features at matched
ranks (skip connections).  Four transport parameterizations are available:
plain incidence convolution, its degree-normalized variant, attention over
incident sets, and sigmoid-gated incidence.  All of them touch the incidence
structure only through shared weights, so the whole forward map is
equivariant to joint reindexing of cells.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .complexes import (
    MEAN,
    RAW,
    Cochain,
    CombinatorialComplex,
    IncidenceOperator,
    SparseMatrix,
    adjacency,
    incidence,
)

TRANSPORT_KINDS = ("incidence_conv", "normalized_incidence", "attention", "gated")
REFINEMENT_KINDS = ("none", "pointwise_mlp", "same_rank_message_passing")
HEAD_KINDS = ("node_classify", "graph_classify_mean_pool", "reconstruct")
MERGE_KINDS = ("additive",)


@dataclass(frozen=True)
class TransportSpec:
    """One directed transport step between two consecutive path ranks."""

    kind: str
    direction: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in TRANSPORT_KINDS:
            raise ValueError(f"unknown transport kind {self.kind!r}")
        if self.direction not in ("up", "down"):
            raise ValueError(f"transport direction must be 'up' or 'down', got {self.direction!r}")


@dataclass(frozen=True)
class RefinementSpec:
    """Support-preserving update at a fixed rank."""

    kind: str = "pointwise_mlp"
    hidden_dim: int = 64
    via_rank: int | None = None

    def __post_init__(self):
        if self.kind not in REFINEMENT_KINDS:
            raise ValueError(f"unknown refinement kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "hidden_dim": self.hidden_dim, "via_rank": self.via_rank}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "hidden_dim", "via_rank"}
        if unknown:
            raise ValueError(f"unknown refinement keys {sorted(unknown)}")
        return cls(**d)


def _as_refinement(value) -> RefinementSpec:
    if isinstance(value, RefinementSpec):
        return value
    if isinstance(value, str):
        return RefinementSpec(kind=value)
    if isinstance(value, dict):
        return RefinementSpec.from_dict(value)
    raise ValueError(f"cannot interpret refinement {value!r}")


@dataclass
class TopoUNetConfig:
    """Full architecture description; serializes verbatim to/from JSON."""

    path: Sequence[int]
    dims: Sequence[int]
    transport: Sequence[str] | str = "normalized_incidence"
    refinement: Sequence | RefinementSpec | str = RefinementSpec()
    use_skips: bool = True
    merge: str = "additive"
    bottleneck: RefinementSpec | str | dict = RefinementSpec()
    head: str = "node_classify"
    head_out_dim: int = 1
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.path = tuple(int(r) for r in self.path)
        self.dims = tuple(int(d) for d in self.dims)
        if not self.path:
            raise ValueError("path must contain at least one rank")
        if any(b <= a for a, b in zip(self.path, self.path[1:])):
            raise ValueError(f"path {self.path} is not strictly increasing")
        if len(self.dims) != len(self.path):
            raise ValueError(
                f"dims length {len(self.dims)} must equal path length {len(self.path)}"
            )
        if any(d < 1 for d in self.dims):
            raise ValueError("feature dimensions must be positive")
        steps = len(self.path) - 1
        if isinstance(self.transport, str):
            self.transport = (self.transport,) * steps
        else:
            self.transport = tuple(self.transport)
        if len(self.transport) != steps:
            raise ValueError(f"need {steps} transport kinds, got {len(self.transport)}")
        for kind in self.transport:
            if kind not in TRANSPORT_KINDS:
                raise ValueError(f"unknown transport kind {kind!r}")
        if isinstance(self.refinement, (RefinementSpec, str, dict)):
            self.refinement = (_as_refinement(self.refinement),) * len(self.path)
        else:
            self.refinement = tuple(_as_refinement(r) for r in self.refinement)
        if len(self.refinement) != len(self.path):
            raise ValueError(
                f"need one refinement per level ({len(self.path)}), got {len(self.refinement)}"
            )
        self.bottleneck = _as_refinement(self.bottleneck)
        if self.merge not in MERGE_KINDS:
            raise ValueError(f"unknown merge {self.merge!r}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"unknown head {self.head!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def depth(self) -> int:
        return len(self.path) - 1

    def transport_specs(self, step: int) -> tuple[TransportSpec, TransportSpec]:
        """(upward, downward) specs for encoder/decoder step ``step``."""
        kind = self.transport[step]
        d_lo, d_hi = self.dims[step], self.dims[step + 1]
        return (
            TransportSpec(kind, "up", d_lo, d_hi),
            TransportSpec(kind, "down", d_hi, d_lo),
        )

    def to_dict(self):
        return {
            "path": list(self.path),
            "dims": list(self.dims),
            "transport": list(self.transport),
            "refinement": [r.to_dict() for r in self.refinement],
            "use_skips": self.use_skips,
            "merge": self.merge,
            "bottleneck": self.bottleneck.to_dict(),
            "head": self.head,
            "head_out_dim": self.head_out_dim,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {
            "path", "dims", "transport", "refinement", "use_skips", "merge",
            "bottleneck", "head", "head_out_dim", "dropout", "seed",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


class TransportOperator:
    """Matrices one incidence relation contributes to a transport step."""

    def __init__(self, inc: IncidenceOperator):
        self.lower_rank = inc.lower_rank
        self.upper_rank = inc.upper_rank
        self.pattern = inc.pattern
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def raw_down(self) -> SparseMatrix:
        return self.pattern

    @property
    def raw_up(self) -> SparseMatrix:
        return self._get("raw_up", self.pattern.transpose)

    @property
    def mean_down(self) -> SparseMatrix:
        def build():
            deg = self.pattern.row_sums()
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            return self.pattern.scale_rows(inv)

        return self._get("mean_down", build)

    @property
    def mean_up(self) -> SparseMatrix:
        def build():
            deg = self.pattern.col_sums()
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            return self.pattern.scale_cols(inv).transpose()

        return self._get("mean_up", build)

    @property
    def dense_pattern(self) -> np.ndarray:
        return self._get("dense", self.pattern.to_dense)


def _masked_shift(scores: np.ndarray, pattern: np.ndarray, axis: int) -> np.ndarray:
    """Largest supported score per row/column, as a detached stability shift.

    Softmax is invariant to per-group shifts, so subtracting a constant leaves
    both values and gradients unchanged.
    """
    masked = np.where(pattern > 0, scores, -np.inf)
    shift = masked.max(axis=axis, keepdims=True)
    return np.where(np.isfinite(shift), shift, 0.0)


def _incidence_scores(x: Tensor, summary: Tensor, att_src: Tensor, att_ctx: Tensor,
                      sources_on_rows: bool) -> Tensor:
    """Shared linear score per incidence pair from source features and a
    per-target incident-set summary."""
    s_src = ad.matmul(x, att_src)
    s_ctx = ad.matmul(summary, att_ctx)
    if sources_on_rows:
        return ad.add(s_src, ad.transpose(s_ctx))
    return ad.add(s_ctx, ad.transpose(s_src))


def _attention_weights(scores: Tensor, pattern: np.ndarray, axis: int) -> Tensor:
    shifted = ad.sub(scores, _masked_shift(scores.data, pattern, axis))
    weights = ad.mul(ad.exp(shifted), pattern)
    den = ad.tsum(weights, axis=axis)
    empty = (pattern.sum(axis=axis, keepdims=True) == 0).astype(np.float64)
    return ad.div(weights, ad.add(den, empty))


def transport_up(kind: str, op: TransportOperator | IncidenceOperator, x: Tensor,
                 weight: Tensor, att_src: Tensor | None = None,
                 att_ctx: Tensor | None = None, phi: str = "relu") -> Tensor:
    """Move a lower-rank cochain to the upper rank of ``op``."""
    if isinstance(op, IncidenceOperator):
        op = TransportOperator(op)
    x = ad._as_tensor(x)
    if kind == "incidence_conv":
        agg = ad.sparse_matmul(op.raw_up, x)
    elif kind == "normalized_incidence":
        agg = ad.sparse_matmul(op.mean_up, x)
    elif kind in ("attention", "gated"):
        pattern = op.dense_pattern
        summary = ad.sparse_matmul(op.mean_up, x)
        scores = _incidence_scores(x, summary, att_src, att_ctx, sources_on_rows=True)
        if kind == "attention":
            weights = _attention_weights(scores, pattern, axis=0)
        else:
            weights = ad.mul(ad.sigmoid(scores), pattern)
        agg = ad.matmul(ad.transpose(weights), x)
    else:
        raise ValueError(f"unknown transport kind {kind!r}")
    return ad.pointwise(ad.matmul(agg, weight), phi)


def transport_down(kind: str, op: TransportOperator | IncidenceOperator, x: Tensor,
                   weight: Tensor, att_src: Tensor | None = None,
                   att_ctx: Tensor | None = None, phi: str = "relu") -> Tensor:
    """Move an upper-rank cochain to the lower rank of ``op``."""
    if isinstance(op, IncidenceOperator):
        op = TransportOperator(op)
    x = ad._as_tensor(x)
    if kind == "incidence_conv":
        agg = ad.sparse_matmul(op.raw_down, x)
    elif kind == "normalized_incidence":
        agg = ad.sparse_matmul(op.mean_down, x)
    elif kind in ("attention", "gated"):
        pattern = op.dense_pattern
        summary = ad.sparse_matmul(op.mean_down, x)
        scores = _incidence_scores(x, summary, att_src, att_ctx, sources_on_rows=False)
        if kind == "attention":
            weights = _attention_weights(scores, pattern, axis=1)
        else:
            weights = ad.mul(ad.sigmoid(scores), pattern)
        agg = ad.matmul(weights, x)
    else:
        raise ValueError(f"unknown transport kind {kind!r}")
    return ad.pointwise(ad.matmul(agg, weight), phi)


class BoundOperators:
    """Incidence and refinement operators for one (config, complex) pair."""

    def __init__(self, config: TopoUNetConfig, cc: CombinatorialComplex):
        for rank in config.path:
            if cc.num_cells(rank) == 0:
                raise ValueError(f"path rank {rank} has zero cells in the complex")
        self.cc = cc
        self.steps = [
            TransportOperator(incidence(cc, lo, hi, RAW))
            for lo, hi in zip(config.path, config.path[1:])
        ]
        self.refine_adjacency: dict[int, SparseMatrix | None] = {}
        for level, rank in enumerate(config.path):
            specs = [config.refinement[level]]
            if level == config.depth:
                specs.append(config.bottleneck)
            needs = [s for s in specs if s.kind == "same_rank_message_passing"]
            if needs:
                via = needs[0].via_rank
                if via is None:
                    via = self._default_via(config, level)
                adj = adjacency(cc, rank, via).matrix
                deg = adj.row_sums()
                inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
                self.refine_adjacency[level] = adj.scale_rows(inv)

    def _default_via(self, config: TopoUNetConfig, level: int) -> int:
        rank = config.path[level]
        if level < config.depth:
            return config.path[level + 1]
        if config.path[0] != rank:
            return config.path[0]
        for r in self.cc.ranks:
            if r != rank:
                return r
        raise ValueError(
            f"message-passing refinement at rank {rank} needs another active rank"
        )


@dataclass
class ModelState:
    """Intermediate cochain tensors of one forward pass."""

    cc: CombinatorialComplex
    encoder: list[Tensor] = field(default_factory=list)
    decoder_pre: dict[int, Tensor] = field(default_factory=dict)
    decoder: dict[int, Tensor] = field(default_factory=dict)


class TopoUNet:
    """The model: parameters are bound to the config; operators are built per
    complex on first use and cached."""

    def __init__(self, config: TopoUNetConfig):
        self.config = config
        self.params = ParameterStore(seed=config.seed)
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
        self._bound: dict[int, BoundOperators] = {}
        self._bound_refs: list[CombinatorialComplex] = []
        self._build_params()

    def reset_dropout_rng(self, seed: int | None = None):
        entropy = (self.config.seed if seed is None else int(seed), 1)
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence(entropy))

    # -- parameter construction -------------------------------------------

    def _build_params(self):
        cfg = self.config
        p = self.params
        for i in range(cfg.depth):
            up, _ = cfg.transport_specs(i)
            p.add(f"enc{i}.up.W", (up.in_dim, up.out_dim))
            if up.kind in ("attention", "gated"):
                p.add(f"enc{i}.up.att_src", (up.in_dim, 1))
                p.add(f"enc{i}.up.att_ctx", (up.in_dim, 1))
            self._add_refinement_params(f"phi{i + 1}", cfg.refinement[i + 1], cfg.dims[i + 1])
        self._add_refinement_params("omega", cfg.bottleneck, cfg.dims[-1])
        for i in reversed(range(cfg.depth)):
            _, down = cfg.transport_specs(i)
            p.add(f"dec{i}.down.W", (down.in_dim, down.out_dim))
            if down.kind in ("attention", "gated"):
                p.add(f"dec{i}.down.att_src", (down.in_dim, 1))
                p.add(f"dec{i}.down.att_ctx", (down.in_dim, 1))
            self._add_refinement_params(f"psi{i}", cfg.refinement[i], cfg.dims[i])
            if cfg.use_skips:
                p.add(f"merge{i}.W", (cfg.dims[i], cfg.dims[i]))
        d0 = cfg.dims[0]
        p.add("head.W", (d0, cfg.head_out_dim))
        p.add("head.b", (1, cfg.head_out_dim), init=ad.ZEROS)

    def _add_refinement_params(self, prefix: str, spec: RefinementSpec, dim: int):
        p = self.params
        if spec.kind == "pointwise_mlp":
            h = spec.hidden_dim
            p.add(f"{prefix}.W1", (dim, h))
            p.add(f"{prefix}.b1", (1, h), init=ad.ZEROS)
            p.add(f"{prefix}.W2", (h, dim))
            p.add(f"{prefix}.b2", (1, dim), init=ad.ZEROS)
        elif spec.kind == "same_rank_message_passing":
            p.add(f"{prefix}.Wn", (dim, dim))
            p.add(f"{prefix}.Ws", (dim, dim))
            p.add(f"{prefix}.b", (1, dim), init=ad.ZEROS)

    # -- operator binding ---------------------------------------------------

    def bind(self, cc: CombinatorialComplex) -> BoundOperators:
        key = id(cc)
        if key not in self._bound:
            self._bound[key] = BoundOperators(self.config, cc)
            self._bound_refs.append(cc)  # keep alive so ids stay unique
        return self._bound[key]

    # -- forward ------------------------------------------------------------

    def _refine(self, prefix: str, spec: RefinementSpec, x: Tensor,
                adjacency_matrix: SparseMatrix | None, training: bool) -> Tensor:
        if spec.kind == "none":
            return x
        p = self.params
        if spec.kind == "pointwise_mlp":
            h = ad.relu(ad.linear(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"]))
            h = ad.dropout(h, self.config.dropout, training, self.dropout_rng)
            return ad.linear(h, p[f"{prefix}.W2"], p[f"{prefix}.b2"])
        neighbor = ad.sparse_matmul(adjacency_matrix, x)
        h = ad.relu(
            ad.add(
                ad.add(ad.matmul(neighbor, p[f"{prefix}.Wn"]), ad.matmul(x, p[f"{prefix}.Ws"])),
                p[f"{prefix}.b"],
            )
        )
        return ad.dropout(h, self.config.dropout, training, self.dropout_rng)

    def _transport_params(self, name: str, kind: str):
        if kind in ("attention", "gated"):
            return self.params[f"{name}.att_src"], self.params[f"{name}.att_ctx"]
        return None, None

    def encode(self, cc: CombinatorialComplex, x: Cochain | Tensor | np.ndarray,
               training: bool = False) -> ModelState:
        """Run the upward pass; the returned state holds E_{s_0..s_L}."""
        cfg = self.config
        ops = self.bind(cc)
        if isinstance(x, Cochain):
            if x.rank != cfg.path[0]:
                raise ValueError(f"input rank {x.rank} != path start {cfg.path[0]}")
            x = Tensor(x.data)
        elif not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_shape("input", x, cc.num_cells(cfg.path[0]), cfg.dims[0])

        state = ModelState(cc=cc)
        state.encoder.append(x)
        for i in range(cfg.depth):
            up, _ = cfg.transport_specs(i)
            a_src, a_ctx = self._transport_params(f"enc{i}.up", up.kind)
            t = transport_up(up.kind, ops.steps[i], state.encoder[i],
                             self.params[f"enc{i}.up.W"], a_src, a_ctx)
            e = self._refine(f"phi{i + 1}", cfg.refinement[i + 1], t,
                             ops.refine_adjacency.get(i + 1), training)
            self._check_shape(f"encoder level {i + 1}", e,
                              cc.num_cells(cfg.path[i + 1]), cfg.dims[i + 1])
            state.encoder.append(e)
        return state

    def decode(self, state: ModelState, training: bool = False) -> ModelState:
        """Run the bottleneck and downward pass on an encoded state."""
        cfg = self.config
        cc = state.cc
        ops = self.bind(cc)
        d = self._refine("omega", cfg.bottleneck, state.encoder[-1],
                         ops.refine_adjacency.get(cfg.depth), training)
        self._check_shape("bottleneck", d, cc.num_cells(cfg.path[-1]), cfg.dims[-1])
        state.decoder[cfg.depth] = d

        for i in reversed(range(cfg.depth)):
            _, down = cfg.transport_specs(i)
            a_src, a_ctx = self._transport_params(f"dec{i}.down", down.kind)
            t = transport_down(down.kind, ops.steps[i], state.decoder[i + 1],
                               self.params[f"dec{i}.down.W"], a_src, a_ctx)
            pre = self._refine(f"psi{i}", cfg.refinement[i], t,
                               ops.refine_adjacency.get(i), training)
            self._check_shape(f"decoder level {i}", pre,
                              cc.num_cells(cfg.path[i]), cfg.dims[i])
            state.decoder_pre[i] = pre
            if cfg.use_skips:
                merged = ad.relu(
                    ad.matmul(ad.add(state.encoder[i], pre), self.params[f"merge{i}.W"])
                )
            else:
                merged = pre
            self._check_shape(f"merged level {i}", merged,
                              cc.num_cells(cfg.path[i]), cfg.dims[i])
            state.decoder[i] = merged
        return state

    def forward(self, cc: CombinatorialComplex, x: Cochain | Tensor | np.ndarray,
                training: bool = False) -> tuple[Cochain, ModelState]:
        state = self.decode(self.encode(cc, x, training), training)
        return Cochain(self.config.path[0], state.decoder[0].data, cc), state

    def output_tensor(self, cc, x, training: bool = False) -> tuple[Tensor, ModelState]:
        """Forward pass keeping the differentiable output tensor."""
        cfg = self.config
        _, state = self.forward(cc, x, training=training)
        return state.decoder[0], state

    @staticmethod
    def _check_shape(name: str, t: Tensor, n: int, d: int):
        if t.shape != (n, d):
            raise AssertionError(
                f"structural compatibility violated at {name}: "
                f"shape {t.shape} != ({n}, {d})"
            )

    # -- heads ----------------------------------------------------------------

    def head_apply(self, output: Tensor, labels=None, mask=None, targets=None):
        """Task head on the rank-s0 output; returns (predictions, loss tensor)."""
        cfg = self.config
        w, b = self.params["head.W"], self.params["head.b"]
        if cfg.head == "node_classify":
            logits = ad.linear(output, w, b)
            loss = ad.softmax_cross_entropy(logits, labels, mask)
            return logits.data.argmax(axis=1), loss
        if cfg.head == "graph_classify_mean_pool":
            logits = ad.linear(ad.mean_rows(output), w, b)
            loss = ad.softmax_cross_entropy(logits, np.asarray(labels).reshape(-1))
            return logits.data.argmax(axis=1), loss
        pred = ad.linear(output, w, b)
        return pred.data, ad.mse_loss(pred, targets)


def linear_capacity_probe(cc: CombinatorialComplex, path: Sequence[int], d0: int,
                          dL: int, seed: int = 0) -> dict:
    """Numerical rank of a linear, refinement-free encoder into the bottleneck.

    The composed map factors as (incidence chain) x (weight chain); its rank is
    the product of the two ranks (Kronecker structure), counted with singular
    values above 1e-8 relative to the largest.  Injectivity on rank-s0 cochains
    requires rank == n_{s_0} * d_0.
    """
    path = tuple(int(r) for r in path)
    n0 = cc.num_cells(path[0])
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))

    if len(path) == 1:
        # Identity path: the map is X @ W with W random (d0, dL).
        rank_w = _numerical_rank(rng.standard_normal((d0, dL)))
        encoder_rank = n0 * rank_w
        return {"injective": encoder_rank == n0 * d0, "encoder_rank": int(encoder_rank)}

    dims = [d0] + [max(d0, dL)] * (len(path) - 2) + [dL]
    chain = None
    for lo, hi in zip(path, path[1:]):
        up = incidence(cc, lo, hi, RAW).pattern.transpose()
        chain = up if chain is None else up.matmul(chain)
    w_chain = None
    for a, b in zip(dims, dims[1:]):
        w = rng.standard_normal((a, b))
        w_chain = w if w_chain is None else w_chain @ w
    rank_b = _numerical_rank(chain.to_dense())
    rank_w = _numerical_rank(w_chain)
    encoder_rank = rank_b * rank_w
    return {"injective": encoder_rank == n0 * d0, "encoder_rank": int(encoder_rank)}


def _numerical_rank(mat: np.ndarray, threshold: float = 1e-8) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > threshold * s[0]).sum())


def count_parameters(config: TopoUNetConfig, cc: CombinatorialComplex | None = None) -> int:
    """Exact number of trainable entries, head included."""
    return TopoUNet(config).params.num_parameters()
