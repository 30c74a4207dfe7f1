"""Release-gate property suite: lifting oracles, operator identities,
equivariance, gradient correctness, the capacity probe, and determinism.

Every check returns a :class:`CheckResult`; the CLI ``verify`` command prints
one line per check and exits nonzero naming the first failure.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .complexes import (
    CombinatorialComplex,
    RankPath,
    adjacency,
    incidence,
    permutation_matrix,
    support_profile,
    validate_complex,
)
from .lifting import GraphInput, GridInput, enumerate_triangles, lift_graph, lift_grid, lift_hypergraph
from .model import RefinementSpec, TopoUNet, TopoUNetConfig, linear_capacity_probe
from .synthetic import (
    heterophilic_node_dataset,
    random_permutations,
    random_test_complex,
    toy_hypergraph,
)
from .training import train

TRANSPORT_KINDS = ("incidence_conv", "normalized_incidence", "attention", "gated")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_grid_counts() -> CheckResult:
    cc = lift_grid(GridInput(28, 28))
    counts = (cc.num_cells(0), cc.num_cells(1), cc.num_cells(2))
    if counts != (784, 1512, 729):
        return CheckResult("grid-counts", False, f"28x28 gave {counts}")
    for h in range(2, 11):
        for w in range(2, 11):
            g = lift_grid(GridInput(h, w))
            expect = (h * w, h * (w - 1) + w * (h - 1), (h - 1) * (w - 1))
            got = (g.num_cells(0), g.num_cells(1), g.num_cells(2))
            if got != expect:
                return CheckResult("grid-counts", False, f"{h}x{w} gave {got}")
    rho = support_profile(cc, [0, 1, 2]).rho_bot
    if rho != Fraction(729, 784):
        return CheckResult("grid-counts", False, f"rho_bot {rho}")
    return CheckResult("grid-counts", True, "28x28 -> (784, 1512, 729), rho_bot 729/784")


def check_lifting_oracles(trials: int = 12, seed: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n = int(rng.integers(4, 20))
        edges = [
            (u, v) for u in range(n) for v in range(u + 1, n)
            if rng.random() < 0.3
        ]
        g = GraphInput(n, edges)
        got = enumerate_triangles(g.num_nodes, g.edges)
        es = {frozenset(e) for e in g.edges}
        brute = sorted(
            (a, b, c)
            for a in range(n)
            for b in range(a + 1, n)
            for c in range(b + 1, n)
            if {frozenset((a, b)), frozenset((a, c)), frozenset((b, c))} <= es
        )
        if got != brute:
            return CheckResult("lifting-oracles", False, f"triangle mismatch on n={n}")
        cc = lift_graph(g, with_triangles=True, with_global=len(got) >= 2)
        report = validate_complex(cc)
        if report:
            return CheckResult("lifting-oracles", False, report[0])
    h = toy_hypergraph()
    cc = lift_hypergraph(h)
    b = incidence(cc, 0, 1).pattern.to_dense()
    ordered = sorted(h.hyperedges, key=lambda e: tuple(sorted(e)))
    native = np.zeros((h.num_nodes, len(ordered)))
    for j, he in enumerate(ordered):
        for v in he:
            native[v, j] = 1.0
    if not np.array_equal(b, native):
        return CheckResult("lifting-oracles", False, "hypergraph incidence mismatch")
    return CheckResult("lifting-oracles", True, f"{trials} random graphs + hypergraph")


def check_operator_identities(trials: int = 15, seed: int = 101) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        cc, path = random_test_complex(rng)
        ranks = cc.ranks
        for lo in ranks:
            for hi in ranks:
                if lo >= hi:
                    continue
                inc = incidence(cc, lo, hi)
                dense = inc.pattern.to_dense()
                brute = np.zeros_like(dense)
                for i, x in enumerate(cc.cells(lo)):
                    for j, y in enumerate(cc.cells(hi)):
                        if x < y:
                            brute[i, j] = 1.0
                if not np.array_equal(dense, brute):
                    return CheckResult("operator-identities", False,
                                       f"incidence pattern B_{{{lo},{hi}}}")
                norm = incidence(cc, lo, hi, "row_mean_down_col_mean_up")
                if not norm.pattern.same_pattern(inc.pattern):
                    return CheckResult("operator-identities", False,
                                       "normalization changed the pattern")
                adj = adjacency(cc, lo, hi).matrix.to_dense()
                if not np.array_equal(adj, dense @ dense.T):
                    return CheckResult("operator-identities", False,
                                       f"adjacency A_{{{lo}|{hi}}}")
        prof = support_profile(cc, list(ranks))
        prod = Fraction(1)
        for r in prof.ratios:
            prod *= r
        if prof.rho_bot != prod:
            return CheckResult("operator-identities", False, "rho_bot != product of ratios")
        perms = random_permutations(cc, rng)
        cc2, record = cc.reindex(perms)
        for lo, hi in zip(ranks, ranks[1:]):
            b = incidence(cc, lo, hi).pattern.to_dense()
            b2 = incidence(cc2, lo, hi).pattern.to_dense()
            p_lo = permutation_matrix(record[lo])
            p_hi = permutation_matrix(record[hi])
            if not np.array_equal(b2, p_lo @ b @ p_hi.T):
                return CheckResult("operator-identities", False, "reindex conjugation")
    return CheckResult("operator-identities", True, f"{trials} random complexes")


def _random_model(rng, cc, path, kind, nudge=True):
    dims = tuple(int(rng.integers(2, 4)) for _ in path)
    refinement = str(rng.choice(["pointwise_mlp", "same_rank_message_passing", "none"]))
    config = TopoUNetConfig(
        path=path,
        dims=dims,
        transport=kind,
        refinement=RefinementSpec(kind=refinement, hidden_dim=3),
        bottleneck=RefinementSpec(kind="pointwise_mlp", hidden_dim=3),
        use_skips=bool(rng.integers(0, 2)),
        head="node_classify",
        head_out_dim=2,
        dropout=0.0,
        seed=int(rng.integers(0, 1000)),
    )
    model = TopoUNet(config)
    if nudge:
        for t in model.params.tensors():
            t.data = t.data + rng.normal(0.0, 0.05, t.shape)
    return model, dims


def check_equivariance(complexes: int = 50, seed: int = 102,
                       tolerance: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(complexes):
        cc, path = random_test_complex(rng)
        kind = TRANSPORT_KINDS[i % len(TRANSPORT_KINDS)]
        model, dims = _random_model(rng, cc, path, kind)
        x = rng.standard_normal((cc.num_cells(0), dims[0]))
        out, _ = model.forward(cc, x)
        perms = random_permutations(cc, rng)
        cc2, record = cc.reindex(perms)
        out2, _ = model.forward(cc2, x[list(record[0])])
        err = float(np.max(np.abs(out2.data - out.data[list(record[0])])))
        worst = max(worst, err)
        if err > tolerance:
            return CheckResult("equivariance", False,
                               f"complex {i} kind {kind}: max abs err {err:.2e}")
    return CheckResult("equivariance", True,
                       f"{complexes} complexes, all kinds, worst err {worst:.2e}")


def check_structural_compatibility(complexes: int = 50, seed: int = 103) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations = 0
    for i in range(complexes):
        cc, path = random_test_complex(rng)
        kind = TRANSPORT_KINDS[i % len(TRANSPORT_KINDS)]
        model, dims = _random_model(rng, cc, path, kind)
        x = rng.standard_normal((cc.num_cells(0), dims[0]))
        try:
            _, state = model.forward(cc, x)
        except AssertionError:
            violations += 1
            continue
        for level, rank in enumerate(model.config.path):
            if state.encoder[level].shape != (cc.num_cells(rank), dims[level]):
                violations += 1
            if state.decoder[level].shape != (cc.num_cells(rank), dims[level]):
                violations += 1
    if violations:
        return CheckResult("structural-compatibility", False, f"{violations} violations")
    return CheckResult("structural-compatibility", True, f"{complexes} forward passes clean")


def _numeric_grad(loss_fn, tensor, step=1e-6):
    grad = np.zeros_like(tensor.data)
    flat, gflat = tensor.data.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = loss_fn()
        flat[k] = orig - step
        lo = loss_fn()
        flat[k] = orig
        gflat[k] = (hi - lo) / (2 * step)
    return grad


def check_gradients(models: int = 10, seed: int = 104, rtol: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(models):
        cc, path = random_test_complex(rng, max_cells_per_rank=8)
        kind = TRANSPORT_KINDS[i % len(TRANSPORT_KINDS)]
        model, dims = _random_model(rng, cc, path, kind)
        x = rng.standard_normal((cc.num_cells(0), dims[0]))
        y = rng.integers(0, 2, size=cc.num_cells(0))

        def compute_loss():
            out, _ = model.output_tensor(cc, x)
            _, loss = model.head_apply(out, labels=y)
            return loss

        loss = compute_loss()
        model.params.zero_grad()
        backward(loss)
        for name in model.params.names():
            t = model.params[name]
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = _numeric_grad(lambda: compute_loss().item(), t)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
            err = float(np.max(np.abs(analytic - numeric) / denom))
            worst = max(worst, err)
            if err >= rtol:
                return CheckResult("gradients", False,
                                   f"model {i} ({kind}) parameter {name}: rel err {err:.2e}")
    return CheckResult("gradients", True, f"{models} toy models, worst rel err {worst:.2e}")


def check_capacity_probe(trials: int = 20, seed: int = 105) -> CheckResult:
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        cc, path = random_test_complex(rng)
        n0, nl = cc.num_cells(path[0]), cc.num_cells(path[-1])
        d0 = int(rng.integers(2, 5))
        dl_max = (n0 * d0 - 1) // nl
        if dl_max < 1:
            continue
        dl = int(rng.integers(1, dl_max + 1))
        probe = linear_capacity_probe(cc, path, d0=d0, dL=dl, seed=done)
        if probe["injective"]:
            return CheckResult("capacity-probe", False,
                               f"under-capacity encoder reported injective ({probe})")
        done += 1
    k3 = lift_graph(GraphInput(3, [(0, 1), (1, 2), (0, 2)]))
    witness = linear_capacity_probe(k3, (0, 1), d0=2, dL=2)
    if not witness["injective"]:
        return CheckResult("capacity-probe", False, f"witness not injective ({witness})")
    return CheckResult("capacity-probe", True,
                       f"{trials} under-capacity probes false, witness true")


def check_determinism(seed: int = 106) -> CheckResult:
    ds = heterophilic_node_dataset(seed=1, size_per_class=12, clique_size=4)
    from .synthetic import ablation_config

    config = ablation_config(ds, (0, 1, 2), use_skips=True, hidden=8)
    a = train(config, ds, epochs=8, seed=3)
    b = train(config, ds, epochs=8, seed=3)
    if a.metrics_tuple() != b.metrics_tuple():
        return CheckResult("determinism", False, "repeated run diverged")
    return CheckResult("determinism", True, "repeated training run bitwise identical")


ALL_CHECKS = (
    check_grid_counts,
    check_lifting_oracles,
    check_operator_identities,
    check_equivariance,
    check_structural_compatibility,
    check_gradients,
    check_capacity_probe,
    check_determinism,
)


def run_all_checks() -> list[CheckResult]:
    return [fn() for fn in ALL_CHECKS]
