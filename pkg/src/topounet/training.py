"""Dataset handling, training loops, metrics, and the ablation experiment matrix."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .complexes import CombinatorialComplex, RankPath
from .model import TopoUNet, TopoUNetConfig, count_parameters

DATASET_KINDS = ("node_task", "graph_task", "hypergraph_task", "reconstruction_task")


@dataclass
class Dataset:
    """Task data bound to one complex (transductive) or many (inductive).

    For node/hypergraph tasks ``features`` holds one rank-0 matrix and
    ``labels`` one entry per node.  Graph tasks carry one complex, feature
    matrix, and label per graph.  Reconstruction tasks share a single complex
    across ``features[i]`` images, with targets defaulting to the inputs.
    """

    kind: str
    complexes: list[CombinatorialComplex]
    features: list[np.ndarray]
    labels: np.ndarray | None = None
    targets: list[np.ndarray] | None = None
    num_classes: int | None = None
    masks: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        self.features = [np.asarray(f, dtype=np.float64) for f in self.features]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.num_classes is None:
                self.num_classes = int(self.labels.max()) + 1
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError("labels must lie in [0, num_classes)")
        if self.kind == "reconstruction_task" and self.targets is None:
            self.targets = self.features

    @property
    def num_examples(self) -> int:
        if self.kind in ("node_task", "hypergraph_task"):
            return len(self.labels)
        if self.kind == "graph_task":
            return len(self.complexes)
        return len(self.features)


def make_splits(dataset: Dataset, scheme: str = "random_percent", seed: int = 0,
                train: float = 0.6, val: float = 0.2, k: int = 10):
    """Deterministic splits; stratified by label for classification tasks.

    ``random_percent`` returns {"train", "val", "test"} index arrays;
    ``kfold`` returns a list of k fold index arrays.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 4)))
    n = dataset.num_examples
    labels = dataset.labels if dataset.kind != "reconstruction_task" else None
    if labels is not None and dataset.kind == "graph_task":
        labels = dataset.labels
    if scheme == "random_percent":
        if labels is None:
            perm = rng.permutation(n)
            n_tr, n_val = round(train * n), round(val * n)
            return {
                "train": np.sort(perm[:n_tr]),
                "val": np.sort(perm[n_tr:n_tr + n_val]),
                "test": np.sort(perm[n_tr + n_val:]),
            }
        parts = {"train": [], "val": [], "test": []}
        for c in range(dataset.num_classes):
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(len(idx))]
            n_tr = round(train * len(idx))
            n_val = round(val * len(idx))
            parts["train"].append(idx[:n_tr])
            parts["val"].append(idx[n_tr:n_tr + n_val])
            parts["test"].append(idx[n_tr + n_val:])
        return {k_: np.sort(np.concatenate(v)) for k_, v in parts.items()}
    if scheme == "kfold":
        if labels is not None:
            counts = np.bincount(labels, minlength=dataset.num_classes)
            small = np.flatnonzero(counts < k)
            if small.size:
                raise ValueError(
                    f"class {int(small[0])} has {int(counts[small[0]])} samples, "
                    f"fewer than {k} folds"
                )
            folds = [[] for _ in range(k)]
            for c in range(dataset.num_classes):
                idx = np.flatnonzero(labels == c)
                idx = idx[rng.permutation(len(idx))]
                for i, chunk in enumerate(np.array_split(idx, k)):
                    folds[i].append(chunk)
            return [np.sort(np.concatenate(f)) for f in folds]
        perm = rng.permutation(n)
        return [np.sort(f) for f in np.array_split(perm, k)]
    raise ValueError(f"unknown split scheme {scheme!r}")


@dataclass
class RunResult:
    """Everything one training run records; the test metric is captured once,
    at the epoch with the best validation metric."""

    seed: int
    train_loss: list[float] = field(default_factory=list)
    train_metric: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = -1
    test_metric: float = float("nan")
    wall_time: float = 0.0
    param_count: int = 0
    epochs_run: int = 0

    def metrics_tuple(self):
        """The deterministic payload (excludes wall time)."""
        return (
            self.seed,
            tuple(self.train_loss),
            tuple(self.train_metric),
            tuple(self.val_loss),
            tuple(self.val_metric),
            self.best_epoch,
            self.test_metric,
            self.param_count,
            self.epochs_run,
        )

    def to_row(self) -> dict:
        return {
            "seed": self.seed,
            "test_metric": self.test_metric,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "param_count": self.param_count,
            "final_train_loss": self.train_loss[-1] if self.train_loss else float("nan"),
            "best_val_metric": self.val_metric[self.best_epoch] if self.val_metric else float("nan"),
            "wall_time_s": round(self.wall_time, 3),
        }


def _accuracy(preds, labels, idx):
    if len(idx) == 0:
        return float("nan")
    return float((preds[idx] == labels[idx]).mean())


def _check_config(config: TopoUNetConfig, dataset: Dataset):
    d0 = dataset.features[0].shape[-1]
    if config.dims[0] != d0:
        raise ValueError(f"config d0={config.dims[0]} but dataset features have {d0} columns")
    if dataset.kind in ("node_task", "hypergraph_task", "graph_task"):
        if config.head_out_dim != dataset.num_classes:
            raise ValueError(
                f"head_out_dim={config.head_out_dim} != num_classes={dataset.num_classes}"
            )
        expected = "graph_classify_mean_pool" if dataset.kind == "graph_task" else "node_classify"
        if config.head != expected:
            raise ValueError(f"{dataset.kind} needs head={expected!r}, got {config.head!r}")
    else:
        if config.head != "reconstruct":
            raise ValueError("reconstruction_task needs head='reconstruct'")
        t_dim = dataset.targets[0].shape[-1]
        if config.head_out_dim != t_dim:
            raise ValueError(f"head_out_dim={config.head_out_dim} != target dim {t_dim}")


def train(config: TopoUNetConfig, dataset: Dataset, epochs: int = 300, seed: int = 0,
          lr: float = 1e-3, weight_decay: float = 1e-5, patience: int = 50,
          batch_size: int = 32) -> RunResult:
    """Train a model on the dataset; full batch for node tasks, minibatched for
    graph and reconstruction tasks.  Fully determined by (config, dataset, seed)."""
    _check_config(config, dataset)
    run_config = replace(config, seed=seed)
    model = TopoUNet(run_config)
    result = RunResult(seed=seed, param_count=model.params.num_parameters())
    start = time.perf_counter()
    if dataset.kind in ("node_task", "hypergraph_task"):
        _train_node(model, dataset, epochs, seed, lr, weight_decay, patience, result)
    elif dataset.kind == "graph_task":
        _train_graph(model, dataset, epochs, seed, lr, weight_decay, patience,
                     batch_size, result)
    else:
        _train_reconstruction(model, dataset, epochs, seed, lr, weight_decay,
                              patience, batch_size, result)
    result.wall_time = time.perf_counter() - start
    return result


def _loss_value(loss, epoch):
    value = loss.item()
    if not np.isfinite(value):
        raise RuntimeError(f"training aborted: non-finite loss at epoch {epoch}")
    return value


def _train_node(model, dataset, epochs, seed, lr, weight_decay, patience, result):
    cc = dataset.complexes[0]
    x = dataset.features[0]
    y = dataset.labels
    masks = dataset.masks or make_splits(dataset, "random_percent", seed=seed)
    best_val, best_snap, since_best = -np.inf, model.params.snapshot(), 0
    for epoch in range(epochs):
        out, _ = model.output_tensor(cc, x, training=True)
        _, loss = model.head_apply(out, labels=y, mask=masks["train"])
        train_loss = _loss_value(loss, epoch)
        model.params.zero_grad()
        ad.backward(loss)
        model.params.adam_step(lr=lr, weight_decay=weight_decay)

        out_eval, _ = model.output_tensor(cc, x, training=False)
        preds, val_loss = model.head_apply(out_eval, labels=y, mask=masks["val"])
        result.train_loss.append(train_loss)
        result.train_metric.append(_accuracy(preds, y, masks["train"]))
        result.val_loss.append(val_loss.item())
        result.val_metric.append(_accuracy(preds, y, masks["val"]))
        result.epochs_run = epoch + 1
        if result.val_metric[-1] > best_val:
            best_val = result.val_metric[-1]
            result.best_epoch = epoch
            best_snap = model.params.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best > patience:
                break
    model.params.restore(best_snap)
    out_eval, _ = model.output_tensor(cc, x, training=False)
    preds, _ = model.head_apply(out_eval, labels=y, mask=masks["test"])
    result.test_metric = _accuracy(preds, y, masks["test"])


def _train_graph(model, dataset, epochs, seed, lr, weight_decay, patience,
                 batch_size, result):
    masks = dataset.masks or make_splits(dataset, "random_percent", seed=seed)
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 5)))

    def evaluate(idx):
        if len(idx) == 0:
            return float("nan"), float("nan")
        correct, total_loss = 0, 0.0
        for i in idx:
            out, _ = model.output_tensor(dataset.complexes[i], dataset.features[i])
            pred, loss = model.head_apply(out, labels=dataset.labels[i])
            correct += int(pred[0] == dataset.labels[i])
            total_loss += loss.item()
        return correct / len(idx), total_loss / len(idx)

    best_val, best_snap, since_best = -np.inf, model.params.snapshot(), 0
    for epoch in range(epochs):
        order = masks["train"][order_rng.permutation(len(masks["train"]))]
        epoch_loss = 0.0
        for b0 in range(0, len(order), batch_size):
            batch = order[b0:b0 + batch_size]
            model.params.zero_grad()
            losses = []
            for i in batch:
                out, _ = model.output_tensor(
                    dataset.complexes[i], dataset.features[i], training=True
                )
                _, loss = model.head_apply(out, labels=dataset.labels[i])
                losses.append(loss)
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            total = ad.scale(total, 1.0 / len(batch))
            epoch_loss += _loss_value(total, epoch) * len(batch)
            ad.backward(total)
            model.params.adam_step(lr=lr, weight_decay=weight_decay)
        train_acc, _ = evaluate(masks["train"])
        val_acc, val_loss = evaluate(masks["val"])
        result.train_loss.append(epoch_loss / max(len(order), 1))
        result.train_metric.append(train_acc)
        result.val_loss.append(val_loss)
        result.val_metric.append(val_acc)
        result.epochs_run = epoch + 1
        if val_acc > best_val:
            best_val, result.best_epoch = val_acc, epoch
            best_snap = model.params.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best > patience:
                break
    model.params.restore(best_snap)
    result.test_metric, _ = evaluate(masks["test"])


def _train_reconstruction(model, dataset, epochs, seed, lr, weight_decay, patience,
                          batch_size, result):
    cc = dataset.complexes[0]
    masks = dataset.masks or make_splits(dataset, "random_percent", seed=seed)
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 5)))

    def evaluate(idx):
        if len(idx) == 0:
            return float("nan")
        total = 0.0
        for i in idx:
            out, _ = model.output_tensor(cc, dataset.features[i])
            _, loss = model.head_apply(out, targets=dataset.targets[i])
            total += loss.item()
        return total / len(idx)

    best_val, best_snap, since_best = np.inf, model.params.snapshot(), 0
    for epoch in range(epochs):
        order = masks["train"][order_rng.permutation(len(masks["train"]))]
        epoch_loss = 0.0
        for b0 in range(0, len(order), batch_size):
            batch = order[b0:b0 + batch_size]
            model.params.zero_grad()
            losses = []
            for i in batch:
                out, _ = model.output_tensor(cc, dataset.features[i], training=True)
                _, loss = model.head_apply(out, targets=dataset.targets[i])
                losses.append(loss)
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            total = ad.scale(total, 1.0 / len(batch))
            epoch_loss += _loss_value(total, epoch) * len(batch)
            ad.backward(total)
            model.params.adam_step(lr=lr, weight_decay=weight_decay)
        val_mse = evaluate(masks["val"])
        result.train_loss.append(epoch_loss / max(len(order), 1))
        result.train_metric.append(float("nan"))
        result.val_loss.append(val_mse)
        result.val_metric.append(-val_mse)  # maximized, like accuracy
        result.epochs_run = epoch + 1
        if val_mse < best_val:
            best_val, result.best_epoch = val_mse, epoch
            best_snap = model.params.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best > patience:
                break
    model.params.restore(best_snap)
    result.test_metric = evaluate(masks["test"])


@dataclass
class AblationRow:
    path: tuple[int, ...]
    use_skips: bool
    rho_total: float
    param_count: int
    metrics: list[float]

    @property
    def mean(self):
        return float(np.mean(self.metrics))

    @property
    def std(self):
        return float(np.std(self.metrics))


@dataclass
class AblationTable:
    rows: list[AblationRow]
    metric_name: str = "accuracy"

    def delta(self, path) -> float | None:
        """No-skip minus with-skip mean for accuracies; relative increase for MSE."""
        path = tuple(path)
        with_skip = next((r for r in self.rows if r.path == path and r.use_skips), None)
        no_skip = next((r for r in self.rows if r.path == path and not r.use_skips), None)
        if with_skip is None or no_skip is None:
            return None
        if self.metric_name == "mse":
            return (no_skip.mean - with_skip.mean) / with_skip.mean
        return no_skip.mean - with_skip.mean

    def to_text(self) -> str:
        lines = [
            f"{'path':>18} {'skips':>6} {'rho_total':>10} {'params':>8} "
            f"{'mean':>10} {'std':>8} {'delta':>8}"
        ]
        for r in self.rows:
            d = self.delta(r.path)
            delta = "" if (d is None or r.use_skips) else f"{d:+.4f}"
            lines.append(
                f"{'-'.join(map(str, r.path)):>18} {str(r.use_skips):>6} "
                f"{float(r.rho_total):>10.4g} {r.param_count:>8} "
                f"{r.mean:>10.4f} {r.std:>8.4f} {delta:>8}"
            )
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "rows": [
                {
                    "path": list(r.path),
                    "use_skips": r.use_skips,
                    "rho_total": r.rho_total,
                    "param_count": r.param_count,
                    "mean": r.mean,
                    "std": r.std,
                    "metrics": r.metrics,
                    "delta": self.delta(r.path) if not r.use_skips else None,
                }
                for r in self.rows
            ],
        }


def dims_for_path(base_config: TopoUNetConfig, path) -> tuple[int, ...]:
    """Per-path feature dims: keep d0 and reuse the base interior width."""
    d0 = base_config.dims[0]
    hidden = base_config.dims[1] if len(base_config.dims) > 1 else d0
    return (d0,) + (hidden,) * (len(path) - 1)


def run_ablation(base_config: TopoUNetConfig, matrix, dataset: Dataset, seeds,
                 epochs: int = 300, lr: float = 1e-3, weight_decay: float = 1e-5,
                 patience: int = 50) -> AblationTable:
    """Train every (path, use_skips) combination over the seed list and tabulate
    mean/std metrics with per-path skip deltas and support ratios."""
    cc = dataset.complexes[0]
    rows = []
    metric_name = "mse" if dataset.kind == "reconstruction_task" else "accuracy"
    for path, use_skips in matrix:
        path = tuple(path)
        config = replace(
            base_config, path=path, dims=dims_for_path(base_config, path),
            transport=base_config.transport[0] if base_config.transport else "normalized_incidence",
            refinement=base_config.refinement[0],
            use_skips=use_skips,
        )
        metrics = [
            train(config, dataset, epochs=epochs, seed=s, lr=lr,
                  weight_decay=weight_decay, patience=patience).test_metric
            for s in seeds
        ]
        rows.append(
            AblationRow(
                path=path,
                use_skips=use_skips,
                rho_total=float(RankPath(cc, path).rho_bot),
                param_count=count_parameters(config, cc),
                metrics=metrics,
            )
        )
    return AblationTable(rows=rows, metric_name=metric_name)


def write_results_csv(path, results: list[RunResult]):
    path = Path(path)
    rows = [r.to_row() for r in results]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def write_aggregate_json(path, results: list[RunResult], config_hash: str):
    metrics = [r.test_metric for r in results]
    payload = {
        "mean": float(np.mean(metrics)),
        "std": float(np.std(metrics)),
        "n_seeds": len(results),
        "config_hash": config_hash,
    }
    Path(path).write_text(json.dumps(payload, indent=2))
    return payload
