"""Last-layer linear probe: training objectives, prediction, evaluation.

The probe is a C x d linear layer over frozen unit-norm embeddings,
trained with minibatch SGD on softmax cross-entropy. Besides plain ERM,
the trainer implements reweighting and per-minibatch worst-case objectives
over data slices: for slice objectives each annotated class contributes its
above/below-threshold sides as two slices, and the worst-case variants
backpropagate only the slice with the highest mean loss in the batch.

Training is bit-deterministic for a fixed (seed, config, data): batch
composition comes from the counter-based generator in ``slicelab.rng`` and
reductions run in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import EmbeddingDataset
from .errors import ConfigError, TrainingDivergedError
from .rng import Stream
from .similarity import ErrorAnnotation, SlicePartition, TextEncoder, partition_class

OBJECTIVES = (
    "erm_uniform",
    "class_balanced",
    "worst_class",
    "slice_balanced",
    "worst_slice",
    "group_dro_oracle",
)

WEIGHTED_OBJECTIVES = ("erm_uniform", "class_balanced", "slice_balanced")
STRATIFIED_OBJECTIVES = ("worst_class", "worst_slice", "group_dro_oracle")

GROUPINGS = ("oracle_groups", "annotation_slices", "classes_only")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one probe training run (loss is fixed to
    softmax cross-entropy; weight decay is fixed to zero)."""

    objective: str = "erm_uniform"
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(raw: dict) -> "TrainConfig":
        return TrainConfig(
            objective=raw.get("objective", "erm_uniform"),
            learning_rate=float(raw.get("learning_rate", 0.05)),
            momentum=float(raw.get("momentum", 0.9)),
            epochs=int(raw.get("epochs", 30)),
            batch_size=int(raw.get("batch_size", 256)),
            seed=int(raw.get("seed", 0)),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class LinearProbe:
    """Trained last-layer weights over frozen features."""

    weights: np.ndarray  # C x d
    bias: np.ndarray  # C
    seed: int
    config_fingerprint: str

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("probe parameters must be finite")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("weights/bias class dimensions differ")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


CHECKPOINT_SCHEMA = "probe-v1"


def save_probe(probe: LinearProbe, path: str | Path) -> None:
    """Checkpoint layout: uint32-LE header length, JSON header, then
    float32-LE W (row-major) followed by float32-LE b."""
    header = json.dumps(
        {
            "schema": CHECKPOINT_SCHEMA,
            "classes": probe.num_classes,
            "dim": probe.dim,
            "seed": probe.seed,
            "config_fingerprint": probe.config_fingerprint,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(probe.weights.astype("<f4").tobytes())
        fh.write(probe.bias.astype("<f4").tobytes())


def load_probe(path: str | Path) -> LinearProbe:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("schema") != CHECKPOINT_SCHEMA:
            raise ConfigError(f"unknown checkpoint schema {header.get('schema')!r}")
        classes, dim = int(header["classes"]), int(header["dim"])
        w = np.frombuffer(fh.read(classes * dim * 4), dtype="<f4").reshape(classes, dim)
        b = np.frombuffer(fh.read(classes * 4), dtype="<f4")
    return LinearProbe(
        weights=w.astype(np.float64),
        bias=b.astype(np.float64),
        seed=int(header["seed"]),
        config_fingerprint=str(header["config_fingerprint"]),
    )


def predict(probe: LinearProbe, embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and argmax labels; ties go to the lowest class id."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != probe.dim:
        raise ValueError(f"embeddings shape {emb.shape} does not match probe dim {probe.dim}")
    logits = emb @ probe.weights.T + probe.bias
    return logits, np.argmax(logits, axis=1)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax cross-entropy over a batch: (1/B) * sum_i w_i * ce_i.

    Weights default to 1; the analytic gradient here is validated against
    central finite differences in the test suite.
    """
    n = X.shape[0]
    logits = X @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):  # -log(0) = inf reported as divergence
        ce = -np.log(probs[np.arange(n), y])
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    loss = float(np.dot(w, ce) / n)

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= (w / n)[:, None]
    return loss, dlogits.T @ X, dlogits.sum(axis=0)


def _class_balanced_weights(labels: np.ndarray) -> np.ndarray:
    """Per-example weights proportional to 1/class-frequency, summing to N."""
    classes, counts = np.unique(labels, return_counts=True)
    per_class = {c: len(labels) / (len(classes) * n) for c, n in zip(classes, counts)}
    return np.array([per_class[c] for c in labels], dtype=np.float64)


def _validate_partitions(
    ds: EmbeddingDataset, slices: list[SlicePartition]
) -> None:
    seen: set[int] = set()
    for part in slices:
        if part.split != "train":
            raise ConfigError(
                f"slice for class {part.class_id} was computed on split "
                f"{part.split!r}, expected 'train'"
            )
        if part.class_id in seen:
            raise ConfigError(f"duplicate slice partition for class {part.class_id}")
        seen.add(part.class_id)
        for side, rows in (("above", part.above_indices), ("below", part.below_indices)):
            if len(rows) == 0:
                raise ConfigError(
                    f"annotation degenerate: class {part.class_id} has an empty "
                    f"train slice ({side} threshold)"
                )


def _slice_balanced_weights(
    labels_full: np.ndarray, train_rows: np.ndarray, slices: list[SlicePartition]
) -> np.ndarray:
    """Each annotated class splits its (size-proportional) weight equally
    between its two slices; unannotated classes stay uniform."""
    pos = {int(row): i for i, row in enumerate(train_rows)}
    weights = np.ones(len(train_rows), dtype=np.float64)
    for part in slices:
        above = [pos[int(r)] for r in part.above_indices]
        below = [pos[int(r)] for r in part.below_indices]
        n_class = len(above) + len(below)
        weights[above] = n_class / (2.0 * len(above))
        weights[below] = n_class / (2.0 * len(below))
    return weights


def _stratified_slices(
    ds: EmbeddingDataset,
    train_rows: np.ndarray,
    objective: str,
    slices: list[SlicePartition] | None,
) -> list[np.ndarray]:
    """Index lists (into train_rows) defining the per-batch loss groups."""
    pos = {int(row): i for i, row in enumerate(train_rows)}
    labels = ds.labels[train_rows]

    def local(rows: np.ndarray) -> np.ndarray:
        return np.array([pos[int(r)] for r in rows], dtype=np.int64)

    if objective == "worst_class":
        return [
            np.flatnonzero(labels == c)
            for c in range(ds.num_classes)
            if np.any(labels == c)
        ]
    if objective == "group_dro_oracle":
        out = []
        for c in range(ds.num_classes):
            for g in range(ds.num_groups):
                cell = np.flatnonzero((labels == c) & (ds.group[train_rows] == g))
                if len(cell) > 0:
                    out.append(cell)
        return out
    # worst_slice: above/below per annotated class, whole class otherwise
    annotated = {part.class_id for part in slices}
    out = []
    for c in range(ds.num_classes):
        if c in annotated:
            part = next(p for p in slices if p.class_id == c)
            out.append(local(part.above_indices))
            out.append(local(part.below_indices))
        else:
            rows = np.flatnonzero(labels == c)
            if len(rows) > 0:
                out.append(rows)
    return out


def train_probe(
    ds: EmbeddingDataset,
    config: TrainConfig,
    slices: list[SlicePartition] | None = None,
    progress: "Callable[[int, int], None] | None" = None,
) -> LinearProbe:
    """Train a probe on the train split under the configured objective.

    ``slices`` carries the train-split partition of each annotated class
    and is required for slice_balanced / worst_slice. ``progress`` is
    called as (completed_epochs, total_epochs) after each epoch.
    """
    train_rows = np.flatnonzero(ds.split == "train")
    if len(train_rows) == 0:
        raise ConfigError("train split is empty")
    if config.objective in ("slice_balanced", "worst_slice"):
        if not slices:
            raise ConfigError(
                f"objective {config.objective!r} requires at least one annotation slice"
            )
        _validate_partitions(ds, slices)
    if config.objective == "group_dro_oracle" and ds.group is None:
        raise ConfigError("group_dro_oracle requires a dataset with oracle groups")

    X = ds.embeddings[train_rows].astype(np.float64)
    y = ds.labels[train_rows]
    n, d = X.shape
    num_classes = ds.num_classes

    weights = None
    slice_rows: list[np.ndarray] = []
    if config.objective == "class_balanced":
        weights = _class_balanced_weights(y)
    elif config.objective == "slice_balanced":
        weights = _slice_balanced_weights(ds.labels, train_rows, slices)
    elif config.objective in STRATIFIED_OBJECTIVES:
        slice_rows = _stratified_slices(ds, train_rows, config.objective, slices)

    W = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    stream = Stream(config.seed)
    steps_per_epoch = math.ceil(n / config.batch_size)

    for epoch in range(config.epochs):
        if config.objective in WEIGHTED_OBJECTIVES:
            perm = stream.permutation(n)
        for step in range(steps_per_epoch):
            if config.objective in WEIGHTED_OBJECTIVES:
                batch = perm[step * config.batch_size : (step + 1) * config.batch_size]
                if len(batch) == 0:
                    continue
                bw = None if weights is None else weights[batch]
                loss, gW, gb = loss_and_grad(W, b, X[batch], y[batch], bw)
            else:
                loss, gW, gb = _worst_slice_step(
                    W, b, X, y, slice_rows, stream, config.batch_size
                )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(objective {config.objective})",
                    epoch=epoch,
                    step=step,
                )
            vW = config.momentum * vW + gW
            vb = config.momentum * vb + gb
            W = W - config.learning_rate * vW
            b = b - config.learning_rate * vb
        if progress is not None:
            progress(epoch + 1, config.epochs)

    return LinearProbe(
        weights=W, bias=b, seed=config.seed, config_fingerprint=config.fingerprint()
    )


def _worst_slice_step(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    slice_rows: list[np.ndarray],
    stream: Stream,
    batch_size: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One stratified batch: equal draws per slice (with replacement),
    backpropagate only the slice with the highest mean loss."""
    draws = max(1, batch_size // len(slice_rows))
    batches = []
    for rows in slice_rows:
        picks = rows[stream.randint(len(rows), draws)]
        batches.append(picks)
    losses = [batch_mean_loss(W, b, X[picks], y[picks]) for picks in batches]
    worst = int(np.argmax(losses))
    picks = batches[worst]
    loss, gW, gb = loss_and_grad(W, b, X[picks], y[picks])
    return loss, gW, gb


def batch_mean_loss(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray
) -> float:
    """Mean softmax cross-entropy, no gradient."""
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(logits).sum(axis=1))
    return float(np.mean(logsumexp - logits[np.arange(len(y)), y]))


@dataclass(frozen=True)
class EvalReport:
    """Average / worst-group accuracy and the derived robustness gap."""

    average: float
    per_group: dict[str, float]
    per_group_counts: dict[str, int]
    worst_group: float
    gap: float
    grouping: str
    split: str
    n_examples: int
    minority_majority: dict | None = None
    warnings: tuple[str, ...] = field(default=())

    @staticmethod
    def from_accuracies(
        average: float,
        per_group: dict[str, float],
        per_group_counts: dict[str, int],
        grouping: str,
        split: str,
        n_examples: int,
        minority_majority: dict | None = None,
        warnings: tuple[str, ...] = (),
    ) -> "EvalReport":
        worst = min(per_group.values())
        return EvalReport(
            average=average,
            per_group=per_group,
            per_group_counts=per_group_counts,
            worst_group=worst,
            gap=average - worst,
            grouping=grouping,
            split=split,
            n_examples=n_examples,
            minority_majority=minority_majority,
            warnings=warnings,
        )

    @staticmethod
    def from_average_and_worst(average: float, worst_group: float) -> "EvalReport":
        """Report skeleton from summary numbers only (gap arithmetic)."""
        return EvalReport(
            average=average,
            per_group={},
            per_group_counts={},
            worst_group=worst_group,
            gap=average - worst_group,
            grouping="summary",
            split="n/a",
            n_examples=0,
        )

    def to_json(self) -> dict:
        out = {
            "average": self.average,
            "per_group": dict(sorted(self.per_group.items())),
            "per_group_counts": dict(sorted(self.per_group_counts.items())),
            "worst_group": self.worst_group,
            "gap": self.gap,
            "grouping": self.grouping,
            "split": self.split,
            "n_examples": self.n_examples,
            "warnings": list(self.warnings),
        }
        if self.minority_majority is not None:
            out["minority_majority"] = self.minority_majority
        return out


def _accuracy(correct: np.ndarray) -> float:
    return float(np.mean(correct))


def report_from_predictions(
    ds: EmbeddingDataset,
    rows: np.ndarray,
    predicted: np.ndarray,
    grouping: str,
    split: str,
    annotations: list[ErrorAnnotation] | None = None,
    encoder: TextEncoder | None = None,
) -> EvalReport:
    """Build an EvalReport from predicted labels on ``rows`` of a split."""
    if grouping not in GROUPINGS:
        raise ConfigError(f"unknown grouping {grouping!r}")
    correct = predicted == ds.labels[rows]
    average = _accuracy(correct)
    per_group: dict[str, float] = {}
    counts: dict[str, int] = {}
    warnings: list[str] = []
    minority_majority = None

    if grouping == "oracle_groups":
        if ds.group is None:
            raise ConfigError("oracle grouping requires a dataset with groups")
        groups = ds.group[rows]
        labels = ds.labels[rows]
        for c in range(ds.num_classes):
            for g in range(ds.num_groups):
                cell = (labels == c) & (groups == g)
                key = f"class={c}|group={g}"
                if not np.any(cell):
                    warnings.append(f"empty group {key} excluded")
                    continue
                per_group[key] = _accuracy(correct[cell])
                counts[key] = int(np.sum(cell))
    elif grouping == "classes_only":
        labels = ds.labels[rows]
        for c in range(ds.num_classes):
            cell = labels == c
            key = f"class={c}"
            if not np.any(cell):
                warnings.append(f"empty group {key} excluded")
                continue
            per_group[key] = _accuracy(correct[cell])
            counts[key] = int(np.sum(cell))
    else:  # annotation_slices
        if not annotations:
            raise ConfigError("annotation_slices grouping requires annotations")
        if encoder is None:
            raise ConfigError("annotation_slices grouping requires a text encoder")
        pos = {int(r): i for i, r in enumerate(rows)}
        per_class_mm: dict[str, dict] = {}
        minority_accs, majority_accs = [], []
        for ann in annotations:
            part = partition_class(ds, ann, split, encoder.encode(ann.prompt))
            sides = {"above": part.above_indices, "below": part.below_indices}
            accs: dict[str, float] = {}
            for side, side_rows in sides.items():
                key = f"class={ann.class_id}|{side}"
                if len(side_rows) == 0:
                    warnings.append(f"empty group {key} excluded")
                    continue
                local = np.array([pos[int(r)] for r in side_rows], dtype=np.int64)
                accs[side] = _accuracy(correct[local])
                per_group[key] = accs[side]
                counts[key] = len(side_rows)
            if len(accs) == 2:
                # smaller side is the minority; ties: above is minority
                n_above = len(sides["above"])
                n_below = len(sides["below"])
                minority_side = "above" if n_above <= n_below else "below"
                majority_side = "below" if minority_side == "above" else "above"
                minority_accs.append(accs[minority_side])
                majority_accs.append(accs[majority_side])
                per_class_mm[str(ann.class_id)] = {
                    "minority_side": minority_side,
                    "minority": accs[minority_side],
                    "majority": accs[majority_side],
                }
        if minority_accs:
            minority_majority = {
                "mean_minority": float(np.mean(minority_accs)),
                "mean_majority": float(np.mean(majority_accs)),
                "per_class": per_class_mm,
            }

    if not per_group:
        raise ConfigError(f"no nonempty groups under grouping {grouping!r}")
    return EvalReport.from_accuracies(
        average=average,
        per_group=per_group,
        per_group_counts=counts,
        grouping=grouping,
        split=split,
        n_examples=len(rows),
        minority_majority=minority_majority,
        warnings=tuple(warnings),
    )


def evaluate(
    probe: LinearProbe,
    ds: EmbeddingDataset,
    grouping: str,
    split: str = "val",
    annotations: list[ErrorAnnotation] | None = None,
    encoder: TextEncoder | None = None,
) -> EvalReport:
    rows = np.flatnonzero(ds.split == split)
    _, predicted = predict(probe, ds.embeddings[rows])
    return report_from_predictions(
        ds, rows, predicted, grouping, split, annotations=annotations, encoder=encoder
    )


def zero_shot_classify(
    ds: EmbeddingDataset,
    class_text_vecs: np.ndarray,
    split: str = "val",
    grouping: str | None = None,
) -> EvalReport:
    """Nearest-class-text baseline: argmax over cosine similarity of each
    example's annotation-space embedding to the class text vectors."""
    vecs = np.asarray(class_text_vecs, dtype=np.float64)
    if vecs.shape != (ds.num_classes, ds.annotation_dim):
        raise ValueError(
            f"class text vectors have shape {vecs.shape}, expected "
            f"({ds.num_classes}, {ds.annotation_dim})"
        )
    rows = np.flatnonzero(ds.split == split)
    sims = ds.annotation_space[rows].astype(np.float64) @ vecs.T
    predicted = np.argmax(sims, axis=1)
    if grouping is None:
        grouping = "oracle_groups" if ds.group is not None else "classes_only"
    return report_from_predictions(ds, rows, predicted, grouping, split)
