"""Seeded synthetic spurious-correlation benchmarks and brute-force oracles.

The generator plants a known spurious correlation: orthonormal class
directions u_1..u_C and spurious directions v_1..v_S are drawn by QR of a
seeded Gaussian matrix, and each example with class y and spurious value s
embeds as normalize(alpha*u_y + beta*v_s + sigma*g). A fraction rho of each
class carries its majority spurious value (y mod S); the remainder cycles
evenly through the other values. The ground-truth assignment is written to
the dataset's group column, a matching fixture vocabulary maps "class_k" /
"spur_j" tokens to the exact directions, and an oracle annotation names the
planted failure mode of the most-biased class.

All randomness flows through the counter-based generator in
``slicelab.rng``; a config is therefore a complete recipe for the dataset.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import EmbeddingDataset, load_dataset, write_dataset
from .errors import ConfigError, DatasetError
from .probe import OBJECTIVES, EvalReport, TrainConfig, evaluate, train_probe
from .rng import Stream
from .similarity import (
    ErrorAnnotation,
    FixtureTextEncoder,
    best_threshold,
    partition_class,
)

ORACLE_ANNOTATION_FILE = "oracle_annotation.json"


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int = 64
    classes: int = 2
    spurious_values: int = 2
    correlation: float = 0.95
    class_signal: float = 1.0
    spurious_signal: float = 1.0
    noise: float = 0.35
    per_class_per_split: int = 500
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.spurious_values < 2:
            raise ConfigError("need at least 2 spurious values")
        if self.dim < self.classes + self.spurious_values:
            raise ConfigError(
                "dim must be at least classes + spurious_values so the "
                "orthonormal directions fit"
            )
        if not 0.5 <= self.correlation < 1.0:
            raise ConfigError("correlation must be in [0.5, 1)")
        if self.class_signal <= 0:
            raise ConfigError("class signal must be positive")
        if self.spurious_signal < 0 or self.noise < 0:
            raise ConfigError("spurious signal and noise must be nonnegative")
        if self.per_class_per_split < 2:
            raise ConfigError("need at least 2 examples per class per split")

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "classes": self.classes,
            "spurious_values": self.spurious_values,
            "correlation": self.correlation,
            "class_signal": self.class_signal,
            "spurious_signal": self.spurious_signal,
            "noise": self.noise,
            "per_class_per_split": self.per_class_per_split,
            "seed": self.seed,
            "name": self.name,
        }

    @staticmethod
    def from_json(raw: dict) -> "SyntheticConfig":
        defaults = SyntheticConfig()
        return SyntheticConfig(
            **{k: raw.get(k, getattr(defaults, k)) for k in defaults.to_json()}
        )


def majority_count(cfg: SyntheticConfig) -> int:
    """round(rho * n) to nearest, ties to even."""
    return int(round(cfg.correlation * cfg.per_class_per_split))


def _orthonormal_directions(stream: Stream, dim: int, count: int) -> np.ndarray:
    """QR of a seeded Gaussian matrix, columns sign-fixed, shape dim x count."""
    g = stream.normal(dim * count).reshape(dim, count)
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass(frozen=True)
class GeneratedBenchmark:
    dataset_dir: Path
    config: SyntheticConfig
    oracle_annotation: ErrorAnnotation


def generate_synthetic(cfg: SyntheticConfig, out_dir: str | Path) -> GeneratedBenchmark:
    """Write a synthetic dataset directory plus vocab and oracle annotation."""
    out = Path(out_dir)
    stream = Stream(cfg.seed)
    C, S, d = cfg.classes, cfg.spurious_values, cfg.dim
    dirs = _orthonormal_directions(stream, d, C + S)
    class_dirs = dirs[:, :C].T  # C x d
    spur_dirs = dirs[:, C:].T  # S x d

    n = cfg.per_class_per_split
    n_major = majority_count(cfg)
    labels, splits, groups = [], [], []
    for split in ("train", "val"):
        for y in range(C):
            majority = y % S
            others = [s for s in range(S) if s != majority]
            for i in range(n):
                labels.append(y)
                splits.append(split)
                if i < n_major:
                    groups.append(majority)
                else:
                    groups.append(others[(i - n_major) % len(others)])
    labels = np.array(labels, dtype=np.int64)
    splits = np.array(splits, dtype="<U8")
    groups = np.array(groups, dtype=np.int64)

    total = len(labels)
    noise = stream.normal(total * d).reshape(total, d)
    raw = (
        cfg.class_signal * class_dirs[labels]
        + cfg.spurious_signal * spur_dirs[groups]
        + cfg.noise * noise
    )
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    embeddings = (raw / norms).astype(np.float32)

    ds = EmbeddingDataset(
        name=cfg.name,
        dim=d,
        count=total,
        embeddings=embeddings,
        labels=labels,
        class_names=tuple(f"class_{k}" for k in range(C)),
        split=splits,
        group=groups,
    )
    write_dataset(ds, out)

    vocab = {f"class_{k}": class_dirs[k].tolist() for k in range(C)}
    vocab.update({f"spur_{j}": spur_dirs[j].tolist() for j in range(S)})
    (out / "vocab.json").write_text(
        json.dumps(vocab, sort_keys=True), encoding="utf-8"
    )
    _register_vocab(out)

    annotation = _oracle_annotation(ds, cfg, spur_dirs)
    (out / ORACLE_ANNOTATION_FILE).write_text(
        json.dumps(annotation.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return GeneratedBenchmark(dataset_dir=out, config=cfg, oracle_annotation=annotation)


def _register_vocab(out: Path) -> None:
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["files"]["vocab"] = "vocab.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _oracle_annotation(
    ds: EmbeddingDataset, cfg: SyntheticConfig, spur_dirs: np.ndarray
) -> ErrorAnnotation:
    """Annotation for the class with the smallest minority group: prompt is
    the vocab token of that group's spurious direction, threshold is the
    best separator of minority vs majority similarities on the val split."""
    counts: dict[tuple[int, int], int] = {}
    for y in range(cfg.classes):
        rows = ds.class_indices(y, "train")
        for g, cnt in zip(*np.unique(ds.group[rows], return_counts=True)):
            counts[(y, int(g))] = int(cnt)
    # minority = least-common group within the class; class with the
    # smallest minority wins, ties to the lowest class id then group id
    failing_class, minority_group = min(
        counts, key=lambda key: (counts[key], key[0], key[1])
    )

    rows = ds.class_indices(failing_class, "val")
    sims = ds.annotation_space[rows].astype(np.float64) @ spur_dirs[minority_group]
    minority_mask = ds.group[rows] == minority_group
    tau, _, score = best_threshold(
        s_correct=sims[~minority_mask], s_error=sims[minority_mask]
    )
    return ErrorAnnotation(
        class_id=failing_class,
        prompt=f"spur_{minority_group}",
        threshold=tau,
        error_score=score,
    )


def oracle_error_score(s_correct, s_error) -> tuple[float, float]:
    """Reference threshold search: plain loops over every candidate.

    Independent of the vectorized sweep in ``slicelab.similarity``; used to
    cross-check it exactly. Bounded to small instances.
    """
    sc = [float(x) for x in s_correct]
    se = [float(x) for x in s_error]
    if not sc or not se:
        raise ValueError("similarity multisets must be nonempty")
    if len(sc) + len(se) > 10_000:
        raise ValueError("oracle is for small instances only")

    values = sorted(set(sc + se))
    candidates = [values[0] - 1.0]
    for lo, hi in zip(values, values[1:]):
        candidates.append((lo + hi) / 2.0)
    candidates.append(values[-1] + 1.0)

    best_acc = -1.0
    best_tau = candidates[0]
    for tau in candidates:  # ascending; strict > keeps the lowest tie
        tpr = sum(1 for s in se if s > tau) / len(se)
        tnr = sum(1 for s in sc if s <= tau) / len(sc)
        acc = 0.5 * (tpr + tnr)
        if acc > best_acc:
            best_acc = acc
            best_tau = tau
    return max(0.0, 2.0 * (best_acc - 0.5)), best_tau


@dataclass(frozen=True)
class BenchReport:
    dataset: str
    objectives: tuple[str, ...]
    seed: int
    annotations_source: str
    annotations: tuple[ErrorAnnotation, ...]
    reports: dict[str, EvalReport]
    wall_clock_seconds: float

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "objectives": list(self.objectives),
            "seed": self.seed,
            "annotations_source": self.annotations_source,
            "annotations": [a.to_json() for a in self.annotations],
            "per_objective": {
                name: report.to_json() for name, report in sorted(self.reports.items())
            },
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    def canonical_json(self, include_wall_clock: bool = False) -> str:
        """Stable serialization; wall clock excluded by default so equal
        configurations compare byte-identical."""
        payload = self.to_json()
        if not include_wall_clock:
            payload.pop("wall_clock_seconds")
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def load_annotations(source: str | Path, dataset_dir: str | Path) -> list[ErrorAnnotation]:
    """Resolve an annotations source: the literal "oracle" reads the
    generator's oracle file from the dataset directory; otherwise the
    source is a JSON file holding one annotation or a list of them."""
    if str(source) == "oracle":
        path = Path(dataset_dir) / ORACLE_ANNOTATION_FILE
        if not path.is_file():
            raise DatasetError(f"no oracle annotation at {path}")
    else:
        path = Path(source)
        if not path.is_file():
            raise DatasetError(f"annotation file not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    items = raw if isinstance(raw, list) else [raw]
    return [ErrorAnnotation.from_json(item) for item in items]


def run_benchmark(
    dataset_dir: str | Path,
    objectives: list[str],
    annotations_source: str | Path = "oracle",
    seed: int = 0,
    epochs: int | None = None,
) -> BenchReport:
    """Train one probe per objective (shared seed) and evaluate each with
    oracle grouping on the val split."""
    ds = load_dataset(dataset_dir)
    if ds.group is None:
        raise DatasetError("benchmark needs a dataset with a group column")
    for objective in objectives:
        if objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {objective!r}")

    needs_slices = any(o in ("slice_balanced", "worst_slice") for o in objectives)
    annotations: list[ErrorAnnotation] = []
    slices = None
    if needs_slices:
        annotations = load_annotations(annotations_source, dataset_dir)
        if ds.vocab_file is None:
            raise DatasetError("dataset has no vocab for the fixture encoder")
        encoder = FixtureTextEncoder.from_file(ds.vocab_file)
        slices = [
            partition_class(ds, ann, "train", encoder.encode(ann.prompt))
            for ann in annotations
        ]

    started = time.monotonic()
    reports: dict[str, EvalReport] = {}
    for objective in objectives:
        kwargs = {} if epochs is None else {"epochs": epochs}
        config = TrainConfig(objective=objective, seed=seed, **kwargs)
        probe = train_probe(ds, config, slices=slices)
        reports[objective] = evaluate(probe, ds, grouping="oracle_groups", split="val")

    return BenchReport(
        dataset=ds.name,
        objectives=tuple(objectives),
        seed=seed,
        annotations_source=str(annotations_source),
        annotations=tuple(annotations),
        reports=reports,
        wall_clock_seconds=time.monotonic() - started,
    )
