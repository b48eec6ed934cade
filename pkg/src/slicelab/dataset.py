"""On-disk embedding dataset format: loading, validation, writing.

Directory layout (paths inside the manifest are relative to the dataset
directory):

    manifest.json                UTF-8 JSON, see DatasetManifest
    embeddings.bin               row-major float32 little-endian, count x dim
    metadata.csv                 header: id,label,split,group,thumbnail
    annotation_embeddings.bin    optional second embedding space
    vocab.json                   optional, token -> vector (fixture encoder)

In metadata.csv, group -1 means "no group label" and an empty thumbnail
cell means "no thumbnail". The group column must be all present or all
absent. Datasets are immutable after load; loaded arrays are read-only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError

DTYPE_TAG = "float32-le"
SPLITS = ("train", "val")

NORM_TOLERANCE = 1e-5
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    dim: int
    count: int
    dtype: str
    class_names: tuple[str, ...]
    embeddings_file: str
    metadata_file: str
    annotation_embeddings_file: str | None = None
    annotation_dim: int | None = None
    vocab_file: str | None = None

    @staticmethod
    def from_json(raw: dict) -> "DatasetManifest":
        try:
            files = raw["files"]
            return DatasetManifest(
                name=str(raw["name"]),
                dim=int(raw["dim"]),
                count=int(raw["count"]),
                dtype=str(raw["dtype"]),
                class_names=tuple(str(c) for c in raw["class_names"]),
                embeddings_file=str(files["embeddings"]),
                metadata_file=str(files["metadata"]),
                annotation_embeddings_file=files.get("annotation_embeddings"),
                annotation_dim=(
                    int(raw["annotation_dim"]) if "annotation_dim" in raw else None
                ),
                vocab_file=files.get("vocab"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"unparsable manifest: {exc}") from exc

    def to_json(self) -> dict:
        files: dict[str, str] = {
            "embeddings": self.embeddings_file,
            "metadata": self.metadata_file,
        }
        if self.annotation_embeddings_file is not None:
            files["annotation_embeddings"] = self.annotation_embeddings_file
        if self.vocab_file is not None:
            files["vocab"] = self.vocab_file
        out: dict = {
            "name": self.name,
            "dim": self.dim,
            "count": self.count,
            "dtype": self.dtype,
            "class_names": list(self.class_names),
            "files": files,
        }
        if self.annotation_dim is not None:
            out["annotation_dim"] = self.annotation_dim
        return out


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """Immutable unit-norm embedding dataset with labels and splits.

    ``group`` is the optional oracle spurious-attribute column; ``thumbnail``
    holds per-example relative image paths (None where absent). Example ids
    are row indices.
    """

    name: str
    dim: int
    count: int
    embeddings: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    split: np.ndarray
    annotation_embeddings: np.ndarray | None = None
    group: np.ndarray | None = None
    thumbnail: tuple[str | None, ...] | None = None
    vocab_file: str | None = field(default=None, compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_groups(self) -> int | None:
        if self.group is None:
            return None
        return int(self.group.max()) + 1

    @property
    def annotation_space(self) -> np.ndarray:
        """Embeddings used for text similarity (defaults to the probe space)."""
        if self.annotation_embeddings is not None:
            return self.annotation_embeddings
        return self.embeddings

    @property
    def annotation_dim(self) -> int:
        return self.annotation_space.shape[1]

    def split_mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DatasetError(f"unknown split tag: {split!r}")
        return self.split == split

    def class_indices(self, class_id: int, split: str) -> np.ndarray:
        """Row indices of one class within one split, ascending."""
        return np.flatnonzero((self.labels == class_id) & self.split_mask(split))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        same_opt = (
            (self.annotation_embeddings is None)
            == (other.annotation_embeddings is None)
        ) and ((self.group is None) == (other.group is None))
        if not same_opt:
            return False
        return (
            self.name == other.name
            and self.dim == other.dim
            and self.count == other.count
            and self.class_names == other.class_names
            and np.array_equal(self.embeddings, other.embeddings)
            and (
                self.annotation_embeddings is None
                or np.array_equal(
                    self.annotation_embeddings, other.annotation_embeddings
                )
            )
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and (self.group is None or np.array_equal(self.group, other.group))
            and self.thumbnail == other.thumbnail
        )


def _normalize_rows(mat: np.ndarray, what: str) -> np.ndarray:
    """Force unit rows: near-unit rows kept bit-exact, others renormalized."""
    norms = np.linalg.norm(mat.astype(np.float64), axis=1)
    if np.any(norms < DEGENERATE_NORM):
        bad = int(np.argmin(norms))
        raise DatasetError(f"{what} row {bad} has near-zero norm {norms[bad]:.3g}")
    off = np.abs(norms - 1.0) > NORM_TOLERANCE
    if np.any(off):
        mat = mat.copy()
        mat[off] = (mat[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return mat


def _validate_arrays(
    manifest_count: int,
    class_count: int,
    labels: np.ndarray,
    split: np.ndarray,
    group: np.ndarray | None,
) -> None:
    for name, arr in (("labels", labels), ("split", split)):
        if len(arr) != manifest_count:
            raise DatasetError(f"{name} has {len(arr)} rows, expected {manifest_count}")
    bad_split = set(np.unique(split)) - set(SPLITS)
    if bad_split:
        raise DatasetError(f"unknown split tag: {sorted(bad_split)}")
    for tag in SPLITS:
        if not np.any(split == tag):
            raise DatasetError(f"split has no {tag!r} examples")
    if labels.min() < 0 or labels.max() >= class_count:
        raise DatasetError(
            f"label out of range [0, {class_count}): found {int(labels.max())}"
        )
    if group is not None:
        if len(group) != manifest_count:
            raise DatasetError("group column length mismatch")
        if group.min() < 0:
            raise DatasetError("group column mixes present and absent entries")


def _read_matrix(path: Path, count: int, dim: int, what: str) -> np.ndarray:
    expected = count * dim * 4
    actual = path.stat().st_size
    if actual != expected:
        raise DatasetError(
            f"{what} size mismatch: {path.name} has {actual} bytes, "
            f"manifest implies {expected}"
        )
    flat = np.fromfile(path, dtype="<f4")
    return flat.reshape(count, dim)


def load_dataset(path: str | Path) -> EmbeddingDataset:
    """Load and validate a dataset directory.

    Loading is deterministic; rows not already unit-norm (within 1e-5) are
    renormalized, rows with norm below 1e-12 are rejected.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"missing manifest: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unparsable manifest: {exc}") from exc
    manifest = DatasetManifest.from_json(raw)

    if manifest.dtype != DTYPE_TAG:
        raise DatasetError(
            f"dtype tag {manifest.dtype!r} does not match required {DTYPE_TAG!r}"
        )
    if manifest.dim <= 0 or manifest.count <= 0:
        raise DatasetError("dim and count must be positive")

    referenced = [manifest.embeddings_file, manifest.metadata_file]
    if manifest.annotation_embeddings_file is not None:
        referenced.append(manifest.annotation_embeddings_file)
    if manifest.vocab_file is not None:
        referenced.append(manifest.vocab_file)
    for rel in referenced:
        if not (root / rel).is_file():
            raise DatasetError(f"manifest references missing file: {rel}")

    embeddings = _read_matrix(
        root / manifest.embeddings_file, manifest.count, manifest.dim, "embeddings"
    )
    annotation = None
    if manifest.annotation_embeddings_file is not None:
        if manifest.annotation_dim is None:
            raise DatasetError("annotation_embeddings present but annotation_dim missing")
        annotation = _read_matrix(
            root / manifest.annotation_embeddings_file,
            manifest.count,
            manifest.annotation_dim,
            "annotation embeddings",
        )

    labels, split, group, thumbs = _read_metadata(
        root / manifest.metadata_file, manifest.count
    )
    _validate_arrays(manifest.count, len(manifest.class_names), labels, split, group)

    embeddings = _normalize_rows(embeddings, "embedding")
    if annotation is not None:
        annotation = _normalize_rows(annotation, "annotation embedding")

    for arr in (embeddings, labels, split) + (() if annotation is None else (annotation,)):
        arr.setflags(write=False)
    if group is not None:
        group.setflags(write=False)

    return EmbeddingDataset(
        name=manifest.name,
        dim=manifest.dim,
        count=manifest.count,
        embeddings=embeddings,
        annotation_embeddings=annotation,
        labels=labels,
        class_names=manifest.class_names,
        split=split,
        group=group,
        thumbnail=thumbs,
        vocab_file=(
            str(root / manifest.vocab_file) if manifest.vocab_file is not None else None
        ),
    )


def _read_metadata(path: Path, count: int):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected_cols = ["id", "label", "split", "group", "thumbnail"]
        if reader.fieldnames != expected_cols:
            raise DatasetError(
                f"metadata header {reader.fieldnames} != {expected_cols}"
            )
        rows = list(reader)
    if len(rows) != count:
        raise DatasetError(f"metadata has {len(rows)} rows, manifest says {count}")

    ids = [int(r["id"]) for r in rows]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate ids in metadata")

    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    split = np.array([r["split"] for r in rows], dtype="<U8")
    group_raw = np.array([int(r["group"]) for r in rows], dtype=np.int64)
    if np.all(group_raw == -1):
        group = None
    elif np.any(group_raw == -1):
        raise DatasetError("group column mixes present and absent entries")
    else:
        group = group_raw
    thumbs_list = [r["thumbnail"] or None for r in rows]
    thumbs = None if all(t is None for t in thumbs_list) else tuple(thumbs_list)
    return labels, split, group, thumbs


def validate_dataset(ds: EmbeddingDataset) -> None:
    """Raise DatasetError if an in-memory dataset violates any invariant."""
    if ds.dim <= 0 or ds.count <= 0:
        raise DatasetError("dim and count must be positive")
    mats = [("embeddings", ds.embeddings, ds.dim)]
    if ds.annotation_embeddings is not None:
        mats.append(
            ("annotation_embeddings", ds.annotation_embeddings,
             ds.annotation_embeddings.shape[1])
        )
    for what, mat, dim in mats:
        if mat.shape != (ds.count, dim):
            raise DatasetError(f"{what} shape {mat.shape} != ({ds.count}, {dim})")
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > NORM_TOLERANCE:
            raise DatasetError(f"{what} contains non-unit rows")
    _validate_arrays(ds.count, ds.num_classes, ds.labels, ds.split, ds.group)
    if ds.thumbnail is not None and len(ds.thumbnail) != ds.count:
        raise DatasetError("thumbnail column length mismatch")


def write_dataset(ds: EmbeddingDataset, path: str | Path) -> None:
    """Write a dataset directory; write then load round-trips bit-exactly."""
    validate_dataset(ds)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    manifest = DatasetManifest(
        name=ds.name,
        dim=ds.dim,
        count=ds.count,
        dtype=DTYPE_TAG,
        class_names=ds.class_names,
        embeddings_file="embeddings.bin",
        metadata_file="metadata.csv",
        annotation_embeddings_file=(
            "annotation_embeddings.bin" if ds.annotation_embeddings is not None else None
        ),
        annotation_dim=(
            ds.annotation_embeddings.shape[1]
            if ds.annotation_embeddings is not None
            else None
        ),
    )
    (root / "manifest.json").write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    ds.embeddings.astype("<f4").tofile(root / "embeddings.bin")
    if ds.annotation_embeddings is not None:
        ds.annotation_embeddings.astype("<f4").tofile(root / "annotation_embeddings.bin")

    with open(root / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "split", "group", "thumbnail"])
        for i in range(ds.count):
            group = -1 if ds.group is None else int(ds.group[i])
            thumb = ""
            if ds.thumbnail is not None and ds.thumbnail[i] is not None:
                thumb = ds.thumbnail[i]
            writer.writerow([i, int(ds.labels[i]), str(ds.split[i]), group, thumb])
