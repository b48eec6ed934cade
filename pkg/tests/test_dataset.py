import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicelab.dataset import (
    EmbeddingDataset,
    load_dataset,
    validate_dataset,
    write_dataset,
)
from slicelab.errors import DatasetError


def make_dataset(
    seed=0, n=8, d=4, classes=2, with_group=False, with_annotation=False, with_thumbs=False
):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(n, d))
    emb = (emb / np.linalg.norm(emb, axis=1, keepdims=True)).astype(np.float32)
    ann = None
    if with_annotation:
        ann = rng.normal(size=(n, d + 1))
        ann = (ann / np.linalg.norm(ann, axis=1, keepdims=True)).astype(np.float32)
    labels = rng.integers(0, classes, size=n).astype(np.int64)
    split = np.array(["train"] * (n // 2) + ["val"] * (n - n // 2), dtype="<U8")
    group = rng.integers(0, 2, size=n).astype(np.int64) if with_group else None
    thumbs = tuple(f"thumbs/{i}.png" for i in range(n)) if with_thumbs else None
    return EmbeddingDataset(
        name="t",
        dim=d,
        count=n,
        embeddings=emb,
        annotation_embeddings=ann,
        labels=labels,
        class_names=tuple(f"c{i}" for i in range(classes)),
        split=split,
        group=group,
        thumbnail=thumbs,
    )


def test_round_trip_basic(tmp_path):
    ds = make_dataset()
    write_dataset(ds, tmp_path / "d")
    assert load_dataset(tmp_path / "d") == ds


def test_round_trip_with_optional_columns(tmp_path):
    ds = make_dataset(with_group=True, with_annotation=True, with_thumbs=True)
    write_dataset(ds, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    assert loaded == ds
    assert np.array_equal(loaded.group, ds.group)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(2, 16),
    d=st.integers(1, 6),
    classes=st.integers(1, 3),
    with_group=st.booleans(),
    with_annotation=st.booleans(),
)
def test_round_trip_property(tmp_path_factory, seed, n, d, classes, with_group, with_annotation):
    ds = make_dataset(seed, n, d, classes, with_group, with_annotation)
    out = tmp_path_factory.mktemp("roundtrip")
    write_dataset(ds, out)
    assert load_dataset(out) == ds


def test_load_is_deterministic(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    a = load_dataset(tmp_path / "d")
    b = load_dataset(tmp_path / "d")
    assert a == b
    assert a.embeddings.tobytes() == b.embeddings.tobytes()


def test_norms_within_tolerance_after_load(tmp_path):
    write_dataset(make_dataset(n=32, d=7), tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    norms = np.linalg.norm(ds.embeddings.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-5


def test_non_unit_row_renormalized(tmp_path):
    ds = make_dataset(n=4, d=3)
    write_dataset(ds, tmp_path / "d")
    emb = np.fromfile(tmp_path / "d" / "embeddings.bin", dtype="<f4").reshape(4, 3)
    emb[0] = [3.0, 0.0, 0.0]
    emb.tofile(tmp_path / "d" / "embeddings.bin")
    loaded = load_dataset(tmp_path / "d")
    assert loaded.embeddings[0].tolist() == [1.0, 0.0, 0.0]


def test_zero_norm_row_rejected(tmp_path):
    ds = make_dataset(n=4, d=3)
    write_dataset(ds, tmp_path / "d")
    emb = np.fromfile(tmp_path / "d" / "embeddings.bin", dtype="<f4").reshape(4, 3)
    emb[2] = 0.0
    emb.tofile(tmp_path / "d" / "embeddings.bin")
    with pytest.raises(DatasetError, match="near-zero norm"):
        load_dataset(tmp_path / "d")


def test_truncated_embeddings_rejected(tmp_path):
    ds = make_dataset(n=4, d=3)
    write_dataset(ds, tmp_path / "d")
    raw = (tmp_path / "d" / "embeddings.bin").read_bytes()
    (tmp_path / "d" / "embeddings.bin").write_bytes(raw[: 3 * 3 * 4])
    with pytest.raises(DatasetError, match="size mismatch"):
        load_dataset(tmp_path / "d")


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="missing manifest"):
        load_dataset(tmp_path)


def test_unparsable_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{nope")
    with pytest.raises(DatasetError, match="unparsable manifest"):
        load_dataset(tmp_path)


def test_wrong_dtype_tag(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    manifest["dtype"] = "float64-be"
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match="dtype tag"):
        load_dataset(tmp_path / "d")


def test_missing_referenced_file(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    (tmp_path / "d" / "metadata.csv").unlink()
    with pytest.raises(DatasetError, match="missing file"):
        load_dataset(tmp_path / "d")


def test_label_out_of_range_rejected_on_load(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    manifest["class_names"] = ["only_one"]
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match="label out of range"):
        load_dataset(tmp_path / "d")


def test_unknown_split_tag(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    meta = (tmp_path / "d" / "metadata.csv").read_text().replace("val", "test")
    (tmp_path / "d" / "metadata.csv").write_text(meta)
    with pytest.raises(DatasetError, match="unknown split"):
        load_dataset(tmp_path / "d")


def test_mixed_group_column_rejected(tmp_path):
    ds = make_dataset(with_group=True)
    write_dataset(ds, tmp_path / "d")
    lines = (tmp_path / "d" / "metadata.csv").read_text().splitlines()
    parts = lines[1].split(",")
    parts[3] = "-1"
    lines[1] = ",".join(parts)
    (tmp_path / "d" / "metadata.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="mixes present and absent"):
        load_dataset(tmp_path / "d")


def test_invalid_dataset_refused_before_write(tmp_path):
    ds = make_dataset(classes=2)
    bad_labels = ds.labels.copy()
    bad_labels[0] = 2  # == C
    bad = EmbeddingDataset(
        name=ds.name,
        dim=ds.dim,
        count=ds.count,
        embeddings=ds.embeddings,
        labels=bad_labels,
        class_names=ds.class_names,
        split=ds.split,
    )
    with pytest.raises(DatasetError, match="label out of range"):
        write_dataset(bad, tmp_path / "d")
    assert not (tmp_path / "d" / "embeddings.bin").exists()


def test_validate_requires_both_splits():
    ds = make_dataset()
    all_train = EmbeddingDataset(
        name=ds.name,
        dim=ds.dim,
        count=ds.count,
        embeddings=ds.embeddings,
        labels=ds.labels,
        class_names=ds.class_names,
        split=np.array(["train"] * ds.count, dtype="<U8"),
    )
    with pytest.raises(DatasetError, match="no 'val' examples"):
        validate_dataset(all_train)


def test_loaded_arrays_are_immutable(tmp_path):
    write_dataset(make_dataset(), tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    with pytest.raises(ValueError):
        ds.embeddings[0, 0] = 5.0
    with pytest.raises(ValueError):
        ds.labels[0] = 1
