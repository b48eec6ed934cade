import numpy as np
import pytest

from slicelab import SyntheticConfig, generate_synthetic, load_dataset
from slicelab.dataset import EmbeddingDataset
from slicelab.similarity import FixtureTextEncoder


@pytest.fixture(scope="session")
def default_bench(tmp_path_factory):
    """The default synthetic benchmark, generated once per test session."""
    out = tmp_path_factory.mktemp("bench") / "default"
    return generate_synthetic(SyntheticConfig(), out)


@pytest.fixture(scope="session")
def default_ds(default_bench):
    return load_dataset(default_bench.dataset_dir)


@pytest.fixture(scope="session")
def default_encoder(default_ds):
    return FixtureTextEncoder.from_file(default_ds.vocab_file)


@pytest.fixture(scope="session")
def noisefree_bench(tmp_path_factory):
    """Classes exactly separable by their direction; no planted bias signal."""
    out = tmp_path_factory.mktemp("bench") / "noisefree"
    cfg = SyntheticConfig(
        dim=8, spurious_signal=0.0, noise=0.0, per_class_per_split=20, name="noisefree"
    )
    return generate_synthetic(cfg, out)


def embeddings_with_first_coord(coords):
    """Unit 2-D float64 rows whose first coordinate is the requested value,
    so the dot product with (1, 0) equals it exactly."""
    coords = np.asarray(coords, dtype=np.float64)
    return np.stack([coords, np.sqrt(1.0 - coords**2)], axis=1)


def tiny_dataset(
    sims,
    labels=None,
    split=None,
    name="tiny",
    class_names=("a", "b"),
    group=None,
    annotation_sims=None,
):
    """Hand-built dataset whose annotation-space similarity to the vocab
    direction (1, 0) equals ``sims`` per example."""
    sims = np.asarray(sims, dtype=np.float64)
    n = len(sims)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    split = np.array(["val"] * n if split is None else split, dtype="<U8")
    embeddings = embeddings_with_first_coord(sims)
    annotation = None
    if annotation_sims is not None:
        annotation = embeddings_with_first_coord(annotation_sims)
    return EmbeddingDataset(
        name=name,
        dim=2,
        count=n,
        embeddings=embeddings,
        annotation_embeddings=annotation,
        labels=labels,
        class_names=tuple(class_names),
        split=split,
        group=None if group is None else np.asarray(group, dtype=np.int64),
    )
