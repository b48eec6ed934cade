import numpy as np
import pytest

from conftest import tiny_dataset
from slicelab.dataset import load_dataset
from slicelab.errors import ConfigError, TrainingDivergedError
from slicelab.probe import (
    EvalReport,
    LinearProbe,
    TrainConfig,
    _class_balanced_weights,
    batch_mean_loss,
    evaluate,
    load_probe,
    loss_and_grad,
    predict,
    report_from_predictions,
    save_probe,
    train_probe,
    zero_shot_classify,
)
from slicelab.similarity import (
    ErrorAnnotation,
    FixtureTextEncoder,
    SlicePartition,
    partition_class,
)


def make_probe(W, b, seed=0):
    return LinearProbe(
        weights=np.asarray(W, dtype=np.float64),
        bias=np.asarray(b, dtype=np.float64),
        seed=seed,
        config_fingerprint="test",
    )


# -- predict -----------------------------------------------------------------


def test_predict_zero_probe_ties_to_class_zero():
    probe = make_probe(np.zeros((3, 4)), np.zeros(3))
    _, labels = predict(probe, np.random.default_rng(0).normal(size=(5, 4)))
    assert labels.tolist() == [0] * 5


def test_predict_prototype_rows_are_exact(noisefree_bench):
    ds = load_dataset(noisefree_bench.dataset_dir)
    encoder = FixtureTextEncoder.from_file(ds.vocab_file)
    prototypes = np.stack([encoder.encode(f"class_{k}") for k in range(ds.num_classes)])
    probe = make_probe(prototypes, np.zeros(ds.num_classes))
    _, labels = predict(probe, ds.embeddings)
    assert np.array_equal(labels, ds.labels)


def test_predict_bias_dominates():
    probe = make_probe(np.zeros((2, 3)), [0.0, 10.0])
    _, labels = predict(probe, np.ones((1, 3)))
    assert labels.tolist() == [1]


def test_predict_dimension_mismatch():
    probe = make_probe(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError, match="does not match"):
        predict(probe, np.ones((1, 4)))


# -- loss and gradient ---------------------------------------------------------


def numeric_gradient(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        hi = f()
        xf[i] = orig - eps
        lo = f()
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * eps)
    return grad


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d, classes = rng.integers(2, 12), rng.integers(1, 8), rng.integers(2, 4)
    X = rng.normal(size=(n, d))
    y = rng.integers(0, classes, size=n)
    W = rng.normal(size=(classes, d)) * 0.5
    b = rng.normal(size=classes) * 0.5
    weights = rng.uniform(0.2, 2.0, size=n)

    loss, gW, gb = loss_and_grad(W, b, X, y, weights)
    nW = numeric_gradient(lambda: loss_and_grad(W, b, X, y, weights)[0], W)
    nb = numeric_gradient(lambda: loss_and_grad(W, b, X, y, weights)[0], b)
    assert np.max(np.abs(gW - nW)) / max(np.max(np.abs(nW)), 1e-8) <= 1e-4
    assert np.max(np.abs(gb - nb)) / max(np.max(np.abs(nb)), 1e-8) <= 1e-4


def test_batch_mean_loss_matches_loss_and_grad():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    assert batch_mean_loss(W, b, X, y) == pytest.approx(
        loss_and_grad(W, b, X, y)[0], rel=1e-12
    )


# -- objectives ----------------------------------------------------------------


def test_class_balanced_weights_equal_totals():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 4, size=997)
    weights = _class_balanced_weights(labels)
    assert weights.sum() == pytest.approx(len(labels), abs=1e-9)
    totals = [weights[labels == c].sum() for c in range(4)]
    assert np.max(np.abs(np.diff(totals))) <= 1e-9


def test_training_is_bit_deterministic(default_ds):
    config = TrainConfig(objective="erm_uniform", epochs=3, seed=7)
    a = train_probe(default_ds, config)
    b = train_probe(default_ds, config)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.bias, b.bias)


def test_erm_separable_reaches_full_train_accuracy(noisefree_bench):
    ds = load_dataset(noisefree_bench.dataset_dir)
    probe = train_probe(ds, TrainConfig(objective="erm_uniform", seed=0))
    train_rows = np.flatnonzero(ds.split == "train")
    _, labels = predict(probe, ds.embeddings[train_rows])
    assert np.array_equal(labels, ds.labels[train_rows])


@pytest.mark.parametrize(
    "objective",
    ["erm_uniform", "class_balanced", "worst_class", "slice_balanced", "worst_slice", "group_dro_oracle"],
)
def test_every_objective_trains(default_ds, default_encoder, default_bench, objective):
    ann = default_bench.oracle_annotation
    slices = [partition_class(default_ds, ann, "train", default_encoder.encode(ann.prompt))]
    config = TrainConfig(objective=objective, epochs=2, seed=0)
    probe = train_probe(default_ds, config, slices=slices)
    report = evaluate(probe, default_ds, "oracle_groups", "val")
    assert 0.0 <= report.worst_group <= report.average <= 1.0


def test_worst_slice_batch_objective_dominates_mean():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n, d, classes = 24, 4, 3
        X = rng.normal(size=(n, d))
        y = rng.integers(0, classes, size=n)
        W = rng.normal(size=(classes, d))
        b = rng.normal(size=classes)
        cut = sorted(rng.choice(np.arange(1, n), size=2, replace=False))
        parts = [np.arange(0, cut[0]), np.arange(cut[0], cut[1]), np.arange(cut[1], n)]
        slice_means = [batch_mean_loss(W, b, X[p], y[p]) for p in parts]
        sizes = np.array([len(p) for p in parts], dtype=np.float64)
        overall = float(np.dot(sizes, slice_means) / n)
        assert max(slice_means) >= overall


def test_slice_objective_requires_slices(default_ds):
    with pytest.raises(ConfigError, match="requires at least one annotation"):
        train_probe(default_ds, TrainConfig(objective="worst_slice", epochs=1))


def test_degenerate_slice_rejected(default_ds):
    empty = SlicePartition(
        class_id=0,
        above_indices=np.array([], dtype=np.int64),
        below_indices=default_ds.class_indices(0, "train"),
        split="train",
    )
    with pytest.raises(ConfigError, match="annotation degenerate"):
        train_probe(default_ds, TrainConfig(objective="worst_slice", epochs=1), [empty])


def test_group_dro_requires_groups():
    ds = tiny_dataset(
        [0.5, -0.5, 0.4, -0.4],
        labels=[0, 1, 0, 1],
        split=["train", "train", "val", "val"],
    )
    with pytest.raises(ConfigError, match="oracle groups"):
        train_probe(ds, TrainConfig(objective="group_dro_oracle", epochs=1))


def test_divergence_raises_with_diagnostics(default_ds):
    with pytest.raises(TrainingDivergedError) as err:
        train_probe(default_ds, TrainConfig(learning_rate=1e18, epochs=2, seed=0))
    assert err.value.epoch == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(objective="nope")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


# -- evaluation ------------------------------------------------------------------


def test_evaluate_all_correct(noisefree_bench):
    ds = load_dataset(noisefree_bench.dataset_dir)
    probe = train_probe(ds, TrainConfig(seed=0))
    report = evaluate(probe, ds, "oracle_groups", "val")
    assert report.average == report.worst_group == 1.0
    assert report.gap == 0.0


@pytest.mark.parametrize(
    "avg,wg,gap",
    [(96.0, 63.4, 32.6), (95.4, 31.1, 64.3), (92.1, 89.1, 3.0)],
)
def test_gap_arithmetic(avg, wg, gap):
    report = EvalReport.from_average_and_worst(avg, wg)
    assert report.gap == pytest.approx(gap, abs=0.05)
    assert report.gap == report.average - report.worst_group


def test_evaluate_gap_identity_and_bounds(default_ds):
    probe = train_probe(default_ds, TrainConfig(epochs=3, seed=0))
    report = evaluate(probe, default_ds, "oracle_groups", "val")
    assert report.gap == report.average - report.worst_group
    assert report.worst_group <= np.mean(list(report.per_group.values()))
    assert report.worst_group <= report.average


def test_evaluate_invariant_to_example_order(default_ds):
    probe = train_probe(default_ds, TrainConfig(epochs=3, seed=0))
    base = evaluate(probe, default_ds, "oracle_groups", "val")
    perm = np.random.default_rng(0).permutation(default_ds.count)
    shuffled = type(default_ds)(
        name=default_ds.name,
        dim=default_ds.dim,
        count=default_ds.count,
        embeddings=default_ds.embeddings[perm],
        labels=default_ds.labels[perm],
        class_names=default_ds.class_names,
        split=default_ds.split[perm],
        group=default_ds.group[perm],
    )
    other = evaluate(probe, shuffled, "oracle_groups", "val")
    assert other.average == base.average
    assert other.per_group == base.per_group
    assert other.gap == base.gap


def test_evaluate_annotation_slices_minority_majority():
    # class 0: 5 val examples, 3 above tau=0.5 (majority), 2 below (minority)
    sims = [0.9, 0.8, 0.7, 0.2, 0.1, 0.0]
    ds = tiny_dataset(
        sims,
        labels=[0] * 6,
        split=["val"] * 5 + ["train"],
        class_names=("only",),
    )
    encoder = FixtureTextEncoder({"p": np.array([1.0, 0.0])})
    ann = ErrorAnnotation(class_id=0, prompt="p", threshold=0.5, error_score=0.5)
    predicted = np.array([0, 0, 1, 0, 1])  # above: 2/3 correct; below: 1/2 correct
    report = report_from_predictions(
        ds,
        np.arange(5),
        predicted,
        "annotation_slices",
        "val",
        annotations=[ann],
        encoder=encoder,
    )
    assert report.per_group["class=0|above"] == pytest.approx(2 / 3)
    assert report.per_group["class=0|below"] == pytest.approx(1 / 2)
    mm = report.minority_majority
    assert mm["per_class"]["0"]["minority_side"] == "below"
    assert mm["mean_minority"] == pytest.approx(1 / 2)
    assert mm["mean_majority"] == pytest.approx(2 / 3)


def test_minority_tie_goes_to_above_side():
    sims = [0.9, 0.8, 0.2, 0.1, 0.0]
    ds = tiny_dataset(
        sims,
        labels=[0] * 5,
        split=["val"] * 4 + ["train"],
        class_names=("only",),
    )
    encoder = FixtureTextEncoder({"p": np.array([1.0, 0.0])})
    ann = ErrorAnnotation(class_id=0, prompt="p", threshold=0.5, error_score=0.5)
    predicted = np.array([0, 0, 1, 1])
    report = report_from_predictions(
        ds, np.arange(4), predicted, "annotation_slices", "val",
        annotations=[ann], encoder=encoder,
    )
    assert report.minority_majority["per_class"]["0"]["minority_side"] == "above"


def test_evaluate_empty_group_warns(default_ds):
    probe = train_probe(default_ds, TrainConfig(epochs=1, seed=0))
    # degenerate annotation: everything is above tau=-2
    encoder = FixtureTextEncoder.from_file(default_ds.vocab_file)
    ann = ErrorAnnotation(class_id=0, prompt="spur_1", threshold=-2.0, error_score=0.1)
    report = evaluate(
        probe, default_ds, "annotation_slices", "val",
        annotations=[ann], encoder=encoder,
    )
    assert "class=0|below" not in report.per_group
    assert any("class=0|below" in w for w in report.warnings)


def test_evaluate_unresolvable_grouping():
    ds = tiny_dataset([0.5, -0.5], labels=[0, 1], split=["train", "val"])
    probe = make_probe(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ConfigError, match="requires a dataset with groups"):
        evaluate(probe, ds, "oracle_groups", "val")
    with pytest.raises(ConfigError, match="requires annotations"):
        evaluate(probe, ds, "annotation_slices", "val")


# -- zero shot ---------------------------------------------------------------------


def test_zero_shot_exact_prompts_on_noisefree(noisefree_bench):
    ds = load_dataset(noisefree_bench.dataset_dir)
    encoder = FixtureTextEncoder.from_file(ds.vocab_file)
    vecs = np.stack([encoder.encode(f"class_{k}") for k in range(ds.num_classes)])
    report = zero_shot_classify(ds, vecs, "val")
    assert report.average == 1.0
    assert report.worst_group == 1.0


def test_zero_shot_identical_prompts_tie_to_class_zero(noisefree_bench):
    ds = load_dataset(noisefree_bench.dataset_dir)
    encoder = FixtureTextEncoder.from_file(ds.vocab_file)
    same = encoder.encode("class_0")
    report = zero_shot_classify(
        ds, np.stack([same, same]), "val", grouping="classes_only"
    )
    assert report.per_group["class=0"] == 1.0
    assert report.per_group["class=1"] == 0.0


def test_zero_shot_dimension_check(default_ds):
    with pytest.raises(ValueError, match="class text vectors"):
        zero_shot_classify(default_ds, np.ones((2, 3)), "val")


# -- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, default_ds):
    probe = train_probe(default_ds, TrainConfig(epochs=2, seed=3))
    path = tmp_path / "probe.ckpt"
    save_probe(probe, path)
    loaded = load_probe(path)
    assert np.array_equal(loaded.weights, probe.weights.astype("<f4").astype(np.float64))
    assert np.array_equal(loaded.bias, probe.bias.astype("<f4").astype(np.float64))
    assert loaded.seed == probe.seed
    assert loaded.config_fingerprint == probe.config_fingerprint


def test_checkpoint_rejects_unknown_schema(tmp_path):
    path = tmp_path / "bad.ckpt"
    import json as _json
    import struct as _struct

    header = _json.dumps({"schema": "other"}).encode()
    path.write_bytes(_struct.pack("<I", len(header)) + header)
    with pytest.raises(ConfigError, match="unknown checkpoint schema"):
        load_probe(path)
