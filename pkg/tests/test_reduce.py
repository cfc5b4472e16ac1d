import numpy as np
import pytest
from sklearn.feature_selection import VarianceThreshold

from utilities.errors import EmptyFeatureSet, ShapeMismatch
from utilities.featurize import synth_corpus
from utilities.neural import InputScaler, TrainConfig, dataset_loss, elu, train
from utilities.reduce import (
    ReducerModel,
    ReducerSpec,
    apply,
    apply_dataset,
    autoencoder_spec,
    fit,
    load_reducer,
    save_reducer,
)


def population_variance_filter(matrix, threshold):
    """Column loop with the textbook mean-of-squared-deviations."""
    kept = []
    n = len(matrix)
    for j in range(matrix.shape[1]):
        column = [float(v) for v in matrix[:, j]]
        mean = sum(column) / n
        if sum((v - mean) ** 2 for v in column) / n >= threshold:
            kept.append(j)
    return kept


# ============================================================================
# Variance threshold
# ============================================================================

def test_constant_column_removed_alternating_kept():
    m = np.array([[3.0, 0.0], [3.0, 1.0], [3.0, 0.0], [3.0, 1.0]])
    model = fit(ReducerSpec(kind="variance_threshold", threshold=0.1), m)
    assert model.retained.tolist() == [1]
    assert apply(model, m).tolist() == [[0.0], [1.0], [0.0], [1.0]]


def test_vt_matches_independent_filter():
    rng = np.random.default_rng(17)
    for _ in range(100):
        scales = rng.uniform(0.0, 2.0, size=30)
        m = rng.random((50, 30)) * scales
        model = fit(ReducerSpec(kind="variance_threshold", threshold=0.1), m)
        assert model.retained.tolist() == population_variance_filter(m, 0.1)


def test_vt_matches_sklearn():
    rng = np.random.default_rng(18)
    for _ in range(20):
        m = rng.random((50, 30)) * rng.uniform(0.0, 2.0, size=30)
        ours = fit(ReducerSpec(kind="variance_threshold", threshold=0.1), m).retained
        theirs = np.flatnonzero(VarianceThreshold(0.1).fit(m).get_support())
        assert ours.tolist() == theirs.tolist()


def test_vt_removing_everything():
    with pytest.raises(EmptyFeatureSet):
        fit(ReducerSpec(kind="variance_threshold", threshold=0.1), np.ones((5, 3)))


def test_vt_keeps_column_order():
    model = ReducerModel("variance_threshold", 3, retained=np.array([0, 2]))
    rows = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert apply(model, rows).tolist() == [[1.0, 3.0], [4.0, 6.0]]
    assert model.output_names(["a", "b", "c"]) == ["a", "c"]


# ============================================================================
# none
# ============================================================================

def test_none_is_identity(tiny_dataset):
    model = fit(ReducerSpec(kind="none"), tiny_dataset.matrix)
    assert np.array_equal(apply(model, tiny_dataset.matrix), tiny_dataset.matrix)
    assert apply_dataset(model, tiny_dataset) == tiny_dataset


def test_apply_checks_width():
    model = fit(ReducerSpec(kind="none"), np.zeros((3, 4)))
    with pytest.raises(ShapeMismatch):
        apply(model, np.zeros((3, 5)))


def test_fit_on_empty_matrix():
    with pytest.raises(ShapeMismatch):
        fit(ReducerSpec(kind="none"), np.zeros((0, 4)))


# ============================================================================
# Autoencoders
# ============================================================================

@pytest.fixture
def wide_corpus():
    return synth_corpus(30, 90, 32, 0.9, seed=4, row_total=300)


def test_ae1_encoder_shape(wide_corpus):
    spec = ReducerSpec(kind="ae_1l", train=TrainConfig(epochs=5, batch_size=32, seed=1))
    model = fit(spec, wide_corpus.matrix)
    assert model.encoder.layer_shapes() == [(32, 32)]
    assert model.output_width == 32
    assert apply(model, wide_corpus.matrix).shape == (120, 32)
    assert model.output_names(wide_corpus.column_names)[:2] == ["ae_1l_00", "ae_1l_01"]


def test_ae3_encoder_stops_at_bottleneck(wide_corpus):
    spec = ReducerSpec(kind="ae_3l", train=TrainConfig(epochs=2, batch_size=32, seed=1))
    model = fit(spec, wide_corpus.matrix)
    assert model.encoder.layer_shapes() == [(32, 128), (128, 64), (64, 32)]
    assert len(model.trace) == 2


def test_ae_training_reduces_reconstruction_error(wide_corpus):
    x = InputScaler.fit(wide_corpus.matrix).transform(wide_corpus.matrix)
    spec = autoencoder_spec("ae_1l", 32)
    cfg = TrainConfig(epochs=40, batch_size=16, seed=6)
    untrained, _ = train(spec, x, x, cfg, epochs=0)
    trained, _ = train(spec, x, x, cfg)
    assert dataset_loss(trained, x, x) < dataset_loss(untrained, x, x)


def test_ae_apply_matches_hand_forward(wide_corpus):
    spec = ReducerSpec(kind="ae_1l", train=TrainConfig(epochs=3, batch_size=32, seed=2))
    model = fit(spec, wide_corpus.matrix)
    row = wide_corpus.matrix[:1]
    scaled = (np.log1p(row) - model.scaler.mins) / model.scaler.spans
    w, b = model.encoder.weights[0], model.encoder.biases[0]
    expected = [
        [elu(np.array([sum(scaled[0, i] * w[i, j] for i in range(32)) + b[j]]))[0] for j in range(32)]
    ]
    assert np.allclose(apply(model, row), expected, atol=1e-6)


# ============================================================================
# Persistence
# ============================================================================

@pytest.mark.parametrize("kind", ["none", "variance_threshold", "ae_1l"])
def test_reducer_file_round_trip(tmp_path, wide_corpus, kind):
    spec = ReducerSpec(kind=kind, threshold=1.0, train=TrainConfig(epochs=2, seed=1))
    model = fit(spec, wide_corpus.matrix)
    path = str(tmp_path / "reducer.bin")
    save_reducer(model, path)
    loaded = load_reducer(path)
    assert loaded.kind == kind
    assert np.array_equal(apply(loaded, wide_corpus.matrix), apply(model, wide_corpus.matrix))
