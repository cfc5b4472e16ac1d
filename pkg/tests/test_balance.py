import numpy as np
import pytest

from utilities.balance import AdasynConfig, adasyn, class_share, knn, prior_shift, round_half_up, write_audit
from utilities.errors import InsufficientRows, SingleClass
from utilities.featurize import make_dataset


def brute_force_knn(query, rows, k, self_index=None):
    """Exhaustive sort on (squared distance, index)."""
    scored = []
    for j, row in enumerate(rows):
        if j == self_index:
            continue
        scored.append((sum((a - b) ** 2 for a, b in zip(query, row)), j))
    return [j for _, j in sorted(scored)[:k]]


# ============================================================================
# knn
# ============================================================================

def test_knn_nearest_by_distance():
    rows = np.array([[0.0], [1.0], [3.0]])
    assert knn(rows[0], rows, 1, self_index=0).tolist() == [1]


def test_knn_ties_break_on_index():
    assert knn(np.array([0.0]), np.array([[1.0], [1.0]]), 2).tolist() == [0, 1]


def test_knn_matches_exhaustive_sort():
    rng = np.random.default_rng(5)
    for _ in range(100):
        # small integer grid so distance ties are common
        rows = rng.integers(0, 4, size=(20, 4)).astype(np.float64)
        i = int(rng.integers(20))
        assert knn(rows[i], rows, 3, self_index=i).tolist() == brute_force_knn(rows[i], rows, 3, i)


def test_knn_needs_enough_rows():
    with pytest.raises(InsufficientRows):
        knn(np.zeros(2), np.zeros((3, 2)), 3, self_index=0)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.49, 2.5)] == [1, 2, 2, 3]


# ============================================================================
# adasyn
# ============================================================================

def one_dimensional_fixture():
    return make_dataset(
        [[0.0], [0.1], [1.0], [1.1], [1.2], [1.3]],
        [0, 0, 1, 1, 1, 1],
        ["x"],
        ["n0", "n1", "p0", "p1", "p2", "p3"],
    )


def test_one_dimensional_fixture():
    ds = one_dimensional_fixture()
    audit = []
    out = adasyn(ds, AdasynConfig(k=2, beta=1.0, seed=3), audit)
    assert out.n_rows == 8
    assert out.labels[6:].tolist() == [0, 0]
    synthetic = out.matrix[6:, 0]
    assert np.all((synthetic >= 0.0) & (synthetic <= 0.1))
    # r_i = 0.5 for both points -> one synthetic each
    assert sorted(rec.parent_a for rec in audit) == ["n0", "n1"]
    assert all({rec.parent_a, rec.parent_b} == {"n0", "n1"} for rec in audit)


def test_balanced_input_passes_through(tiny_dataset):
    balanced = tiny_dataset.take([0, 1, 2, 3])
    assert adasyn(balanced, AdasynConfig(k=2, seed=1)) == balanced


def test_beta_zero_disables_oversampling(small_corpus):
    assert adasyn(small_corpus, AdasynConfig(beta=0.0, seed=1)) == small_corpus


def test_single_class_rejected(tiny_dataset):
    with pytest.raises(SingleClass):
        adasyn(tiny_dataset.take([2, 3, 4]), AdasynConfig(k=1))


def test_k_larger_than_dataset(tiny_dataset):
    with pytest.raises(InsufficientRows):
        adasyn(tiny_dataset, AdasynConfig(k=6))


def test_minority_count_after_full_balance(small_corpus):
    out = adasyn(small_corpus, AdasynConfig(k=5, beta=1.0, seed=2))
    counts = small_corpus.class_counts()
    m_s, m_l = counts[0], counts[1]
    new_minority = out.class_counts()[0]
    assert m_l - m_s <= new_minority <= m_l + m_s


def test_same_seed_same_output(small_corpus):
    cfg = AdasynConfig(k=5, seed=9)
    assert adasyn(small_corpus, cfg) == adasyn(small_corpus, cfg)


def test_synthetics_lie_on_parent_segments():
    rng = np.random.default_rng(21)
    worst = 0.0
    for run in range(1000):
        n_min = int(rng.integers(3, 8))
        n_maj = int(rng.integers(n_min + 1, 20))
        matrix = rng.normal(size=(n_min + n_maj, 3))
        labels = [1] * n_min + [0] * n_maj
        ds = make_dataset(matrix, labels, ["a", "b", "c"], [f"r{i}" for i in range(n_min + n_maj)])
        audit = []
        out = adasyn(ds, AdasynConfig(k=3, beta=float(rng.uniform(0.1, 1.0)), seed=run), audit)

        assert np.array_equal(out.matrix[: ds.n_rows], ds.matrix)
        assert out.row_ids[: ds.n_rows] == ds.row_ids
        assert len(audit) == out.n_rows - ds.n_rows
        position = {row_id: i for i, row_id in enumerate(ds.row_ids)}
        for offset, rec in enumerate(audit):
            a = ds.matrix[position[rec.parent_a]]
            b = ds.matrix[position[rec.parent_b]]
            assert 0.0 <= rec.lam < 1.0
            assert ds.labels[position[rec.parent_b]] == 1
            s = out.matrix[ds.n_rows + offset]
            worst = max(worst, float(np.max(np.abs(s - (a + rec.lam * (b - a))))))
    assert worst < 1e-9


def test_synthetic_ids_avoid_collisions():
    ds = make_dataset([[0.0], [0.2], [1.0], [1.1], [1.2]], [0, 0, 1, 1, 1], ["x"], ["adasyn-000000", "b", "c", "d", "e"])
    out = adasyn(ds, AdasynConfig(k=2, seed=0))
    assert len(set(out.row_ids)) == out.n_rows


def test_synthetic_ids_skip_reserved_ids():
    ds = make_dataset([[0.0], [0.2], [1.0], [1.1], [1.2]], [0, 0, 1, 1, 1], ["x"], ["adasyn-000000", "b", "c", "d", "e"])
    out = adasyn(ds, AdasynConfig(k=2, seed=0), reserved_ids=["adasyn-000001"])
    assert out.row_ids[ds.n_rows:] == ("adasyn-000002", "adasyn-000003")


def test_write_audit(tmp_path):
    audit = []
    adasyn(one_dimensional_fixture(), AdasynConfig(k=2, seed=3), audit)
    path = tmp_path / "parents.csv"
    write_audit(audit, str(path), "# config_hash=x master_seed=3")
    lines = path.read_text().splitlines()
    assert lines[1] == "synthetic_row_id,parent_a,parent_b,lambda"
    assert len(lines) == 2 + len(audit)


# ============================================================================
# Prior shift
# ============================================================================

def test_class_share():
    assert class_share(np.array([1, 1, 1, 0])) == 0.75


def test_prior_shift_moves_even_scores_to_target():
    shifted = prior_shift(np.array([0.0, 0.5, 1.0]), 0.5, 0.8)
    assert shifted.tolist() == pytest.approx([0.0, 0.8, 1.0])


def test_prior_shift_is_identity_at_equal_shares():
    proba = np.linspace(0.0, 1.0, 11)
    assert np.allclose(prior_shift(proba, 0.3, 0.3), proba)


def test_prior_shift_keeps_order():
    shifted = prior_shift(np.array([0.1, 0.2, 0.4, 0.9]), 0.5, 0.25)
    assert np.all(np.diff(shifted) > 0)


def test_prior_shift_rejects_degenerate_shares():
    with pytest.raises(SingleClass):
        prior_shift(np.array([0.5]), 1.0, 0.5)
    with pytest.raises(SingleClass):
        prior_shift(np.array([0.5]), 0.5, 0.0)
