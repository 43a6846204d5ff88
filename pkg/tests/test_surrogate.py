import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copkit.datagen import SweepDataset, SweepRecord, lattice, write_csv
from copkit.scenario import MobilityConfig
from copkit.surrogate import (
    ExternalTable,
    FitError,
    GbrtModel,
    LinearModel,
    RegressionTree,
    TrainedModel,
    evaluate_models,
    fit_gbrt,
    fit_knn,
    fit_linear,
    load_model,
    predict,
    ranking,
    read_external_table,
    rmse,
    rows_from_dataset,
    save_model,
    split,
    train_model,
    write_reports,
)
from conftest import REDUCED


def box_samples(n, seed):
    rng = np.random.default_rng(seed)
    return np.hstack([rng.uniform(-10, 10, (n, 3)), rng.uniform(0, 10, (n, 3))])


def dataset_from(X, y):
    return SweepDataset([SweepRecord(MobilityConfig.from_vector(x), float(v)) for x, v in zip(X, y)])


@pytest.fixture(scope="module")
def reports(reduced_sweep):
    return evaluate_models(reduced_sweep, fractions=(1.0, 0.1), seed=42)


def by_name(reports, name, fraction):
    return next(r for r in reports if r.model_name == name and r.train_fraction == fraction)


# -- split ------------------------------------------------------------------


def test_split_sizes_and_partition():
    X = box_samples(100, 0)
    ds = dataset_from(X, np.arange(100.0))
    train, test = split(ds, 0.2, 1)
    assert (len(train), len(test)) == (80, 20)
    assert sorted(np.concatenate([train.targets(), test.targets()])) == list(np.arange(100.0))
    again = split(ds, 0.2, 1)
    assert again[0].same_content(train) and again[1].same_content(test)


@pytest.mark.parametrize("frac", [0.0, 1.0, 0.001])
def test_split_rejects_empty_side(frac):
    ds = dataset_from(box_samples(100, 0), np.zeros(100))
    with pytest.raises(ValueError):
        split(ds, frac, 0)


# -- linear -------------------------------------------------------------------


def test_linear_exact_recovery():
    X = box_samples(50, 1)
    m = fit_linear(X, 2.0 * X[:, 0] + 3.0)
    assert m.w[0] == pytest.approx(2.0, abs=1e-6)
    assert m.b == pytest.approx(3.0, abs=1e-6)
    assert np.all(np.abs(m.w[1:]) < 1e-6)


def test_linear_constant_target():
    X = box_samples(30, 2)
    m = fit_linear(X, np.full(30, 5.0))
    assert np.all(np.abs(m.w) < 1e-6)
    assert m.b == pytest.approx(5.0, abs=1e-6)


def test_linear_noisy_slope():
    rng = np.random.default_rng(42)
    X = box_samples(1000, 3)
    m = fit_linear(X, X[:, 0] + rng.uniform(-0.1, 0.1, 1000))
    assert abs(m.w[0] - 1.0) < 0.05


def test_linear_residual_orthogonality():
    rng = np.random.default_rng(4)
    X = box_samples(200, 4)
    y = np.sin(X[:, 1]) + X[:, 3] ** 2 + rng.normal(size=200)
    m = fit_linear(X, y)
    resid = y - m.predict_many(X)
    A = np.hstack([X, np.ones((200, 1))])
    assert np.max(np.abs(A.T @ resid)) < 1e-6 * max(1.0, np.abs(A).sum())


def test_linear_needs_seven_rows_and_full_rank():
    X = box_samples(6, 5)
    with pytest.raises(FitError):
        fit_linear(X, np.zeros(6))
    X = box_samples(20, 5)
    X[:, 2] = X[:, 1]
    with pytest.raises(FitError):
        fit_linear(X, np.zeros(20))


# -- knn --------------------------------------------------------------------


def test_knn_self_lookup():
    X = box_samples(40, 6)
    y = np.arange(40.0)
    m = fit_knn(X, y, k=1)
    assert np.array_equal(m.predict_many(X), y)


def test_knn_full_neighbourhood_is_mean():
    X = box_samples(40, 7)
    y = np.random.default_rng(7).normal(size=40)
    assert fit_knn(X, y, k=40).predict_many(X[:3]) == pytest.approx(np.full(3, y.mean()))


def test_knn_equidistant_average():
    X = np.array([[-1.0, 0, 0, 5, 5, 5], [1.0, 0, 0, 5, 5, 5], [9.0, 0, 0, 5, 5, 5]])
    m = fit_knn(X, np.array([2.0, 4.0, 100.0]), k=2)
    assert m.predict_many([[0.0, 0, 0, 5, 5, 5]])[0] == pytest.approx(3.0)


def test_knn_ties_go_to_lower_row():
    X = np.array([[-1.0, 0, 0, 5, 5, 5], [1.0, 0, 0, 5, 5, 5]])
    m = fit_knn(X, np.array([2.0, 4.0]), k=1)
    assert m.predict_many([[0.0, 0, 0, 5, 5, 5]])[0] == 2.0


def test_knn_k_bounds():
    X = box_samples(5, 8)
    with pytest.raises(FitError):
        fit_knn(X, np.zeros(5), k=6)
    with pytest.raises(FitError):
        fit_knn(X, np.zeros(5), k=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 1000))
def test_knn_stays_within_target_range(k, seed):
    X = box_samples(20, seed)
    y = np.random.default_rng(seed).normal(size=20)
    pred = fit_knn(X, y, k).predict_many(box_samples(50, seed + 1))
    assert np.all(pred >= y.min() - 1e-12) and np.all(pred <= y.max() + 1e-12)


# -- gbrt -------------------------------------------------------------------


def test_gbrt_zero_trees_predicts_mean():
    X = box_samples(30, 9)
    y = np.random.default_rng(9).normal(size=30)
    m = fit_gbrt(X, y, n_trees=0)
    assert np.allclose(m.predict_many(box_samples(10, 10)), y.mean())


def test_gbrt_step_function_exact():
    X = box_samples(60, 11)
    y = (X[:, 0] > 0).astype(float)
    m = fit_gbrt(X, y, n_trees=1, max_depth=1, learning_rate=1.0, l2_lambda=0.0)
    assert np.allclose(m.predict_many(X), y, atol=1e-12)


def test_gbrt_training_rmse_monotone():
    X = box_samples(300, 12)
    y = np.random.default_rng(12).normal(size=300) + X[:, 0] * X[:, 4] / 10
    m = fit_gbrt(X, y, n_trees=50, seed=12)
    errs = [float(np.sqrt(np.mean((p - y) ** 2))) for p in m.staged_predict(X)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[50] <= errs[10]


def test_gbrt_tree_depth_respected():
    X = box_samples(200, 13)
    y = np.random.default_rng(13).normal(size=200)
    m = fit_gbrt(X, y, n_trees=5, max_depth=3)
    assert all(t.depth <= 3 for t in m.trees)


def test_gbrt_needs_ten_rows():
    with pytest.raises(FitError):
        fit_gbrt(box_samples(9, 0), np.zeros(9))


def test_gbrt_leaf_value_is_shrunk_mean():
    # single split on x1 at 0, l2 = 1: leaves hold sum(r) / (n + 1)
    X = np.zeros((12, 6))
    X[:6, 0], X[6:, 0] = -5.0, 5.0
    y = np.r_[np.full(6, -1.0), np.full(6, 1.0)]
    m = fit_gbrt(X, y, n_trees=1, max_depth=1, learning_rate=1.0, l2_lambda=1.0)
    assert m.predict_many(X[:1])[0] == pytest.approx(-6.0 / 7.0)
    assert m.predict_many(X[-1:])[0] == pytest.approx(6.0 / 7.0)


def _stump(feature, threshold, lo, hi):
    return RegressionTree(
        np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
        np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0.0, lo, hi]),
    )


def test_gbrt_two_tree_hand_traversal():
    t1 = _stump(0, 0.0, -2.0, 3.0)
    t2 = RegressionTree(
        np.array([4, -1, 1, -1, -1]), np.array([5.0, 0.0, -3.0, 0.0, 0.0]),
        np.array([1, -1, 3, -1, -1]), np.array([2, -1, 4, -1, -1]),
        np.array([0.0, 0.5, 0.0, -1.0, 4.0]),
    )
    model = GbrtModel(1.0, 0.1, 1.0, 2, [t1, t2])

    def by_hand(x):
        a = -2.0 if x[0] <= 0.0 else 3.0
        if x[4] <= 5.0:
            b = 0.5
        else:
            b = -1.0 if x[1] <= -3.0 else 4.0
        return 1.0 + 0.1 * (a + b)

    for x in box_samples(200, 14):
        assert predict(model, x) == pytest.approx(by_hand(x), abs=1e-12)


# -- predict and rmse ---------------------------------------------------------


def test_constant_linear_model():
    m = LinearModel(np.zeros(6), 7.5)
    for x in box_samples(5, 15):
        assert predict(m, MobilityConfig.from_vector(x)) == 7.5


def test_predict_clamps_and_warns():
    m = LinearModel(np.array([1.0, 0, 0, 0, 0, 0]), 0.0)
    with pytest.warns(RuntimeWarning):
        assert predict(m, [12.0, 0, 0, 0, 0, 0]) == 10.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert predict(m, [10.0, 0, 0, 0, 0, 10.0]) == 10.0


def test_external_table_lookup():
    X = lattice(REDUCED)
    vals = X.sum(axis=1)
    table = ExternalTable(X, vals)
    assert np.array_equal(table.predict_many(X[::97]), vals[::97])
    # off-lattice queries snap to the nearest point
    assert table.predict_many([[-9.0, 0.4, 6.0, 1.0, 4.0, 9.0]])[0] == -10 + 0 + 5 + 0 + 5 + 10


def test_external_table_scattered_points():
    X = box_samples(30, 16)
    table = ExternalTable(X, np.arange(30.0))
    assert np.array_equal(table.predict_many(X), np.arange(30.0))


def test_external_table_from_csv(tmp_path):
    path = tmp_path / "ext.csv"
    path.write_text("cio1,cio2,cio3,hom1,hom2,hom3,mean_sinr_db\n0,0,0,0,0,0,4.5\n2,0,0,0,0,0,6.5\n")
    table = read_external_table(path)
    assert predict(table, MobilityConfig((2.0, 0.0, 0.0), (0.0, 0.0, 0.0))) == 6.5


def test_rmse_examples():
    X = box_samples(10, 17)
    m = LinearModel(np.zeros(6), 0.0)
    assert rmse(m, X, np.zeros(10)) == 0.0
    assert rmse(m, X, np.full(10, -1.0)) == 1.0
    assert rmse(m, X[:2], np.array([3.0, -4.0])) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        rmse(m, X[:0], np.array([]))


# -- harness ----------------------------------------------------------------


def test_linear_truth_gives_zero_test_error():
    X = lattice(REDUCED)
    y = X @ np.array([0.1, -0.2, 0.3, 0.05, 0.0, -0.4]) + 2.0
    reps = evaluate_models(dataset_from(X, y), fractions=(1.0,), seed=42)
    assert by_name(reps, "linear", 1.0).rmse_test < 1e-6


def test_report_bookkeeping(reduced_sweep, reports):
    train, test = split(reduced_sweep, 0.2, 42)
    full = by_name(reports, "gbrt", 1.0)
    assert full.n_train == len(train) == 2_700
    assert full.n_test == len(test) == 675
    assert by_name(reports, "gbrt", 0.1).n_train == 270
    assert len(reports) == 6
    assert all(r.error is None and r.rmse_train >= 0 and r.rmse_test >= 0 for r in reports)


def test_sparse_harness_reports_finite_rmse(reports):
    assert all(math.isfinite(r.rmse_test) for r in reports if r.train_fraction == 0.1)


def test_gbrt_beats_knn(reports):
    assert by_name(reports, "gbrt", 1.0).rmse_test <= by_name(reports, "knn(k=5)", 1.0).rmse_test


@pytest.mark.xfail(strict=True, reason="noise-free target: GBRT error is far below half of KNN's")
def test_knn_within_twice_gbrt(reports):
    assert by_name(reports, "knn(k=5)", 1.0).rmse_test <= 2 * by_name(reports, "gbrt", 1.0).rmse_test


def test_fit_errors_do_not_abort(reduced_sweep):
    def broken(X, y, seed):
        raise FitError("boom")

    reps = evaluate_models(reduced_sweep, fractions=(0.1,), families={"broken": broken, "linear": lambda X, y, s: fit_linear(X, y)})
    assert reps[0].error == "boom" and math.isnan(reps[0].rmse_test)
    assert reps[1].error is None


def test_ranking_orders_by_fraction_then_error(reports):
    ranked = ranking(reports)
    assert [r.train_fraction for r in ranked[:3]] == [1.0] * 3
    assert ranked[0].model_name == "gbrt"


def test_reports_are_deterministic(reduced_sweep):
    fams = {"linear": lambda X, y, s: fit_linear(X, y), "knn(k=5)": lambda X, y, s: fit_knn(X, y, 5)}
    a = evaluate_models(reduced_sweep, seed=3, families=fams)
    b = evaluate_models(reduced_sweep, seed=3, families=fams)
    assert a == b


def test_write_reports(tmp_path, reports):
    path = tmp_path / "r.csv"
    write_reports(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("model_name,train_fraction")
    assert len(lines) == 7


@pytest.mark.parametrize("family", ["linear", "knn", "gbrt"])
def test_model_file_round_trip(reduced_sweep, tmp_path, family):
    trained = train_model(reduced_sweep, family, fraction=0.1, seed=5, gbrt_kwargs={"n_trees": 20})
    save_model(trained, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    X, _ = rows_from_dataset(reduced_sweep)
    assert np.array_equal(back.predict_many(X), trained.predict_many(X))
    assert back.report == trained.report


def test_external_model_round_trip(reduced_sweep, tmp_path):
    path = tmp_path / "ext.csv"
    write_csv(reduced_sweep, path)
    trained = train_model(reduced_sweep, "external", table=read_external_table(path))
    assert trained.report.rmse_test < 1e-6
    save_model(trained, tmp_path / "m.bin")
    assert isinstance(load_model(tmp_path / "m.bin"), TrainedModel)


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "m.bin").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_model(tmp_path / "m.bin")
