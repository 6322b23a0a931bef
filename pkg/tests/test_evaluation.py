import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echomi.errors import ValidationError
from echomi.evaluation import (AccessLog, ConfusionMatrix, FeatureTable, GridSpec,
                               compute_metrics, f1_chart_svg, grid_search, metrics_csv,
                               mode_data, or_fuse, report_json, run_experiment,
                               selected_params_json, stratified_kfold)
from echomi.ml import KINDS

SMALL_GRIDS = {
    "DT": {"criterion": ["gini"], "max_features": ["all"], "splitter": ["best"]},
    "RF": {"n_trees": [5], "max_features": ["all"], "bootstrap": [False]},
    "SVM": {"kernel": ["linear"], "C": [10.0]},
    "KNN": {"k": [5]},
    "CNN1D": {"lr": [1e-2], "filters": [4], "kernel": [3], "epochs": [100]},
}


def table(n=40, seed=0, separable=True, a4c_labels=None, agree=False):
    g = np.random.default_rng(seed)
    y4 = np.array([1, 0] * (n // 2)) if a4c_labels is None else np.asarray(a4c_labels)
    y2 = y4.copy() if agree else g.permutation(y4)
    fused = y4 | y2
    rows = []
    for i in range(n):
        sid = f"s{i:03d}"
        for view, y in (("A4C", y4[i]), ("A2C", y2[i])):
            phi = g.uniform(0.05, 0.1, 6) if separable else g.uniform(0, 1, 6)
            if separable and y == 1:
                phi += 0.5
            rows.append((sid, view, phi, int(y), int(fused[i])))
    return FeatureTable.from_rows(rows)


# ---------------------------------------------------------------- folds

def test_balanced_folds():
    y = np.array([1] * 10 + [0] * 10)
    plan = stratified_kfold(y, 5, 0)
    for tr, te in plan.folds:
        assert (y[te] == 1).sum() == 2 and (y[te] == 0).sum() == 2
        assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 20


def test_cohort_sized_folds():
    y = np.array([1] * 88 + [0] * 42)
    plan = stratified_kfold(y, 5, 0)
    mi = sorted(int((y[te] == 1).sum()) for _, te in plan.folds)
    non = sorted(int((y[te] == 0).sum()) for _, te in plan.folds)
    assert set(mi) <= {17, 18} and set(non) <= {8, 9}
    assert sum(mi) == 88 and sum(non) == 42


def test_too_few_members():
    with pytest.raises(ValidationError, match="5 members"):
        stratified_kfold(np.array([1] * 3 + [0] * 10), 5, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(5, 40), st.integers(2, 5), st.integers(0, 10 ** 6))
def test_folds_partition(n1, n0, k, seed):
    y = np.array([1] * n1 + [0] * n0)
    plan = stratified_kfold(y, k, seed)
    tests = np.concatenate([te for _, te in plan.folds])
    assert np.array_equal(np.sort(tests), np.arange(len(y)))
    sizes = [len(te) for _, te in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    for c, n in ((1, n1), (0, n0)):
        per = [int((y[te] == c).sum()) for _, te in plan.folds]
        assert max(per) - min(per) <= 1
    assert stratified_kfold(y, k, seed).folds[0][1].tolist() == plan.folds[0][1].tolist()


# ---------------------------------------------------------------- metrics

def test_metrics_table_rows():
    m = compute_metrics(ConfusionMatrix(tp=77, fn=11, tn=26, fp=16)).to_dict()
    assert m == {"sensitivity": 87.5, "specificity": 61.9, "precision": 82.8,
                 "accuracy": 79.23, "f1": 85.08, "f2": 86.52}
    m = compute_metrics(ConfusionMatrix(tp=76, fn=12, tn=30, fp=12)).to_dict()
    assert m == {"sensitivity": 86.36, "specificity": 71.43, "precision": 86.36,
                 "accuracy": 81.54, "f1": 86.36, "f2": 86.36}


def test_degenerate_metrics():
    m = compute_metrics(ConfusionMatrix(tn=5))
    assert m.specificity == 100 and m.accuracy == 100
    assert m.sensitivity is None and m.precision is None and m.f1 is None and m.f2 is None


def test_negative_counts():
    with pytest.raises(ValidationError):
        ConfusionMatrix(tp=-1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 100), st.integers(1, 100))
def test_f_scores_between_precision_and_recall(tp, fn, tn, fp):
    m = compute_metrics(ConfusionMatrix(tp=tp, fn=fn, tn=tn, fp=fp))
    lo, hi = sorted((m.precision, m.sensitivity))
    assert lo - 1e-9 <= m.f1 <= hi + 1e-9
    assert lo - 1e-9 <= m.f2 <= hi + 1e-9
    # F2 leans toward sensitivity
    assert abs(m.f2 - m.sensitivity) <= abs(m.f1 - m.sensitivity) + 1e-9


def test_or_fuse():
    assert or_fuse(1, 0) == 1 and or_fuse(0, 0) == 0 and or_fuse(1, 1) == 1 and or_fuse(0, 1) == 1
    assert or_fuse(np.array([1, 0, 0]), np.array([0, 0, 1])).tolist() == [1, 0, 1]


# ---------------------------------------------------------------- tables

def test_feature_table_csv_roundtrip():
    t = table(n=10)
    t2 = FeatureTable.from_csv(t.to_csv())
    assert t2.subjects == t.subjects
    for v in ("A4C", "A2C"):
        assert np.array_equal(t2.phi[v], t.phi[v]) and np.array_equal(t2.labels[v], t.labels[v])
    assert t2.to_csv() == t.to_csv()


def test_feature_table_missing_columns():
    with pytest.raises(ValidationError, match="missing columns"):
        FeatureTable.from_csv("subject,label_fused\ns1,1\n")


def test_mode_data_shapes():
    t = table(n=10)
    assert mode_data(t, "a4c")[1].shape == (10, 6)
    rows, X, y = mode_data(t, "multiview_concat")
    assert X.shape == (10, 12) and np.array_equal(y, t.fused)
    with pytest.raises(ValidationError):
        mode_data(t, "A3C")


# ---------------------------------------------------------------- grid search

def test_single_cell_grid():
    t = table()
    _, X, y = mode_data(t, "A4C")
    best, scores = grid_search(GridSpec("KNN", {"k": [7]}), X, y)
    assert best.params["k"] == 7 and len(scores) == 1


def test_separating_cell_wins():
    g = np.random.default_rng(0)
    y = np.array([0, 1] * 20)
    X = np.column_stack([y + 0.1 * g.normal(size=40), g.normal(size=40)])
    # k=30 degenerates to the training-set majority; k=5 separates
    best, scores = grid_search(GridSpec("KNN", {"k": [30, 5], "metric": ["euclidean"]}), X, y)
    assert best.params["k"] == 5
    assert scores[1][1] == 100.0 and scores[0][1] < 100.0


def test_ties_keep_first_cell():
    t = table()
    _, X, y = mode_data(t, "A4C")
    best, scores = grid_search(GridSpec("KNN", {"k": [5, 6, 7]}), X, y)
    assert len({s for _, s in scores}) == 1
    assert best.params["k"] == 5


# ---------------------------------------------------------------- experiments

@pytest.mark.parametrize("kind", KINDS)
def test_separable_cohort_is_perfect(kind):
    r = run_experiment(table(agree=True), "multiview_concat", GridSpec(kind, SMALL_GRIDS[kind]),
                       seed=0)
    assert r.pooled.accuracy == 100.0


def test_random_labels_near_chance():
    accs = []
    for seed in range(20):
        t = table(seed=seed, separable=False)
        r = run_experiment(t, "A4C", GridSpec("KNN", {"k": [5]}), seed=seed)
        accs.append(r.pooled.accuracy)
    majority = 50.0
    assert abs(np.mean(accs) - majority) <= 15


def test_or_absorbs_always_mi_view():
    n = 60
    a4c = np.array([1] * 50 + [0] * 10)
    t = table(n=n, a4c_labels=a4c, separable=False)
    # identical A4C features: the k-NN majority vote is MI for every subject
    t.phi["A4C"][:] = 0.5
    t.fused[:] = t.labels["A2C"]
    r = run_experiment(t, "multiview_or", GridSpec("KNN", {"k": [5]}), seed=0)
    assert all(p["pred_A4C"] == 1 for p in r.predictions)
    assert r.pooled.sensitivity == 100.0 and r.pooled.specificity == 0.0


def test_no_test_rows_reach_training():
    log = AccessLog()
    t = table()
    run_experiment(t, "multiview_or", GridSpec("KNN", {"k": [5]}), seed=3, access_log=log)
    plan_tests = {}
    for fold, stage, rows in log.events:
        if stage.startswith("predict"):
            plan_tests.setdefault(fold, set()).update(rows.tolist())
    for fold, stage, rows in log.events:
        if not stage.startswith("predict"):
            assert not plan_tests[fold] & set(rows.tolist()), (fold, stage)


def test_reports_are_deterministic(tmp_path):
    t = table(separable=False)
    res = [run_experiment(t, m, GridSpec("KNN", {"k": [5, 10]}), seed=1) for m in ("A4C", "multiview_or")]
    again = [run_experiment(t, m, GridSpec("KNN", {"k": [5, 10]}), seed=1) for m in ("A4C", "multiview_or")]
    assert report_json(res) == report_json(again)
    assert metrics_csv(res) == metrics_csv(again)
    assert selected_params_json(res) == selected_params_json(again)
    f1_chart_svg(res, tmp_path / "a.svg")
    f1_chart_svg(again, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_pooled_matrix_is_sum_of_folds():
    r = run_experiment(table(separable=False), "A2C", GridSpec("KNN", {"k": [5]}), seed=2)
    total = ConfusionMatrix()
    for f in r.folds:
        total = total + f.cm
    assert total == r.pooled_cm and total.total == 40
