import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score, roc_auc_score

from droughtcast.metrics import (
    PHASE_LABELS,
    class_scores_from_prediction,
    classify_phase,
    classify_phases,
    confusion_and_accuracy,
    hand_till_auroc,
    one_vs_all_roc,
    overfit_index,
    regression_metrics,
)

# one county over 24 months, colour-coded; Red -> 2, Yellow -> 3, Green -> 4
_COLOURS = {"Red": 2, "Yellow": 3, "Green": 4}
COUNTY_ACTUAL = ("Yellow Red Red Red Green Green Green Green Green Green Red Red Red Red Red Red "
                  "Yellow Yellow Yellow Yellow Yellow Yellow Yellow Yellow").split()
COUNTY_PREDICTED = ("Yellow Yellow Red Yellow Green Green Green Yellow Green Green Yellow Red Yellow "
                     "Red Red Red Yellow Yellow Yellow Yellow Yellow Yellow Yellow Yellow").split()


def brute_force_hand_till(scores, actual):
    classes = np.unique(actual)
    total = 0.0
    for a, i in enumerate(classes):
        for j in classes[a + 1:]:
            def a_given(p, q):
                sp = scores[actual == p, p - 1]
                sq = scores[actual == q, p - 1]
                wins = sum((x > y) + 0.5 * (x == y) for x in sp for y in sq)
                return wins / (sp.size * sq.size)
            total += (a_given(i, j) + a_given(j, i)) / 2
    c = classes.size
    return 2 * total / (c * (c - 1))


def test_perfect_prediction():
    y = np.array([5.0, 20.0, 60.0, 80.0])
    m = regression_metrics(y, y)
    assert (m.mae, m.mse, m.rmse, m.mape, m.nmse, m.nmae, m.r2) == (0, 0, 0, 0, 0, 0, 1)


def test_constant_offset():
    y = np.array([5.0, 20.0, 60.0, 80.0])
    m = regression_metrics(y, y + 7)
    assert m.mae == pytest.approx(7) and m.rmse == pytest.approx(7)


def test_negative_r2():
    assert regression_metrics([0, 10], [10, 0]).r2 == -3.0


def test_metric_errors():
    with pytest.raises(ValueError):
        regression_metrics([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        regression_metrics([4, 4, 4], [1, 2, 3])
    with pytest.raises(ValueError):  # spread too small to square
        regression_metrics([0.0, 1e-276], [0.0, 0.0])


def test_mape_skips_small_actuals():
    m = regression_metrics([0.0, 10.0, 20.0], [5.0, 11.0, 18.0])
    assert m.mape == pytest.approx(100 * (0.1 + 0.1) / 2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=2, max_size=40))
def test_metrics_against_sklearn(pairs):
    y, yhat = np.array(pairs).T
    if np.var(y) < 1e-9:
        return
    m = regression_metrics(y, yhat)
    assert m.mae == pytest.approx(mean_absolute_error(y, yhat), abs=1e-9)
    assert m.mse == pytest.approx(mean_squared_error(y, yhat), abs=1e-9)
    assert m.r2 == pytest.approx(r2_score(y, yhat), rel=1e-9, abs=1e-9)
    assert m.mae <= m.rmse + 1e-12
    assert m.mse == pytest.approx(m.rmse ** 2, rel=1e-12, abs=1e-12)
    assert m.nmse == pytest.approx(m.mse / np.var(y), rel=1e-12)


def test_overfit_examples():
    idx, flag = overfit_index(0.86, 0.85)
    assert round(idx, 2) == 0.01 and not flag
    idx, flag = overfit_index(0.78, 0.74)
    assert idx >= 0.03 and flag
    assert overfit_index(0.5, 0.5) == (0.0, False)
    # the boundary itself is overfit
    assert overfit_index(0.86, 0.83)[1]
    assert overfit_index(0.53, 0.5)[1]
    # 0.29 - 0.26 evaluates to 0.02999999999999997
    assert all(overfit_index(a / 100, (a - 3) / 100)[1] for a in range(3, 101))
    assert not overfit_index(0.5299999, 0.5)[1]


def test_phase_examples():
    assert classify_phase(5) == 1
    assert classify_phase(10) == 2
    assert classify_phase(100) == 5
    sweep = [0, 9.999, 10, 19.999, 20, 34.999, 35, 49.999, 50, 100]
    assert [classify_phase(v) for v in sweep] == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
    assert classify_phases(sweep).tolist() == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
    assert set(PHASE_LABELS) == {1, 2, 3, 4, 5}


def test_phase_total_monotone_surjective():
    grid = np.linspace(0, 100, 10001)
    phases = classify_phases(grid)
    assert np.all(np.diff(phases) >= 0)
    assert set(phases.tolist()) == {1, 2, 3, 4, 5}
    assert all(classify_phase(v) == p for v, p in zip(grid[::97], phases[::97]))


def test_confusion_examples():
    cm, acc = confusion_and_accuracy([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    assert acc == 1.0 and np.array_equal(cm, np.eye(5, dtype=int))
    cm, acc = confusion_and_accuracy([1, 1, 2], [3, 3, 4])
    assert acc == 0.0
    with pytest.raises(ValueError):
        confusion_and_accuracy([1, 2], [1])


def test_colour_coded_sequence():
    actual = [_COLOURS[c] for c in COUNTY_ACTUAL]
    predicted = [_COLOURS[c] for c in COUNTY_PREDICTED]
    cm, acc = confusion_and_accuracy(actual, predicted)
    assert cm.sum() == 24
    assert acc == pytest.approx(19 / 24)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=60))
def test_confusion_margins(pairs):
    a, p = np.array(pairs).T
    cm, acc = confusion_and_accuracy(a, p)
    assert np.array_equal(cm.sum(axis=1), np.bincount(a, minlength=6)[1:])
    assert np.array_equal(cm.sum(axis=0), np.bincount(p, minlength=6)[1:])
    assert acc == pytest.approx(np.mean(a == p))


def test_class_scores():
    sweep = np.linspace(0, 100, 2001)
    s = class_scores_from_prediction(sweep)
    assert s.shape == (2001, 5)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
    for k, centre in enumerate([5.0, 15.0, 27.5, 42.5, 75.0], start=1):
        sc = class_scores_from_prediction(centre)
        assert int(np.argmax(sc)) + 1 == k == classify_phase(centre)


def test_hand_till_simple_cases():
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]])
    s5 = np.zeros((4, 5))
    s5[:, :2] = scores
    assert hand_till_auroc(s5, [1, 1, 2, 2]) == 1.0
    assert hand_till_auroc(np.full((6, 5), 0.2), [1, 1, 3, 3, 4, 4]) == 0.5
    with pytest.raises(ValueError):
        hand_till_auroc(s5, [2, 2, 2, 2])


def test_hand_till_matches_brute_force_and_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(10, 51))
        c = int(rng.integers(2, 6))
        classes = rng.choice(np.arange(1, 6), size=c, replace=False)
        actual = rng.choice(classes, size=n)
        if np.unique(actual).size < 2:
            continue
        scores = rng.integers(0, 4, size=(n, 5)).astype(float)  # coarse values -> ties
        assert hand_till_auroc(scores, actual) == pytest.approx(brute_force_hand_till(scores, actual), abs=1e-12)
    # sklearn's one-vs-one macro AUC is the same measure for probability scores
    actual = rng.integers(1, 6, size=200)
    probs = rng.dirichlet(np.ones(5), size=200)
    assert hand_till_auroc(probs, actual) == pytest.approx(
        roc_auc_score(actual, probs, multi_class="ovo", labels=[1, 2, 3, 4, 5]), abs=1e-12)


def test_two_class_equals_classical_auc():
    rng = np.random.default_rng(1)
    actual = rng.integers(1, 3, size=40)
    scores = rng.random((40, 5))
    scores[:, 1] = 1 - scores[:, 0]
    assert hand_till_auroc(scores, actual) == pytest.approx(roc_auc_score(actual == 1, scores[:, 0]), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_hand_till_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    actual = rng.integers(1, 4, size=25)
    if np.unique(actual).size < 2:
        return
    scores = rng.random((25, 5))
    transformed = np.exp(3 * scores) + 2.0
    assert hand_till_auroc(scores, actual) == pytest.approx(hand_till_auroc(transformed, actual), abs=1e-12)


def test_one_vs_all_roc_endpoints():
    rng = np.random.default_rng(2)
    actual = rng.integers(1, 6, size=60)
    curves = one_vs_all_roc(rng.random((60, 5)), actual)
    for curve in curves.values():
        assert curve["fpr"][0] == 0.0 and curve["tpr"][0] == 0.0
        assert curve["fpr"][-1] == 1.0 and curve["tpr"][-1] == 1.0
        assert np.all(np.diff(curve["fpr"]) >= 0) and np.all(np.diff(curve["tpr"]) >= 0)
