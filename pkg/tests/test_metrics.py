import numpy as np
import pytest

from emofuse.metrics import compute_metrics, read_metrics, write_report


def test_all_correct():
    report = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], ["a", "b", "c"])
    assert report.wa == report.ua == report.wf1 == 1.0
    assert np.array_equal(report.confusion, np.diag([1, 2, 1]))


def test_two_class_reference_case():
    # confusion [[1,1],[0,2]]: one class-0 sample predicted 0, one predicted 1;
    # both class-1 samples predicted 1
    report = compute_metrics([0, 0, 1, 1], [0, 1, 1, 1], ["x", "y"])
    assert np.array_equal(report.confusion, np.array([[1, 1], [0, 2]]))
    assert report.wa == pytest.approx(0.75, abs=1e-4)
    assert report.ua == pytest.approx(0.75, abs=1e-4)
    assert report.wf1 == pytest.approx(0.7333, abs=1e-4)


def test_single_class_split_ua_is_recall():
    report = compute_metrics([1, 1, 1, 1], [1, 1, 0, 1], ["a", "b"])
    assert report.ua == pytest.approx(0.75)
    assert report.wa == pytest.approx(0.75)


def test_wa_equals_trace_over_total():
    rng = np.random.default_rng(0)
    y_true = [int(v) for v in rng.integers(0, 4, size=50)]
    y_pred = [int(v) for v in rng.integers(0, 4, size=50)]
    report = compute_metrics(y_true, y_pred, ["a", "b", "c", "d"])
    assert report.wa == np.trace(report.confusion) / report.confusion.sum()
    assert 0.0 <= report.wa <= 1.0
    assert 0.0 <= report.ua <= 1.0
    assert 0.0 <= report.wf1 <= 1.0
    assert report.confusion.sum() == 50


def test_normalized_rows_sum_to_one():
    rng = np.random.default_rng(1)
    y_true = [int(v) for v in rng.integers(0, 4, size=40)]
    y_pred = [int(v) for v in rng.integers(0, 4, size=40)]
    report = compute_metrics(y_true, y_pred, ["a", "b", "c", "d"])
    norm = report.normalized_confusion()
    counts = report.confusion
    for i in range(4):
        if counts[i].sum() > 0:
            assert abs(norm[i].sum() - 1.0) < 1e-6
            expected = counts[i] / counts[i].sum()
            assert np.max(np.abs(norm[i] - expected)) < 1e-12


def test_report_round_trip_exact(tmp_path):
    report = compute_metrics([0, 0, 1, 1], [0, 1, 1, 1], ["x", "y"])
    paths = write_report(report, tmp_path)
    back = read_metrics(paths["metrics"])
    assert back.wa == report.wa
    assert back.ua == report.ua
    assert back.wf1 == report.wf1
    assert np.array_equal(back.confusion, report.confusion)

    table = open(paths["confusion_normalized"]).read().strip().splitlines()
    assert len(table) == 3
    for line in table[1:]:
        vals = [float(v) for v in line.split("\t")[1:]]
        assert abs(sum(vals) - 1.0) < 1e-5


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        compute_metrics([], [], ["a", "b"])
