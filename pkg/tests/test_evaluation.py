import numpy as np
import pytest

from mislstm import evaluation as E


def test_fmt3_rounds_half_up():
    assert E.fmt3(0.6145) == "0.615"
    assert E.fmt3(0.5) == "0.500"
    assert E.fmt3(1 / 3) == "0.333"


def test_published_row_average():
    r = E.MetricReport.from_scores((0.625, 0.626, 0.618, 0.486, 0.650, 0.682), "MIS-LSTM")
    assert E.fmt3(r.average) == "0.615"
    assert "0.615" in E.format_table([r])


def test_report_averages():
    assert E.MetricReport.from_scores([1] * 6).average == 1.0
    assert E.MetricReport.from_scores([1, 1, 1, 1, 1, 0]).average == pytest.approx(5 / 6)


def test_macro_f1_examples():
    assert E.macro_f1([0, 1, 1, 0], [0, 1, 1, 0], 2) == 1.0
    assert E.macro_f1([0, 0, 0, 0], [0, 0, 1, 1], 2) == pytest.approx(1 / 3)
    assert E.macro_f1([0, 1, 0, 1], [0, 1, 0, 1], 3) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        E.macro_f1([], [], 2)


def test_split_counts_and_determinism():
    subjects = np.repeat(np.arange(10), 50)
    tr, va = E.stratified_subject_split(subjects, 0.8, seed=4)
    assert np.bincount(subjects[tr]).tolist() == [40] * 10
    tr2, va2 = E.stratified_subject_split(subjects, 0.8, seed=4)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    assert not set(tr) & set(va)


def test_split_rounding_and_errors():
    tr, va = E.stratified_subject_split([0] * 5, 0.8)
    assert (len(tr), len(va)) == (4, 1)
    with pytest.raises(ValueError):
        E.stratified_subject_split([0, 0, 1], 0.8)


def test_evaluate_and_serialization():
    labels = np.array([[0, 1, 0, 2, 1, 0], [1, 0, 1, 1, 0, 1]])
    r = E.evaluate(labels, labels, "x")
    assert r.average == pytest.approx(np.mean([1, 1, 1, 2 / 3, 1, 1]))
    back = E.MetricReport.from_dict(r.to_dict())
    assert back.per_head == r.per_head
    assert np.array_equal(back.confusion["s1"], r.confusion["s1"])
