import datetime as dt

import pytest

from mislstm import ingest
from mislstm.types import LabelVector, ParseError

from conftest import make_record


def write(path, text):
    path.write_text(text)
    return path


def test_single_row(tmp_path):
    p = write(tmp_path / "s.csv", "subject_id,timestamp,item,value\nu01,1735689600,wHr,72.0\n")
    (rec,) = ingest.parse_sensor_file(p)
    assert rec.key == ("u01", dt.date(2025, 1, 1))
    assert [(r.item, r.value) for r in rec.readings()] == [("wHr", 72.0)]


def test_header_only_is_empty(tmp_path):
    p = write(tmp_path / "s.csv", "subject_id,timestamp,item,value\n")
    assert ingest.parse_sensor_file(p) == []


def test_same_day_rows_are_grouped(tmp_path):
    p = write(
        tmp_path / "s.csv",
        "subject_id,timestamp,item,value\nu01,1735689660,mGps,3\nu01,1735689600,wHr,70\nu02,1735689600,wHr,60\n",
    )
    recs = ingest.parse_sensor_file(p)
    assert [r.key[0] for r in recs] == ["u01", "u02"]
    assert len(recs[0]) == 2


def test_malformed_row_reports_line(tmp_path):
    p = write(tmp_path / "s.csv", "subject_id,timestamp,item,value\nu01,1735689600,wHr,72\nu01,abc,wHr,1\n")
    with pytest.raises(ParseError) as err:
        ingest.parse_sensor_file(p)
    assert err.value.line == 3


def test_unknown_item_is_listed(tmp_path):
    p = write(tmp_path / "s.csv", "subject_id,timestamp,item,value\nu01,1735689600,wFoo,1\n")
    with pytest.raises(ParseError, match="wFoo"):
        ingest.parse_sensor_file(p)


def test_label_row_and_errors(tmp_path):
    head = "subject_id,date,Q1,Q2,Q3,S1,S2,S3\n"
    p = write(tmp_path / "l.csv", head + "u01,2025-01-01,1,0,1,2,1,0\n")
    assert ingest.parse_labels_file(p) == {("u01", dt.date(2025, 1, 1)): LabelVector(1, 0, 1, 2, 1, 0)}
    with pytest.raises(ParseError, match="range error"):
        ingest.parse_labels_file(write(tmp_path / "b.csv", head + "u01,2025-01-01,1,0,1,3,1,0\n"))
    with pytest.raises(ParseError, match="duplication error"):
        ingest.parse_labels_file(write(tmp_path / "d.csv", head + "u01,2025-01-01,1,0,1,2,1,0\n" * 2))


def test_build_dataset_counts_and_indexes():
    labels = {}
    recs = []
    for s in ("b", "a"):
        for d in range(3):
            date = dt.date(2025, 1, 1 + d)
            recs.append(make_record(s, date, [(1, "wHr", 60)]))
            labels[(s, date)] = LabelVector(0, 0, 0, 0, 0, 0)
    recs.append(make_record("a", dt.date(2025, 2, 1), [(1, "wHr", 60)]))
    ds = ingest.build_dataset(recs, labels)
    assert len(ds) == 6 and ds.dropped == 1
    assert ds.subject_index == {"a": 0, "b": 1}
    assert len(ingest.build_dataset([], {})) == 0


def test_round_trip(tmp_path, rng):
    from conftest import random_record

    recs = [random_record(rng, s, dt.date(2025, 3, d)) for s in ("u01", "u02") for d in (1, 2)]
    p = tmp_path / "rt.csv"
    ingest.write_sensor_csv(recs, p)
    back = ingest.parse_sensor_file(p)
    ingest.write_sensor_csv(back, tmp_path / "rt2.csv")
    assert (tmp_path / "rt2.csv").read_bytes() == p.read_bytes()
    back2 = ingest.parse_sensor_file(tmp_path / "rt2.csv")
    for a, b in zip(back, back2):
        assert a.key == b.key and list(a.readings()) == list(b.readings())


def test_labels_round_trip(tmp_path):
    labels = {("u02", dt.date(2025, 1, 2)): LabelVector(0, 1, 0, 1, 0, 1), ("u01", dt.date(2025, 1, 1)): LabelVector(1, 1, 1, 2, 1, 1)}
    p = tmp_path / "l.csv"
    ingest.write_labels_csv(labels, p)
    assert ingest.parse_labels_file(p) == labels
