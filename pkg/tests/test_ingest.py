from datetime import datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from subscreen.ingest import (
    CodeStateStore,
    ColumnMapping,
    EventLog,
    GradeBook,
    RowError,
    SchemaError,
    SubmissionEvent,
    load_gradebook,
    parse_main_table,
    parse_timestamp,
    resolve_code,
    validate_log,
)

from conftest import MAIN_HEADER, row, write_csv


def test_header_only(tmp_path):
    log = parse_main_table(write_csv(tmp_path / "m.csv", MAIN_HEADER, []))
    assert len(log.events) == 0
    assert log.rows_skipped == 0


def test_event_type_filter(tmp_path):
    rows = [
        row("s1", "p1", "2021-01-01T10:00:00", "0.5", etype="Submit"),
        row("s1", "p1", "2021-01-01T10:01:00", "0.7", etype="Run.Program"),
        row("s1", "p1", "2021-01-01T09:59:00", "", etype="FileOpen"),
    ]
    log = parse_main_table(write_csv(tmp_path / "m.csv", MAIN_HEADER, rows))
    assert len(log.events) == 2
    assert log.rows_skipped == 1
    # the skipped row is still usable for timing
    assert log.first_seen()[("s1", "p1")] == datetime(2021, 1, 1, 9, 59, tzinfo=timezone.utc)


def test_score_out_of_range_names_row(tmp_path):
    rows = [row("s1", "p1", "2021-01-01T10:00:00", "0.5"), row("s1", "p1", "2021-01-01T10:01:00", "1.2")]
    path = write_csv(tmp_path / "m.csv", MAIN_HEADER, rows)
    with pytest.raises(RowError) as err:
        parse_main_table(path)
    assert err.value.row == 2
    lenient = parse_main_table(path, strict=False)
    assert len(lenient.events) == 1
    assert [e.row for e in lenient.row_errors] == [2]


def test_missing_column(tmp_path):
    path = write_csv(tmp_path / "m.csv", MAIN_HEADER[:-2], [])
    with pytest.raises(SchemaError, match="Score"):
        parse_main_table(path)


def test_custom_mapping(tmp_path):
    header = ["student", "exercise", "kind", "when", "points"]
    path = write_csv(tmp_path / "m.csv", header, [["a", "x", "Submit", "1600000000", "1"]])
    mapping = ColumnMapping(
        subject="student", problem="exercise", event_type="kind", timestamp="when", score="points",
        code_state="", timestamp_format="epoch",
    )
    log = parse_main_table(path, mapping)
    assert log.events[0].timestamp == datetime.fromtimestamp(1600000000, tz=timezone.utc)
    with pytest.raises(ValueError):
        ColumnMapping.from_dict({"subject": "a", "bogus": 1})


def test_scores_near_bounds_are_clamped(tmp_path):
    path = write_csv(tmp_path / "m.csv", MAIN_HEADER, [row("s1", "p1", "2021-01-01T10:00:00", "1.0000000001")])
    assert parse_main_table(path).events[0].score == 1.0


def test_timestamps():
    utc = datetime(2021, 1, 1, 10, 0, tzinfo=timezone.utc)
    assert parse_timestamp("2021-01-01T10:00:00Z") == utc
    assert parse_timestamp("2021-01-01T11:00:00+01:00") == utc
    assert parse_timestamp("2021-01-01T10:00:00") == utc
    assert parse_timestamp("01/01/2021 10:00", "%d/%m/%Y %H:%M") == utc


def test_round_trip_is_byte_identical(toy_dataset, tmp_path):
    log = parse_main_table(toy_dataset["main_table"])
    first = log.to_csv()
    (tmp_path / "again.csv").write_text(first, encoding="utf-8")
    assert parse_main_table(tmp_path / "again.csv").to_csv() == first


def test_gradebook(tmp_path):
    gb = load_gradebook(write_csv(tmp_path / "g.csv", ["subject_id", "grade"], [["s1", "85.0"], ["s2", "42.5"]]))
    assert len(gb) == 2 and gb["s2"] == 42.5
    with pytest.raises(RowError, match="s1"):
        load_gradebook(write_csv(tmp_path / "d.csv", ["subject_id", "grade"], [["s1", "1"], ["s1", "2"]]))
    with pytest.raises(RowError):
        load_gradebook(write_csv(tmp_path / "n.csv", ["subject_id", "grade"], [["s1", "N/A"]]))


def _event(order, cs=None, ts=None, sid="s1", pid="p1"):
    ts = ts or datetime(2021, 1, 1, 10, order, tzinfo=timezone.utc)
    return SubmissionEvent(sid, pid, order, ts, 1.0, cs)


def test_resolve_code():
    log = EventLog((_event(0, "cs1"), _event(1, "cs2")))
    resolved, missing = resolve_code(log, CodeStateStore(sources={"cs1": "int x;"}))
    assert resolved.events[0].source == "int x;"
    assert resolved.events[1].source is None
    assert missing == 1

    bare = EventLog((_event(0), _event(1)))
    same, missing = resolve_code(bare, CodeStateStore(sources={"cs1": "x"}))
    assert same is bare and missing == 0


def test_code_state_directory(toy_dataset):
    store = CodeStateStore(toy_dataset["code_states"])
    assert len(store) == 18  # each file by name and by stem
    assert store.get("c3") == store.get("c3.java")
    assert store.get("nope") is None
    with pytest.raises(FileNotFoundError):
        CodeStateStore(toy_dataset["code_states"] / "missing")


def test_code_state_csv(tmp_path):
    path = write_csv(tmp_path / "cs.csv", ["id", "source"], [["a", "int a;\nint b;"], ["b", ""]])
    store = CodeStateStore(path)
    assert store.get("a") == "int a;\nint b;"
    assert store.get("b") == ""  # present but empty is not the same as absent
    assert store.get("c") is None


def test_validate_consistent(toy_dataset):
    log = parse_main_table(toy_dataset["main_table"])
    assert len(validate_log(log, load_gradebook(toy_dataset["gradebook"]))) == 0


def test_validate_missing_grade():
    log = EventLog((_event(0, sid="s9"),))
    report = validate_log(log, GradeBook({}))
    assert [f.message for f in report.findings] == ["missing grade: s9"]
    assert report.warnings and not report.errors


def test_validate_collision():
    ts = datetime(2021, 1, 1, 10, 0, tzinfo=timezone.utc)
    log = EventLog((_event(0, ts=ts), _event(1, ts=ts)))
    report = validate_log(log, GradeBook({"s1": 50.0}))
    assert [f.kind for f in report.findings] == ["timestamp_collision"]


def test_validate_order():
    late = datetime(2021, 1, 1, 11, 0, tzinfo=timezone.utc)
    early = datetime(2021, 1, 1, 10, 0, tzinfo=timezone.utc)
    log = EventLog((_event(0, ts=late), _event(1, ts=early)))
    report = validate_log(log, GradeBook({"s1": 50.0}))
    assert [f.kind for f in report.findings] == ["timestamp_order"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(
    st.sampled_from(["s1", "s2", "s3"]),
    st.sampled_from(["p1", "p2"]),
    st.integers(0, 10_000),
    st.sampled_from([0.0, 0.25, 0.5, 1.0]),
), max_size=30))
def test_events_sorted_within_pairs(items):
    base = datetime(2021, 1, 1, tzinfo=timezone.utc).timestamp()
    events = [
        SubmissionEvent(s, p, i, datetime.fromtimestamp(base + t, tz=timezone.utc), sc)
        for i, (s, p, t, sc) in enumerate(items)
    ]
    log = EventLog(tuple(events))
    keys = [e.sort_key() for e in log.events]
    assert keys == sorted(keys)
    assert len(log.events) == len(items)
