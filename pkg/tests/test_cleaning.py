import csv
import io
import warnings
from collections import Counter
from datetime import datetime, timedelta, timezone

import pytest

from subscreen.cleaning import (
    TABLE_COLUMNS,
    BeforeAfterReport,
    CleaningPolicy,
    Removals,
    before_after,
    clean,
    removed_csv,
    report_csv,
    select_removals,
)
from subscreen.detectors import AnomalyFlag, Detector
from subscreen.ingest import EventLog, GradeBook, SubmissionEvent

T0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
PROV = {"test": True}


def make_log():
    plan = [
        ("s1", "p1", 0.5), ("s1", "p1", 1.0), ("s1", "p3", 1.0),
        ("s2", "p1", 1.0), ("s2", "p3", 0.0), ("s2", "p3", 1.0),
        ("s3", "p1", 0.0), ("s3", "p3", 0.5),
        ("s4", "p1", 1.0), ("s4", "p3", 1.0),
    ]
    return EventLog(tuple(
        SubmissionEvent(s, p, i, T0 + timedelta(minutes=i), sc) for i, (s, p, sc) in enumerate(plan)
    ))


GRADES = GradeBook({"s1": 90.0, "s2": 70.0, "s3": 30.0, "s4": 20.0})


def test_drop_students():
    removals = select_removals({"s1": 0.9, "s2": 0.1}, [], CleaningPolicy("drop_students", 0.5))
    assert removals.students == {"s1"}


def test_policy_rejects_bad_threshold():
    with pytest.raises(ValueError):
        CleaningPolicy(suspicion_min=1.1)
    with pytest.raises(ValueError):
        CleaningPolicy.from_dict({"mode": "drop_students", "suspicion_min": 1.1})
    with pytest.raises(ValueError):
        CleaningPolicy(mode="drop_everything")


def test_drop_student_problems():
    flags = [AnomalyFlag("s1", Detector.RAPID_CORRECT, 0.9, "fast", {}, "p3")]
    removals = select_removals({"s1": 0.9}, flags, CleaningPolicy("drop_student_problems"))
    assert removals.pairs == {("s1", "p3")}
    cleaned = clean(make_log(), removals)
    assert not [e for e in cleaned.events if e.key == ("s1", "p3")]
    assert [e for e in cleaned.events if e.key == ("s1", "p1")]


def test_empty_removals_is_identity():
    log = make_log()
    assert clean(log, Removals()) is log


def test_remove_student_leaves_others_untouched():
    log = make_log()
    cleaned = clean(log, Removals(students=frozenset({"s1"})))
    assert all(e.subject_id != "s1" for e in cleaned.events)
    assert cleaned.events == tuple(e for e in log.events if e.subject_id != "s1")
    assert len(log.events) == 10  # original untouched


def test_absent_entities_warn():
    with pytest.warns(UserWarning, match="s9"):
        clean(make_log(), Removals(students=frozenset({"s9"})))


def test_conservation_per_pair():
    log = make_log()
    removals = Removals(students=frozenset({"s2"}), pairs=frozenset({("s1", "p3")}))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cleaned = clean(log, removals)
    report = before_after(log, cleaned, GRADES, removals=removals, provenance=PROV)
    assert report.events_before == report.events_after + report.events_removed
    before = Counter(e.key for e in log.events)
    after = Counter(e.key for e in cleaned.events)
    removed = Counter(e.key for e in log.events if removals.matches(*e.key))
    for key in before:
        assert before[key] == after[key] + removed[key]
    assert {(r.subject_id, r.problem_id, r.n_events) for r in report.removed} == {("s2", None, 3), ("s1", "p3", 1)}


def test_identity_gives_zero_delta():
    log = make_log()
    report = before_after(log, log, GRADES, provenance=PROV)
    for name, d in report.delta.items():
        assert d is None or d == 0.0


def test_report_needs_provenance_and_events():
    log = make_log()
    report = before_after(log, log, GRADES, provenance={})
    # the aggregation policy is always recorded, even when the caller passes nothing
    assert report.provenance["aggregation"] == {"score_pool": "submissions", "attempts": "mean"}
    with pytest.raises(ValueError):
        BeforeAfterReport(report.unclean, report.clean, report.delta, (), 1, 1, provenance={})
    with pytest.raises(ValueError):
        before_after(log, log.with_events(()), GRADES, provenance=PROV)


def test_report_csv_layout():
    log = make_log()
    removals = Removals(students=frozenset({"s4"}))
    flags = [AnomalyFlag("s4", Detector.ONE_SHOT_GRADE_GAP, 1.0, "perfect but failing", {"one_shot": 1.0})]
    report = before_after(log, clean(log, removals), GRADES, removals=removals, flags=flags,
                          suspicion={"s4": 1.0}, provenance=PROV)
    text = report_csv(report)
    lines = text.splitlines()
    assert lines[0].startswith("# provenance: ")
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows[0] == ["", *TABLE_COLUMNS]
    assert [r[0] for r in rows[1:]] == ["X-Grade (before)", "X-Grade (after)", "Delta (after - before)"]
    assert [r[-1] for r in rows[1:]] == ["Unclean", "Clean", "Delta"]
    before = float(rows[1][TABLE_COLUMNS.index("one_shot") + 1])
    after = float(rows[2][TABLE_COLUMNS.index("one_shot") + 1])
    assert float(rows[3][TABLE_COLUMNS.index("one_shot") + 1]) == pytest.approx(after - before, abs=2e-6)
    assert "perfect but failing" in removed_csv(report)
    assert report.provenance["correlation"] == "pearson"


def test_seed42_cleaning_improves_direction(corpus42):
    from subscreen.detectors import combine_flags, detect_one_shot_grade_gap, detect_rapid_correct
    from subscreen.features import build_attempt_series, student_features

    log = corpus42["log"]
    sm = build_attempt_series(log)
    rows = student_features(sm, grades=corpus42["grades"])
    flags = detect_one_shot_grade_gap(rows) + detect_rapid_correct(sm, first_seen=log.first_seen())
    removals = select_removals(combine_flags(flags), flags)
    report = before_after(log, clean(log, removals), corpus42["grades"], provenance=PROV)
    assert report.unclean["one_shot"] < 0 < report.clean["one_shot"]
