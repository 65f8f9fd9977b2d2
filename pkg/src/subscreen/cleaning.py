"""Removing flagged data and comparing grade correlations before and after."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .detectors import AnomalyFlag
from .features import (
    INDICATORS,
    AggregationPolicy,
    CorrelationTable,
    build_attempt_series,
    correlation_table,
    student_features,
)
from .ingest import EventLog, GradeBook

logger = logging.getLogger(__name__)

UNCLEAN, CLEAN = "Unclean", "Clean"
ROW_LABELS = {UNCLEAN: "X-Grade (before)", CLEAN: "X-Grade (after)"}
TABLE_COLUMNS = (*INDICATORS, "condition")


@dataclass(frozen=True)
class CleaningPolicy:
    mode: str = "drop_students"  # or "drop_student_problems"
    suspicion_min: float = 0.5

    def __post_init__(self):
        if self.mode not in ("drop_students", "drop_student_problems"):
            raise ValueError(f"unknown cleaning mode {self.mode!r}")
        if not 0.0 <= self.suspicion_min <= 1.0:
            raise ValueError(f"suspicion_min must be in [0, 1], got {self.suspicion_min}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "suspicion_min": self.suspicion_min}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CleaningPolicy":
        unknown = set(data) - {"mode", "suspicion_min"}
        if unknown:
            raise ValueError(f"unknown cleaning keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Removals:
    students: frozenset[str] = frozenset()
    pairs: frozenset[tuple[str, str]] = frozenset()

    def __len__(self) -> int:
        return len(self.students) + len(self.pairs)

    def matches(self, subject_id: str, problem_id: str) -> bool:
        return subject_id in self.students or (subject_id, problem_id) in self.pairs

    def entities(self) -> list[tuple[str, str | None]]:
        return sorted([(s, None) for s in self.students] + list(self.pairs), key=lambda e: (e[0], e[1] or ""))


def select_removals(
    suspicion: Mapping[str, float],
    flags: Sequence[AnomalyFlag],
    policy: CleaningPolicy | None = None,
) -> Removals:
    policy = policy or CleaningPolicy()
    over = {sid for sid, s in suspicion.items() if s >= policy.suspicion_min}
    if policy.mode == "drop_students":
        return Removals(students=frozenset(over))
    pairs = {(f.subject_id, f.problem_id) for f in flags if f.subject_id in over and f.problem_id is not None}
    return Removals(pairs=frozenset(pairs))


def clean(log: EventLog, removals: Removals) -> EventLog:
    """A copy of ``log`` without events matching ``removals``."""
    if not removals:
        return log
    present_subjects = {e.subject_id for e in log.events}
    present_pairs = {e.key for e in log.events}
    absent = sorted(s for s in removals.students if s not in present_subjects)
    absent += sorted(f"{s}/{p}" for s, p in removals.pairs if (s, p) not in present_pairs)
    if absent:
        warnings.warn(f"removal entities not in log: {', '.join(absent)}", stacklevel=2)
    kept = [e for e in log.events if not removals.matches(e.subject_id, e.problem_id)]
    context = [e for e in log.context_events if not removals.matches(e.subject_id, e.problem_id)]
    logger.info("cleaning removed %d of %d events", len(log.events) - len(kept), len(log.events))
    return log.with_events(kept, context)


def table_for_log(
    log: EventLog,
    grades: GradeBook,
    label: str,
    policy: AggregationPolicy | None = None,
    method: str = "pearson",
) -> CorrelationTable:
    rows = student_features(build_attempt_series(log), policy, grades)
    return correlation_table(rows, grades, label, method)


@dataclass(frozen=True)
class RemovedEntity:
    subject_id: str
    problem_id: str | None
    suspicion: float
    n_events: int
    flags: tuple[AnomalyFlag, ...] = ()


@dataclass(frozen=True)
class BeforeAfterReport:
    unclean: CorrelationTable
    clean: CorrelationTable
    delta: Mapping[str, float | None]
    removed: tuple[RemovedEntity, ...]
    events_before: int
    events_after: int
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("report provenance must not be empty")

    @property
    def events_removed(self) -> int:
        return self.events_before - self.events_after


def before_after(
    raw: EventLog,
    cleaned: EventLog,
    grades: GradeBook,
    *,
    policy: AggregationPolicy | None = None,
    method: str = "pearson",
    removals: Removals | None = None,
    flags: Sequence[AnomalyFlag] = (),
    suspicion: Mapping[str, float] | None = None,
    provenance: Mapping[str, object] | None = None,
) -> BeforeAfterReport:
    if not raw.events or not cleaned.events:
        raise ValueError("before/after comparison needs non-empty raw and cleaned logs")
    policy = policy or AggregationPolicy()
    unclean = table_for_log(raw, grades, UNCLEAN, policy, method)
    clean_table = table_for_log(cleaned, grades, CLEAN, policy, method)
    delta = {
        name: None if unclean[name] is None or clean_table[name] is None else clean_table[name] - unclean[name]
        for name in INDICATORS
    }

    removed = []
    if removals is not None:
        suspicion = suspicion or {}
        counts: dict[tuple[str, str | None], int] = {}
        for e in raw.events:
            if e.subject_id in removals.students:
                counts[(e.subject_id, None)] = counts.get((e.subject_id, None), 0) + 1
            elif (e.subject_id, e.problem_id) in removals.pairs:
                counts[e.key] = counts.get(e.key, 0) + 1
        for sid, pid in removals.entities():
            triggering = tuple(
                f for f in flags if f.subject_id == sid and (pid is None or f.problem_id in (pid, None))
            )
            removed.append(RemovedEntity(sid, pid, suspicion.get(sid, 0.0), counts.get((sid, pid), 0), triggering))

    prov = dict(provenance or {})
    prov.setdefault("aggregation", policy.to_dict())
    prov.setdefault("correlation", method)
    return BeforeAfterReport(
        unclean=unclean,
        clean=clean_table,
        delta=delta,
        removed=tuple(removed),
        events_before=len(raw.events),
        events_after=len(cleaned.events),
        provenance=prov,
    )


def fmt(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def provenance_header(provenance: Mapping[str, object]) -> str:
    return "# provenance: " + json.dumps(provenance, sort_keys=True, separators=(",", ":"), default=str) + "\n"


def report_csv(report: BeforeAfterReport, with_provenance: bool = True) -> str:
    """Table-1 layout: one row per condition, then the (clean - unclean) deltas."""
    buf = io.StringIO()
    if with_provenance:
        buf.write(provenance_header(report.provenance))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["", *TABLE_COLUMNS])
    for table in (report.unclean, report.clean):
        writer.writerow([ROW_LABELS[table.condition], *(fmt(table[n]) for n in INDICATORS), table.condition])
    writer.writerow(["Delta (after - before)", *(fmt(report.delta[n]) for n in INDICATORS), "Delta"])
    return buf.getvalue()


def removed_csv(report: BeforeAfterReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", "problem_id", "suspicion", "events_removed", "detectors", "evidence"])
    for r in report.removed:
        writer.writerow([
            r.subject_id,
            r.problem_id or "",
            f"{r.suspicion:.6f}",
            r.n_events,
            ";".join(sorted({f.detector.value for f in r.flags})),
            " | ".join(f.message for f in sorted(r.flags, key=lambda f: (f.detector.value, f.problem_id or ""))),
        ])
    return buf.getvalue()
