"""Reading ProgSnap2-style submission logs, code states and gradebooks.

Only the subset of ProgSnap2 needed for screening is supported: one main
event table, a code-state store (directory or two-column CSV) and a
gradebook CSV with ``subject_id,grade`` columns.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)

SCORE_TOLERANCE = 1e-9
DEFAULT_SUBMISSION_TYPES = frozenset({"Run.Program", "Submit"})


class IngestError(Exception):
    """Base class for input problems the user can fix."""


class SchemaError(IngestError):
    def __init__(self, column: str, path: str | Path = ""):
        self.column = column
        self.path = str(path)
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {column!r}{where}")


class RowError(IngestError):
    def __init__(self, row: int, message: str, path: str | Path = ""):
        self.row = row
        self.reason = message
        self.path = str(path)
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}: {message}")


@dataclass(frozen=True)
class ColumnMapping:
    subject: str = "SubjectID"
    problem: str = "ProblemID"
    event_type: str = "EventType"
    timestamp: str = "ServerTimestamp"
    score: str = "Score"
    code_state: str | None = "CodeStateID"
    submission_event_types: frozenset[str] = DEFAULT_SUBMISSION_TYPES
    # "iso" (ISO 8601, trailing Z allowed), "epoch" (seconds), or a strptime format
    timestamp_format: str = "iso"

    def __post_init__(self):
        types = self.submission_event_types
        if isinstance(types, str):
            types = frozenset([types])
        object.__setattr__(self, "submission_event_types", frozenset(types))
        if not self.submission_event_types:
            raise ValueError("submission_event_types must not be empty")

    @property
    def required_columns(self) -> list[str]:
        cols = [self.subject, self.problem, self.event_type, self.timestamp, self.score]
        if self.code_state:
            cols.append(self.code_state)
        return cols

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "problem": self.problem,
            "event_type": self.event_type,
            "timestamp": self.timestamp,
            "score": self.score,
            "code_state": self.code_state,
            "submission_event_types": sorted(self.submission_event_types),
            "timestamp_format": self.timestamp_format,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ColumnMapping":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown column mapping keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "submission_event_types" in kwargs:
            kwargs["submission_event_types"] = frozenset(kwargs["submission_event_types"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "ColumnMapping":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SubmissionEvent:
    subject_id: str
    problem_id: str
    event_order: int
    timestamp: datetime
    score: float
    code_state_id: str | None = None
    source: str | None = None
    event_type: str = "Submit"

    def __post_init__(self):
        if not self.subject_id or not self.problem_id:
            raise ValueError("subject_id and problem_id must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.event_order < 0:
            raise ValueError("event_order must be non-negative")

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject_id, self.problem_id)

    def sort_key(self):
        return (self.subject_id, self.problem_id, self.timestamp, self.event_order)


@dataclass(frozen=True)
class ContextEvent:
    """A non-submission row kept only for timing (e.g. the problem being opened)."""

    subject_id: str
    problem_id: str
    event_order: int
    timestamp: datetime
    event_type: str


@dataclass(frozen=True)
class EventLog:
    events: tuple[SubmissionEvent, ...]
    source_path: str = ""
    column_mapping: ColumnMapping = field(default_factory=ColumnMapping)
    rows_skipped: int = 0
    row_errors: tuple[RowError, ...] = ()
    context_events: tuple[ContextEvent, ...] = ()

    def __post_init__(self):
        events = tuple(sorted(self.events, key=SubmissionEvent.sort_key))
        object.__setattr__(self, "events", events)
        object.__setattr__(
            self, "context_events", tuple(sorted(self.context_events, key=lambda e: e.event_order))
        )
        orders = [e.event_order for e in events] + [e.event_order for e in self.context_events]
        if len(set(orders)) != len(orders):
            raise ValueError("event_order values must be unique within one EventLog")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[SubmissionEvent]:
        return iter(self.events)

    @property
    def subjects(self) -> list[str]:
        return sorted({e.subject_id for e in self.events})

    @property
    def problems(self) -> list[str]:
        return sorted({e.problem_id for e in self.events})

    def first_seen(self) -> dict[tuple[str, str], datetime]:
        """Earliest timestamp of any row (submission or context) per (subject, problem)."""
        seen: dict[tuple[str, str], datetime] = {}
        for ev in self.events + self.context_events:
            key = (ev.subject_id, ev.problem_id)
            if key not in seen or ev.timestamp < seen[key]:
                seen[key] = ev.timestamp
        return seen

    def with_events(self, events: Iterable[SubmissionEvent], context: Iterable[ContextEvent] | None = None):
        return replace(
            self,
            events=tuple(events),
            context_events=self.context_events if context is None else tuple(context),
        )

    def to_csv(self) -> str:
        """Serialize back to a main-table CSV, rows in original file order."""
        m = self.column_mapping
        header = m.required_columns
        rows = []
        for ev in self.events:
            row = {
                m.subject: ev.subject_id,
                m.problem: ev.problem_id,
                m.event_type: ev.event_type,
                m.timestamp: format_timestamp(ev.timestamp, m.timestamp_format),
                m.score: repr(float(ev.score)),
            }
            if m.code_state:
                row[m.code_state] = ev.code_state_id or ""
            rows.append((ev.event_order, row))
        for ev in self.context_events:
            row = {
                m.subject: ev.subject_id,
                m.problem: ev.problem_id,
                m.event_type: ev.event_type,
                m.timestamp: format_timestamp(ev.timestamp, m.timestamp_format),
                m.score: "",
            }
            if m.code_state:
                row[m.code_state] = ""
            rows.append((ev.event_order, row))
        rows.sort(key=lambda r: r[0])
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        writer.writerows(r for _, r in rows)
        return buf.getvalue()


def parse_timestamp(text: str, fmt: str = "iso") -> datetime:
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if fmt == "epoch":
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"bad epoch timestamp {text!r}")
        return datetime.fromtimestamp(value, tz=timezone.utc)
    if fmt == "iso":
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        ts = datetime.fromisoformat(text)
    else:
        ts = datetime.strptime(text, fmt)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime, fmt: str = "iso") -> str:
    ts = ts.astimezone(timezone.utc)
    if fmt == "epoch":
        return repr(ts.timestamp())
    if fmt == "iso":
        return ts.replace(tzinfo=None).isoformat() + "Z"
    return ts.strftime(fmt)


def _parse_score(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("score is NaN")
    if value < 0.0:
        if value < -SCORE_TOLERANCE:
            raise ValueError(f"score {text} outside [0, 1]")
        return 0.0
    if value > 1.0:
        if value > 1.0 + SCORE_TOLERANCE:
            raise ValueError(f"score {text} outside [0, 1]")
        return 1.0
    return value


def parse_main_table(path: str | Path, mapping: ColumnMapping | None = None, strict: bool = True) -> EventLog:
    """Parse a main event table into an :class:`EventLog`.

    Rows whose event type is not a submission type are skipped (but kept as
    context events when they carry subject, problem and a readable
    timestamp). With ``strict`` the first bad submission row raises
    :class:`RowError`; otherwise bad rows are collected on ``row_errors``.
    Row numbers are 1-based data rows (the header is row 0).
    """
    mapping = mapping or ColumnMapping()
    path = Path(path)
    events: list[SubmissionEvent] = []
    context: list[ContextEvent] = []
    errors: list[RowError] = []
    skipped = 0

    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in mapping.required_columns:
            if col not in header:
                raise SchemaError(col, path)

        for order, row in enumerate(reader):
            rownum = order + 1
            etype = (row.get(mapping.event_type) or "").strip()
            if etype not in mapping.submission_event_types:
                skipped += 1
                ctx = _context_event(row, mapping, order, etype)
                if ctx is not None:
                    context.append(ctx)
                continue
            try:
                events.append(_submission_event(row, mapping, order, etype))
            except ValueError as exc:
                err = RowError(rownum, str(exc), path)
                if strict:
                    raise err from exc
                errors.append(err)

    logger.debug("parsed %s: %d events, %d skipped, %d errors", path, len(events), skipped, len(errors))
    return EventLog(
        events=tuple(events),
        source_path=str(path),
        column_mapping=mapping,
        rows_skipped=skipped,
        row_errors=tuple(errors),
        context_events=tuple(context),
    )


def _submission_event(row: Mapping[str, str], m: ColumnMapping, order: int, etype: str) -> SubmissionEvent:
    subject = (row.get(m.subject) or "").strip()
    problem = (row.get(m.problem) or "").strip()
    if not subject:
        raise ValueError(f"empty {m.subject}")
    if not problem:
        raise ValueError(f"empty {m.problem}")
    raw_ts = row.get(m.timestamp) or ""
    try:
        ts = parse_timestamp(raw_ts, m.timestamp_format)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {raw_ts!r}") from exc
    raw_score = (row.get(m.score) or "").strip()
    if not raw_score:
        raise ValueError("missing score")
    try:
        score = _parse_score(raw_score)
    except ValueError as exc:
        if "outside" in str(exc) or "NaN" in str(exc):
            raise
        raise ValueError(f"non-numeric score {raw_score!r}") from exc
    code_state = None
    if m.code_state:
        code_state = (row.get(m.code_state) or "").strip() or None
    return SubmissionEvent(
        subject_id=subject,
        problem_id=problem,
        event_order=order,
        timestamp=ts,
        score=score,
        code_state_id=code_state,
        event_type=etype,
    )


def _context_event(row: Mapping[str, str], m: ColumnMapping, order: int, etype: str) -> ContextEvent | None:
    subject = (row.get(m.subject) or "").strip()
    problem = (row.get(m.problem) or "").strip()
    if not subject or not problem:
        return None
    try:
        ts = parse_timestamp(row.get(m.timestamp) or "", m.timestamp_format)
    except ValueError:
        return None
    return ContextEvent(subject, problem, order, ts, etype)


@dataclass(frozen=True)
class GradeBook:
    grades: Mapping[str, float]

    def __getitem__(self, subject_id: str) -> float:
        return self.grades[subject_id]

    def __contains__(self, subject_id: object) -> bool:
        return subject_id in self.grades

    def __len__(self) -> int:
        return len(self.grades)

    def __iter__(self):
        return iter(self.grades)

    def get(self, subject_id: str, default=None):
        return self.grades.get(subject_id, default)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_id", "grade"])
        for sid in sorted(self.grades):
            writer.writerow([sid, repr(float(self.grades[sid]))])
        return buf.getvalue()


def load_gradebook(path: str | Path) -> GradeBook:
    path = Path(path)
    grades: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        for col in ("subject_id", "grade"):
            if col not in (reader.fieldnames or []):
                raise SchemaError(col, path)
        for i, row in enumerate(reader, start=1):
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise RowError(i, "empty subject_id", path)
            if sid in grades:
                raise RowError(i, f"duplicate subject {sid}", path)
            raw = (row["grade"] or "").strip()
            try:
                grade = float(raw)
            except ValueError:
                raise RowError(i, f"non-numeric grade {raw!r} for {sid}", path) from None
            if not math.isfinite(grade):
                raise RowError(i, f"non-finite grade {raw!r} for {sid}", path)
            grades[sid] = grade
    return GradeBook(grades)


class CodeStateStore:
    """Lookup of code-state id -> source text.

    ``root`` is either a directory holding one file per code state (named by
    the id, any extension) or a CSV whose first two columns are id and
    source. Directory files are read lazily.
    """

    def __init__(self, root: str | Path | None = None, sources: Mapping[str, str] | None = None):
        self.root_path = str(root) if root is not None else ""
        self._files: dict[str, Path] = {}
        self._sources: dict[str, str] = dict(sources or {})
        if root is not None:
            root = Path(root)
            if root.is_dir():
                self._index_directory(root)
            elif root.is_file():
                self._load_csv(root)
            else:
                raise FileNotFoundError(f"code-state store not found: {root}")

    def _index_directory(self, root: Path) -> None:
        by_stem: dict[str, list[Path]] = defaultdict(list)
        for p in sorted(root.iterdir()):
            if p.is_file():
                self._files[p.name] = p
                by_stem[p.stem].append(p)
        for stem, paths in by_stem.items():
            if stem not in self._files and len(paths) == 1:
                self._files[stem] = paths[0]

    def _load_csv(self, path: Path) -> None:
        csv.field_size_limit(1 << 30)
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                if len(row) >= 2 and row[0].strip():
                    self._sources[row[0].strip()] = row[1]

    def __contains__(self, code_state_id: object) -> bool:
        return code_state_id in self._sources or code_state_id in self._files

    def __len__(self) -> int:
        return len(set(self._sources) | set(self._files))

    def ids(self) -> list[str]:
        return sorted(set(self._sources) | set(self._files))

    def get(self, code_state_id: str) -> str | None:
        """Source text for the id, or None when the store has no such id."""
        if code_state_id in self._sources:
            return self._sources[code_state_id]
        path = self._files.get(code_state_id)
        if path is None:
            return None
        text = path.read_text(encoding="utf-8")
        self._sources[code_state_id] = text
        return text


def resolve_code(log: EventLog, store: CodeStateStore) -> tuple[EventLog, int]:
    """Attach source text to events; returns the new log and the unresolved-id count."""
    unresolved = 0
    changed = False
    out = []
    for ev in log.events:
        if ev.code_state_id is None:
            out.append(ev)
            continue
        text = store.get(ev.code_state_id)
        if text is None:
            unresolved += 1
            out.append(ev)
        else:
            changed = True
            out.append(replace(ev, source=text))
    if unresolved:
        logger.warning("%d code-state ids could not be resolved", unresolved)
    return (log.with_events(out) if changed else log), unresolved


@dataclass(frozen=True)
class Finding:
    kind: str
    severity: str  # "error" or "warning"
    message: str
    subject_id: str | None = None
    problem_id: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    def __len__(self) -> int:
        return len(self.findings)

    def __bool__(self) -> bool:
        return bool(self.findings)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    def to_dict(self) -> dict:
        return {
            "n_errors": len(self.errors),
            "n_warnings": len(self.warnings),
            "findings": [f.__dict__ for f in self.findings],
        }


def validate_log(log: EventLog, grades: GradeBook) -> ValidationReport:
    findings: list[Finding] = []

    for err in log.row_errors:
        findings.append(Finding("row_error", "error", str(err)))

    subjects = set(log.subjects)
    for sid in sorted(subjects - set(grades)):
        findings.append(Finding("missing_grade", "warning", f"missing grade: {sid}", sid))
    for sid in sorted(set(grades) - subjects):
        findings.append(Finding("grade_without_events", "warning", f"grade without submissions: {sid}", sid))

    groups: dict[tuple[str, str], list[SubmissionEvent]] = defaultdict(list)
    for ev in log.events:
        groups[ev.key].append(ev)
    for (sid, pid), evs in sorted(groups.items()):
        in_file_order = sorted(evs, key=lambda e: e.event_order)
        for prev, cur in zip(in_file_order, in_file_order[1:]):
            if cur.timestamp < prev.timestamp:
                findings.append(Finding(
                    "timestamp_order", "warning",
                    f"timestamps go backwards for {sid}/{pid} at rows {prev.event_order + 1}->{cur.event_order + 1}",
                    sid, pid,
                ))
        by_ts: dict[datetime, int] = defaultdict(int)
        for ev in evs:
            by_ts[ev.timestamp] += 1
        for ts, n in sorted(by_ts.items()):
            if n > 1:
                findings.append(Finding(
                    "timestamp_collision", "warning",
                    f"{n} submissions share timestamp {format_timestamp(ts)} for {sid}/{pid}",
                    sid, pid,
                ))
    return ValidationReport(tuple(findings))
