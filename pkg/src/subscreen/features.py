"""Per-student indicators built from attempt series, and their correlation with grade."""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from typing import Iterable, Mapping, Sequence

from .ingest import EventLog, GradeBook, SubmissionEvent

INDICATORS = ("avg_score", "median_score", "first_score", "last_score", "n_attempts", "one_shot")
CORRECT = 1.0


@dataclass(frozen=True)
class Attempt:
    timestamp: datetime
    score: float
    source: str | None = None
    event_order: int = 0
    code_state_id: str | None = None


@dataclass(frozen=True)
class AttemptSeries:
    subject_id: str
    problem_id: str
    attempts: tuple[Attempt, ...]

    def __post_init__(self):
        if not self.attempts:
            raise ValueError("attempt series must be non-empty")
        for a, b in zip(self.attempts, self.attempts[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError("attempt timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.attempts)

    @property
    def n_attempts(self) -> int:
        return len(self.attempts)

    @property
    def first_score(self) -> float:
        return self.attempts[0].score

    @property
    def last_score(self) -> float:
        return self.attempts[-1].score

    @property
    def max_score(self) -> float:
        return max(a.score for a in self.attempts)

    @property
    def completed(self) -> bool:
        return self.max_score == CORRECT

    @property
    def first_correct(self) -> Attempt | None:
        for a in self.attempts:
            if a.score == CORRECT:
                return a
        return None

    @property
    def time_to_first_correct(self) -> timedelta | None:
        hit = self.first_correct
        if hit is None:
            return None
        return hit.timestamp - self.attempts[0].timestamp

    @property
    def min_gap(self) -> timedelta | None:
        if len(self.attempts) < 2:
            return None
        return min(b.timestamp - a.timestamp for a, b in zip(self.attempts, self.attempts[1:]))


def build_attempt_series(log: EventLog | Iterable[SubmissionEvent]) -> dict[tuple[str, str], AttemptSeries]:
    """Group submissions into one series per (subject, problem), keyed in sorted order."""
    events = log.events if isinstance(log, EventLog) else tuple(log)
    groups: dict[tuple[str, str], list[SubmissionEvent]] = defaultdict(list)
    for ev in events:
        groups[ev.key].append(ev)
    out = {}
    for key in sorted(groups):
        evs = sorted(groups[key], key=lambda e: (e.timestamp, e.event_order))
        out[key] = AttemptSeries(
            key[0],
            key[1],
            tuple(Attempt(e.timestamp, e.score, e.source, e.event_order, e.code_state_id) for e in evs),
        )
    return out


def by_student(series_map: Mapping[tuple[str, str], AttemptSeries]) -> dict[str, list[AttemptSeries]]:
    out: dict[str, list[AttemptSeries]] = defaultdict(list)
    for (sid, _), series in sorted(series_map.items()):
        out[sid].append(series)
    return dict(out)


@dataclass(frozen=True)
class AggregationPolicy:
    """How per-problem series collapse into per-student indicators.

    score_pool: "submissions" pools every submission score for avg/median;
        "problems" averages per-problem mean scores instead.
    attempts: "mean" is mean attempts per attempted problem, "total" the sum.
    """

    score_pool: str = "submissions"
    attempts: str = "mean"

    def __post_init__(self):
        if self.score_pool not in ("submissions", "problems"):
            raise ValueError(f"score_pool must be 'submissions' or 'problems', got {self.score_pool!r}")
        if self.attempts not in ("mean", "total"):
            raise ValueError(f"attempts must be 'mean' or 'total', got {self.attempts!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StudentFeatureRow:
    subject_id: str
    avg_score: float
    median_score: float
    first_score: float
    last_score: float
    n_attempts: float
    one_shot: float
    n_problems_attempted: int
    grade: float | None = None

    def indicator(self, name: str) -> float:
        if name not in INDICATORS:
            raise KeyError(name)
        return getattr(self, name)


def student_features(
    series_map: Mapping[tuple[str, str], AttemptSeries],
    policy: AggregationPolicy | None = None,
    grades: GradeBook | None = None,
) -> list[StudentFeatureRow]:
    policy = policy or AggregationPolicy()
    rows = []
    for sid, series_list in sorted(by_student(series_map).items()):
        if not series_list:
            continue
        n_problems = len(series_list)
        if policy.score_pool == "submissions":
            pool = [a.score for s in series_list for a in s.attempts]
            avg = math.fsum(pool) / len(pool)
            median = statistics.median(pool)
        else:
            per_problem = [math.fsum(a.score for a in s.attempts) / len(s) for s in series_list]
            avg = math.fsum(per_problem) / n_problems
            median = statistics.median(per_problem)
        total_attempts = sum(len(s) for s in series_list)
        rows.append(StudentFeatureRow(
            subject_id=sid,
            avg_score=avg,
            median_score=median,
            first_score=math.fsum(s.first_score for s in series_list) / n_problems,
            last_score=math.fsum(s.last_score for s in series_list) / n_problems,
            n_attempts=total_attempts / n_problems if policy.attempts == "mean" else float(total_attempts),
            one_shot=sum(1 for s in series_list if s.first_score == CORRECT) / n_problems,
            n_problems_attempted=n_problems,
            grade=grades.get(sid) if grades is not None else None,
        ))
    return rows


def feature_rows_csv(rows: Sequence[StudentFeatureRow], condition: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", *INDICATORS, "condition", "n_problems_attempted", "grade"])
    for r in rows:
        writer.writerow([
            r.subject_id,
            *(f"{r.indicator(name):.6f}" for name in INDICATORS),
            condition,
            r.n_problems_attempted,
            "" if r.grade is None else repr(float(r.grade)),
        ])
    return buf.getvalue()


class UndefinedCorrelation(ValueError):
    """Raised when a correlation has no value (a constant input)."""


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length vectors.

    Raises ValueError for length mismatch or fewer than two points and
    UndefinedCorrelation when either vector is constant.
    """
    n = len(x)
    if n != len(y):
        raise ValueError(f"length mismatch: {n} != {len(y)}")
    if n < 2:
        raise ValueError("need at least two points")
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    if min(x) == max(x) or min(y) == max(y):
        raise UndefinedCorrelation("undefined correlation: zero variance")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("undefined correlation: zero variance")
    r = sxy / (math.sqrt(sxx) * math.sqrt(syy))
    return max(-1.0, min(1.0, r))


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} != {len(y)}")
    return pearson(_average_ranks(x), _average_ranks(y))


CORRELATIONS = {"pearson": pearson, "spearman": spearman}


@dataclass(frozen=True)
class CorrelationTable:
    condition: str
    # None marks an undefined cell (zero variance)
    coefficients: Mapping[str, float | None]
    n_students: int
    n_excluded: int = 0
    method: str = "pearson"

    def __post_init__(self):
        if set(self.coefficients) != set(INDICATORS):
            raise ValueError("correlation table must cover exactly the six indicators")
        for name, r in self.coefficients.items():
            if r is not None and not -1.0 <= r <= 1.0:
                raise ValueError(f"{name}: r={r} outside [-1, 1]")

    def __getitem__(self, name: str) -> float | None:
        return self.coefficients[name]


def correlation_table(
    rows: Sequence[StudentFeatureRow],
    grades: GradeBook | None,
    label: str,
    method: str = "pearson",
) -> CorrelationTable:
    """Correlate each indicator with final grade over students that have one.

    ``grades`` may be None when the rows already carry grades.
    """
    corr = CORRELATIONS[method]
    graded = []
    for r in rows:
        g = grades.get(r.subject_id) if grades is not None else r.grade
        if g is not None:
            graded.append((r, float(g)))
    if len(graded) < 2:
        raise ValueError(f"need at least 2 graded students, have {len(graded)}")
    y = [g for _, g in graded]
    coefficients: dict[str, float | None] = {}
    for name in INDICATORS:
        x = [r.indicator(name) for r, _ in graded]
        try:
            coefficients[name] = corr(x, y)
        except UndefinedCorrelation:
            coefficients[name] = None
    return CorrelationTable(label, coefficients, len(graded), len(rows) - len(graded), method)
