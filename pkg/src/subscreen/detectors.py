"""Detectors that turn features, timing and code similarity into anomaly flags."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .features import CORRECT, AttemptSeries, StudentFeatureRow, _average_ranks, by_student
from .similarity import SimilarityEngine, _map

logger = logging.getLogger(__name__)


class Detector(str, Enum):
    ONE_SHOT_GRADE_GAP = "OneShotGradeGap"
    RAPID_CORRECT = "RapidCorrect"
    GAMING_REPEATS = "GamingRepeats"
    LEARNING_RATE_PATTERN = "LearningRatePattern"

    def __str__(self) -> str:
        return self.value


DEFAULT_DETECTORS = (Detector.ONE_SHOT_GRADE_GAP, Detector.RAPID_CORRECT, Detector.GAMING_REPEATS)


class TooFewStudents(ValueError):
    pass


@dataclass(frozen=True)
class AnomalyFlag:
    subject_id: str
    detector: Detector
    severity: float
    message: str
    details: Mapping[str, object] = field(default_factory=dict)
    problem_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "detector", Detector(self.detector))
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity {self.severity} outside [0, 1]")
        if not self.message:
            raise ValueError("flag evidence must not be empty")

    def evidence_json(self) -> str:
        return json.dumps({"message": self.message, **self.details}, sort_keys=True, default=str)


@dataclass(frozen=True)
class DetectorConfig:
    one_shot_min: float = 0.8
    grade_percentile_max: float = 0.25
    rapid_correct_seconds: float = 60.0
    gaming_min_attempts: int = 4
    gaming_similarity_min: float = 0.9
    lhl_window: int = 5
    lhl_band_quantiles: tuple[float, float] = (1 / 3, 2 / 3)

    def __post_init__(self):
        object.__setattr__(self, "lhl_band_quantiles", tuple(self.lhl_band_quantiles))
        if not 0.0 < self.one_shot_min <= 1.0:
            raise ValueError("one_shot_min must be in (0, 1]")
        if not 0.0 < self.gaming_similarity_min <= 1.0:
            raise ValueError("gaming_similarity_min must be in (0, 1]")
        if not 0.0 <= self.grade_percentile_max <= 1.0:
            raise ValueError("grade_percentile_max must be in [0, 1]")
        if self.rapid_correct_seconds <= 0:
            raise ValueError("rapid_correct_seconds must be positive")
        if self.gaming_min_attempts < 2:
            raise ValueError("gaming_min_attempts must be >= 2")
        if self.lhl_window < 1:
            raise ValueError("lhl_window must be >= 1")
        lo, hi = self.lhl_band_quantiles
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("lhl_band_quantiles must satisfy 0 < low < high < 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lhl_band_quantiles"] = list(self.lhl_band_quantiles)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "DetectorConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        return cls(**data)


def grade_percentiles(rows: Sequence[StudentFeatureRow]) -> dict[str, float]:
    """Percentile rank of each graded student's grade: (rank - 1) / (n - 1), ties averaged."""
    graded = [r for r in rows if r.grade is not None]
    if len(graded) < 2:
        return {r.subject_id: 0.5 for r in graded}
    ranks = _average_ranks([r.grade for r in graded])
    n = len(graded)
    return {r.subject_id: (rank - 1) / (n - 1) for r, rank in zip(graded, ranks)}


def detect_one_shot_grade_gap(rows: Sequence[StudentFeatureRow], cfg: DetectorConfig | None = None) -> list[AnomalyFlag]:
    """Students who solve most exercises first try yet sit near the bottom of the grade list."""
    cfg = cfg or DetectorConfig()
    pct = grade_percentiles(rows)
    if len(pct) < 4:
        raise TooFewStudents(f"one-shot/grade gap needs at least 4 graded students, have {len(pct)}")
    flags = []
    for r in rows:
        if r.subject_id not in pct:
            continue
        p = pct[r.subject_id]
        if r.one_shot >= cfg.one_shot_min and p <= cfg.grade_percentile_max:
            flags.append(AnomalyFlag(
                r.subject_id,
                Detector.ONE_SHOT_GRADE_GAP,
                severity=min(1.0, max(0.0, r.one_shot * (1.0 - p))),
                message=(
                    f"one_shot {r.one_shot:.3f} >= {cfg.one_shot_min} with grade percentile "
                    f"{p:.3f} <= {cfg.grade_percentile_max}"
                ),
                details={
                    "one_shot": r.one_shot,
                    "one_shot_min": cfg.one_shot_min,
                    "grade": r.grade,
                    "grade_percentile": p,
                    "grade_percentile_max": cfg.grade_percentile_max,
                },
            ))
    return flags


def detect_rapid_correct(
    series_map: Mapping[tuple[str, str], AttemptSeries],
    cfg: DetectorConfig | None = None,
    first_seen: Mapping[tuple[str, str], object] | None = None,
) -> list[AnomalyFlag]:
    """Correct answers that arrive implausibly fast.

    Two measurements per solved (student, problem): time since the student's
    previous correct submission on another problem, and, for first-attempt
    solves, time since the student first touched the problem (``first_seen``,
    typically from non-submission events such as opening the file). A
    solve with nothing earlier to measure from is never flagged.
    """
    cfg = cfg or DetectorConfig()
    first_seen = first_seen or {}
    limit = cfg.rapid_correct_seconds
    flags = []
    for sid, series_list in by_student(series_map).items():
        solves = sorted(
            (att.timestamp, att.event_order, s.problem_id, idx)
            for s in series_list
            for idx, att in enumerate(s.attempts)
            if att.score == CORRECT
        )
        last_correct: dict[str, object] = {}  # problem -> latest correct timestamp so far
        for ts, _, pid, idx in solves:
            elapsed = []
            others = [(t, p) for p, t in last_correct.items() if p != pid]
            if others:
                prev_ts, prev_pid = max(others)
                elapsed.append(("since_previous_correct", (ts - prev_ts).total_seconds(), prev_pid))
            if idx == 0:
                opened = first_seen.get((sid, pid))
                if opened is not None and opened < ts:
                    elapsed.append(("since_first_event", (ts - opened).total_seconds(), pid))
            last_correct[pid] = ts

            hits = [e for e in elapsed if e[1] < limit]
            if not hits:
                continue
            kind, gap, ref = min(hits, key=lambda e: e[1])
            flags.append(AnomalyFlag(
                sid,
                Detector.RAPID_CORRECT,
                severity=min(1.0, max(0.0, 1.0 - gap / limit)),
                message=f"correct submission {gap:.1f}s {kind.replace('_', ' ')} ({ref}) < {limit:g}s",
                details={"elapsed_seconds": gap, "threshold_seconds": limit, "measured": kind, "reference_problem": ref},
                problem_id=pid,
            ))
    # one flag per (subject, problem): keep the strongest
    best: dict[tuple[str, str], AnomalyFlag] = {}
    for f in flags:
        key = (f.subject_id, f.problem_id)
        if key not in best or f.severity > best[key].severity:
            best[key] = f
    return [best[k] for k in sorted(best)]


def _similar_runs(series: AttemptSeries, engine: SimilarityEngine, threshold: float):
    """Maximal contiguous runs (over attempts with source) whose members are all pairwise similar."""
    with_source = [(i, a) for i, a in enumerate(series.attempts) if a.source is not None]
    memo: dict[tuple[int, int], float] = {}

    def sim(i, j):
        if (i, j) not in memo:
            memo[(i, j)] = engine.percent(with_source[i][1].source, with_source[j][1].source)
        return memo[(i, j)]

    runs = []
    for start in range(len(with_source)):
        end = start + 1
        while end < len(with_source) and all(sim(m, end) >= threshold for m in range(start, end)):
            end += 1
        runs.append(with_source[start:end])
    return runs, len(series.attempts) - len(with_source)


def detect_gaming_repeats(
    series_map: Mapping[tuple[str, str], AttemptSeries],
    engine: SimilarityEngine | None = None,
    cfg: DetectorConfig | None = None,
    threads: int = 1,
) -> list[AnomalyFlag]:
    """Runs of near-identical resubmissions whose scores are not strictly improving."""
    cfg = cfg or DetectorConfig()
    engine = engine or SimilarityEngine()
    items = [(key, s) for key, s in sorted(series_map.items()) if len(s) >= cfg.gaming_min_attempts]
    results = _map(lambda item: _gaming_flag(item[0], item[1], engine, cfg), items, threads)
    return [f for f in results if f is not None]


def _gaming_flag(key, series, engine, cfg) -> AnomalyFlag | None:
    sid, pid = key
    runs, missing = _similar_runs(series, engine, cfg.gaming_similarity_min)
    best = None
    for run in runs:
        if len(run) < cfg.gaming_min_attempts:
            continue
        scores = [a.score for _, a in run]
        if all(x < y for x, y in zip(scores, scores[1:])):
            continue
        if best is None or len(run) > len(best):
            best = run
    if best is None:
        return None
    scores = [a.score for _, a in best]
    details = {
        "run_length": len(best),
        "run_attempts": [i + 1 for i, _ in best],
        "run_scores": scores,
        "n_attempts": len(series),
        "similarity_min": cfg.gaming_similarity_min,
        "min_attempts": cfg.gaming_min_attempts,
        "attempts_without_source": missing,
    }
    note = "" if scores[-1] <= scores[0] else "; score rose within run (possible flaky grader)"
    return AnomalyFlag(
        sid,
        Detector.GAMING_REPEATS,
        severity=len(best) / len(series),
        message=(
            f"{len(best)} consecutive attempts pairwise >= {cfg.gaming_similarity_min:.0%} similar "
            f"without strictly rising scores{note}"
        ),
        details=details,
        problem_id=pid,
    )


def first_score_sequences(series_map: Mapping[tuple[str, str], AttemptSeries]) -> dict[str, list[float]]:
    """Per student, first-attempt scores ordered by when each problem was first attempted."""
    out = {}
    for sid, series_list in by_student(series_map).items():
        ordered = sorted(series_list, key=lambda s: (s.attempts[0].timestamp, s.attempts[0].event_order))
        out[sid] = [s.first_score for s in ordered]
    return out


def _smooth(seq: Sequence[float], width: int) -> np.ndarray:
    return np.convolve(np.asarray(seq, dtype=float), np.ones(width) / width, mode="valid")


def too_short_for_pattern(sequences: Mapping[str, Sequence[float]], cfg: DetectorConfig | None = None) -> list[str]:
    cfg = cfg or DetectorConfig()
    return sorted(sid for sid, seq in sequences.items() if len(seq) < 3 * cfg.lhl_window)


def collapse_bands(bands: Sequence[str]) -> list[str]:
    """Drop mid-band points, then merge consecutive repeats."""
    out: list[str] = []
    for b in bands:
        if b == "M":
            continue
        if not out or out[-1] != b:
            out.append(b)
    return out


def detect_learning_rate_pattern(
    sequences: Mapping[str, Sequence[float]],
    cfg: DetectorConfig | None = None,
) -> list[AnomalyFlag]:
    """Low-High-Low / High-Low-High excursions in smoothed first-score trajectories.

    Band cut points are quantiles of all smoothed points from students long
    enough to classify, so short sequences never move the bands.
    """
    cfg = cfg or DetectorConfig()
    eligible = {sid: seq for sid, seq in sequences.items() if len(seq) >= 3 * cfg.lhl_window}
    skipped = len(sequences) - len(eligible)
    if skipped:
        logger.info("learning-rate pattern: %d students too short to classify", skipped)
    if not eligible:
        return []
    smoothed = {sid: _smooth(seq, cfg.lhl_window) for sid, seq in sorted(eligible.items())}
    pooled = np.concatenate(list(smoothed.values()))
    low, high = (float(q) for q in np.quantile(pooled, cfg.lhl_band_quantiles))

    flags = []
    for sid, values in smoothed.items():
        bands = ["L" if v < low else "H" if v > high else "M" for v in values]
        runs = []  # (band, values in run) after dropping mid points
        for b, v in zip(bands, values):
            if b == "M":
                continue
            if runs and runs[-1][0] == b:
                runs[-1][1].append(v)
            else:
                runs.append((b, [v]))
        best = None
        for (b0, v0), (b1, v1), (b2, v2) in zip(runs, runs[1:], runs[2:]):
            if b0 == b2 != b1:
                outer = (math.fsum(v0) + math.fsum(v2)) / (len(v0) + len(v2))
                amp = abs(math.fsum(v1) / len(v1) - outer)
                pattern = b0 + b1 + b2
                if best is None or amp > best[0]:
                    best = (amp, pattern)
        if best is None:
            continue
        amp, pattern = best
        flags.append(AnomalyFlag(
            sid,
            Detector.LEARNING_RATE_PATTERN,
            severity=min(1.0, amp),
            message=f"{'-'.join(pattern)} excursion in smoothed first scores (amplitude {amp:.3f})",
            details={
                "pattern": pattern,
                "amplitude": amp,
                "band_low": low,
                "band_high": high,
                "window": cfg.lhl_window,
                "bands": "".join(collapse_bands(bands)),
            },
        ))
    return flags


def combine_flags(
    flags: Sequence[AnomalyFlag],
    weights: Mapping[Detector | str, float] | None = None,
    normalize: str = "flagged",
) -> dict[str, float]:
    """Weighted suspicion per student from the strongest flag of each detector.

    With ``normalize="flagged"`` the weighted sum is divided by the weights of
    the detectors that flagged that student; with ``"all"`` by the sum of
    every weight given.
    """
    weights = {Detector(d): float(w) for d, w in (weights or {d: 1.0 for d in Detector}).items()}
    if any(w < 0 for w in weights.values()):
        raise ValueError("detector weights must be non-negative")
    present = {f.detector for f in flags}
    missing = present - set(weights)
    if missing:
        raise ValueError(f"no weight for detector(s): {sorted(str(d) for d in missing)}")
    if normalize not in ("flagged", "all"):
        raise ValueError("normalize must be 'flagged' or 'all'")
    total = math.fsum(weights.values())
    if total <= 0:
        raise ValueError("detector weights must sum to > 0")

    strongest: dict[str, dict[Detector, float]] = defaultdict(dict)
    for f in flags:
        cur = strongest[f.subject_id].get(f.detector, 0.0)
        strongest[f.subject_id][f.detector] = max(cur, f.severity)

    out = {}
    for sid in sorted(strongest):
        per = strongest[sid]
        num = math.fsum(weights[d] * sev for d, sev in per.items())
        den = math.fsum(weights[d] for d in per) if normalize == "flagged" else total
        out[sid] = min(1.0, num / den) if den > 0 else 0.0
    return out


def flags_csv(flags: Sequence[AnomalyFlag]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", "problem_id", "detector", "severity", "evidence"])
    for f in sorted(flags, key=lambda f: (f.subject_id, f.problem_id or "", f.detector.value)):
        writer.writerow([f.subject_id, f.problem_id or "", f.detector.value, f"{f.severity:.6f}", f.evidence_json()])
    return buf.getvalue()


def _uncommented(text: str) -> io.StringIO:
    """Drop ``#`` provenance lines so the rest parses as plain CSV."""
    return io.StringIO("".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#")))


def read_flags_csv(text: str) -> list[AnomalyFlag]:
    flags = []
    for row in csv.DictReader(_uncommented(text)):
        evidence = json.loads(row["evidence"])
        message = evidence.pop("message")
        flags.append(AnomalyFlag(
            row["subject_id"],
            Detector(row["detector"]),
            float(row["severity"]),
            message,
            evidence,
            row["problem_id"] or None,
        ))
    return flags


def suspicion_csv(suspicion: Mapping[str, float], subjects: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", "suspicion"])
    for sid in sorted(set(suspicion) | set(subjects)):
        writer.writerow([sid, f"{suspicion.get(sid, 0.0):.6f}"])
    return buf.getvalue()


def read_suspicion_csv(text: str) -> dict[str, float]:
    return {row["subject_id"]: float(row["suspicion"]) for row in csv.DictReader(_uncommented(text))}
