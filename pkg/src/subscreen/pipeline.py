"""Pipeline stages shared by the CLI commands: load, detect, compare, clean."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .cleaning import BeforeAfterReport, Removals, before_after, clean, select_removals
from .config import RunConfig
from .detectors import (
    AnomalyFlag,
    Detector,
    TooFewStudents,
    combine_flags,
    detect_gaming_repeats,
    detect_learning_rate_pattern,
    detect_one_shot_grade_gap,
    detect_rapid_correct,
    first_score_sequences,
    too_short_for_pattern,
)
from .features import AttemptSeries, StudentFeatureRow, build_attempt_series, student_features
from .ingest import (
    CodeStateStore,
    EventLog,
    GradeBook,
    IngestError,
    load_gradebook,
    parse_main_table,
    resolve_code,
)
from .reports import provenance
from .similarity import PairwiseResult, SimilarityEngine, group_final_sources, pairwise

logger = logging.getLogger(__name__)


class StageError(Exception):
    """A failure attributed to one named pipeline stage."""

    def __init__(self, stage: str, message: str, internal: bool = False):
        super().__init__(message)
        self.stage = stage
        self.internal = internal


class NoSubmissions(IngestError):
    pass


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise StageError("config", f"no {what} path configured")
    if not path.exists():
        raise StageError("config", f"{what} not found: {path}")
    return path


@dataclass(frozen=True)
class Inputs:
    log: EventLog
    grades: GradeBook
    store: CodeStateStore | None
    unresolved: int
    input_paths: Mapping[str, Path | None]


def load_inputs(cfg: RunConfig, *, need_grades: bool = True, strict: bool = True) -> Inputs:
    main = _require(cfg.paths.main_table, "main table")
    grade_path = _require(cfg.paths.gradebook, "gradebook") if need_grades else None
    code_path = cfg.paths.code_states
    if code_path is not None:
        _require(code_path, "code states")
    log = parse_main_table(main, cfg.mapping, strict=strict)
    if not log.events:
        raise NoSubmissions(f"no submissions in {main}")
    grades = load_gradebook(grade_path) if grade_path else GradeBook({})
    store = CodeStateStore(code_path) if code_path is not None else None
    unresolved = 0
    if store is not None:
        log, unresolved = resolve_code(log, store)
        if unresolved:
            logger.warning("%d submissions have no resolvable source", unresolved)
    return Inputs(log, grades, store, unresolved, {"main_table": main, "gradebook": grade_path, "code_states": code_path})


def run_provenance(cfg: RunConfig, inputs: Inputs) -> dict:
    return provenance(cfg, inputs.input_paths)


@dataclass(frozen=True)
class Detection:
    series: Mapping[tuple[str, str], AttemptSeries]
    rows: tuple[StudentFeatureRow, ...]
    flags: tuple[AnomalyFlag, ...]
    suspicion: Mapping[str, float]
    notes: tuple[str, ...] = ()


def run_detectors(cfg: RunConfig, inputs: Inputs, threads: int = 1) -> Detection:
    series = build_attempt_series(inputs.log)
    rows = student_features(series, cfg.aggregation, inputs.grades)
    dcfg = cfg.detector_config
    flags: list[AnomalyFlag] = []
    notes: list[str] = []
    enabled = set(cfg.detectors)
    if Detector.ONE_SHOT_GRADE_GAP in enabled:
        try:
            flags += detect_one_shot_grade_gap(rows, dcfg)
        except TooFewStudents as exc:
            notes.append(f"{Detector.ONE_SHOT_GRADE_GAP.value} skipped: {exc}")
    if Detector.RAPID_CORRECT in enabled:
        flags += detect_rapid_correct(series, dcfg, inputs.log.first_seen())
    if Detector.GAMING_REPEATS in enabled:
        if inputs.store is None:
            notes.append(f"{Detector.GAMING_REPEATS.value} skipped: no code states configured")
        else:
            engine = SimilarityEngine(cfg.normalization, cfg.k, cfg.w)
            flags += detect_gaming_repeats(series, engine, dcfg, threads=threads)
    if Detector.LEARNING_RATE_PATTERN in enabled:
        sequences = first_score_sequences(series)
        short = too_short_for_pattern(sequences, dcfg)
        if short:
            notes.append(f"{Detector.LEARNING_RATE_PATTERN.value}: {len(short)} students too short to classify")
        flags += detect_learning_rate_pattern(sequences, dcfg)
    weights = {d: cfg.weights[d] for d in cfg.detectors}
    suspicion = combine_flags(flags, weights, normalize=cfg.combine) if weights else {}
    return Detection(series, tuple(rows), tuple(flags), suspicion, tuple(notes))


@dataclass(frozen=True)
class SimilarityRun:
    results: Mapping[str, PairwiseResult]
    sources: Mapping[str, Mapping[str, str]]
    skipped_problems: tuple[str, ...] = field(default=())


def run_similarity(cfg: RunConfig, series: Mapping[tuple[str, str], AttemptSeries], threads: int = 1) -> SimilarityRun:
    """Pairwise comparison of each student's final source, problem by problem."""
    grouped = group_final_sources(series)
    results, skipped = {}, []
    for pid in sorted(grouped):
        docs = grouped[pid]
        if len(docs) < 2:
            skipped.append(pid)
            continue
        results[pid] = pairwise(docs, cfg.normalization, cfg.k, cfg.w, cfg.boilerplate_fraction, threads=threads)
    return SimilarityRun(results, grouped, tuple(skipped))


@dataclass(frozen=True)
class Cleaning:
    removals: Removals
    cleaned: EventLog
    report: BeforeAfterReport


def run_cleaning(cfg: RunConfig, inputs: Inputs, detection: Detection, prov: Mapping) -> Cleaning:
    removals = select_removals(detection.suspicion, detection.flags, cfg.cleaning)
    cleaned = clean(inputs.log, removals)
    if not cleaned.events:
        raise StageError("clean", "cleaning removed every submission; nothing left to correlate")
    report = before_after(
        inputs.log,
        cleaned,
        inputs.grades,
        policy=cfg.aggregation,
        method=cfg.correlation,
        removals=removals,
        flags=detection.flags,
        suspicion=detection.suspicion,
        provenance=prov,
    )
    return Cleaning(removals, cleaned, report)
