"""Seeded synthetic submission logs with planted cheating and ground truth.

All randomness flows from one ``numpy.random.SeedSequence(seed)``: one
child stream builds the problem set and each student gets their own child
stream, so a student's log does not depend on how many students follow.
The bit generator is PCG64.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Mapping

import numpy as np

from .ingest import CodeStateStore, ColumnMapping, ContextEvent, EventLog, GradeBook, SubmissionEvent

STYLES = ("one_shot_copy", "late_copy", "gaming")
HONEST = "honest"
OPEN_EVENT = "File.Open"
SUBMIT_EVENT = "Submit"
EPOCH = datetime(2020, 1, 6, 9, 0, 0, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SynthConfig:
    n_students: int = 200
    n_problems: int = 20
    cheater_fraction: float = 0.1
    cheat_styles: tuple[str, ...] = ("one_shot_copy",)
    skill_grade_noise: float = 8.0
    # mean and coefficient of variation of honest inter-event gaps (seconds)
    attempt_time_model: tuple[float, float] = (300.0, 0.8)
    seed: int = 42
    honest_min_gap: float = 90.0
    # first-try success is logistic in first_try_skill * (skill - difficulty) + first_try_bias
    first_try_skill: float = 1.0
    first_try_bias: float = -2.0
    retry_gain: float = 0.9
    max_attempts: int = 10
    # after a failed attempt an honest student abandons with probability give_up_rate * (1 - skill)
    give_up_rate: float = 0.15
    gaming_min_attempts: int = 4

    def __post_init__(self):
        object.__setattr__(self, "cheat_styles", tuple(sorted(set(self.cheat_styles))))
        object.__setattr__(self, "attempt_time_model", tuple(self.attempt_time_model))
        if self.n_students < 2:
            raise ValueError("n_students must be >= 2")
        if self.n_problems < 1:
            raise ValueError("n_problems must be >= 1")
        if not 0.0 <= self.cheater_fraction <= 1.0:
            raise ValueError("cheater_fraction must be in [0, 1]")
        bad = set(self.cheat_styles) - set(STYLES)
        if bad:
            raise ValueError(f"unknown cheat styles: {sorted(bad)}")
        if self.cheater_fraction > 0 and not self.cheat_styles:
            raise ValueError("cheater_fraction > 0 needs at least one cheat style")
        if self.skill_grade_noise < 0:
            raise ValueError("skill_grade_noise must be >= 0")
        mean, cv = self.attempt_time_model
        if mean <= self.honest_min_gap or cv <= 0:
            raise ValueError("attempt_time_model needs mean > honest_min_gap and dispersion > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.give_up_rate <= 1.0:
            raise ValueError("give_up_rate must be in [0, 1]")
        if self.max_attempts < 1 or self.gaming_min_attempts < 2:
            raise ValueError("max_attempts must be >= 1 and gaming_min_attempts >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cheat_styles"] = list(self.cheat_styles)
        d["attempt_time_model"] = list(self.attempt_time_model)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class GroundTruth:
    labels: Mapping[str, str]  # subject -> "honest" or a cheat style
    cheat_events: frozenset[tuple[str, str]] = frozenset()  # (subject, problem) pairs that were cheated

    def is_cheater(self, subject_id: str) -> bool:
        return self.labels[subject_id] != HONEST

    @property
    def cheaters(self) -> list[str]:
        return sorted(s for s, lab in self.labels.items() if lab != HONEST)

    @property
    def honest(self) -> list[str]:
        return sorted(s for s, lab in self.labels.items() if lab == HONEST)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_id", "label", "cheated_problems"])
        for sid in sorted(self.labels):
            probs = sorted(p for s, p in self.cheat_events if s == sid)
            writer.writerow([sid, self.labels[sid], ";".join(probs)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GroundTruth":
        labels, events = {}, set()
        for row in csv.DictReader(io.StringIO(text)):
            sid = row["subject_id"]
            if sid in labels:
                raise ValueError(f"duplicate subject {sid} in ground truth")
            if row["label"] != HONEST and row["label"] not in STYLES:
                raise ValueError(f"unknown label {row['label']!r} for {sid}")
            labels[sid] = row["label"]
            events.update((sid, p) for p in row["cheated_problems"].split(";") if p)
        return cls(labels, frozenset(events))


# --- source templates -------------------------------------------------------

_STATEMENTS = (
    "int {r} = 0;",
    "for (int {i} = 0; {i} < {a}.length; {i}++) {{ {r} += {a}[{i}]; }}",
    "if ({a}.length == 0) {{ return 0; }}",
    "while ({n} > 0) {{ {r} = {r} * 10 + {n} % 10; {n} /= 10; }}",
    "{r} = Math.max({r}, {n});",
    "if ({n} < 0) {{ {n} = -{n}; }}",
    "for (int {i} = 1; {i} < {a}.length; {i}++) {{ if ({a}[{i}] > {a}[{i} - 1]) {{ {r}++; }} }}",
    "boolean {f} = false;",
    "if ({r} % 2 == 0 && {n} > 10) {{ {r} = {r} / 2; }}",
    "String {s} = \"\" + {n};",
    "{r} += {s}.length();",
    "int[] {t} = new int[{a}.length];",
    "for (int {i} = 0; {i} < {t}.length; {i}++) {{ {t}[{i}] = {a}[{a}.length - 1 - {i}]; }}",
    "if ({f} || {r} > {n}) {{ {r} -= {n}; }} else {{ {r} += 1; }}",
    "switch ({n} % 3) {{ case 0: {r} *= 2; break; case 1: {r} -= 1; break; default: {r} = 0; }}",
    "{f} = {r} >= {n} * 2;",
    "try {{ {r} = {r} / ({n} + 1); }} catch (ArithmeticException e) {{ {r} = -1; }}",
)
_OP_SWAPS = (("<", "<="), ("+=", "-="), ("==", "!="), (">", ">="), ("*", "/"), ("++", "--"), ("&&", "||"))
_NAME_POOL = {
    "r": ("result", "res", "total", "count", "ans", "out", "acc", "value"),
    "a": ("nums", "arr", "values", "data", "xs", "list"),
    "n": ("n", "num", "k", "limit", "x", "target"),
    "i": ("i", "j", "idx", "p"),
    "f": ("flag", "found", "done", "ok"),
    "s": ("str", "text", "digits", "s"),
    "t": ("tmp", "rev", "copy", "buf"),
    "m": ("solve", "compute", "answer", "calc"),
}
_COMMENTS = ("// first try", "/* helper */", "// TODO check edge case", "// loop over input", "")


@dataclass(frozen=True)
class Problem:
    problem_id: str
    difficulty: float
    statements: tuple[str, ...]


def _make_problems(cfg: SynthConfig, rng: np.random.Generator) -> list[Problem]:
    width = max(2, len(str(cfg.n_problems)))
    problems = []
    for p in range(cfg.n_problems):
        n_body = int(rng.integers(3, 7))
        idx = rng.choice(len(_STATEMENTS), size=n_body, replace=False)
        body = ("int {r} = 0;",) + tuple(_STATEMENTS[j] for j in idx if j != 0) + ("return {r};",)
        difficulty = float(rng.uniform(0.15, 0.85))
        problems.append(Problem(f"P{p + 1:0{width}d}", difficulty, body))
    return problems


def _mutate(statements: tuple[str, ...], rng: np.random.Generator) -> tuple[str, ...]:
    """A plausibly wrong version of a solution: 2-5 structural edits."""
    body = list(statements[1:-1])
    for _ in range(int(rng.integers(2, 6))):
        op = int(rng.integers(0, 4))
        if op == 0 and len(body) > 1:
            del body[int(rng.integers(0, len(body)))]
        elif op == 1:
            body.insert(int(rng.integers(0, len(body) + 1)), _STATEMENTS[int(rng.integers(1, len(_STATEMENTS)))])
        elif op == 2 and len(body) > 1:
            j = int(rng.integers(0, len(body) - 1))
            body[j], body[j + 1] = body[j + 1], body[j]
        else:
            if not body:
                continue
            j = int(rng.integers(0, len(body)))
            start = int(rng.integers(0, len(_OP_SWAPS)))
            for old, new in _OP_SWAPS[start:] + _OP_SWAPS[:start]:
                if old in body[j]:
                    body[j] = body[j].replace(old, new, 1)
                    break
    return (statements[0], *body, statements[-1])


def _render(statements: tuple[str, ...], rng: np.random.Generator) -> str:
    """Java-ish source in one student's cosmetic style (names, indentation, comments)."""
    names = {k: pool[int(rng.integers(0, len(pool)))] for k, pool in _NAME_POOL.items()}
    indent = " " * int(rng.choice([2, 4]))
    lines = [f"public static int {names['m']}(int[] {names['a']}, int {names['n']}) {{"]
    comment = _COMMENTS[int(rng.integers(0, len(_COMMENTS)))]
    if comment:
        lines.append(indent + comment)
    for stmt in statements:
        lines.append(indent + stmt.format(**names))
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- generation ---------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.rows: list[tuple] = []  # (timestamp, subject, seq, kind, problem, score, code)
        self.sources: dict[str, str] = {}

    def open(self, ts: datetime, sid: str, pid: str):
        self.rows.append((ts, sid, len(self.rows), OPEN_EVENT, pid, None, None))

    def submit(self, ts: datetime, sid: str, pid: str, score: float, code: str):
        self.rows.append((ts, sid, len(self.rows), SUBMIT_EVENT, pid, score, code))


def _honest_gap(cfg: SynthConfig, rng: np.random.Generator) -> float:
    mean, cv = cfg.attempt_time_model
    excess = mean - cfg.honest_min_gap
    shape = 1.0 / (cv * cv)
    return cfg.honest_min_gap + float(rng.gamma(shape, excess / shape))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _partial(theta: float, attempt: int, rng: np.random.Generator) -> float:
    raw = 0.1 + 0.35 * theta + 0.15 * attempt + float(rng.normal(0.0, 0.04))
    return round(min(0.9, max(0.0, math.floor(raw * 10) / 10)), 1)


def _grade(theta: float, cfg: SynthConfig, rng: np.random.Generator) -> float:
    g = 100.0 * theta + float(rng.normal(0.0, cfg.skill_grade_noise)) if cfg.skill_grade_noise > 0 else 100.0 * theta
    return round(min(100.0, max(0.0, g)), 1)


def _honest_problem(b, cfg, rng, sid, prob, theta, t) -> datetime:
    b.open(t, sid, prob.problem_id)
    for attempt in range(cfg.max_attempts):
        t += timedelta(seconds=round(_honest_gap(cfg, rng)))
        logit = cfg.first_try_bias + cfg.first_try_skill * (theta - prob.difficulty) + cfg.retry_gain * attempt
        if rng.random() < _sigmoid(logit):
            b.submit(t, sid, prob.problem_id, 1.0, _render(prob.statements, rng))
            break
        b.submit(t, sid, prob.problem_id, _partial(theta, attempt, rng), _render(_mutate(prob.statements, rng), rng))
        if rng.random() < cfg.give_up_rate * (1.0 - theta):
            break
    return t


def _one_shot_copy(b, cfg, rng, sid, prob, t) -> datetime:
    b.open(t, sid, prob.problem_id)
    t += timedelta(seconds=int(rng.integers(3, 29)))
    b.submit(t, sid, prob.problem_id, 1.0, _render(prob.statements, rng))
    return t


def _late_copy(b, cfg, rng, sid, prob, theta, t) -> datetime:
    b.open(t, sid, prob.problem_id)
    for attempt in range(int(rng.integers(1, 4))):
        t += timedelta(seconds=round(_honest_gap(cfg, rng)))
        b.submit(t, sid, prob.problem_id, _partial(theta, attempt, rng), _render(_mutate(prob.statements, rng), rng))
    t += timedelta(seconds=int(rng.integers(5, 41)))
    b.submit(t, sid, prob.problem_id, 1.0, _render(prob.statements, rng))
    return t


def _gaming(b, cfg, rng, sid, prob, theta, t) -> datetime:
    b.open(t, sid, prob.problem_id)
    wrong = _mutate(prob.statements, rng)
    score = _partial(theta, 0, rng)
    for _ in range(int(rng.integers(cfg.gaming_min_attempts, cfg.gaming_min_attempts + 4))):
        t += timedelta(seconds=int(rng.integers(10, 61)))
        b.submit(t, sid, prob.problem_id, score, _render(wrong, rng))
    if rng.random() < 0.5:
        t += timedelta(seconds=round(_honest_gap(cfg, rng)))
        b.submit(t, sid, prob.problem_id, 1.0, _render(prob.statements, rng))
    return t


def generate(cfg: SynthConfig | None = None) -> tuple[EventLog, GradeBook, CodeStateStore, GroundTruth]:
    """Build a synthetic course: event log, gradebook, code states and ground truth.

    Honest students draw skill uniformly; cheaters draw it from the bottom
    half. Code for every submission is rendered from per-problem templates
    so similarity can be exercised: correct answers share the reference
    structure, wrong ones carry random structural edits.
    """
    cfg = cfg or SynthConfig()
    root = np.random.SeedSequence(cfg.seed)
    problem_seq, roster_seq, students_seq = root.spawn(3)
    problems = _make_problems(cfg, np.random.Generator(np.random.PCG64(problem_seq)))

    width = max(4, len(str(cfg.n_students)))
    subjects = [f"S{i + 1:0{width}d}" for i in range(cfg.n_students)]
    roster = np.random.Generator(np.random.PCG64(roster_seq))
    n_cheat = int(round(cfg.cheater_fraction * cfg.n_students))
    cheater_idx = sorted(int(i) for i in roster.permutation(cfg.n_students)[:n_cheat])
    labels = {sid: HONEST for sid in subjects}
    for j, i in enumerate(cheater_idx):
        labels[subjects[i]] = cfg.cheat_styles[j % len(cfg.cheat_styles)]

    b = _Builder()
    grades: dict[str, float] = {}
    cheat_events: set[tuple[str, str]] = set()
    for sid, seq in zip(subjects, students_seq.spawn(cfg.n_students)):
        rng = np.random.Generator(np.random.PCG64(seq))
        style = labels[sid]
        theta = float(rng.uniform(0.0, 0.5)) if style != HONEST else float(rng.uniform(0.0, 1.0))
        grades[sid] = _grade(theta, cfg, rng)
        t = EPOCH + timedelta(seconds=int(rng.integers(0, 7 * 24 * 3600)))
        for prob in problems:
            if style == "one_shot_copy":
                t = _one_shot_copy(b, cfg, rng, sid, prob, t)
                cheat_events.add((sid, prob.problem_id))
            elif style == "late_copy" and rng.random() < 0.6:
                t = _late_copy(b, cfg, rng, sid, prob, theta, t)
                cheat_events.add((sid, prob.problem_id))
            elif style == "gaming" and rng.random() < 0.5:
                t = _gaming(b, cfg, rng, sid, prob, theta, t)
                cheat_events.add((sid, prob.problem_id))
            else:
                t = _honest_problem(b, cfg, rng, sid, prob, theta, t)
            t += timedelta(seconds=round(_honest_gap(cfg, rng)))

    log, gradebook, store = _assemble(b, grades)
    return log, gradebook, store, GroundTruth(labels, frozenset(cheat_events))


def _assemble(b: _Builder, grades: dict[str, float]) -> tuple[EventLog, GradeBook, CodeStateStore]:
    rows = sorted(b.rows, key=lambda r: (r[0], r[1], r[2]))
    events, context, sources = [], [], {}
    width = max(6, len(str(len(rows))))
    for order, (ts, sid, _, kind, pid, score, code) in enumerate(rows):
        if kind == OPEN_EVENT:
            context.append(ContextEvent(sid, pid, order, ts, kind))
            continue
        cs = f"cs{order:0{width}d}"
        sources[cs] = code
        events.append(SubmissionEvent(sid, pid, order, ts, score, cs, None, kind))
    log = EventLog(tuple(events), "<synthetic>", ColumnMapping(), len(context), (), tuple(context))
    return log, GradeBook(dict(sorted(grades.items()))), CodeStateStore(sources=sources)


def log_digest(log: EventLog) -> str:
    return hashlib.sha256(log.to_csv().encode("utf-8")).hexdigest()


def write_dataset(
    out_dir: str | Path,
    log: EventLog,
    grades: GradeBook,
    store: CodeStateStore,
    truth: GroundTruth,
) -> dict[str, Path]:
    """Write the on-disk layout ingest reads, plus ground truth."""
    out = Path(out_dir)
    code_dir = out / "CodeStates"
    code_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "main_table": out / "MainTable.csv",
        "code_states": code_dir,
        "gradebook": out / "gradebook.csv",
        "ground_truth": out / "ground_truth.csv",
    }
    paths["main_table"].write_text(log.to_csv(), encoding="utf-8")
    paths["gradebook"].write_text(grades.to_csv(), encoding="utf-8")
    paths["ground_truth"].write_text(truth.to_csv(), encoding="utf-8")
    for cs in store.ids():
        (code_dir / f"{cs}.java").write_text(store.get(cs), encoding="utf-8")
    return paths


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    threshold: float = 0.5

    def to_dict(self) -> dict:
        def mark(v):
            return "undefined" if v is None else v

        return {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": mark(self.precision),
            "recall": mark(self.recall),
            "f1": mark(self.f1),
        }


def evaluate(suspicion: Mapping[str, float], truth: GroundTruth, threshold: float = 0.5) -> Metrics:
    """Confusion counts and precision/recall/F1 of ``suspicion >= threshold`` against truth.

    Students absent from ``suspicion`` count as unflagged. Precision (and
    so F1) is None when nothing is flagged; recall is None when there are
    no cheaters.
    """
    unknown = sorted(set(suspicion) - set(truth.labels))
    if unknown:
        raise ValueError(f"subjects not in ground truth: {', '.join(unknown[:5])}")
    tp = fp = fn = tn = 0
    for sid in truth.labels:
        flagged = suspicion.get(sid, 0.0) >= threshold
        cheater = truth.is_cheater(sid)
        if flagged and cheater:
            tp += 1
        elif flagged:
            fp += 1
        elif cheater:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(tp, fp, fn, tn, precision, recall, f1, threshold)


def metrics_json(metrics: Metrics, provenance: Mapping | None = None) -> str:
    doc = {"provenance": dict(provenance or {}), **metrics.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
