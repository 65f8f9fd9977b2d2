import csv
from pathlib import Path

import pytest

from subscreen.synthgen import SynthConfig, generate
from subscreen.ingest import resolve_code

GOLDEN = Path(__file__).parent / "golden"
MAIN_HEADER = ["SubjectID", "ProblemID", "EventType", "ServerTimestamp", "Score", "CodeStateID"]


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def row(sid, pid, ts, score, cs="", etype="Submit"):
    return [sid, pid, etype, ts, score, cs]


@pytest.fixture
def toy_dataset(tmp_path):
    """Three students, two problems, consistent with their gradebook."""
    rows = [
        row("s1", "p1", "2021-01-01T10:00:00", "0.5", "c1"),
        row("s1", "p1", "2021-01-01T10:05:00", "1.0", "c2"),
        row("s1", "p2", "2021-01-01T10:10:00", "1.0", "c3"),
        row("s2", "p1", "2021-01-01T11:00:00", "1.0", "c4"),
        row("s2", "p2", "2021-01-01T11:08:00", "0.0", "c5"),
        row("s2", "p2", "2021-01-01T11:12:00", "1.0", "c6"),
        row("s3", "p1", "2021-01-01T12:00:00", "0.2", "c7"),
        row("s3", "p1", "2021-01-01T12:04:00", "0.6", "c8"),
        row("s3", "p2", "2021-01-01T12:09:00", "1.0", "c9"),
    ]
    main = write_csv(tmp_path / "MainTable.csv", MAIN_HEADER, rows)
    grades = write_csv(tmp_path / "gradebook.csv", ["subject_id", "grade"], [["s1", "80"], ["s2", "70"], ["s3", "40"]])
    code = tmp_path / "CodeStates"
    code.mkdir()
    for i in range(1, 10):
        (code / f"c{i}.java").write_text(f"int f(int a) {{ return a + {i}; }}\n", encoding="utf-8")
    return {"main_table": main, "gradebook": grades, "code_states": code}


@pytest.fixture(scope="session")
def corpus42():
    """The default synthetic course (seed 42) with sources resolved."""
    log, grades, store, truth = generate(SynthConfig(seed=42))
    resolved, unresolved = resolve_code(log, store)
    assert unresolved == 0
    return {"log": log, "resolved": resolved, "grades": grades, "store": store, "truth": truth}
