"""Figures for the report: first-attempt performance against grade."""

from __future__ import annotations

import io
from typing import Collection, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .features import AttemptSeries, CORRECT, StudentFeatureRow, by_student  # noqa: E402

# no Software/date chunks, so the same data gives the same bytes
_PNG_META = {"Software": None}


def first_correct_counts(series_map) -> dict[str, int]:
    """Exercises each student solved on their first submission."""
    return {
        sid: sum(1 for s in series_list if s.first_score >= CORRECT)
        for sid, series_list in by_student(series_map).items()
    }


def grade_scatter_png(
    unclean: Sequence[StudentFeatureRow],
    clean: Sequence[StudentFeatureRow],
    series_map: dict[tuple[str, str], AttemptSeries],
    removed: Collection[str] = (),
) -> bytes:
    """Two panels: first_score vs grade (removed students highlighted) and a
    histogram of exercises correct on the first submission."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), dpi=100)
    kept_ids = {r.subject_id for r in clean}
    for rows, colour, label in (
        ([r for r in unclean if r.subject_id in kept_ids and r.grade is not None], "tab:blue", "kept"),
        ([r for r in unclean if r.subject_id in removed and r.grade is not None], "tab:red", "removed"),
    ):
        if rows:
            ax1.scatter([r.grade for r in rows], [r.first_score for r in rows], s=14, c=colour, label=label, alpha=0.7)
    ax1.set_xlabel("grade")
    ax1.set_ylabel("mean first-attempt score")
    ax1.set_title("First-attempt score vs grade")
    ax1.legend(loc="lower right")

    counts = first_correct_counts(series_map)
    kept = [n for sid, n in sorted(counts.items()) if sid not in removed]
    gone = [n for sid, n in sorted(counts.items()) if sid in removed]
    top = max(counts.values(), default=0)
    bins = [x - 0.5 for x in range(top + 2)]
    ax2.hist([kept, gone], bins=bins, stacked=True, color=["tab:blue", "tab:red"], label=["kept", "removed"])
    ax2.set_xlabel("exercises correct on first submission")
    ax2.set_ylabel("students")
    ax2.set_title("First-submission successes")
    ax2.legend(loc="upper left")

    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()
