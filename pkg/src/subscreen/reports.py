"""Provenance blocks and the static HTML/CSV reports written by the CLI."""

from __future__ import annotations

import base64
import csv
import hashlib
import html
import io
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .cleaning import ROW_LABELS, BeforeAfterReport, fmt, provenance_header
from .features import INDICATORS
from .similarity import PairReport, PairwiseResult

SIMILARITY_COLUMNS = (
    "problem_id", "doc_a", "doc_b", "percent", "containment_a", "containment_b", "jaccard", "matched_fingerprints",
)


def file_digest(path: str | Path) -> str:
    """SHA-256 of a file, or of a directory's (relative name, file digest) listing."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(x for x in path.rglob("*") if x.is_file()):
            h.update(p.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(file_digest(p).encode())
            h.update(b"\n")
        return h.hexdigest()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def provenance(config, inputs: Mapping[str, str | Path | None]) -> dict:
    """Everything needed to reproduce an output; deliberately no timestamps or paths."""
    cfg = config.to_dict()
    return {
        "tool": "subscreen",
        "version": __version__,
        "config_sha256": config.digest(),
        "detectors": cfg["detectors"],
        "similarity": {**cfg["similarity"], "normalization": config.normalization.key},
        "cleaning": cfg["cleaning"],
        "aggregation": cfg["aggregation"],
        "correlation": cfg["correlation"],
        "inputs": {name: file_digest(p) for name, p in sorted(inputs.items()) if p is not None},
    }


def with_header(body: str, prov: Mapping) -> str:
    return provenance_header(prov) + body


def json_doc(payload: Mapping, prov: Mapping) -> str:
    return json.dumps({"provenance": dict(prov), **payload}, indent=2, sort_keys=True) + "\n"


# -- similarity ------------------------------------------------------------

def similarity_csv(results: Mapping[str, PairwiseResult], min_percent: float = 0.0) -> str:
    """One row per pair with percent > ``min_percent`` (all pairs when negative)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SIMILARITY_COLUMNS)
    for pid in sorted(results):
        for p in results[pid].pairs:
            if p.percent <= min_percent:
                continue
            s = p.score
            writer.writerow([
                pid, p.doc_a, p.doc_b, f"{p.percent:.6f}", f"{s.containment_a:.6f}",
                f"{s.containment_b:.6f}", f"{s.jaccard:.6f}", s.matched_fingerprints,
            ])
    return buf.getvalue()


def saturation_csv(results: Mapping[str, PairwiseResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["problem_id", "n_documents", "n_pairs", "saturation", "excluded_hashes", "diagnostics"])
    for pid in sorted(results):
        r = results[pid]
        writer.writerow([
            pid, r.n_documents, len(r.pairs), f"{r.saturation:.6f}", len(r.excluded_hashes), "; ".join(r.diagnostics),
        ])
    return buf.getvalue()


_CSS = """
body{font-family:sans-serif;margin:1.5em;color:#222}
table{border-collapse:collapse;margin:.5em 0 1.5em}
td,th{border:1px solid #bbb;padding:3px 8px;text-align:right}
th:first-child,td:first-child{text-align:left}
.pair{display:flex;gap:1em}
.pair pre{flex:1;background:#f7f7f7;border:1px solid #ccc;padding:.5em;overflow:auto;font-size:12px}
mark{background:#ffd966}
.pos{color:#1a7f37}.neg{color:#b42318}
.note{color:#555;font-size:90%}
footer{margin-top:2em;border-top:1px solid #ccc;color:#777;font-size:80%}
"""


def _page(title: str, body: str, prov: Mapping, generated: datetime | None) -> str:
    prov_text = html.escape(json.dumps(prov, indent=2, sort_keys=True))
    stamp = (generated or datetime.now(timezone.utc)).strftime("%Y-%m-%dT%H:%M:%SZ")
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>{_CSS}</style></head><body>\n"
        f"<h1>{html.escape(title)}</h1>\n{body}\n"
        f"<h2>Provenance</h2><pre>{prov_text}</pre>\n"
        # the only volatile content; everything above is deterministic
        f"<footer data-volatile=\"timestamp\">generated {stamp}</footer>\n"
        "</body></html>\n"
    )


def highlight(source: str, spans: Sequence[tuple[int, int]]) -> str:
    """HTML-escape ``source`` and wrap the given UTF-8 byte spans in <mark>."""
    raw = source.encode("utf-8")
    merged: list[list[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    out, pos = [], 0
    for start, end in merged:
        out.append(html.escape(raw[pos:start].decode("utf-8")))
        out.append("<mark>" + html.escape(raw[start:end].decode("utf-8")) + "</mark>")
        pos = end
    out.append(html.escape(raw[pos:].decode("utf-8")))
    return "".join(out)


def _pair_block(pid: str, p: PairReport, sources: Mapping[str, str]) -> str:
    regions = p.regions or ()
    left = highlight(sources[p.doc_a], [(r.a_start, r.a_end) for r in regions])
    right = highlight(sources[p.doc_b], [(r.b_start, r.b_end) for r in regions])
    return (
        f"<h3>{html.escape(pid)}: {html.escape(p.doc_a)} ({p.score.containment_a:.0%}) vs "
        f"{html.escape(p.doc_b)} ({p.score.containment_b:.0%})</h3>\n"
        f"<div class=\"pair\"><pre>{left}</pre><pre>{right}</pre></div>\n"
    )


def similarity_html(
    results: Mapping[str, PairwiseResult],
    sources: Mapping[str, Mapping[str, str]],
    prov: Mapping,
    top: int = 5,
    generated: datetime | None = None,
) -> str:
    """Saturation summary per problem plus side-by-side views of the top pairs."""
    rows = []
    for pid in sorted(results):
        r = results[pid]
        rows.append(
            f"<tr><td>{html.escape(pid)}</td><td>{r.n_documents}</td><td>{r.saturation:.3f}</td>"
            f"<td>{len(r.excluded_hashes)}</td><td>{html.escape('; '.join(r.diagnostics))}</td></tr>"
        )
    parts = [
        "<h2>Saturation</h2>",
        "<p class=\"note\">Saturation is the share of pairs above 80% matched. Hashes present in more than "
        "the boilerplate fraction of documents are ignored when scoring.</p>",
        "<table><tr><th>problem</th><th>documents</th><th>saturation</th><th>excluded hashes</th>"
        "<th>diagnostics</th></tr>",
        *rows,
        "</table>",
        "<h2>Top pairs</h2>",
    ]
    for pid in sorted(results):
        for p in results[pid].pairs[:top]:
            if p.percent > 0:
                parts.append(_pair_block(pid, p, sources[pid]))
    return _page("Code similarity", "\n".join(parts), prov, generated)


# -- before / after --------------------------------------------------------

def _delta_cell(value: float | None) -> str:
    if value is None:
        return "<td>undefined</td>"
    cls = "pos" if value > 0 else "neg" if value < 0 else ""
    return f"<td class=\"{cls}\">{value:+.6f}</td>"


def before_after_html(
    report: BeforeAfterReport,
    generated: datetime | None = None,
    figures: Mapping[str, bytes] | None = None,
) -> str:
    """Both tables, deltas, removal evidence and provenance; PNG figures are inlined."""
    head = "<tr><th></th>" + "".join(f"<th>{n}</th>" for n in INDICATORS) + "<th>condition</th></tr>"
    rows = [
        f"<tr><td>{ROW_LABELS[t.condition]}</td>" + "".join(f"<td>{fmt(t[n])}</td>" for n in INDICATORS)
        + f"<td>{t.condition}</td></tr>"
        for t in (report.unclean, report.clean)
    ]
    rows.append("<tr><td>Delta (after - before)</td>" + "".join(_delta_cell(report.delta[n]) for n in INDICATORS)
                + "<td>Delta</td></tr>")
    counts = (
        f"<p>{report.unclean.n_students} graded students before cleaning, {report.clean.n_students} after. "
        f"{report.events_removed} of {report.events_before} submission events removed.</p>"
    )
    removed = ["<tr><th>subject</th><th>problem</th><th>suspicion</th><th>events</th><th>evidence</th></tr>"]
    for r in report.removed:
        evidence = "<br>".join(
            html.escape(f"[{f.detector.value}{' ' + f.problem_id if f.problem_id else ''}] {f.message}")
            for f in sorted(r.flags, key=lambda f: (f.detector.value, f.problem_id or ""))
        )
        removed.append(
            f"<tr><td>{html.escape(r.subject_id)}</td><td>{html.escape(r.problem_id or 'all')}</td>"
            f"<td>{r.suspicion:.3f}</td><td>{r.n_events}</td><td style=\"text-align:left\">{evidence}</td></tr>"
        )
    body = [
        "<h2>Correlation with grade</h2>",
        f"<table>{head}{''.join(rows)}</table>",
        counts,
        *(
            f"<p><img alt=\"{html.escape(name)}\" src=\"data:image/png;base64,{base64.b64encode(png).decode()}\"></p>"
            for name, png in sorted((figures or {}).items())
        ),
        f"<h2>Removed ({len(report.removed)})</h2>",
        f"<table>{''.join(removed)}</table>",
    ]
    return _page("Before and after cleaning", "\n".join(body), report.provenance, generated)
