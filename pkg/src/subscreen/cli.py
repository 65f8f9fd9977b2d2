"""Command-line front end.

Exit codes: 0 success, 1 input or validation error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cleaning import CLEAN, UNCLEAN, removed_csv, report_csv
from .config import ConfigError, RunConfig, dataset_config, load_config
from .detectors import flags_csv, read_flags_csv, read_suspicion_csv, suspicion_csv, combine_flags
from .features import build_attempt_series, feature_rows_csv, student_features
from .ingest import IngestError, validate_log
from .pipeline import (
    Inputs,
    StageError,
    load_inputs,
    run_cleaning,
    run_detectors,
    run_provenance,
    run_similarity,
)
from .plotting import grade_scatter_png
from .reports import (
    before_after_html,
    file_digest,
    json_doc,
    saturation_csv,
    similarity_csv,
    similarity_html,
    with_header,
)
from .synthgen import GroundTruth, STYLES, evaluate, generate, log_digest, write_dataset

logger = logging.getLogger("subscreen")

# errors that mean "bad input", as opposed to a bug
_INPUT_ERRORS = (IngestError, ConfigError, ValueError, KeyError, OSError, UnicodeDecodeError)


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except _INPUT_ERRORS as exc:
        raise StageError(name, str(exc)) from exc
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}", internal=True) from exc


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    logger.info("wrote %s", path)
    return path


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    paths = cfg.paths
    for attr in ("main_table", "gradebook", "code_states"):
        value = getattr(args, attr, None)
        if value is not None:
            paths = replace(paths, **{attr: Path(value)})
    if args.out is not None:
        paths = replace(paths, output_dir=Path(args.out))
    cfg = replace(cfg, paths=paths)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if args.seed is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, seed=args.seed))
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.paths.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("config", f"cannot create output dir {out}: {exc}") from exc
    return out


# -- commands --------------------------------------------------------------

def cmd_validate(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    with stage("ingest"):
        inputs = load_inputs(cfg, strict=False)
    with stage("validate"):
        report = validate_log(inputs.log, inputs.grades)
        doc = {
            "n_events": len(inputs.log.events),
            "n_subjects": len(inputs.log.subjects),
            "rows_skipped": inputs.log.rows_skipped,
            "unresolved_code_states": inputs.unresolved,
            **report.to_dict(),
        }
        _write(out, "validation.json", json_doc(doc, run_provenance(cfg, inputs)))
    for f in report.findings:
        print(f"{f.severity}: {f.kind}: {f.message}", file=sys.stderr)
    print(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")
    if report.errors or (args.strict and report.warnings):
        return 1
    return 0


def _detect(cfg: RunConfig, out: Path):
    with stage("ingest"):
        inputs = load_inputs(cfg)
    prov = run_provenance(cfg, inputs)
    with stage("detect"):
        detection = run_detectors(cfg, inputs, cfg.threads)
        _write(out, "flags.csv", with_header(flags_csv(detection.flags), prov))
        _write(out, "suspicion.csv", with_header(suspicion_csv(detection.suspicion, inputs.log.subjects), prov))
    for note in detection.notes:
        logger.warning(note)
    return inputs, prov, detection


def cmd_detect(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _, prov, detection = _detect(cfg, out)
    _write(out, "features.csv", with_header(feature_rows_csv(detection.rows, UNCLEAN), prov))
    print(f"{len(detection.flags)} flag(s) over {len(detection.suspicion)} student(s)")
    return 0


def _similarity(cfg: RunConfig, inputs: Inputs, prov: dict, out: Path, series=None) -> dict:
    with stage("similarity"):
        if inputs.store is None:
            raise StageError("similarity", "similarity needs code states; set paths.code_states")
        series = series if series is not None else build_attempt_series(inputs.log)
        run = run_similarity(cfg, series, cfg.threads)
        _write(out, "similarity_pairs.csv", with_header(similarity_csv(run.results), prov))
        _write(out, "similarity_saturation.csv", with_header(saturation_csv(run.results), prov))
        _write(out, "similarity.html", similarity_html(run.results, run.sources, prov))
    return {pid: r.saturation for pid, r in run.results.items()}


def cmd_similarity(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    with stage("ingest"):
        inputs = load_inputs(cfg, need_grades=False)
    saturation = _similarity(cfg, inputs, run_provenance(cfg, inputs), out)
    high = sum(1 for s in saturation.values() if s >= 0.5)
    print(f"compared {len(saturation)} problem(s); {high} with saturation >= 0.5")
    return 0


def _clean_and_report(cfg, inputs, prov, detection, out: Path, with_report: bool):
    with stage("clean"):
        cleaning = run_cleaning(cfg, inputs, detection, prov)
        _write(out, "removed.csv", with_header(removed_csv(cleaning.report), prov))
        _write(out, "cleaned/MainTable.csv", cleaning.cleaned.to_csv())
        _write(out, "cleaned/manifest.json", json_doc({"events": len(cleaning.cleaned.events)}, prov))
    if not with_report:
        return cleaning
    with stage("report"):
        clean_rows = student_features(build_attempt_series(cleaning.cleaned), cfg.aggregation, inputs.grades)
        features = feature_rows_csv(detection.rows, UNCLEAN) + feature_rows_csv(clean_rows, CLEAN).split("\n", 1)[1]
        _write(out, "features.csv", with_header(features, prov))
        _write(out, "before_after.csv", report_csv(cleaning.report))
        png = grade_scatter_png(detection.rows, clean_rows, detection.series, cleaning.removals.students)
        fig = out / "figures" / "first_score_vs_grade.png"
        fig.parent.mkdir(parents=True, exist_ok=True)
        fig.write_bytes(png)
        _write(out, "before_after.html", before_after_html(cleaning.report, figures={fig.name: png}))
    return cleaning


def cmd_clean(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs, prov, detection = _detect(cfg, out)
    cleaning = _clean_and_report(cfg, inputs, prov, detection, out, with_report=False)
    print(f"removed {cleaning.report.events_removed} of {cleaning.report.events_before} events")
    return 0


def _print_table(report) -> None:
    for name in ("one_shot", "first_score"):
        before, after = report.unclean[name], report.clean[name]
        fmt = lambda v: "undefined" if v is None else f"{v:+.3f}"  # noqa: E731
        print(f"{name}: {fmt(before)} -> {fmt(after)}")


def cmd_report(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs, prov, detection = _detect(cfg, out)
    cleaning = _clean_and_report(cfg, inputs, prov, detection, out, with_report=True)
    _print_table(cleaning.report)
    return 0


def cmd_analyze(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs, prov, detection = _detect(cfg, out)
    # similarity lives in its own files so skipping it leaves the rest byte-identical
    if not args.skip_similarity:
        _similarity(cfg, inputs, prov, out, detection.series)
    cleaning = _clean_and_report(cfg, inputs, prov, detection, out, with_report=True)
    flagged = sorted(s for s, v in detection.suspicion.items() if v >= cfg.cleaning.suspicion_min)
    per_detector: dict[str, int] = {}
    for f in detection.flags:
        per_detector[f.detector.value] = per_detector.get(f.detector.value, 0) + 1
    summary = {
        "n_events": len(inputs.log.events),
        "n_subjects": len(inputs.log.subjects),
        "unresolved_code_states": inputs.unresolved,
        "flags_per_detector": per_detector,
        "n_flagged_students": len(flagged),
        "events_removed": cleaning.report.events_removed,
        "notes": list(detection.notes),
    }
    _write(out, "summary.json", json_doc(summary, prov))
    _print_table(cleaning.report)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    overrides = {
        "n_students": args.students,
        "n_problems": args.problems,
        "cheater_fraction": args.cheater_fraction,
        "cheat_styles": tuple(args.styles) if args.styles else None,
    }
    with stage("synth"):
        synth = replace(cfg.synth, **{k: v for k, v in overrides.items() if v is not None})
        log, grades, store, truth = generate(synth)
        paths = write_dataset(out, log, grades, store, truth)
        run_cfg = {**dataset_config(out, "analysis"), "synth": synth.to_dict()}
        _write(out, "run_config.json", json.dumps(run_cfg, indent=2, sort_keys=True) + "\n")
        manifest = {
            "provenance": {"tool": "subscreen", "version": __version__, "synth": synth.to_dict()},
            "log_sha256": log_digest(log),
            "files": {name: file_digest(p) for name, p in sorted(paths.items())},
            "n_events": len(log.events),
            "n_cheaters": len(truth.cheaters),
        }
        _write(out, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(log.events)} events for {synth.n_students} students to {out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    with stage("evaluate"):
        truth_path = Path(args.truth) if args.truth else None
        if truth_path is None and cfg.paths.main_table is not None:
            truth_path = cfg.paths.main_table.parent / "ground_truth.csv"
        if truth_path is None or not truth_path.exists():
            raise StageError("evaluate", f"ground truth not found: {truth_path}; pass --truth")
        truth = GroundTruth.from_csv(truth_path.read_text(encoding="utf-8"))
        if args.flags:
            flags = read_flags_csv(Path(args.flags).read_text(encoding="utf-8"))
            suspicion = combine_flags(flags, {d: cfg.weights[d] for d in cfg.detectors}, normalize=cfg.combine)
            source = Path(args.flags)
        else:
            source = Path(args.suspicion) if args.suspicion else out / "suspicion.csv"
            suspicion = read_suspicion_csv(source.read_text(encoding="utf-8"))
        metrics = evaluate(suspicion, truth, args.threshold)
        prov = {
            "tool": "subscreen",
            "version": __version__,
            "config_sha256": cfg.digest(),
            "inputs": {"scores": file_digest(source), "truth": file_digest(truth_path)},
        }
        _write(out, "metrics.json", json_doc(metrics.to_dict(), prov))
    m = metrics.to_dict()
    print(f"precision {m['precision']} recall {m['recall']} f1 {m['f1']}")
    return 0


COMMANDS = {
    "validate": (cmd_validate, "ingest the main table and check it against the gradebook"),
    "analyze": (cmd_analyze, "run detection, similarity, cleaning and the before/after report"),
    "similarity": (cmd_similarity, "pairwise code similarity of final submissions per problem"),
    "detect": (cmd_detect, "compute features, anomaly flags and per-student suspicion"),
    "clean": (cmd_clean, "detect, then write the cleaned main table"),
    "report": (cmd_report, "detect, clean and write the before/after correlation report"),
    "synth": (cmd_synth, "generate a synthetic dataset with ground truth"),
    "evaluate": (cmd_evaluate, "score suspicion against ground truth"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--out", type=Path, help="output directory (overrides paths.output_dir)")
    common.add_argument("--threads", type=int, help="parallelism for similarity and detectors")
    common.add_argument("--seed", type=int, help="synth seed (overrides synth.seed)")
    common.add_argument("--skip-similarity", action="store_true", help="analyze: skip the similarity report")
    common.add_argument("--main-table", help="override paths.main_table")
    common.add_argument("--gradebook", help="override paths.gradebook")
    common.add_argument("--code-states", help="override paths.code_states")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="subscreen", description="Screen programming-exercise submission logs for suspicious behaviour."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}

    subs["validate"].add_argument("--strict", action="store_true", help="treat warnings as failures")
    subs["synth"].add_argument("--students", type=int)
    subs["synth"].add_argument("--problems", type=int)
    subs["synth"].add_argument("--cheater-fraction", type=float)
    subs["synth"].add_argument("--styles", nargs="+", choices=STYLES)
    ev = subs["evaluate"]
    src = ev.add_mutually_exclusive_group()
    src.add_argument("--suspicion", help="suspicion CSV (default: <out>/suspicion.csv)")
    src.add_argument("--flags", help="flag CSV, combined with the configured weights")
    ev.add_argument("--truth", help="ground truth CSV (default: next to the main table)")
    ev.add_argument("--threshold", type=float, default=0.5)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler, _ = COMMANDS[args.command]
    try:
        with stage("config"):
            cfg = _config(args)
        return handler(args, cfg)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        if exc.internal:
            if args.verbose:
                traceback.print_exc()
            return 2
        return 1
    except Exception:  # pragma: no cover - last resort
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
