"""Screening programming-exercise logs for suspicious submissions.

Typical library use::

    from subscreen import ingest, features, detectors, cleaning

    log = ingest.parse_main_table("MainTable.csv")
    grades = ingest.load_gradebook("gradebook.csv")
    series = features.build_attempt_series(log)
    rows = features.student_features(series, grades=grades)
    flags = detectors.detect_one_shot_grade_gap(rows)

The ``subscreen`` command runs the whole pipeline from a JSON config.
"""

__version__ = "0.1.0"
