"""CSV schemas for every file the tool emits, with matching readers so each
artifact can be validated by round-tripping.  Numeric fields carry 9
significant digits; infinities print as "inf" and abstentions as "ABSTAIN"."""

from __future__ import annotations

import csv
from typing import Optional, Sequence

from .analysis import ClosenessRecord, ClosenessTrace, StudyRow
from .certify import CertificationResult
from .engine import RoundTrace
from .errors import ConfigurationError
from .numerics import format_number, parse_number

ABSTAIN_LITERAL = "ABSTAIN"

TRACE_HEADER = ["round", "pre_clip_norm", "post_clip_norm"]
SAMPLES_HEADER = [
    "sample_id", "true_label", "prediction",
    "p_hat_A", "p_hat_B", "p_A_lower", "p_B_upper", "rad",
]
CURVE_HEADER = ["r", "certified_accuracy", "certified_rate"]
SWEEP_HEADER = ["axis", "axis_value", "r", "certified_accuracy", "certified_rate"]
CLOSENESS_HEADER = ["t", "distance", "bound"]
STUDY_HEADER = ["ratio", "T", "rad", "saturated"]


def _write_rows(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path, header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            actual = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty CSV") from None
        if actual != header:
            raise ConfigurationError(f"{path}: header {actual} != expected {header}")
        rows = list(reader)
    for row in rows:
        if len(row) != len(header):
            raise ConfigurationError(f"{path}: ragged row {row}")
    return rows


def write_trace_csv(path, traces: Sequence[RoundTrace]) -> None:
    _write_rows(
        path,
        TRACE_HEADER,
        (
            [t.round, format_number(t.pre_clip_norm), format_number(t.post_clip_norm)]
            for t in traces
        ),
    )


def read_trace_csv(path) -> list[tuple[int, float, float]]:
    return [
        (int(r[0]), parse_number(r[1]), parse_number(r[2]))
        for r in _read_rows(path, TRACE_HEADER)
    ]


def write_samples_csv(path, results: Sequence[CertificationResult]) -> None:
    rows = []
    for res in results:
        rows.append(
            [
                res.sample_id,
                res.true_label,
                ABSTAIN_LITERAL if res.abstained else res.prediction,
                format_number(res.p_hat_a),
                format_number(res.p_hat_b),
                format_number(res.p_a_lower),
                format_number(res.p_b_upper),
                format_number(res.rad),
            ]
        )
    _write_rows(path, SAMPLES_HEADER, rows)


def read_samples_csv(path) -> list[dict]:
    out = []
    for r in _read_rows(path, SAMPLES_HEADER):
        prediction: Optional[int] = None if r[2] == ABSTAIN_LITERAL else int(r[2])
        out.append(
            {
                "sample_id": int(r[0]),
                "true_label": int(r[1]),
                "prediction": prediction,
                "p_hat_A": parse_number(r[3]),
                "p_hat_B": parse_number(r[4]),
                "p_A_lower": parse_number(r[5]),
                "p_B_upper": parse_number(r[6]),
                "rad": parse_number(r[7]),
            }
        )
    return out


def write_curve_csv(path, rows: Sequence[tuple[float, float, float]]) -> None:
    _write_rows(
        path,
        CURVE_HEADER,
        ([format_number(r), format_number(acc), format_number(rate)] for r, acc, rate in rows),
    )


def read_curve_csv(path) -> list[tuple[float, float, float]]:
    return [
        (parse_number(r[0]), parse_number(r[1]), parse_number(r[2]))
        for r in _read_rows(path, CURVE_HEADER)
    ]


def write_sweep_csv(path, axis: str, rows: Sequence[tuple[float, float, float, float]]) -> None:
    """Rows are (axis_value, r, certified_accuracy, certified_rate)."""
    _write_rows(
        path,
        SWEEP_HEADER,
        (
            [axis, format_number(v), format_number(r), format_number(acc), format_number(rate)]
            for v, r, acc, rate in rows
        ),
    )


def read_sweep_csv(path) -> list[tuple[str, float, float, float, float]]:
    return [
        (r[0], parse_number(r[1]), parse_number(r[2]), parse_number(r[3]), parse_number(r[4]))
        for r in _read_rows(path, SWEEP_HEADER)
    ]


def write_closeness_csv(path, trace: ClosenessTrace) -> None:
    rows = []
    for rec in trace.records:
        bound = "" if rec.kl_bound is None else format_number(rec.kl_bound)
        rows.append([rec.round, format_number(rec.distance), bound])
    _write_rows(path, CLOSENESS_HEADER, rows)


def read_closeness_csv(path) -> ClosenessTrace:
    records = []
    for r in _read_rows(path, CLOSENESS_HEADER):
        bound = None if r[2] == "" else parse_number(r[2])
        records.append(ClosenessRecord(int(r[0]), parse_number(r[1]), bound))
    return ClosenessTrace(records)


def write_study_csv(path, rows: Sequence[StudyRow]) -> None:
    _write_rows(
        path,
        STUDY_HEADER,
        (
            [format_number(row.ratio), row.rounds, format_number(row.rad), int(row.saturated)]
            for row in rows
        ),
    )


def read_study_csv(path) -> list[StudyRow]:
    out = []
    for r in _read_rows(path, STUDY_HEADER):
        if r[3] not in ("0", "1"):
            raise ConfigurationError(f"{path}: saturated flag must be 0 or 1, got {r[3]!r}")
        out.append(StudyRow(parse_number(r[0]), int(r[1]), parse_number(r[2]), r[3] == "1"))
    return out
