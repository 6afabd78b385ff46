"""Raw activity-count ingestion and cleaning.

Input is minute-by-minute accelerometer CSV rows
(``subject_id,minute,count,age,sex,weekend``; ``weekend`` optional, derived
from the minute index when absent).  Cleaning steps, in order:

1. drop subjects outside the age range (inclusive);
2. delete every maximal run of >= ``missing_run_length`` consecutive zero
   counts (consecutive in recorded minutes) -- remaining minutes keep their
   original indices, so time gaps reflect the removed stretches;
3. cap counts at ``truncation_cap``;
4. drop subjects with fewer than ``min_valid_minutes`` observations left;
5. assign subgroups 1..4 from (sex, age): male 20-40 -> 1, male 40-60 -> 2,
   female 20-40 -> 3, female 40-60 -> 4, with the boundary age 40 going to
   the older group.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CsvFormatError
from .params import SubjectSeries

RAW_HEADER = ["subject_id", "minute", "count", "age", "sex"]
MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class RawActivityRecord:
    subject_id: str
    minute: int
    count: int
    age: float
    sex: str  # "M" or "F"
    weekend: Optional[int] = None

    def __post_init__(self):
        if self.minute < 0:
            raise ValueError(f"minute index must be non-negative, got {self.minute}")
        if self.count < 0:
            raise ValueError(f"count must be non-negative, got {self.count}")
        if self.sex not in ("M", "F"):
            raise ValueError(f"sex must be 'M' or 'F', got {self.sex!r}")


@dataclass(frozen=True)
class PreprocessConfig:
    missing_run_length: int = 20
    truncation_cap: int = 1500
    min_valid_minutes: int = 500
    age_range: Tuple[float, float] = (20.0, 60.0)
    study_start_weekday: int = 0  # 0 = Monday; used when the CSV lacks a weekend column

    def __post_init__(self):
        if min(self.missing_run_length, self.truncation_cap, self.min_valid_minutes) <= 0:
            raise ValueError("preprocessing thresholds must be positive")


@dataclass(frozen=True)
class PreprocessReport:
    """Per-step exclusion counts; input = output + by-age + by-min-minutes."""

    n_input_subjects: int
    excluded_by_age: int
    excluded_by_min_minutes: int
    n_output_subjects: int
    removed_zero_minutes: int
    truncated_counts: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_input_subjects": self.n_input_subjects,
            "excluded_by_age": self.excluded_by_age,
            "excluded_by_min_minutes": self.excluded_by_min_minutes,
            "n_output_subjects": self.n_output_subjects,
            "removed_zero_minutes": self.removed_zero_minutes,
            "truncated_counts": self.truncated_counts,
        }


def _parse_csv(source) -> List[RawActivityRecord]:
    close = False
    if isinstance(source, (str, Path)):
        handle = open(source, newline="")
        close = True
    else:
        handle = source
    try:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty CSV") from None
        header = [h.strip() for h in header]
        if header[:5] != RAW_HEADER or (len(header) == 6 and header[5] != "weekend") or len(header) > 6:
            raise CsvFormatError(
                f"unexpected header {header}; expected {RAW_HEADER} (+ optional 'weekend')",
                lines=[1],
            )
        has_weekend = len(header) == 6
        records = []
        bad_lines = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rec = RawActivityRecord(
                    subject_id=row[0].strip(),
                    minute=int(row[1]),
                    count=int(row[2]),
                    age=float(row[3]),
                    sex=row[4].strip(),
                    weekend=int(row[5]) if has_weekend else None,
                )
                records.append(rec)
            except (IndexError, ValueError):
                bad_lines.append(lineno)
        if bad_lines:
            raise CsvFormatError("malformed rows", lines=bad_lines[:20])
        return records
    finally:
        if close:
            handle.close()


def remove_zero_runs(minutes: np.ndarray, counts: np.ndarray, run_length: int):
    """Drop maximal runs of >= run_length zeros occurring on consecutive minutes.

    Returns (kept mask, number of removed minutes).  Runs never swallow a
    nonzero count, and runs broken by a recording gap are treated per
    contiguous segment.
    """
    K = len(minutes)
    keep = np.ones(K, dtype=bool)
    removed = 0
    seg_starts = np.flatnonzero(np.diff(minutes) != 1) + 1
    boundaries = np.concatenate([[0], seg_starts, [K]])
    for s, e in zip(boundaries[:-1], boundaries[1:]):
        zero = counts[s:e] == 0
        if not zero.any():
            continue
        # run-length encode the zero mask within this contiguous segment
        change = np.flatnonzero(np.diff(zero.astype(np.int8))) + 1
        edges = np.concatenate([[0], change, [e - s]])
        for a, b in zip(edges[:-1], edges[1:]):
            if zero[a] and (b - a) >= run_length:
                keep[s + a : s + b] = False
                removed += b - a
    return keep, removed


def _derive_weekend(minutes: np.ndarray, start_weekday: int) -> np.ndarray:
    day = (start_weekday + minutes // MINUTES_PER_DAY) % 7
    return (day >= 5).astype(float)


def assign_group(sex: str, age: float) -> int:
    older = age >= 40.0
    if sex == "M":
        return 2 if older else 1
    return 4 if older else 3


def preprocess(
    source: Union[str, Path, io.TextIOBase, Iterable[RawActivityRecord]],
    config: PreprocessConfig = PreprocessConfig(),
) -> Tuple[List[SubjectSeries], PreprocessReport]:
    """Clean raw minute-level records into SubjectSeries plus an exclusion report."""
    if isinstance(source, (str, Path)) or isinstance(source, io.TextIOBase):
        records = _parse_csv(source)
    else:
        records = list(source)

    by_subject: dict = {}
    for rec in records:
        by_subject.setdefault(rec.subject_id, []).append(rec)

    out: List[SubjectSeries] = []
    excluded_age = 0
    excluded_short = 0
    removed_total = 0
    truncated_total = 0
    for sid, recs in by_subject.items():
        recs.sort(key=lambda r: r.minute)
        minutes = np.array([r.minute for r in recs], dtype=np.int64)
        if len(np.unique(minutes)) != len(minutes):
            dup = minutes[np.flatnonzero(np.diff(minutes) == 0)[0]]
            raise CsvFormatError(
                f"duplicate (subject, minute) pair: ({sid!r}, {int(dup)})"
            )
        ages = {r.age for r in recs}
        sexes = {r.sex for r in recs}
        if len(ages) > 1 or len(sexes) > 1:
            raise CsvFormatError(f"subject {sid!r} has inconsistent age or sex")
        age, sex = recs[0].age, recs[0].sex

        if not config.age_range[0] <= age <= config.age_range[1]:
            excluded_age += 1
            continue

        counts = np.array([r.count for r in recs], dtype=np.int64)
        keep, removed = remove_zero_runs(minutes, counts, config.missing_run_length)
        removed_total += removed
        minutes, counts = minutes[keep], counts[keep]

        truncated_total += int(np.sum(counts > config.truncation_cap))
        counts = np.minimum(counts, config.truncation_cap)

        if len(minutes) < config.min_valid_minutes:
            excluded_short += 1
            continue

        if recs[0].weekend is None:
            weekend = _derive_weekend(minutes, config.study_start_weekday)
        else:
            kept_recs = [r for r, k in zip(recs, keep) if k]
            weekend = np.array([float(r.weekend) for r in kept_recs])
        out.append(
            SubjectSeries(
                subject_id=sid,
                group_id=assign_group(sex, age),
                times=minutes.astype(float),
                counts=counts,
                covariates=weekend[:, None],
            )
        )

    report = PreprocessReport(
        n_input_subjects=len(by_subject),
        excluded_by_age=excluded_age,
        excluded_by_min_minutes=excluded_short,
        n_output_subjects=len(out),
        removed_zero_minutes=removed_total,
        truncated_counts=truncated_total,
    )
    return out, report
