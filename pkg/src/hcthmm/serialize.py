"""CSV and JSON serialization shared by the CLI and tests.

Cohort CSV schema (one row per observation, header exactly):
    subject_id,minute,count,age,sex,weekend
JSON documents all carry a top-level ``schema_version``.
"""

import csv
import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .admm import FitResult, IterationStats
from .errors import CsvFormatError, GroupAssignmentError
from .hierarchy import HierarchySpec, Level
from .params import SubjectSeries, ThetaSubject
from .preprocess import assign_group

COHORT_HEADER = ["subject_id", "minute", "count", "age", "sex", "weekend"]


def write_cohort_csv(
    data: Sequence[SubjectSeries],
    path,
    ages: Optional[Sequence[float]] = None,
    sexes: Optional[Sequence[str]] = None,
) -> None:
    """Write cleaned series; defaults: group 1 -> male, group 2 -> female, age 30."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COHORT_HEADER)
        for i, s in enumerate(data):
            age = ages[i] if ages is not None else 30.0
            sex = sexes[i] if sexes is not None else ("M" if s.group_id == 1 else "F")
            for k in range(s.n_obs):
                w.writerow(
                    [
                        s.subject_id,
                        int(s.times[k]),
                        int(s.counts[k]),
                        age,
                        sex,
                        int(s.covariates[k, 0]),
                    ]
                )


def read_cohort_csv(path, grouping: str = "sex") -> List[SubjectSeries]:
    """Read a cleaned cohort CSV.

    grouping='sex' maps M -> group 1, F -> group 2; grouping='sex_age'
    applies the four-way sex-by-age split used for survey data.
    """
    if grouping not in ("sex", "sex_age"):
        raise GroupAssignmentError(f"unknown grouping {grouping!r}")
    rows_by_subject: dict = {}
    meta: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COHORT_HEADER:
            raise CsvFormatError(
                f"unexpected cohort header {header}; expected {COHORT_HEADER}", lines=[1]
            )
        bad = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sid = row[0].strip()
                rows_by_subject.setdefault(sid, []).append(
                    (int(row[1]), int(row[2]), float(row[5]))
                )
                meta[sid] = (float(row[3]), row[4].strip())
            except (IndexError, ValueError):
                bad.append(lineno)
        if bad:
            raise CsvFormatError("malformed rows", lines=bad[:20])
    out = []
    for sid, rows in rows_by_subject.items():
        rows.sort(key=lambda r: r[0])
        minutes = np.array([r[0] for r in rows], dtype=float)
        counts = np.array([r[1] for r in rows], dtype=np.int64)
        weekend = np.array([r[2] for r in rows], dtype=float)
        age, sex = meta[sid]
        if sex not in ("M", "F"):
            raise CsvFormatError(f"subject {sid!r}: sex must be 'M' or 'F', got {sex!r}")
        if grouping == "sex":
            group = 1 if sex == "M" else 2
        else:
            group = assign_group(sex, age)
        out.append(
            SubjectSeries(
                subject_id=sid,
                group_id=group,
                times=minutes,
                counts=counts,
                covariates=weekend[:, None],
            )
        )
    return out


def _theta_to_dict(t: ThetaSubject) -> dict:
    return {"a": t.a.tolist(), "c": t.c.tolist(), "b0": t.b0.tolist(), "b1": t.b1.tolist()}


def _theta_from_dict(d: dict) -> ThetaSubject:
    return ThetaSubject(
        a=np.asarray(d["a"]), c=np.asarray(d["c"]), b0=np.asarray(d["b0"]), b1=np.asarray(d["b1"])
    )


def fit_result_to_json_dict(result: FitResult) -> dict:
    spec = result.spec
    return {
        "schema_version": 1,
        "M": spec.M,
        "J": spec.J,
        "q": spec.q,
        "levels": {k: v.value for k, v in spec.levels.items()},
        "subjects": [
            {
                "subject_id": sid,
                "group_id": int(g),
                "theta": _theta_to_dict(t),
            }
            for (sid, g), t in zip(spec.group_map.items(), result.theta_hat)
        ],
        "z": result.z_hat.tolist(),
        "neg_loglik": result.neg_loglik,
        "bic": result.bic,
        "converged": bool(result.converged),
        "n_iterations": int(result.n_iterations),
        "kkt_residual": result.kkt_residual,
        "n_obs_total": int(result.n_obs_total),
        "residual_history": [
            {
                "iteration": h.iteration,
                "neg_loglik": h.neg_loglik,
                "primal_residual": h.primal_residual,
                "dual_residual": h.dual_residual,
                "rho": h.rho,
                "lagrangian_start": h.lagrangian_start,
                "lagrangian_end": h.lagrangian_end,
            }
            for h in result.residual_history
        ],
    }


def fit_result_from_json_dict(doc: dict) -> FitResult:
    levels = {k: Level(v) for k, v in doc["levels"].items()}
    group_map = {s["subject_id"]: int(s["group_id"]) for s in doc["subjects"]}
    spec = HierarchySpec(
        levels=levels, group_map=group_map, M=int(doc["M"]), J=int(doc["J"]), q=int(doc["q"])
    )
    thetas = [_theta_from_dict(s["theta"]) for s in doc["subjects"]]
    history = [
        IterationStats(
            iteration=h["iteration"],
            neg_loglik=h["neg_loglik"],
            primal_residual=h["primal_residual"],
            dual_residual=h["dual_residual"],
            rho=h["rho"],
            lagrangian_start=h["lagrangian_start"],
            lagrangian_end=h["lagrangian_end"],
        )
        for h in doc.get("residual_history", [])
    ]
    return FitResult(
        theta_hat=thetas,
        z_hat=np.asarray(doc["z"], dtype=float),
        neg_loglik=float(doc["neg_loglik"]),
        n_iterations=int(doc["n_iterations"]),
        residual_history=history,
        converged=bool(doc["converged"]),
        bic=float(doc["bic"]),
        kkt_residual=float(doc["kkt_residual"]),
        xi_hat=[],
        spec=spec,
        n_obs_total=int(doc["n_obs_total"]),
    )


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
