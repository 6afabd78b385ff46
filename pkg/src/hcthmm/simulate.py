"""Synthetic cohort generator for the two-group, three-state study design.

Defaults reproduce the benchmark generative design: per-subject series
lengths drawn uniformly from 500..2500 observations, gaps from {1,...,10}
minutes, a weekend indicator on 2/7 of the observations, subject-specific
GLM intercepts around (-1, log 50, log 300, log 700), fixed weekend effects
(+0.1 on the zero-odds logit; -0.1, -0.2, -0.3 on the log means), and
group-level initial laws and transition rates (males group 1, females
group 2) drawn once per cohort from the uniform laws documented on
``SimDesign``.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

import scipy.special

from .ctmc import sample_path, validate_rate_matrix
from .params import NaturalParams, SubjectSeries, ThetaSubject, from_natural


@dataclass(frozen=True)
class SimDesign:
    """Generative design; all defaults are the benchmark values."""

    n_subjects: int = 20
    length_range: Tuple[int, int] = (500, 2500)  # observations per subject, inclusive
    gap_choices: Tuple[int, ...] = tuple(range(1, 11))  # minutes between observations
    weekend_fraction: float = 2.0 / 7.0
    weekend_placement: str = "prefix"  # or "interleaved"
    M: int = 3
    delta_intercept_mean: float = -1.0
    lambda_intercept_means: Tuple[float, ...] = (
        float(np.log(50.0)),
        float(np.log(300.0)),
        float(np.log(700.0)),
    )
    intercept_sd: float = 0.1
    delta_weekend_effect: float = 0.1
    lambda_weekend_effects: Tuple[float, ...] = (-0.1, -0.2, -0.3)
    male_pi_low: Tuple[float, float] = (0.2, 0.2)  # U1, U2 lower bounds
    male_pi_high: Tuple[float, float] = (0.4, 0.4)
    female_pi_low: Tuple[float, float] = (0.6, 0.1)  # U3, U4 lower bounds
    female_pi_high: Tuple[float, float] = (0.8, 0.2)
    male_rate_range: Tuple[float, float] = (0.05, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.M != len(self.lambda_intercept_means) or self.M != len(
            self.lambda_weekend_effects
        ):
            raise ValueError("per-state laws must match the state count M")
        if self.weekend_placement not in ("prefix", "interleaved"):
            raise ValueError("weekend_placement must be 'prefix' or 'interleaved'")
        if not 0.0 <= self.weekend_fraction <= 1.0:
            raise ValueError("weekend_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class CohortTruth:
    """Ground-truth parameters behind a simulated cohort."""

    thetas: List[ThetaSubject]
    group_pi: np.ndarray  # (J, M)
    group_Q: np.ndarray  # (J, M, M)
    delta_slope: np.ndarray  # (q,)
    lambda_slopes: np.ndarray  # (M, q)
    group_ids: np.ndarray  # (n,)
    subject_intercepts: np.ndarray  # (n, M+1): delta then per-state lambda

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "group_pi": self.group_pi.tolist(),
            "group_Q": self.group_Q.tolist(),
            "delta_slope": self.delta_slope.tolist(),
            "lambda_slopes": self.lambda_slopes.tolist(),
            "group_ids": self.group_ids.tolist(),
            "subject_intercepts": self.subject_intercepts.tolist(),
            "thetas": [
                {
                    "a": t.a.tolist(),
                    "c": t.c.tolist(),
                    "b0": t.b0.tolist(),
                    "b1": t.b1.tolist(),
                }
                for t in self.thetas
            ],
        }


def _draw_male_generator(rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    Q = np.zeros((3, 3))
    off = rng.uniform(lo, hi, size=6)
    Q[0, 1], Q[0, 2], Q[1, 0], Q[1, 2], Q[2, 0], Q[2, 1] = off
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def _draw_female_generator(rng: np.random.Generator) -> np.ndarray:
    Q = np.zeros((3, 3))
    Q[0, 1], Q[0, 2] = rng.uniform(0.05, 0.1, size=2)
    Q[1, 0] = rng.uniform(0.3, 0.4)
    Q[1, 2] = rng.uniform(0.1, 0.2)
    Q[2, 0] = rng.uniform(0.3, 0.4)
    Q[2, 1] = rng.uniform(0.1, 0.2)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def _weekend_indicator(K: int, design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    n_weekend = int(round(design.weekend_fraction * K))
    x = np.zeros(K)
    if design.weekend_placement == "prefix":
        x[:n_weekend] = 1.0
    else:
        x[rng.choice(K, size=n_weekend, replace=False)] = 1.0
    return x


def generate_cohort(
    design: SimDesign, rng: np.random.Generator | None = None
) -> Tuple[List[SubjectSeries], CohortTruth]:
    """Simulate a cohort plus its ground truth.

    The first half of the subjects are male (group 1), the rest female
    (group 2).  The latent path is sampled in continuous time and read at
    the observation grid; counts are then drawn from the state's law.
    Each subject gets an independent child RNG stream so per-subject
    generation order does not matter.
    """
    if rng is None:
        rng = np.random.default_rng(design.seed)
    M = design.M
    if M != 3:
        raise ValueError("the benchmark design is defined for M=3")

    n = design.n_subjects
    n_male = n // 2
    group_ids = np.array([1] * n_male + [2] * (n - n_male), dtype=int)

    u_m = rng.uniform(design.male_pi_low, design.male_pi_high)
    pi_male = np.array([u_m[0], u_m[1], 1.0 - u_m.sum()])
    u_f = rng.uniform(design.female_pi_low, design.female_pi_high)
    pi_female = np.array([u_f[0], u_f[1], 1.0 - u_f.sum()])
    Q_male = _draw_male_generator(rng, *design.male_rate_range)
    Q_female = _draw_female_generator(rng)
    validate_rate_matrix(Q_male)
    validate_rate_matrix(Q_female)
    group_pi = np.vstack([pi_male, pi_female])
    group_Q = np.stack([Q_male, Q_female])

    delta_slope = np.array([design.delta_weekend_effect])
    lambda_slopes = np.asarray(design.lambda_weekend_effects, dtype=float)[:, None]

    child_rngs = rng.spawn(n)
    data: List[SubjectSeries] = []
    thetas: List[ThetaSubject] = []
    intercepts = np.zeros((n, M + 1))
    for i in range(n):
        sub_rng = child_rngs[i]
        g = group_ids[i]
        pi, Q = group_pi[g - 1], group_Q[g - 1]

        delta_int = sub_rng.normal(design.delta_intercept_mean, design.intercept_sd)
        lam_int = sub_rng.normal(design.lambda_intercept_means, design.intercept_sd)
        intercepts[i, 0] = delta_int
        intercepts[i, 1:] = lam_int

        K = int(sub_rng.integers(design.length_range[0], design.length_range[1] + 1))
        gaps = sub_rng.choice(design.gap_choices, size=K - 1)
        times = np.concatenate([[0.0], np.cumsum(gaps, dtype=float)])
        x = _weekend_indicator(K, design, sub_rng)

        path = sample_path(Q, pi, horizon=times[-1] + 1.0, rng=sub_rng)
        states = path.states_at(times)  # 0-based
        lam = np.exp(lam_int[states] + lambda_slopes[states, 0] * x)
        counts = sub_rng.poisson(lam).astype(np.int64)
        s1 = np.flatnonzero(states == 0)
        if len(s1):
            delta = scipy.special.expit(delta_int + design.delta_weekend_effect * x[s1])
            counts[s1[sub_rng.random(len(s1)) < delta]] = 0
        data.append(
            SubjectSeries(
                subject_id=f"sim{i + 1:04d}",
                group_id=int(g),
                times=times,
                counts=counts,
                covariates=x[:, None],
            )
        )
        nat = NaturalParams(
            pi=pi,
            Q=Q,
            delta_coeffs=np.concatenate([[delta_int], delta_slope]),
            lambda_coeffs=np.column_stack([lam_int, lambda_slopes]),
        )
        thetas.append(from_natural(nat))

    truth = CohortTruth(
        thetas=thetas,
        group_pi=group_pi,
        group_Q=group_Q,
        delta_slope=delta_slope,
        lambda_slopes=lambda_slopes,
        group_ids=group_ids,
        subject_intercepts=intercepts,
    )
    return data, truth
