"""State-dependent observation laws.

State 1 emits from a zero-inflated Poisson: with probability delta(x) a
structural zero, otherwise Poisson(lambda_1(x)).  States 2..M emit plain
Poisson(lambda_m(x)).  Both delta and the lambdas are GLMs in the covariates:
logit delta = b_{0,0} + x' b_{0,1} and log lambda_m = b_{m,0} + x' b_{m,1}.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .params import NaturalParams

#: linear predictors for log lambda are capped here to keep exp() finite
LOG_MEAN_CAP = 500.0


@dataclass(frozen=True)
class EmissionCoeffs:
    """GLM coefficients for the zero proportion and the M Poisson means."""

    delta_intercept: float
    delta_slope: np.ndarray  # (q,)
    lambda_intercepts: np.ndarray  # (M,)
    lambda_slopes: np.ndarray  # (M, q)

    def __post_init__(self):
        ds = np.asarray(self.delta_slope, dtype=float).ravel()
        li = np.asarray(self.lambda_intercepts, dtype=float).ravel()
        ls = np.atleast_2d(np.asarray(self.lambda_slopes, dtype=float))
        if ls.shape != (len(li), len(ds)):
            raise ValueError(
                f"lambda_slopes has shape {ls.shape}, expected ({len(li)}, {len(ds)})"
            )
        vals = np.concatenate([[self.delta_intercept], ds, li, ls.ravel()])
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite emission coefficients")
        object.__setattr__(self, "delta_slope", ds)
        object.__setattr__(self, "lambda_intercepts", li)
        object.__setattr__(self, "lambda_slopes", ls)

    @property
    def M(self) -> int:
        return len(self.lambda_intercepts)

    @property
    def q(self) -> int:
        return len(self.delta_slope)

    @classmethod
    def from_natural(cls, params: NaturalParams) -> "EmissionCoeffs":
        return cls(
            delta_intercept=float(params.delta_coeffs[0]),
            delta_slope=params.delta_coeffs[1:],
            lambda_intercepts=params.lambda_coeffs[:, 0],
            lambda_slopes=params.lambda_coeffs[:, 1:],
        )

    def delta(self, x) -> float:
        return float(expit(self.delta_intercept + np.dot(self.delta_slope, x)))

    def lambdas(self, x) -> np.ndarray:
        lp = self.lambda_intercepts + self.lambda_slopes @ np.asarray(x, dtype=float)
        return np.exp(np.minimum(lp, LOG_MEAN_CAP))


def _check_state(state: int, M: int) -> None:
    if not 1 <= state <= M:
        raise ValueError(f"state must be in 1..{M}, got {state}")


def log_emission(y: int, x, state: int, coeffs: EmissionCoeffs) -> float:
    """log g_state(y; x), computed stably (log-gamma factorials, log-sum-exp).

    ``state`` is 1-based; state 1 is the zero-inflated one.
    """
    y = int(y)
    if y < 0:
        raise ValueError(f"counts must be non-negative, got {y}")
    _check_state(state, coeffs.M)
    x = np.asarray(x, dtype=float).ravel()
    lam_lp = min(
        float(coeffs.lambda_intercepts[state - 1] + coeffs.lambda_slopes[state - 1] @ x),
        LOG_MEAN_CAP,
    )
    log_pois = y * lam_lp - np.exp(lam_lp) - gammaln(y + 1)
    if state > 1:
        return float(log_pois)
    u = coeffs.delta_intercept + float(coeffs.delta_slope @ x)
    log_delta = log_expit(u)
    log_1m_delta = log_expit(-u)
    if y == 0:
        return float(np.logaddexp(log_delta, log_1m_delta + log_pois))
    return float(log_1m_delta + log_pois)


def sample_emission(x, state: int, coeffs: EmissionCoeffs, rng: np.random.Generator) -> int:
    """Draw one count from state's emission law (state 1-based)."""
    _check_state(state, coeffs.M)
    x = np.asarray(x, dtype=float).ravel()
    lam = float(coeffs.lambdas(x)[state - 1])
    if state == 1 and rng.random() < coeffs.delta(x):
        return 0
    return int(rng.poisson(lam))


def _distinct_rows(covariates: np.ndarray):
    """Unique covariate rows and the inverse map; emission GLMs are evaluated
    once per distinct row (e.g. two rows when the only covariate is a
    weekend indicator)."""
    uniq, inverse = np.unique(covariates, axis=0, return_inverse=True)
    return uniq, inverse.ravel()


def log_emission_matrix(
    counts: np.ndarray, covariates: np.ndarray, coeffs: EmissionCoeffs
) -> np.ndarray:
    """(K, M) matrix of log g_m(y_k; x_k), vectorized over observations."""
    counts = np.asarray(counts)
    uniq, inv = _distinct_rows(np.atleast_2d(covariates))
    lam_lp = np.minimum(
        coeffs.lambda_intercepts[None, :] + uniq @ coeffs.lambda_slopes.T, LOG_MEAN_CAP
    )  # (D, M)
    u = coeffs.delta_intercept + uniq @ coeffs.delta_slope  # (D,)
    lp_k = lam_lp[inv]  # (K, M)
    logB = counts[:, None] * lp_k - np.exp(lp_k) - gammaln(counts + 1)[:, None]
    log_delta = log_expit(u)[inv]
    log_1m = log_expit(-u)[inv]
    zero = counts == 0
    col0 = np.where(
        zero,
        np.logaddexp(log_delta, log_1m + logB[:, 0]),
        log_1m + logB[:, 0],
    )
    logB[:, 0] = col0
    return logB


def emission_score_weights(
    counts: np.ndarray, covariates: np.ndarray, coeffs: EmissionCoeffs
):
    """Per-observation emission score pieces for the likelihood gradient.

    Returns (du, dv): du[k] = d log g_1(y_k)/d(logit-delta linear predictor),
    dv[k, m] = d log g_{m+1}(y_k)/d(log-lambda_{m+1} linear predictor).
    Only state 1's law involves delta, so du applies to state 1 alone.
    """
    counts = np.asarray(counts, dtype=float)
    uniq, inv = _distinct_rows(np.atleast_2d(covariates))
    lam_lp = np.minimum(
        coeffs.lambda_intercepts[None, :] + uniq @ coeffs.lambda_slopes.T, LOG_MEAN_CAP
    )
    lam = np.exp(lam_lp)[inv]  # (K, M)
    u = coeffs.delta_intercept + uniq @ coeffs.delta_slope
    delta = expit(u)[inv]  # (K,)

    dv = counts[:, None] - lam
    zero = counts == 0
    lam1 = lam[:, 0]
    e = np.exp(-lam1)
    g0 = delta + (1.0 - delta) * e
    du = np.where(zero, delta * (1.0 - delta) * (1.0 - e) / g0, -delta)
    dv0 = np.where(zero, -(1.0 - delta) * lam1 * e / g0, dv[:, 0])
    dv[:, 0] = dv0
    return du, dv
