"""Likelihood, posteriors, and gradients via the scaled forward-backward
algorithm over irregular time grids.

The forward pass normalizes the forward vector at every step and accumulates
the log normalizers, so series thousands of points long cannot underflow.
The per-subject negative log-likelihood gradient is assembled from smoothed
posteriors: initial-state terms through the softmax Jacobian, transition
terms through the Frechet derivative of the matrix exponential (adjoint
identity, one call per distinct gap), and emission terms through the GLM
score equations.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from . import kernels
from .ctmc import PROB_FLOOR, transition_matrix_stack
from .emissions import EmissionCoeffs, emission_score_weights, log_emission_matrix
from .errors import EmissionUnderflowError, GroupAssignmentError
from .params import (
    SubjectSeries,
    ThetaSubject,
    offdiagonal_pairs,
    to_natural,
)


@dataclass(frozen=True)
class ForwardBackwardResult:
    """Forward-backward output for one subject.

    log_alpha/log_beta are the genuine log-scale forward/backward variables
    (scaled vectors recombined with the per-step log normalizers, which are
    exposed as ``log_scale``); gamma rows are the smoothed state posteriors.
    """

    loglik: float
    log_alpha: np.ndarray  # (K, M)
    log_beta: np.ndarray  # (K, M)
    gamma: np.ndarray  # (K, M), rows sum to 1
    log_scale: np.ndarray  # (K,) per-step log normalizers; sums to loglik


@dataclass(frozen=True)
class PosteriorSummary:
    """Mean time-in-state summaries: per subject (eta) and per group (phi)."""

    eta: np.ndarray  # (n, M)
    phi: np.ndarray  # (J, M)


class PreparedSeries:
    """Cached per-series arrays shared by repeated likelihood evaluations."""

    __slots__ = ("series", "counts", "covariates", "distinct_dts", "step_idx", "K")

    def __init__(self, series: SubjectSeries):
        self.series = series
        self.counts = series.counts
        self.covariates = series.covariates
        dts = np.diff(series.times)
        self.distinct_dts, inv = np.unique(dts, return_inverse=True)
        self.step_idx = inv.astype(np.int64).ravel()
        self.K = series.n_obs


def prepare(series: SubjectSeries) -> PreparedSeries:
    return PreparedSeries(series)


def _forward_pass(prep: PreparedSeries, nat):
    """Returns (alpha, w, logmax, b, P) or raises EmissionUnderflowError."""
    coeffs = EmissionCoeffs.from_natural(nat)
    logB = log_emission_matrix(prep.counts, prep.covariates, coeffs)
    logmax = logB.max(axis=1)
    bad = ~np.isfinite(logmax)
    if np.any(bad):
        raise EmissionUnderflowError(int(np.flatnonzero(bad)[0]), prep.series.subject_id)
    b = np.exp(logB - logmax[:, None])
    P = transition_matrix_stack(nat.Q, prep.distinct_dts)
    alpha, w, fail = kernels.forward_scaled(nat.pi, P, prep.step_idx, b)
    if fail >= 0:
        raise EmissionUnderflowError(int(fail), prep.series.subject_id)
    return alpha, w, logmax, b, P


def _neg_loglik_prepared(prep: PreparedSeries, theta: ThetaSubject, M: int, q: int) -> float:
    nat = to_natural(theta, M, q)
    _, w, logmax, _, _ = _forward_pass(prep, nat)
    return -float(np.sum(np.log(w)) + np.sum(logmax))


def neg_loglik(series: SubjectSeries, theta: ThetaSubject) -> float:
    """f_i(theta_i): negative log-likelihood of one subject's series."""
    return _neg_loglik_prepared(prepare(series), theta, theta.M, theta.q)


def joint_neg_loglik(data: Sequence[SubjectSeries], thetas: Sequence[ThetaSubject]) -> float:
    """f(theta) = sum_i f_i(theta_i)."""
    return float(sum(neg_loglik(s, t) for s, t in zip(data, thetas)))


def forward_backward(series: SubjectSeries, theta: ThetaSubject) -> ForwardBackwardResult:
    """Smoothed posteriors and log-scale forward/backward variables."""
    prep = prepare(series)
    nat = to_natural(theta, theta.M, theta.q)
    alpha, w, logmax, b, P = _forward_pass(prep, nat)
    beta = kernels.backward_scaled(P, prep.step_idx, b, w)
    gamma = kernels.smoothed_probs(alpha, beta)
    log_scale = np.log(w) + logmax
    cum = np.cumsum(log_scale)
    loglik = float(cum[-1])
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha) + cum[:, None]
        # beta was scaled by the normalizers of steps k+1..K
        tail = loglik - cum
        log_beta = np.log(beta) + tail[:, None]
    return ForwardBackwardResult(
        loglik=loglik, log_alpha=log_alpha, log_beta=log_beta, gamma=gamma, log_scale=log_scale
    )


def time_in_state(
    results: Sequence[ForwardBackwardResult], groups: Sequence[int], J: int | None = None
) -> PosteriorSummary:
    """eta_i = mean of gamma rows; phi_j = mean of eta over group members."""
    if len(results) != len(groups):
        raise GroupAssignmentError("results and group assignments differ in length")
    groups = np.asarray(groups, dtype=int)
    if J is None:
        J = int(groups.max())
    eta = np.array([r.gamma.mean(axis=0) for r in results])
    M = eta.shape[1]
    phi = np.zeros((J, M))
    for j in range(1, J + 1):
        members = groups == j
        if not members.any():
            raise GroupAssignmentError(f"group {j} has no subjects")
        phi[j - 1] = eta[members].mean(axis=0)
    return PosteriorSummary(eta=eta, phi=phi)


def _nll_and_grad_prepared(prep: PreparedSeries, theta: ThetaSubject, M: int, q: int):
    """(f_i, grad f_i) in unconstrained coordinates."""
    nat = to_natural(theta, M, q)
    alpha, w, logmax, b, P = _forward_pass(prep, nat)
    loglik = float(np.sum(np.log(w)) + np.sum(logmax))
    beta = kernels.backward_scaled(P, prep.step_idx, b, w)
    gamma = kernels.smoothed_probs(alpha, beta)

    # initial distribution: d loglik / da_j = gamma_1(j) - pi_j
    g_a = gamma[0, : M - 1] - nat.pi[: M - 1]

    # transition rates, via the expm Frechet adjoint per distinct gap
    g_c = np.zeros(M * (M - 1))
    if prep.K > 1:
        W = kernels.pair_weight_sums(alpha, beta, b, w, prep.step_idx, len(prep.distinct_dts))
        G_Q = np.zeros((M, M))
        for d, dt in enumerate(prep.distinct_dts):
            A = (dt * nat.Q).T
            G_Q += dt * scipy.linalg.expm_frechet(A, W[d], compute_expm=False)
        rates = np.exp(theta.c)
        for r, (m, l) in enumerate(offdiagonal_pairs(M)):
            g_c[r] = rates[r] * (G_Q[m, l] - G_Q[m, m])

    # emissions: posterior-weighted GLM scores
    coeffs = EmissionCoeffs.from_natural(nat)
    du, dv = emission_score_weights(prep.counts, prep.covariates, coeffs)
    w1 = gamma[:, 0] * du  # (K,), state-1 delta predictor
    wm = gamma * dv  # (K, M), per-state log-mean predictors
    g_b0 = np.concatenate([[w1.sum()], wm.sum(axis=0)])
    if q > 0:
        x = prep.covariates
        g_delta_slope = x.T @ w1
        g_lambda_slopes = (wm.T @ x).ravel()  # (M*q,), state-major
        g_b1 = np.concatenate([g_delta_slope, g_lambda_slopes])
    else:
        g_b1 = np.zeros(0)

    grad_loglik = np.concatenate([g_a, g_c, g_b0, g_b1])
    return -loglik, -grad_loglik


def grad_neg_loglik(series: SubjectSeries, theta: ThetaSubject) -> np.ndarray:
    """Gradient of f_i in the packed unconstrained coordinates [a, c, b0, b1]."""
    _, g = _nll_and_grad_prepared(prepare(series), theta, theta.M, theta.q)
    return g
