"""Continuous-time Markov chain kernel.

Transition probabilities over a gap dt are P(dt) = expm(dt * Q), computed by
scaling-and-squaring with a degree-13 Pade approximant (scipy's expm).
Entries are clamped into [1e-300, 1] before use in likelihoods so that log
probabilities stay finite.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RateMatrixError, ReducibleChainError

#: lower clamp applied to transition-probability entries
PROB_FLOOR = 1e-300


def validate_rate_matrix(Q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise RateMatrixError(f"rate matrix must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise RateMatrixError("rate matrix has non-finite entries")
    off = Q[~np.eye(Q.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise RateMatrixError("off-diagonal rates must be non-negative")
    if np.any(np.abs(Q.sum(axis=1)) > tol * max(1.0, np.abs(Q).max())):
        raise RateMatrixError("rate-matrix rows must sum to zero")
    return Q


def transition_matrix(Q: np.ndarray, dt: float) -> np.ndarray:
    """e^{dt Q}: row-stochastic transition probabilities over a gap dt > 0."""
    Q = validate_rate_matrix(Q)
    dt = float(dt)
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive and finite, got {dt}")
    P = scipy.linalg.expm(dt * Q)
    return np.clip(P, PROB_FLOOR, 1.0)


def transition_matrix_stack(Q: np.ndarray, dts: np.ndarray) -> np.ndarray:
    """Stack of e^{dt Q} for each dt in ``dts`` (one expm call, clamped)."""
    dts = np.asarray(dts, dtype=float)
    if dts.size == 0:
        return np.empty((0, Q.shape[0], Q.shape[0]))
    P = scipy.linalg.expm(dts[:, None, None] * Q[None, :, :])
    return np.clip(P, PROB_FLOOR, 1.0)


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Limiting occupancy pi* with pi* Q = 0 and sum(pi*) = 1.

    Requires an irreducible generator; reducibility is detected through the
    rank of the augmented system (and through non-positive entries in the
    candidate solution, which catch transient states).
    """
    Q = validate_rate_matrix(Q)
    M = Q.shape[0]
    aug = np.vstack([Q.T, np.ones((1, M))])
    rhs = np.zeros(M + 1)
    rhs[-1] = 1.0
    scale = max(1.0, np.abs(Q).max())
    if np.linalg.matrix_rank(aug, tol=1e-10 * scale) < M:
        raise ReducibleChainError(
            "generator appears reducible: stationary distribution is not unique"
        )
    pi, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    if np.any(pi <= 0):
        raise ReducibleChainError(
            "stationary solve produced non-positive mass; generator is reducible"
        )
    return pi / pi.sum()


@dataclass(frozen=True)
class PiecewiseConstantPath:
    """Right-continuous piecewise-constant state path on [0, horizon].

    ``jump_times[0] == 0``; ``states[j]`` holds on [jump_times[j], jump_times[j+1]).
    """

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def states_at(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.jump_times, times, side="right") - 1
        return self.states[idx]

    def occupancy(self) -> np.ndarray:
        """Fraction of [0, horizon] spent in each state."""
        M = int(self.states.max()) + 1
        edges = np.append(self.jump_times, self.horizon)
        durations = np.diff(edges)
        out = np.zeros(M)
        np.add.at(out, self.states, durations)
        return out / self.horizon


def sample_path(Q, pi0, horizon: float, rng: np.random.Generator) -> PiecewiseConstantPath:
    """Gillespie jump-chain sample of the latent process on [0, horizon].

    Holding time in state m is Exponential(-q(m,m)); the next state is l with
    probability q(m,l)/-q(m,m).  An absorbing state (zero exit rate) is legal:
    the path simply stays put.
    """
    Q = validate_rate_matrix(Q)
    pi0 = np.asarray(pi0, dtype=float)
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    M = Q.shape[0]
    state = int(rng.choice(M, p=pi0 / pi0.sum()))
    times = [0.0]
    states = [state]
    t = 0.0
    while True:
        exit_rate = -Q[state, state]
        if exit_rate <= 0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t >= horizon:
            break
        probs = Q[state].copy()
        probs[state] = 0.0
        state = int(rng.choice(M, p=probs / exit_rate))
        times.append(t)
        states.append(state)
    return PiecewiseConstantPath(
        jump_times=np.array(times), states=np.array(states, dtype=int), horizon=float(horizon)
    )
