"""Numba-compiled recursions for the scaled forward-backward algorithm.

All kernels operate on shift-scaled emission probabilities
b[k, m] = exp(log g_m(y_k) - max_m log g_m(y_k)); the per-row max is carried
separately by the caller when reassembling log-likelihood values.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_scaled(pi, P, step_idx, b):
    """Scaled forward pass.

    Returns (alpha, w, fail): alpha[k] the normalized forward vector, w[k]
    the normalizer, and fail the first time index where the forward mass
    vanished (-1 if none).  P is a (D, M, M) stack indexed per step through
    step_idx (length K-1).
    """
    K, M = b.shape
    alpha = np.zeros((K, M))
    w = np.zeros(K)
    s = 0.0
    for m in range(M):
        v = pi[m] * b[0, m]
        alpha[0, m] = v
        s += v
    if not (s > 0.0) or not np.isfinite(s):
        return alpha, w, 0
    w[0] = s
    for m in range(M):
        alpha[0, m] /= s
    for k in range(1, K):
        Pk = P[step_idx[k - 1]]
        s = 0.0
        for m in range(M):
            acc = 0.0
            for l in range(M):
                acc += alpha[k - 1, l] * Pk[l, m]
            v = acc * b[k, m]
            alpha[k, m] = v
            s += v
        if not (s > 0.0) or not np.isfinite(s):
            return alpha, w, k
        w[k] = s
        for m in range(M):
            alpha[k, m] /= s
    return alpha, w, -1


@njit(cache=True)
def backward_scaled(P, step_idx, b, w):
    """Scaled backward pass matching forward_scaled's normalizers."""
    K, M = b.shape
    beta = np.zeros((K, M))
    for m in range(M):
        beta[K - 1, m] = 1.0
    for k in range(K - 2, -1, -1):
        Pk = P[step_idx[k]]
        wn = w[k + 1]
        for m in range(M):
            acc = 0.0
            for l in range(M):
                acc += Pk[m, l] * b[k + 1, l] * beta[k + 1, l]
            beta[k, m] = acc / wn
    return beta


@njit(cache=True)
def pair_weight_sums(alpha, beta, b, w, step_idx, n_distinct):
    """Accumulate W[d] = sum over steps with gap d of the pairwise posterior
    divided elementwise by the transition matrix:

        W_k(m, l) = alpha[k, m] * b[k+1, l] * beta[k+1, l] / w[k+1]

    which is the sensitivity d loglik / d P_d(m, l) summed per distinct gap.
    """
    K, M = b.shape
    W = np.zeros((n_distinct, M, M))
    for k in range(K - 1):
        d = step_idx[k]
        wn = w[k + 1]
        for l in range(M):
            r = b[k + 1, l] * beta[k + 1, l] / wn
            for m in range(M):
                W[d, m, l] += alpha[k, m] * r
    return W


@njit(cache=True)
def smoothed_probs(alpha, beta):
    """gamma[k] proportional to alpha[k] * beta[k], renormalized per row."""
    K, M = alpha.shape
    gamma = np.zeros((K, M))
    for k in range(K):
        s = 0.0
        for m in range(M):
            v = alpha[k, m] * beta[k, m]
            gamma[k, m] = v
            s += v
        for m in range(M):
            gamma[k, m] /= s
    return gamma
