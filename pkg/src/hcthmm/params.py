"""Data and parameter containers, plus the unconstrained/natural reparameterization.

A model with M latent states and q covariates is indexed per subject by the
unconstrained vector theta = [a, c, b0, b1]:

* ``a`` (length M-1): multinomial-logit coordinates of the initial state
  distribution, reference category M, so pi = softmax([a, 0]).
* ``c`` (length M(M-1)): element-wise logs of the off-diagonal transition
  rates, laid out row-major excluding the diagonal, i.e.
  c = (q(1,2), ..., q(1,M), q(2,1), q(2,3), ..., q(M,M-1)).
* ``b0`` (length M+1): GLM intercepts, first the logit zero-proportion
  intercept, then the M log-mean intercepts.
* ``b1`` (length q(M+1)): GLM slopes in the same order, q per linear model.

Total dimension is (M+1)(M+q).
"""

from dataclasses import dataclass

import numpy as np

from .errors import BlockShapeError, GroupAssignmentError, NotInvertibleError

BLOCK_NAMES = ("a", "c", "b0", "b1")


def block_dims(M: int, q: int) -> dict:
    """Per-block lengths of the unconstrained parameter vector."""
    if M < 2:
        raise ValueError(f"need at least 2 states, got M={M}")
    if q < 0:
        raise ValueError(f"covariate dimension must be >= 0, got q={q}")
    return {"a": M - 1, "c": M * (M - 1), "b0": M + 1, "b1": q * (M + 1)}


def theta_dim(M: int, q: int) -> int:
    return (M + 1) * (M + q)


def block_slices(M: int, q: int) -> dict:
    """Slices of each block inside the packed theta vector."""
    dims = block_dims(M, q)
    out, lo = {}, 0
    for name in BLOCK_NAMES:
        out[name] = slice(lo, lo + dims[name])
        lo += dims[name]
    return out


def offdiagonal_pairs(M: int):
    """(row, col) pairs of the off-diagonal rate entries in packed order."""
    return [(m, l) for m in range(M) for l in range(M) if l != m]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubjectSeries:
    """One subject's irregularly observed count series.

    ``times`` are observation times in minutes, strictly increasing;
    ``counts`` the non-negative integer activity counts; ``covariates`` a
    (K, q) matrix of concurrent covariate values (baseline characteristics
    folded in as constant columns).  ``group_id`` is the 1-based subgroup.
    """

    subject_id: str
    group_id: int
    times: np.ndarray
    counts: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        times = _freeze(np.asarray(self.times, dtype=float))
        counts = _freeze(np.asarray(self.counts, dtype=np.int64))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        cov = _freeze(cov)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "covariates", cov)
        K = len(times)
        if K < 1:
            raise ValueError(f"subject {self.subject_id!r}: empty series")
        if len(counts) != K or cov.shape[0] != K:
            raise ValueError(
                f"subject {self.subject_id!r}: times/counts/covariates lengths "
                f"differ ({K}, {len(counts)}, {cov.shape[0]})"
            )
        if not np.all(np.isfinite(times)):
            raise ValueError(f"subject {self.subject_id!r}: non-finite times")
        if K > 1 and not np.all(np.diff(times) > 0):
            raise ValueError(
                f"subject {self.subject_id!r}: times must be strictly increasing"
            )
        if np.any(counts < 0):
            raise ValueError(f"subject {self.subject_id!r}: negative counts")
        if not np.all(np.isfinite(cov)):
            raise ValueError(f"subject {self.subject_id!r}: non-finite covariates")
        if self.group_id < 1:
            raise GroupAssignmentError(
                f"subject {self.subject_id!r}: group_id must be >= 1"
            )

    @property
    def n_obs(self) -> int:
        return len(self.times)

    @property
    def q(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class ThetaSubject:
    """Per-subject parameters in unconstrained coordinates (see module docs)."""

    a: np.ndarray
    c: np.ndarray
    b0: np.ndarray
    b1: np.ndarray

    def __post_init__(self):
        for name in BLOCK_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter block '{name}' has non-finite entries")
            object.__setattr__(self, name, _freeze(arr))

    @property
    def M(self) -> int:
        return len(self.a) + 1

    @property
    def q(self) -> int:
        return len(self.b1) // (self.M + 1)

    @property
    def dim(self) -> int:
        return len(self.a) + len(self.c) + len(self.b0) + len(self.b1)

    def check_dims(self, M: int, q: int) -> None:
        dims = block_dims(M, q)
        for name in BLOCK_NAMES:
            got = len(getattr(self, name))
            if got != dims[name]:
                raise BlockShapeError(name, dims[name], got)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.c, self.b0, self.b1])

    @classmethod
    def from_vector(cls, vec, M: int, q: int) -> "ThetaSubject":
        vec = np.asarray(vec, dtype=float).ravel()
        if len(vec) != theta_dim(M, q):
            raise BlockShapeError("theta", theta_dim(M, q), len(vec))
        sl = block_slices(M, q)
        return cls(a=vec[sl["a"]], c=vec[sl["c"]], b0=vec[sl["b0"]], b1=vec[sl["b1"]])


@dataclass(frozen=True)
class NaturalParams:
    """Natural-scale parameters: initial law, generator, GLM coefficients.

    ``delta_coeffs`` is (1+q,) — intercept then slopes — for the logit of the
    structural-zero proportion; ``lambda_coeffs`` is (M, 1+q) for the
    per-state log Poisson means.
    """

    pi: np.ndarray
    Q: np.ndarray
    delta_coeffs: np.ndarray
    lambda_coeffs: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        dc = np.asarray(self.delta_coeffs, dtype=float).ravel()
        lc = np.atleast_2d(np.asarray(self.lambda_coeffs, dtype=float))
        M = len(pi)
        if Q.shape != (M, M):
            raise ValueError(f"Q has shape {Q.shape}, expected ({M}, {M})")
        if lc.shape[0] != M or lc.shape[1] != len(dc):
            raise ValueError(
                f"lambda_coeffs has shape {lc.shape}, expected ({M}, {len(dc)})"
            )
        if np.any(pi <= 0) or np.any(pi >= 1):
            raise ValueError("pi entries must lie strictly inside (0, 1)")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"pi sums to {pi.sum()!r}, expected 1 within 1e-12")
        off = Q[~np.eye(M, dtype=bool)]
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be >= 0")
        if np.any(np.abs(Q.sum(axis=1)) > 1e-12):
            raise ValueError("generator rows must sum to 0 within 1e-12")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(dc)) and np.all(np.isfinite(lc))):
            raise ValueError("non-finite natural parameters")
        object.__setattr__(self, "pi", _freeze(pi))
        object.__setattr__(self, "Q", _freeze(Q))
        object.__setattr__(self, "delta_coeffs", _freeze(dc))
        object.__setattr__(self, "lambda_coeffs", _freeze(lc))

    @property
    def M(self) -> int:
        return len(self.pi)

    @property
    def q(self) -> int:
        return len(self.delta_coeffs) - 1


def softmax_with_reference(a: np.ndarray) -> np.ndarray:
    """softmax over [a, 0]; the last category is the reference.

    The result is nudged into the open interval so that extreme logits
    (where 1 - pi underflows past machine precision) still produce a valid
    strictly-interior probability vector.
    """
    logits = np.concatenate([np.asarray(a, dtype=float).ravel(), [0.0]])
    logits -= logits.max()
    w = np.exp(logits)
    pi = w / w.sum()
    # floor just above machine epsilon: keeps the largest entry strictly
    # below 1 after renormalization even for extreme logits
    pi = np.maximum(pi, 2.3e-16)
    return pi / pi.sum()


def to_natural(theta: ThetaSubject, M: int, q: int) -> NaturalParams:
    """Map unconstrained coordinates to natural parameters.

    Bijective onto the interior of the natural space: pi strictly positive,
    off-diagonal rates strictly positive.
    """
    theta.check_dims(M, q)
    pi = softmax_with_reference(theta.a)
    Q = np.zeros((M, M))
    rates = np.exp(theta.c)
    for r, (m, l) in enumerate(offdiagonal_pairs(M)):
        Q[m, l] = rates[r]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    delta_coeffs = np.concatenate([theta.b0[:1], theta.b1[:q]])
    lam_int = theta.b0[1:]
    lam_slopes = theta.b1[q:].reshape(M, q) if q > 0 else np.zeros((M, 0))
    lambda_coeffs = np.column_stack([lam_int, lam_slopes])
    return NaturalParams(pi=pi, Q=Q, delta_coeffs=delta_coeffs, lambda_coeffs=lambda_coeffs)


def from_natural(params: NaturalParams) -> ThetaSubject:
    """Exact inverse of :func:`to_natural`; boundary values are rejected."""
    M, q = params.M, params.q
    pi = params.pi
    if np.any(pi <= 0):
        raise NotInvertibleError("pi has a zero entry; logit coordinates undefined")
    a = np.log(pi[:-1]) - np.log(pi[-1])
    pairs = offdiagonal_pairs(M)
    off = np.array([params.Q[m, l] for (m, l) in pairs])
    if np.any(off <= 0):
        raise NotInvertibleError("zero off-diagonal rate; log coordinates undefined")
    c = np.log(off)
    b0 = np.concatenate([params.delta_coeffs[:1], params.lambda_coeffs[:, 0]])
    b1 = np.concatenate([params.delta_coeffs[1:], params.lambda_coeffs[:, 1:].ravel()])
    return ThetaSubject(a=a, c=c, b0=b0, b1=b1)


def permute_states(params: NaturalParams, perm) -> NaturalParams:
    """Relabel latent states: new state m is old state perm[m] (0-based)."""
    perm = np.asarray(perm, dtype=int)
    M = params.M
    if sorted(perm.tolist()) != list(range(M)):
        raise ValueError(f"perm must be a permutation of 0..{M - 1}")
    return NaturalParams(
        pi=params.pi[perm],
        Q=params.Q[np.ix_(perm, perm)],
        delta_coeffs=params.delta_coeffs,
        lambda_coeffs=params.lambda_coeffs[perm],
    )


def permute_theta(theta: ThetaSubject, perm) -> ThetaSubject:
    """Relabel states in unconstrained coordinates (through the natural space)."""
    M, q = theta.M, theta.q
    return from_natural(permute_states(to_natural(theta, M, q), perm))
