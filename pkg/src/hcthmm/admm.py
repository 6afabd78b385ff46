"""Constrained maximum likelihood via consensus ADMM.

Each outer iteration performs the Gauss-Seidel sweep

  theta-update: per subject, argmin f_i(t) + xi_i'(A_i t - B_i z) + rho/2 |A_i t - B_i z|^2
  z-update:     per shared slice, the mean over sharing subjects of A_i theta_i + xi_i/rho
  xi-update:    xi_i += rho (A_i theta_i - B_i z)

The theta-update runs independently per subject (optionally across a process
pool); z- and xi-updates are serial reductions in fixed subject order so runs
are reproducible.  On exit the constrained blocks are overwritten with the
consensus values, so reported estimates are exactly feasible.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.optimize

from .errors import GroupAssignmentError, InnerSolverError
from .hierarchy import ConstraintSystem, HierarchySpec, build_constraints
from .inference import _neg_loglik_prepared, _nll_and_grad_prepared, prepare
from .params import SubjectSeries, ThetaSubject, block_slices, permute_theta

#: objective value returned when the likelihood underflows during a line search
_UNDERFLOW_PENALTY = 1e15

#: box half-width on unconstrained coordinates inside the inner solver; keeps
#: softmax/exp away from hard under/overflow while leaving any data-supported
#: optimum interior (flat directions, e.g. a one-shot initial distribution,
#: stop cleanly at the box instead of drifting to +-inf)
COORD_BOUND = 50.0


@dataclass(frozen=True)
class FitConfig:
    """Solver knobs.

    The working penalty is ``rho`` times the mean series length (subproblem
    curvature grows linearly with the number of observations, so a fixed
    penalty cannot serve both short and long series).  Stopping combines the
    absolute floor 1e-4 * sqrt(#constraint rows) with a 1e-4 relative term
    against the scale of the compared quantities.
    """

    rho: float = 1.0  # multiplied by the mean observations-per-subject
    adapt_rho: bool = True
    tol_primal: Optional[float] = None
    tol_dual: Optional[float] = None
    rel_tol: float = 1e-4
    max_iter: int = 500
    n_starts: int = 1
    seed: int = 0
    workers: int = 1
    inner_gtol: float = 1e-6  # scaled by each subject's series length
    inner_maxiter: int = 50
    inner_maxiter_first: int = 500
    init_jitter_sd: float = 0.1


@dataclass
class AdmmState:
    theta: List[np.ndarray]
    z: np.ndarray
    xi: List[np.ndarray]
    rho: float
    iteration: int
    primal_residual: float
    dual_residual: float


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    neg_loglik: float
    primal_residual: float
    dual_residual: float
    rho: float
    lagrangian_start: float
    lagrangian_end: float


@dataclass
class FitResult:
    theta_hat: List[ThetaSubject]
    z_hat: np.ndarray
    neg_loglik: float
    n_iterations: int
    residual_history: List[IterationStats]
    converged: bool
    bic: float
    kkt_residual: float
    xi_hat: List[np.ndarray]
    spec: HierarchySpec
    n_obs_total: int
    best_start: int = 0


# ---------------------------------------------------------------------------
# inner (per-subject) solver

_WORKER_CTX: dict = {}


def _subject_objective(vec, prep, M, q, tidx, xi, bz, rho_vec, x0):
    theta = ThetaSubject.from_vector(vec, M, q)
    try:
        f, g = _nll_and_grad_prepared(prep, theta, M, q)
    except Exception:
        d = vec - x0
        return _UNDERFLOW_PENALTY + 0.5 * d @ d, d
    if len(tidx):
        r = vec[tidx] - bz
        f = f + xi @ r + 0.5 * (rho_vec * r) @ r
        g = g.copy()
        g[tidx] += xi + rho_vec * r
    return f, g


def estimate_diag_curvature(prep, theta_vec, M, q, step: float = 1e-3) -> np.ndarray:
    """Per-coordinate curvature of f_i by central differences of the gradient.

    The subproblem Hessian spans several orders of magnitude across coordinate
    types (GLM intercepts vs transition rates vs initial-law logits), which
    cripples quasi-Newton steps from a cold start; these values feed a Jacobi
    (diagonal) preconditioner in the inner solver.
    """
    d = len(theta_vec)
    h = np.empty(d)
    for j in range(d):
        tau = step * max(1.0, abs(theta_vec[j]))
        vp = theta_vec.copy()
        vp[j] += tau
        vm = theta_vec.copy()
        vm[j] -= tau
        try:
            _, gp = _nll_and_grad_prepared(prep, ThetaSubject.from_vector(vp, M, q), M, q)
            _, gm = _nll_and_grad_prepared(prep, ThetaSubject.from_vector(vm, M, q), M, q)
            h[j] = abs(gp[j] - gm[j]) / (2.0 * tau)
        except Exception:
            h[j] = 1.0
    return np.clip(h, 1e-6, 1e12)


def _solve_subject(prep, M, q, tidx, x0, xi, bz, rho_vec, gtol, maxiter, subject_id, h_base):
    """Inner theta-update: bounded quasi-Newton in Jacobi-preconditioned coords."""
    x0 = np.clip(x0, -COORD_BOUND, COORD_BOUND)
    h_eff = h_base.copy()
    if len(tidx):
        h_eff[tidx] += rho_vec
    scale = 1.0 / np.sqrt(h_eff)

    args = (prep, M, q, tidx, xi, bz, rho_vec, x0)

    def objective_y(y, ref):
        vec = ref + scale * y
        f, g = _subject_objective(vec, *args)
        return f, scale * g

    last_err = "no attempt"
    ref = x0
    for attempt in range(3):
        bounds = list(zip((-COORD_BOUND - ref) / scale, (COORD_BOUND - ref) / scale))
        res = scipy.optimize.minimize(
            objective_y,
            np.zeros(len(x0)),
            args=(ref,),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-12, "maxcor": 20},
        )
        if np.all(np.isfinite(res.x)) and res.fun < _UNDERFLOW_PENALTY:
            theta = np.clip(ref + scale * res.x, -COORD_BOUND, COORD_BOUND)
            r = theta[tidx] - bz if len(tidx) else np.zeros(0)
            f_raw = res.fun - (xi @ r + 0.5 * (rho_vec * r) @ r) if len(tidx) else res.fun
            return theta, float(f_raw)
        last_err = str(res.message)
        ref = np.clip(
            x0 + np.random.default_rng(attempt).normal(0.0, 0.05, size=len(x0)),
            -COORD_BOUND,
            COORD_BOUND,
        )
    raise InnerSolverError(subject_id, last_err)


def _theta_update_task(payload):
    i, x0, xi, bz, rho_mult, first = payload
    ctx = _WORKER_CTX
    prep = ctx["preps"][i]
    gtol = ctx["gtol_base"] * np.sqrt(max(1.0, prep.K))
    maxiter = ctx["maxiter_first"] if first else ctx["maxiter"]
    theta, f_raw = _solve_subject(
        prep, ctx["M"], ctx["q"], ctx["tidx"][i], x0, xi, bz,
        rho_mult * ctx["rho_base"], gtol, maxiter,
        prep.series.subject_id, ctx["curv"][i],
    )
    return i, theta, f_raw


def _pool_initializer(ctx):
    _WORKER_CTX.clear()
    _WORKER_CTX.update(ctx)


# ---------------------------------------------------------------------------
# initialization


def _kmeans_1d(values: np.ndarray, M: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm on sorted scalars, seeded at quantile midpoints.

    Equal-count quantile chunks misplace centers when one emission level
    dominates the data (most observations sit in the low-intensity state),
    so the seeds are refined to actual cluster means.
    """
    centers = np.quantile(values, (np.arange(M) + 0.5) / M).astype(float)
    for _ in range(max_iter):
        assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        new = np.array(
            [values[assign == m].mean() if np.any(assign == m) else centers[m] for m in range(M)]
        )
        new = np.sort(new)
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def initialize(
    data: Sequence[SubjectSeries],
    spec: HierarchySpec,
    config: FitConfig,
    rng: np.random.Generator,
) -> List[ThetaSubject]:
    """Moment-based starting point, one ThetaSubject per subject.

    Nonzero counts are clustered by one-dimensional k-means seeded at
    quantile midpoints; the log cluster means (ascending, enforcing the
    state-ordering convention) seed the Poisson intercepts.  The
    zero-inflation intercept comes from the excess of observed zeros over
    the Poisson-zero prediction; the initial law is uniform, all
    off-diagonal rates start at 0.1, slopes at 0.
    """
    M, q = spec.M, spec.q
    out = []
    for series in data:
        counts = np.asarray(series.counts)
        nonzero = np.sort(counts[counts > 0])
        if len(nonzero) == 0:
            lam_int = np.log(np.arange(1, M + 1, dtype=float))
        elif len(np.unique(nonzero)) < M:
            probs = (np.arange(M) + 0.5) / M
            lam_int = np.log(np.maximum(np.quantile(nonzero, probs), 0.5))
        else:
            centers = _kmeans_1d(nonzero.astype(float), M)
            lam_int = np.log(np.maximum(centers, 0.5))
        lam_int = np.sort(lam_int)
        zero_frac = float(np.mean(counts == 0))
        excess = np.clip(zero_frac - np.exp(-np.exp(lam_int[0])), 0.02, 0.98)
        delta_int = float(np.log(excess / (1.0 - excess)))
        theta = ThetaSubject(
            a=np.zeros(M - 1),
            c=np.full(M * (M - 1), np.log(0.1)),
            b0=np.concatenate([[delta_int], lam_int]),
            b1=np.zeros(q * (M + 1)),
        )
        out.append(theta)
    return out


def _jitter(thetas: List[ThetaSubject], sd: float, rng: np.random.Generator, M, q):
    return [
        ThetaSubject.from_vector(t.to_vector() + rng.normal(0.0, sd, t.dim), M, q)
        for t in thetas
    ]


# ---------------------------------------------------------------------------
# outer loop


def _penalty(theta_vecs, z, xi, rho_vec, cs: ConstraintSystem) -> float:
    total = 0.0
    for i in range(cs.n):
        if len(cs.theta_idx[i]) == 0:
            continue
        r = theta_vecs[i][cs.theta_idx[i]] - z[cs.z_idx[i]]
        total += xi[i] @ r + 0.5 * (rho_vec * r) @ r
    return float(total)


def _residuals(theta_vecs, z, z_old, xi, rho_vec, cs: ConstraintSystem):
    """Primal/dual residuals plus the norms used for relative tolerances."""
    primal_sq = dual_sq = ath_sq = bz_sq = xi_sq = 0.0
    dz = z - z_old
    for i in range(cs.n):
        if len(cs.theta_idx[i]) == 0:
            continue
        ath = theta_vecs[i][cs.theta_idx[i]]
        bz = z[cs.z_idx[i]]
        r = ath - bz
        primal_sq += r @ r
        dzi = rho_vec * dz[cs.z_idx[i]]
        dual_sq += dzi @ dzi
        ath_sq += ath @ ath
        bz_sq += bz @ bz
        xi_sq += xi[i] @ xi[i]
    return (
        float(np.sqrt(primal_sq)),
        float(np.sqrt(dual_sq)),
        float(np.sqrt(max(ath_sq, bz_sq))),
        float(np.sqrt(xi_sq)),
    )


def _z_update(theta_vecs, xi, rho_vec, cs: ConstraintSystem) -> np.ndarray:
    num = np.zeros(cs.z_dim)
    den = np.zeros(cs.z_dim)
    for i in range(cs.n):
        ix = cs.z_idx[i]
        if len(ix) == 0:
            continue
        np.add.at(num, ix, theta_vecs[i][cs.theta_idx[i]] + xi[i] / rho_vec)
        np.add.at(den, ix, 1.0)
    return num / np.maximum(den, 1.0)


def _run_admm(preps, cs: ConstraintSystem, theta0: List[ThetaSubject], config: FitConfig):
    n = cs.n
    M, q = cs.spec.M, cs.spec.q
    theta = [t.to_vector() for t in theta0]
    xi = [np.zeros(len(cs.theta_idx[i])) for i in range(n)]
    z = _z_update(theta, xi, np.ones(len(cs.theta_idx[0])), cs) if cs.z_dim else np.zeros(0)
    n_rows = cs.n_constraints
    abs_primal = config.tol_primal or 1e-4 * np.sqrt(max(n_rows, 1))
    abs_dual = config.tol_dual or 1e-4 * np.sqrt(max(n_rows, 1))

    curv = [estimate_diag_curvature(preps[i], theta[i], M, q) for i in range(n)]
    # per-coordinate penalty matched to the mean subproblem curvature, so
    # every constrained coordinate contracts at a comparable rate
    if cs.z_dim:
        rho_base = config.rho * np.mean([c[cs.theta_idx[0]] for c in curv], axis=0)
        rho_base = np.clip(rho_base, 1e-3, 1e8)
    else:
        rho_base = np.zeros(0)
    rho_mult = 1.0

    ctx = {
        "preps": preps,
        "M": M,
        "q": q,
        "tidx": cs.theta_idx,
        "curv": curv,
        "rho_base": rho_base,
        "gtol_base": config.inner_gtol,
        "maxiter": config.inner_maxiter,
        "maxiter_first": config.inner_maxiter_first,
    }
    pool = None
    if config.workers > 1 and n > 1:
        pool = ProcessPoolExecutor(
            max_workers=min(config.workers, n, os.cpu_count() or 1),
            initializer=_pool_initializer,
            initargs=(ctx,),
        )
    _pool_initializer(ctx)

    history: List[IterationStats] = []
    f_vals = None
    converged = False
    it = 0
    try:
        for it in range(1, config.max_iter + 1):
            first = it == 1
            rho_vec = rho_mult * rho_base
            if f_vals is None:
                f_vals = [
                    _neg_loglik_prepared(preps[i], ThetaSubject.from_vector(theta[i], M, q), M, q)
                    for i in range(n)
                ]
            lagr_start = sum(f_vals) + _penalty(theta, z, xi, rho_vec, cs)

            payloads = [
                (i, theta[i], xi[i], z[cs.z_idx[i]], rho_mult, first) for i in range(n)
            ]
            if pool is not None:
                results = list(pool.map(_theta_update_task, payloads, chunksize=1))
                results.sort(key=lambda t: t[0])
            else:
                results = [_theta_update_task(p) for p in payloads]
            theta = [r[1] for r in results]
            f_vals = [r[2] for r in results]

            z_old = z
            if cs.z_dim:
                z = _z_update(theta, xi, rho_vec, cs)
            lagr_end = sum(f_vals) + _penalty(theta, z, xi, rho_vec, cs)
            for i in range(n):
                if len(cs.theta_idx[i]):
                    xi[i] = xi[i] + rho_vec * (theta[i][cs.theta_idx[i]] - z[cs.z_idx[i]])
            primal, dual, scale_primal, scale_dual = _residuals(theta, z, z_old, xi, rho_vec, cs)
            history.append(
                IterationStats(
                    iteration=it,
                    neg_loglik=float(sum(f_vals)),
                    primal_residual=primal,
                    dual_residual=dual,
                    rho=rho_mult,
                    lagrangian_start=float(lagr_start),
                    lagrangian_end=float(lagr_end),
                )
            )
            if (
                primal <= abs_primal + config.rel_tol * scale_primal
                and dual <= abs_dual + config.rel_tol * scale_dual
            ):
                converged = True
                break
            if config.adapt_rho and cs.z_dim and it > 5 and scale_dual > 0:
                # balance the residuals relative to their scales; the first
                # iterations are skipped while the multipliers find their scale
                pr = primal / max(scale_primal, 1e-12)
                du = dual / max(scale_dual, 1e-12)
                if pr > 10.0 * du and rho_mult < 64.0:
                    rho_mult *= 2.0
                elif du > 10.0 * pr and rho_mult > 1.0 / 8.0:
                    rho_mult /= 2.0
    finally:
        if pool is not None:
            pool.shutdown()

    state = AdmmState(
        theta=theta,
        z=z,
        xi=xi,
        rho=rho_mult,
        iteration=it,
        primal_residual=history[-1].primal_residual if history else 0.0,
        dual_residual=history[-1].dual_residual if history else 0.0,
    )
    return state, history, converged


def _project_feasible(theta_vecs, z, cs: ConstraintSystem):
    out = []
    for i in range(cs.n):
        v = theta_vecs[i].copy()
        if len(cs.theta_idx[i]):
            v[cs.theta_idx[i]] = z[cs.z_idx[i]]
        out.append(v)
    return out


def _kkt_residual(preps, theta_vecs, xi, cs: ConstraintSystem) -> float:
    """max_i || grad f_i(theta_i) + A_i' xi_i ||_inf at the reported estimate."""
    M, q = cs.spec.M, cs.spec.q
    worst = 0.0
    for i in range(cs.n):
        _, g = _nll_and_grad_prepared(preps[i], ThetaSubject.from_vector(theta_vecs[i], M, q), M, q)
        g = g.copy()
        if len(cs.theta_idx[i]):
            g[cs.theta_idx[i]] += xi[i]
        worst = max(worst, float(np.abs(g).max()))
    return worst


def _canonical_permutation(theta_vecs, M, q) -> np.ndarray:
    """States sorted by ascending population-mean Poisson intercept."""
    b0 = block_slices(M, q)["b0"]
    lam_int = np.mean([v[b0][1:] for v in theta_vecs], axis=0)
    return np.argsort(lam_int, kind="stable")


def relabel_states(thetas: List[ThetaSubject], perm) -> List[ThetaSubject]:
    return [permute_theta(t, perm) for t in thetas]


def _finalize_run(preps, cs: ConstraintSystem, state, history, converged, compute_kkt=True):
    """Feasibility projection, KKT check, canonical relabeling, bookkeeping."""
    M, q = cs.spec.M, cs.spec.q
    theta_proj = _project_feasible(state.theta, state.z, cs)
    kkt = _kkt_residual(preps, theta_proj, state.xi, cs) if compute_kkt else float("nan")

    perm = _canonical_permutation(theta_proj, M, q)
    thetas = [ThetaSubject.from_vector(v, M, q) for v in theta_proj]
    if not np.array_equal(perm, np.arange(M)):
        thetas = relabel_states(thetas, perm)
    f_final = float(
        sum(_neg_loglik_prepared(preps[i], thetas[i], M, q) for i in range(cs.n))
    )
    z_hat = np.zeros(cs.z_dim)
    members_of = cs.scope_members()
    bsl = block_slices(M, q)
    for (block, scope), zsl in cs.z_layout.items():
        i0 = int(members_of[(block, scope)][0])
        z_hat[zsl] = thetas[i0].to_vector()[bsl[block]]

    N = int(sum(p.K for p in preps))
    result = FitResult(
        theta_hat=thetas,
        z_hat=z_hat,
        neg_loglik=f_final,
        n_iterations=state.iteration,
        residual_history=history,
        converged=converged,
        bic=0.0,
        kkt_residual=kkt,
        xi_hat=state.xi,
        spec=cs.spec,
        n_obs_total=N,
    )
    p_eff = cs.spec.effective_n_params(cs.n)
    result.bic = float(2.0 * f_final + p_eff * np.log(N))
    return result


def _validate_fit_inputs(data, spec):
    if len(data) < 1:
        raise ValueError("need at least one subject")
    ids = [s.subject_id for s in data]
    if list(spec.group_map.keys()) != ids:
        raise GroupAssignmentError("spec group map does not match data subject order")
    for s in data:
        if spec.group_map[s.subject_id] != s.group_id:
            raise GroupAssignmentError(
                f"subject {s.subject_id!r}: series group {s.group_id} differs "
                f"from spec group {spec.group_map[s.subject_id]}"
            )
    qs = {s.q for s in data}
    if qs != {spec.q}:
        raise ValueError(f"covariate dimensions {qs} do not match spec q={spec.q}")


def fit(data: Sequence[SubjectSeries], spec: HierarchySpec, config: FitConfig) -> FitResult:
    """Constrained maximum-likelihood fit of the hierarchy.

    Runs consensus ADMM from ``config.n_starts`` starting points (the
    moment-based initializer plus Gaussian jitters of it) and keeps the run
    with the lowest final joint negative log-likelihood, ties broken by the
    lowest start index.  Reported states are sorted by ascending fitted
    Poisson-mean intercept.
    """
    _validate_fit_inputs(data, spec)
    M, q = spec.M, spec.q
    cs = build_constraints(spec, len(data))
    preps = [prepare(s) for s in data]
    rng = np.random.default_rng(config.seed)
    base = initialize(data, spec, config, rng)
    starts = [base]
    for _ in range(max(config.n_starts, 1) - 1):
        starts.append(_jitter(base, config.init_jitter_sd, rng, M, q))

    best = None
    for s_idx, theta0 in enumerate(starts):
        state, history, converged = _run_admm(preps, cs, theta0, config)
        result = _finalize_run(preps, cs, state, history, converged)
        result.best_start = s_idx
        if best is None or result.neg_loglik < best.neg_loglik:
            best = result
    return best


def warm_fit(
    data: Sequence[SubjectSeries],
    spec: HierarchySpec,
    config: FitConfig,
    warm_thetas: Sequence[ThetaSubject],
) -> FitResult:
    """Single ADMM run started from supplied per-subject estimates.

    Used by the bootstrap, where replicate fits start at the base estimate;
    skips the KKT evaluation for speed.
    """
    _validate_fit_inputs(data, spec)
    cs = build_constraints(spec, len(data))
    preps = [prepare(s) for s in data]
    state, history, converged = _run_admm(preps, cs, list(warm_thetas), config)
    return _finalize_run(preps, cs, state, history, converged, compute_kkt=False)


def bic(fit_result: FitResult, data: Sequence[SubjectSeries], spec: HierarchySpec) -> float:
    """2 f(theta_hat) + p_eff log N with N the total observation count and
    p_eff the free-parameter count after sharing."""
    N = sum(s.n_obs for s in data)
    p_eff = spec.effective_n_params(len(data))
    return float(2.0 * fit_result.neg_loglik + p_eff * np.log(N))
