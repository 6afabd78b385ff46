"""Stratified nonparametric bootstrap for time-in-state and shared parameters.

Each replicate resamples subjects with replacement within their subgroup
(so every replicate keeps exactly n_j subjects from group j), refits the
model warm-started from the base estimate, relabels states canonically, and
records the group time-in-state matrix phi and the consensus parameters.
Confidence intervals are percentile intervals over replicates.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .admm import FitConfig, FitResult, fit, warm_fit
from .errors import HcthmmError
from .hierarchy import HierarchySpec
from .inference import forward_backward, time_in_state
from .params import SubjectSeries

#: outer-iteration cap for warm-started replicate refits
REPLICATE_MAX_ITER = 100


@dataclass(frozen=True)
class BootstrapResult:
    n_replicates: int  # requested B
    n_failed: int
    levels: Tuple[float, ...]
    phi_hat: np.ndarray  # (J, M) point estimate from the base fit
    phi_reps: np.ndarray  # (B_ok, J, M)
    z_reps: np.ndarray  # (B_ok, z_dim)
    phi_se: np.ndarray  # (J, M)
    z_se: np.ndarray  # (z_dim,)
    phi_ci: Dict[float, np.ndarray]  # level -> (J, M, 2)
    z_ci: Dict[float, np.ndarray]  # level -> (z_dim, 2)

    def tidy_rows(self) -> List[dict]:
        """Long-format rows (group, state, level, lower, upper, se) for plotting."""
        rows = []
        J, M = self.phi_hat.shape
        for level, ci in sorted(self.phi_ci.items()):
            for j in range(J):
                for m in range(M):
                    rows.append(
                        {
                            "group": j + 1,
                            "state": m + 1,
                            "estimate": float(self.phi_hat[j, m]),
                            "level": level,
                            "lower": float(ci[j, m, 0]),
                            "upper": float(ci[j, m, 1]),
                            "se": float(self.phi_se[j, m]),
                        }
                    )
        return rows

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "levels": list(self.levels),
            "phi_hat": self.phi_hat.tolist(),
            "phi_se": self.phi_se.tolist(),
            "z_se": self.z_se.tolist(),
            "phi_ci": {str(l): ci.tolist() for l, ci in self.phi_ci.items()},
            "z_ci": {str(l): ci.tolist() for l, ci in self.z_ci.items()},
        }


def _phi_of(data: Sequence[SubjectSeries], result: FitResult, J: int) -> np.ndarray:
    fbs = [forward_backward(s, t) for s, t in zip(data, result.theta_hat)]
    groups = [s.group_id for s in data]
    return time_in_state(fbs, groups, J=J).phi


def _resample_indices(groups: np.ndarray, J: int, rng: np.random.Generator) -> np.ndarray:
    picks = []
    for j in range(1, J + 1):
        members = np.flatnonzero(groups == j)
        picks.append(rng.choice(members, size=len(members), replace=True))
    return np.concatenate(picks)


_BOOT_CTX: dict = {}


def _boot_init(ctx):
    _BOOT_CTX.clear()
    _BOOT_CTX.update(ctx)


def _one_replicate(args):
    b, seed = args
    ctx = _BOOT_CTX
    data = ctx["data"]
    spec: HierarchySpec = ctx["spec"]
    base: FitResult = ctx["base"]
    retry_budget = ctx["retry_budget"]
    groups = np.array([s.group_id for s in data])
    rng = np.random.default_rng(seed)
    for _ in range(retry_budget + 1):
        idx = _resample_indices(groups, spec.J, rng)
        rep_data, rep_thetas, rep_gm = [], [], {}
        for pos, i in enumerate(idx):
            s = data[int(i)]
            sid = f"{s.subject_id}#r{pos}"
            rep_data.append(replace(s, subject_id=sid))
            rep_thetas.append(base.theta_hat[int(i)])
            rep_gm[sid] = s.group_id
        rep_spec = HierarchySpec(
            levels=spec.levels, group_map=rep_gm, M=spec.M, J=spec.J, q=spec.q
        )
        try:
            res = warm_fit(rep_data, rep_spec, ctx["config"], rep_thetas)
            phi = _phi_of(rep_data, res, spec.J)
            return b, phi, res.z_hat, None
        except HcthmmError as exc:
            last = str(exc)
            continue
    return b, None, None, last


def bootstrap(
    data: Sequence[SubjectSeries],
    spec: HierarchySpec,
    config: FitConfig,
    B: int,
    levels: Sequence[float] = (0.95, 0.99),
    rng: Optional[np.random.Generator] = None,
    base_fit: Optional[FitResult] = None,
    retry_budget: int = 2,
    workers: int = 1,
) -> BootstrapResult:
    """Stratified bootstrap with B replicates and percentile intervals."""
    if B < 2:
        raise ValueError("need at least B=2 replicates")
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"confidence level {level} outside (0, 1)")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if base_fit is None:
        base_fit = fit(data, spec, config)

    rep_config = FitConfig(
        rho=config.rho,
        adapt_rho=config.adapt_rho,
        tol_primal=config.tol_primal,
        tol_dual=config.tol_dual,
        max_iter=min(config.max_iter, REPLICATE_MAX_ITER),
        n_starts=1,
        seed=config.seed,
        workers=1,
        inner_gtol=config.inner_gtol,
        inner_maxiter=config.inner_maxiter,
        inner_maxiter_first=config.inner_maxiter,
    )
    ctx = {
        "data": list(data),
        "spec": spec,
        "base": base_fit,
        "config": rep_config,
        "retry_budget": retry_budget,
    }
    seeds = rng.bit_generator.seed_seq.spawn(B)
    tasks = [(b, seeds[b]) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_boot_init, initargs=(ctx,)
        ) as pool:
            raw = list(pool.map(_one_replicate, tasks, chunksize=1))
    else:
        _boot_init(ctx)
        raw = [_one_replicate(t) for t in tasks]
    raw.sort(key=lambda r: r[0])

    phis, zs, n_failed = [], [], 0
    for _, phi, z, err in raw:
        if phi is None:
            n_failed += 1
        else:
            phis.append(phi)
            zs.append(z)
    if not phis:
        raise HcthmmError("all bootstrap replicates failed")
    phi_reps = np.stack(phis)
    z_reps = np.stack(zs)

    phi_hat = _phi_of(data, base_fit, spec.J)
    phi_se = phi_reps.std(axis=0, ddof=1)
    z_se = z_reps.std(axis=0, ddof=1) if z_reps.shape[1] else np.zeros(0)
    phi_ci, z_ci = {}, {}
    for level in levels:
        lo, hi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
        phi_ci[level] = np.stack(
            [np.quantile(phi_reps, lo, axis=0), np.quantile(phi_reps, hi, axis=0)], axis=-1
        )
        if z_reps.shape[1]:
            z_ci[level] = np.stack(
                [np.quantile(z_reps, lo, axis=0), np.quantile(z_reps, hi, axis=0)], axis=-1
            )
        else:
            z_ci[level] = np.zeros((0, 2))
    return BootstrapResult(
        n_replicates=B,
        n_failed=n_failed,
        levels=tuple(levels),
        phi_hat=phi_hat,
        phi_reps=phi_reps,
        z_reps=z_reps,
        phi_se=phi_se,
        z_se=z_se,
        phi_ci=phi_ci,
        z_ci=z_ci,
    )
