"""Mixture of regressions with hidden logistic processes (MixRHLP).

One class of curves is modeled as a ``K``-component mixture; component ``k``
is an RHLP: at each instant ``t_j`` one of ``R_k`` regression regimes is
active, with regime probabilities given by a softmax that is linear in time.
``K = 1`` gives a single RHLP, ``R_k = 1`` a plain regression mixture and
``K = R = 1`` an ordinary Gaussian regression, so every class density used
by the discriminant layer is an instance of this model.

All densities are handled in log space: the product over ``m`` instants of
the per-point mixture underflows long before ``m = 200``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from fmda.basis import BasisSpec, build_design, logistic_covariates
from fmda.errors import ShapeMismatchError, ValidationError
from fmda.kernels import (
    LOG_2PI,
    irls_fit,
    log_logistic_proportions,
    log_sum_exp,
    logistic_proportions,
    solve_normal_equations,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = "mixrhlp-v1"
DEAD_MASS = 1e-12


@dataclass(frozen=True)
class ModelShape:
    K: int
    R: tuple
    basis: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        R = (int(self.R),) * int(self.K) if np.isscalar(self.R) else tuple(int(r) for r in self.R)
        object.__setattr__(self, "R", R)
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if len(R) != self.K or any(r < 1 for r in R):
            raise ValidationError(f"R must list K={self.K} regime counts, each >= 1")

    @property
    def has_latent(self) -> bool:
        return self.K > 1 or any(r > 1 for r in self.R)

    def to_dict(self) -> dict:
        return {"K": self.K, "R": list(self.R), "basis": self.basis.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelShape":
        return cls(int(d["K"]), tuple(d["R"]), BasisSpec.from_dict(d["basis"]))


@dataclass
class MixRhlpParams:
    """Parameters of one class density.

    Attributes
    ----------
    alpha : (K,) mixing proportions.
    weights : per sub-class, free logistic weights ``(R_k - 1, 2)``.
    beta : per sub-class, regression coefficients ``(R_k, d)``.
    sigma2 : per sub-class, regime noise variances ``(R_k,)``.
    """

    alpha: np.ndarray
    weights: list
    beta: list
    sigma2: list

    @property
    def K(self) -> int:
        return len(self.alpha)

    @property
    def R(self) -> tuple:
        return tuple(b.shape[0] for b in self.beta)

    def permuted(self, order: Sequence[int]) -> "MixRhlpParams":
        order = list(order)
        return MixRhlpParams(
            self.alpha[order].copy(),
            [self.weights[k].copy() for k in order],
            [self.beta[k].copy() for k in order],
            [self.sigma2[k].copy() for k in order],
        )

    def copy(self) -> "MixRhlpParams":
        return self.permuted(range(self.K))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "subclasses": [
                {"w": w.tolist(), "beta": b.tolist(), "sigma2": s.tolist()}
                for w, b, s in zip(self.weights, self.beta, self.sigma2)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixRhlpParams":
        subs = d["subclasses"]
        return cls(
            np.array(d["alpha"], dtype=float),
            [np.array(s["w"], dtype=float).reshape(-1, 2) for s in subs],
            [np.array(s["beta"], dtype=float).reshape(len(s["sigma2"]), -1) for s in subs],
            [np.array(s["sigma2"], dtype=float) for s in subs],
        )


@dataclass
class Posteriors:
    gamma: np.ndarray  # n x K
    tau: list  # per sub-class, n x m x R_k
    log_density: np.ndarray  # n, log p(x_i)

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(self.log_density))


@dataclass
class FitConfig:
    max_iters: int = 300
    rel_tol: float = 1e-8
    restarts: int = 10
    init: str = "kmeans"  # or "random"
    seed: int = 0
    variance_floor: float = 1e-8  # relative to the data variance
    irls_max_iter: int = 50

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1 or not self.rel_tol > 0:
            raise ValidationError("need max_iters >= 1, restarts >= 1 and rel_tol > 0")
        if self.init not in ("kmeans", "random"):
            raise ValidationError(f"unknown init strategy {self.init!r}")

    def to_dict(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "rel_tol": self.rel_tol,
            "restarts": self.restarts,
            "init": self.init,
            "seed": self.seed,
            "variance_floor": self.variance_floor,
            "irls_max_iter": self.irls_max_iter,
        }


@dataclass
class RunTrace:
    log_likelihood: float
    iterations: int
    converged: bool
    trace: list
    reseeds: list = field(default_factory=list)  # (iteration, sub-class) pairs


@dataclass
class FitDiagnostics:
    log_likelihood: float
    iterations: int
    converged: bool
    trace: list
    best_restart: int
    restart_log_likelihoods: list
    variance_floor: float
    reseeds: list = field(default_factory=list)
    runs: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "best_restart": self.best_restart,
            "restart_log_likelihoods": list(self.restart_log_likelihoods),
            "variance_floor": self.variance_floor,
            "reseeds": [list(e) for e in self.reseeds],
            "trace": list(self.trace),
        }


@dataclass
class FitResult:
    params: MixRhlpParams
    posteriors: Posteriors
    diagnostics: FitDiagnostics
    shape: ModelShape


# ------------------------------------------------------------------ densities


def _check_shapes(params: MixRhlpParams, X: np.ndarray, design: np.ndarray, cov: np.ndarray):
    m, d = design.shape
    if X.shape[-1] != m or cov.shape != (m, 2):
        raise ShapeMismatchError(
            f"curve length {X.shape[-1]}, design {design.shape}, covariates {cov.shape} disagree"
        )
    for k in range(params.K):
        R = params.beta[k].shape[0]
        if params.beta[k].shape[1] != d:
            raise ShapeMismatchError(f"sub-class {k + 1}: beta has {params.beta[k].shape[1]} columns, design has {d}")
        if params.sigma2[k].shape != (R,) or params.weights[k].shape != (R - 1, 2):
            raise ShapeMismatchError(f"sub-class {k + 1}: inconsistent regime parameter shapes")


def _log_joint(params: MixRhlpParams, k: int, X, design, cov) -> np.ndarray:
    """``R_k x n x m`` array of ``log pi_kr(t_j) + log N(x_ij; beta_kr' t_j, sigma2_kr)``."""
    mu = params.beta[k] @ design.T  # R x m
    s2 = params.sigma2[k]
    const = log_logistic_proportions(params.weights[k], cov).T - 0.5 * (LOG_2PI + np.log(s2))[:, None]
    out = X[None, :, :] - mu[:, None, :]
    np.square(out, out=out)
    out *= (-0.5 / s2)[:, None, None]
    out += const[:, None, :]
    return out


def _regime_posteriors(params, k, X, design, cov):
    """Per-point log mixture density (n x m) and regime posteriors (n x m x R_k)."""
    joint = _log_joint(params, k, X, design, cov)
    if joint.shape[0] == 1:
        return joint[0], np.ones(X.shape + (1,))
    # regime-major layout keeps the reductions elementwise across R slices
    peak = np.maximum.reduce(joint, axis=0)
    joint -= peak
    np.exp(joint, out=joint)
    total = np.add.reduce(joint, axis=0)
    joint /= total
    return peak + np.log(total), np.moveaxis(joint, 0, 2)


def _component_log_densities(params, X, design, cov):
    per_point, taus = zip(*(_regime_posteriors(params, k, X, design, cov) for k in range(params.K)))
    log_fk = np.column_stack([pp.sum(axis=1) for pp in per_point])  # n x K
    return list(taus), log_fk


def _as_curves(curves) -> np.ndarray:
    X = np.asarray(getattr(curves, "values", curves), dtype=float)
    return X[None, :] if X.ndim == 1 else X


def component_log_densities(params: MixRhlpParams, curves, design, cov) -> np.ndarray:
    """``n x K`` matrix of ``log alpha_k + log f_k(x_i)``."""
    X = _as_curves(curves)
    _check_shapes(params, X, design, cov)
    with np.errstate(divide="ignore"):
        log_alpha = np.log(params.alpha)
    return _component_log_densities(params, X, design, cov)[1] + log_alpha[None, :]


def curve_log_density(params: MixRhlpParams, curve, design, cov) -> float:
    """``log p(x | Psi)`` for a single curve."""
    X = _as_curves(curve)
    if X.shape[0] != 1:
        raise ShapeMismatchError("curve_log_density takes a single curve")
    return float(log_sum_exp(component_log_densities(params, X, design, cov), axis=1)[0])


def curve_log_densities(params: MixRhlpParams, curves, design, cov) -> np.ndarray:
    return log_sum_exp(component_log_densities(params, curves, design, cov), axis=1)


def log_likelihood(params: MixRhlpParams, curves, design, cov) -> float:
    """Observed-data log-likelihood: sum of per-curve log densities."""
    X = _as_curves(curves)
    if X.shape[0] == 0:
        raise ValidationError("log-likelihood of an empty set")
    return float(np.sum(curve_log_densities(params, X, design, cov)))


def e_step(params: MixRhlpParams, curves, design, cov) -> Posteriors:
    """Sub-class posteriors ``gamma`` and per-point regime posteriors ``tau``."""
    X = _as_curves(curves)
    _check_shapes(params, X, design, cov)
    tau, log_fk = _component_log_densities(params, X, design, cov)
    with np.errstate(divide="ignore"):
        logc = log_fk + np.log(params.alpha)[None, :]
    log_dens = log_sum_exp(logc, axis=1)
    gamma = np.exp(logc - log_dens[:, None])
    return Posteriors(gamma, tau, log_dens)


# --------------------------------------------------------------------- M-step


def _weighted_sse(W, X, mu_r):
    resid = X - mu_r[None, :]
    return float(np.sum(W * resid * resid))


def m_step(
    post: Posteriors,
    curves,
    design,
    cov,
    prev: MixRhlpParams,
    cfg: Optional[FitConfig] = None,
    variance_floor: Optional[float] = None,
):
    """Update all parameters from posteriors.

    Returns ``(params, dead)`` where ``dead`` lists sub-classes whose
    posterior mass fell below ``1e-12 * n``; their ``alpha`` entries are kept
    at the previous value and must be re-seeded by the caller.

    The regression update solves the weighted normal equations with weights
    ``gamma_ik * tau_ijkr``; since every curve shares the design, the sum over
    curves is folded into per-instant weights before solving.
    """
    cfg = cfg or FitConfig()
    X = _as_curves(curves)
    n = X.shape[0]
    floor = _variance_floor(X, cfg) if variance_floor is None else variance_floor
    mass = post.gamma.sum(axis=0)
    dead = [k for k in range(prev.K) if mass[k] < DEAD_MASS * n]
    alpha = mass / n
    weights, betas, sigma2s = [], [], []
    for k in range(prev.K):
        tau = post.tau[k]
        R = tau.shape[2]
        beta_k = prev.beta[k].copy()
        s2_k = prev.sigma2[k].copy()
        if k in dead:
            alpha[k] = prev.alpha[k]
            weights.append(prev.weights[k].copy())
            betas.append(beta_k)
            sigma2s.append(s2_k)
            continue
        agg_targets = np.empty((X.shape[1], R))
        for r in range(R):
            W = post.gamma[:, k, None] * tau[:, :, r]  # n x m
            s = W.sum(axis=0)
            agg_targets[:, r] = s
            total = s.sum()
            if total < DEAD_MASS * n:
                continue  # regime carries no mass: any value maximizes its term
            gram = design.T @ (design * s[:, None])
            rhs = design.T @ (W * X).sum(axis=0)
            cand, damped = solve_normal_equations(gram, rhs, return_damped=True)
            sse = _weighted_sse(W, X, design @ cand)
            if damped:
                # the ridge solution is not the exact maximizer; never accept a worse fit
                prev_sse = _weighted_sse(W, X, design @ beta_k[r])
                if prev_sse < sse:
                    cand, sse = beta_k[r], prev_sse
            beta_k[r] = cand
            s2_k[r] = max(sse / total, floor)
        if R > 1:
            res = irls_fit(cov, agg_targets, prev.weights[k], max_iter=cfg.irls_max_iter)
            w_k = res.weights
        else:
            w_k = prev.weights[k].copy()
        weights.append(w_k)
        betas.append(beta_k)
        sigma2s.append(s2_k)
    alpha = alpha / alpha.sum()
    return MixRhlpParams(alpha, weights, betas, sigma2s), dead


def _variance_floor(X: np.ndarray, cfg: FitConfig) -> float:
    var = float(np.var(X)) if X.size > 1 else 0.0
    return cfg.variance_floor * var if var > 0 else cfg.variance_floor


# ------------------------------------------------------------- initialization


def segmentation_weights(boundaries: Sequence[float], t_start: float, t_end: float) -> np.ndarray:
    """Free logistic weights whose argmax regime follows the given cut times."""
    R = len(boundaries) + 1
    if R == 1:
        return np.zeros((0, 2))
    scale = 10.0 * R / (t_end - t_start)
    c = np.concatenate([[0.0], np.cumsum(boundaries)])  # c_r, r = 1..R
    r_idx = np.arange(1, R + 1)
    full = np.column_stack([-scale * c, scale * r_idx])
    full -= full[-1]
    return full[:-1].copy()


def _fit_segments(Xk: np.ndarray, design, cuts, floor):
    m = design.shape[0]
    edges = np.concatenate([[0], cuts, [m]]).astype(int)
    R = len(edges) - 1
    beta = np.zeros((R, design.shape[1]))
    s2 = np.empty(R)
    for r in range(R):
        sl = slice(edges[r], edges[r + 1])
        T = design[sl]
        y = Xk[:, sl]
        n_k = Xk.shape[0]
        gram = n_k * (T.T @ T)
        rhs = T.T @ y.sum(axis=0)
        if np.trace(gram) <= 0:
            gram = n_k * (design.T @ design)
            rhs = design.T @ Xk.sum(axis=0)
        beta[r] = solve_normal_equations(gram, rhs)
        resid = y - T @ beta[r]
        s2[r] = max(float(np.mean(resid * resid)), floor)
    return beta, s2


def _cut_positions(m: int, R: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Uniform cut points, jittered by up to a quarter segment when ``rng`` is given."""
    if R == 1:
        return np.zeros(0, dtype=int)
    cuts = np.arange(1, R) * m / R
    if rng is not None:
        cuts = cuts + rng.uniform(-0.25, 0.25, size=R - 1) * m / R
    cuts = np.clip(np.round(cuts).astype(int), 1, m - 1)
    return np.maximum.accumulate(cuts)


def initialize(
    curves,
    shape: ModelShape,
    design,
    grid_times,
    rng: np.random.Generator,
    strategy: str = "kmeans",
    uniform_segments: bool = True,
    variance_floor: float = 1e-12,
) -> MixRhlpParams:
    """Initial parameters: curve partition, then per-segment OLS per sub-class.

    Curves are partitioned by k-means on the raw curve vectors (best of five
    seedings) or uniformly at random; each sub-class's regimes start from a
    contiguous segmentation of the time axis, uniform or jittered.
    """
    X = _as_curves(curves)
    n, m = X.shape
    t = np.asarray(grid_times, dtype=float)
    K = shape.K
    if K == 1:
        assign = np.zeros(n, dtype=int)
    elif strategy == "kmeans":
        assign = _kmeans(X, K, rng)
    else:
        assign = rng.integers(K, size=n)
    # every sub-class needs at least one curve
    for k in range(K):
        if not np.any(assign == k):
            counts = np.bincount(assign, minlength=K)
            donors = np.flatnonzero(counts[assign] > 1)
            assign[rng.choice(donors)] = k
    alpha = np.bincount(assign, minlength=K) / n
    weights, betas, sigma2s = [], [], []
    for k in range(K):
        R = shape.R[k]
        cuts = _cut_positions(m, R, None if uniform_segments else rng)
        beta, s2 = _fit_segments(X[assign == k], design, cuts, variance_floor)
        bounds = [0.5 * (t[c - 1] + t[c]) for c in cuts]
        weights.append(segmentation_weights(bounds, t[0], t[-1]))
        betas.append(beta)
        sigma2s.append(s2)
    return MixRhlpParams(alpha, weights, betas, sigma2s)


def _kmeans(X: np.ndarray, K: int, rng: np.random.Generator, tries: int = 5) -> np.ndarray:
    best, best_inertia = None, np.inf
    for _ in range(tries):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centers, assign = kmeans2(X, K, minit="++", seed=rng)
        inertia = float(np.sum((X - centers[assign]) ** 2))
        if inertia < best_inertia:
            best, best_inertia = assign, inertia
    return best


def _reseed(params: MixRhlpParams, k: int, X, design, cov, post: Posteriors, floor) -> MixRhlpParams:
    """Restart sub-class ``k`` from the worst-explained curve."""
    worst = int(np.argmin(post.log_density))
    params = params.copy()
    cuts = _cut_positions(X.shape[1], params.R[k], None)
    beta, s2 = _fit_segments(X[worst : worst + 1], design, cuts, floor)
    t = cov[:, 1]
    params.beta[k] = beta
    params.sigma2[k] = s2
    params.weights[k] = segmentation_weights([0.5 * (t[c - 1] + t[c]) for c in cuts], t[0], t[-1])
    params.alpha[k] = 1.0 / X.shape[0]
    params.alpha /= params.alpha.sum()
    return params


# ------------------------------------------------------------------------- EM


def run_em(curves, init: MixRhlpParams, design, cov, cfg: FitConfig, variance_floor=None, callback=None):
    """Iterate E- and M-steps from ``init`` until the relative log-likelihood
    change drops below ``cfg.rel_tol`` or ``cfg.max_iters`` is reached.

    ``callback(iteration, params, posteriors)`` is invoked after every E-step
    (iteration 0 being the initial one).

    Returns
    -------
    params, posteriors, RunTrace
    """
    X = _as_curves(curves)
    floor = _variance_floor(X, cfg) if variance_floor is None else variance_floor
    params = init
    post = e_step(params, X, design, cov)
    L = post.log_likelihood
    trace = [L]
    if callback:
        callback(0, params, post)
    has_latent = params.K > 1 or any(r > 1 for r in params.R)
    converged = False
    reseeds = []
    it = 0
    while it < cfg.max_iters:
        it += 1
        params, dead = m_step(post, X, design, cov, params, cfg, floor)
        for k in dead:
            reseeds.append((it, k + 1))
            params = _reseed(params, k, X, design, cov, post, floor)
        post = e_step(params, X, design, cov)
        L_new = post.log_likelihood
        trace.append(L_new)
        if callback:
            callback(it, params, post)
        if not np.isfinite(L_new):
            raise FloatingPointError(f"log-likelihood became non-finite at iteration {it}")
        if not has_latent:
            converged = True
            break
        if not dead and abs(L_new - L) <= cfg.rel_tol * abs(L):
            converged = True
            break
        L = L_new
    return params, post, RunTrace(trace[-1], it, converged, trace, reseeds)


def check_feasible(n: int, m: int, shape: ModelShape):
    if n < 1:
        raise ValidationError("cannot fit a model to zero curves")
    if shape.basis.dim > m:
        raise ValidationError(f"basis dimension {shape.basis.dim} exceeds curve length {m}")
    if shape.K > n:
        raise ValidationError(f"K={shape.K} sub-classes for only {n} curves")
    if max(shape.R) > m:
        raise ValidationError(f"{max(shape.R)} regimes for only {m} points")


def em_fit(curves, shape: ModelShape, grid, cfg: Optional[FitConfig] = None, callback=None) -> FitResult:
    """Fit a MixRHLP density to the curves of one class by EM with restarts.

    Restart 0 uses a uniform time segmentation; later restarts jitter the
    cut points and re-draw the k-means seeding.  The run with the highest final log-likelihood is returned.
    Models without latent variables (``K = R = 1``) are fitted once, in a
    single closed-form iteration.  ``callback(restart, iteration, params,
    posteriors)`` observes every E-step.
    """
    cfg = cfg or FitConfig()
    X = _as_curves(curves)
    times = np.asarray(getattr(grid, "times", grid), dtype=float)
    check_feasible(X.shape[0], times.size, shape)
    if X.shape[1] != times.size:
        raise ShapeMismatchError(f"curves have {X.shape[1]} points, grid has {times.size}")
    design = build_design(shape.basis, times)
    cov = logistic_covariates(times)
    floor = _variance_floor(X, cfg)
    restarts = cfg.restarts if shape.has_latent else 1
    seeds = np.random.SeedSequence([cfg.seed, 0x5EED]).spawn(restarts)
    best = None
    runs = []
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        init = initialize(X, shape, design, times, rng, cfg.init, uniform_segments=(r == 0), variance_floor=floor)
        hook = None if callback is None else (lambda it, p, q, r=r: callback(r, it, p, q))
        params, post, run = run_em(X, init, design, cov, cfg, floor, hook)
        runs.append(run)
        logger.debug("restart %d: loglik %.6f after %d iterations", r, run.log_likelihood, run.iterations)
        if best is None or run.log_likelihood > best[2].log_likelihood:
            best = (params, post, run, r)
    params, post, run, r_best = best
    diag = FitDiagnostics(
        log_likelihood=run.log_likelihood,
        iterations=run.iterations,
        converged=run.converged,
        trace=run.trace,
        best_restart=r_best,
        restart_log_likelihoods=[x.log_likelihood for x in runs],
        variance_floor=floor,
        reseeds=[(i, it, k) for i, x in enumerate(runs) for it, k in x.reseeds],
        runs=runs,
    )
    return FitResult(params, post, diag, shape)


def regime_mean_curve(params: MixRhlpParams, k: int, design, cov) -> np.ndarray:
    """Pointwise mean ``sum_r pi_kr(t_j) beta_kr' t_j`` of sub-class ``k`` (0-based)."""
    if not 0 <= k < params.K:
        raise ValidationError(f"sub-class index {k} out of range 0..{params.K - 1}")
    pi = logistic_proportions(params.weights[k], cov)
    return np.sum(pi * (design @ params.beta[k].T), axis=1)


def model_to_dict(result_or_params, shape: ModelShape, grid, diagnostics: Optional[FitDiagnostics] = None) -> dict:
    params = getattr(result_or_params, "params", result_or_params)
    if diagnostics is None:
        diagnostics = getattr(result_or_params, "diagnostics", None)
    from fmda.curves import TimeGrid

    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(grid)
    out = {
        "version": FORMAT_VERSION,
        "shape": shape.to_dict(),
        "grid_sha256": grid.digest(),
        "m": grid.m,
    }
    out.update(params.to_dict())
    out["diagnostics"] = diagnostics.to_dict() if diagnostics is not None else None
    return out


def model_from_dict(d: dict):
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"expected {FORMAT_VERSION} block, got {d.get('version')!r}")
    return MixRhlpParams.from_dict(d), ModelShape.from_dict(d["shape"])
