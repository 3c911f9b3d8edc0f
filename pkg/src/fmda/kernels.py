"""Numerical kernels shared by the EM machinery.

Weighted least squares, log-space Gaussian and softmax evaluation, and the
weighted multinomial logistic IRLS solver used for the hidden logistic
process.  Logistic weights are passed around as the *free* part only: an
``(R - 1, 2)`` array, regime ``R`` being pinned to ``(0, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from fmda.errors import SingularSystemError, ValidationError

LOG_2PI = float(np.log(2.0 * np.pi))

RIDGE_CONDITION = 1e12
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class WlsProblem:
    design: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        targets = np.asarray(self.targets, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if design.shape[0] != targets.size or targets.size != weights.size:
            raise ValidationError(
                f"WLS shapes disagree: design {design.shape}, targets {targets.size}, weights {weights.size}"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("WLS weights must be finite and non-negative")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)


def solve_normal_equations(gram: np.ndarray, rhs: np.ndarray, return_damped: bool = False):
    """Solve ``gram @ beta = rhs`` for a symmetric PSD ``gram``.

    A ridge of ``1e-8 * trace / d`` is added when the condition number exceeds
    ``1e12`` (or the Cholesky factorization fails).  With ``return_damped``
    the result is ``(beta, damped)``.
    """
    gram = np.asarray(gram, dtype=float)
    d = gram.shape[0]
    cond = np.linalg.cond(gram) if d > 1 else (np.inf if gram[0, 0] <= 0 else 1.0)
    if np.isfinite(cond) and cond <= RIDGE_CONDITION:
        try:
            beta = linalg.cho_solve(linalg.cho_factor(gram), rhs)
            return (beta, False) if return_damped else beta
        except linalg.LinAlgError:
            pass
    trace = float(np.trace(gram))
    lam = RIDGE_SCALE * trace / d
    if not lam > 0 or not np.isfinite(lam):
        raise SingularSystemError(
            f"normal matrix is singular (trace={trace!r}, condition={cond!r})", condition=cond
        )
    damped = gram + lam * np.eye(d)
    try:
        beta = linalg.cho_solve(linalg.cho_factor(damped), rhs)
        return (beta, True) if return_damped else beta
    except linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"normal matrix singular after ridge {lam:.3g} (condition={cond!r})", condition=cond
        ) from exc


def solve_wls(problem: WlsProblem) -> np.ndarray:
    """Weighted least-squares coefficients ``argmin sum w (y - X b)^2``."""
    X, y, w = problem.design, problem.targets, problem.weights
    Xw = X * w[:, None]
    return solve_normal_equations(X.T @ Xw, Xw.T @ y)


def log_gaussian(x, mean, var):
    """Elementwise log N(x; mean, var); broadcasts like numpy."""
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValidationError("variance must be strictly positive")
    diff = np.asarray(x, dtype=float) - mean
    out = -0.5 * (LOG_2PI + np.log(var)) - diff * diff / (2.0 * var)
    return out if np.ndim(out) else float(out)


def log_sum_exp(v, axis=None):
    """``log(sum(exp(v)))`` via the max-shift trick; ``-inf`` entries allowed."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValidationError("log_sum_exp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def _full_weights(free: np.ndarray) -> np.ndarray:
    free = np.asarray(free, dtype=float).reshape(-1, 2)
    return np.vstack([free, np.zeros((1, 2))])


def log_logistic_proportions(free_weights, covariates) -> np.ndarray:
    """Log of the ``m x R`` regime-proportion matrix."""
    scores = np.asarray(covariates, dtype=float) @ _full_weights(free_weights).T
    return scores - log_sum_exp(scores, axis=1)[:, None]


def logistic_proportions(free_weights, covariates) -> np.ndarray:
    """``m x R`` matrix of softmax regime probabilities, rows summing to one."""
    return np.exp(log_logistic_proportions(free_weights, covariates))


def multinomial_objective(free_weights, covariates, targets) -> float:
    """Weighted multinomial log-likelihood ``sum_jr targets_jr log pi_jr``.

    ``targets`` is either ``m x R`` or ``N x m x R`` (summed over the first axis).
    """
    targets = _aggregate_targets(targets)
    logp = log_logistic_proportions(free_weights, covariates)
    mask = targets > 0
    return float(np.sum(targets[mask] * logp[mask]))


def multinomial_gradient(free_weights, covariates, targets) -> np.ndarray:
    """Analytic gradient of :func:`multinomial_objective`, shaped ``(R - 1, 2)``."""
    targets = _aggregate_targets(targets)
    cov = np.asarray(covariates, dtype=float)
    pi = logistic_proportions(free_weights, cov)
    totals = targets.sum(axis=1, keepdims=True)
    resid = targets - totals * pi
    return (resid[:, :-1].T @ cov).reshape(-1, 2)


def _hessian(pi, totals, cov):
    # Negative Hessian (PSD) over the flattened free weights, row-major (r, c).
    R1 = pi.shape[1] - 1
    p = pi[:, :R1]
    n_par = 2 * R1
    H = np.zeros((n_par, n_par))
    outer = cov[:, :, None] * cov[:, None, :]  # m x 2 x 2
    for r in range(R1):
        for s in range(R1):
            coef = totals * p[:, r] * ((1.0 if r == s else 0.0) - p[:, s])
            H[2 * r : 2 * r + 2, 2 * s : 2 * s + 2] = np.einsum("j,jab->ab", coef, outer)
    return H


def _aggregate_targets(targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 3:
        targets = targets.sum(axis=0)
    if targets.ndim != 2:
        raise ValidationError("soft targets must be m x R or N x m x R")
    if np.any(targets < 0):
        raise ValidationError("soft targets must be non-negative")
    return targets


@dataclass
class IrlsResult:
    weights: np.ndarray
    objective: float
    iterations: int
    gradient_norm: float
    trace: list = field(default_factory=list)


def irls_fit(covariates, soft_targets, init, max_iter: int = 50, tol: float = 1e-6) -> IrlsResult:
    """Maximize the weighted multinomial log-likelihood by damped Newton steps.

    Each Newton direction is accepted only if it does not decrease the
    objective; otherwise the step is halved (up to 30 times).  Stops when the
    gradient max-norm falls below ``tol`` or after ``max_iter`` iterations.

    Returns
    -------
    IrlsResult
        ``weights`` are the free ``(R - 1, 2)`` weights; ``trace`` holds the
        objective after every accepted step, starting from ``init``.
    """
    cov = np.asarray(covariates, dtype=float)
    targets = _aggregate_targets(soft_targets)
    R = targets.shape[1]
    w = np.asarray(init, dtype=float).reshape(R - 1, 2).copy()
    if R == 1:
        return IrlsResult(w, 0.0, 0, 0.0, [0.0])
    totals = targets.sum(axis=1)

    def objective(wf):
        val = multinomial_objective(wf, cov, targets)
        if not np.isfinite(val):
            raise FloatingPointError("IRLS objective became non-finite")
        return val

    f = objective(w)
    trace = [f]
    grad = multinomial_gradient(w, cov, targets)
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    while it < max_iter and gnorm > tol:
        it += 1
        pi = logistic_proportions(w, cov)
        H = _hessian(pi, totals, cov)
        damp = 1e-10 * max(float(np.trace(H)), 1e-300) / H.shape[0]
        try:
            step = linalg.solve(H + damp * np.eye(H.shape[0]), grad.ravel(), assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = grad.ravel() / max(float(np.trace(H)), 1.0)
        step = step.reshape(w.shape)
        # predicted Newton gain at rounding level: nothing left to improve
        if 0.5 * float(grad.ravel() @ step.ravel()) <= 1e-13 * max(abs(f), 1.0):
            break
        eta = 1.0
        accepted = False
        for _ in range(30):
            cand = w + eta * step
            fc = objective(cand)
            if fc >= f:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improvement = fc - f
        w, f = cand, fc
        trace.append(f)
        grad = multinomial_gradient(w, cov, targets)
        gnorm = float(np.max(np.abs(grad)))
        if improvement <= 1e-15 * max(abs(f), 1.0):
            break
    return IrlsResult(w, f, it, gnorm, trace)
