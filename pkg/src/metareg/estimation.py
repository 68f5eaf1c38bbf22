"""Coefficient and heterogeneity estimation.

Coefficients come from inverse-variance weighted least squares; the
between-study variance comes from restricted maximum likelihood, maximized
by Fisher scoring with step halving and a bounded derivative-free fallback.
The DerSimonian-Laird moment estimator supplies the start value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from .data import Dataset, DesignMatrix, ModelSpec, build_design
from .effects import logit_effect_arrays
from .errors import (
    DataError,
    InsufficientStudiesError,
    NonConvergenceError,
    SingularDesignError,
)
from .inference import kh_scale

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class FitSettings:
    """Tolerances and bounds for the heterogeneity optimizer.

    ``tau2_max`` of None means 100 * max(v), resolved per fit.
    ``kh_truncate`` floors the Knapp-Hartung scale at 1 (off by default,
    matching the untruncated method).
    """

    tol: float = 1e-8
    max_iter: int = 100
    tau2_max: float | None = None
    kh_truncate: bool = False
    use_fallback: bool = True


@dataclass(frozen=True)
class Convergence:
    """How the heterogeneity optimizer terminated."""

    iterations: int
    score: float
    boundary: bool
    method: str
    converged: bool


@dataclass(frozen=True)
class FitResult:
    """A fitted mixed-effects meta-regression model."""

    coef: np.ndarray
    tau2: float
    cov_unscaled: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    kh_scale: float
    df: int
    convergence: Convergence
    design: DesignMatrix
    spec: ModelSpec | None = None
    retained: tuple = ()

    @property
    def k(self):
        return self.design.k

    @property
    def p(self):
        return self.design.p

    @property
    def column_labels(self):
        return self.design.column_labels


def _as_matrix(design) -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.values
    return np.asarray(design, dtype=np.float64)


def _labels(design, p):
    if isinstance(design, DesignMatrix):
        return design.column_labels
    return tuple(f"x{j}" for j in range(p))


def _describe_singular(X, labels):
    """Name zero-variance and duplicated columns where detectable."""
    bad = []
    for j in range(X.shape[1]):
        col = X[:, j]
        if labels[j] != "intercept" and np.ptp(col) == 0.0:
            bad.append(f"{labels[j]} (constant)")
    centered = X - X.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    for i in range(X.shape[1]):
        for j in range(i + 1, X.shape[1]):
            if norms[i] > 0 and norms[j] > 0:
                r = float(centered[:, i] @ centered[:, j] / (norms[i] * norms[j]))
                if abs(r) >= 1.0 - 1e-10:
                    bad.append(f"{labels[i]} ~ {labels[j]} (collinear)")
    return bad


def _solve_normal_equations(X, y, w, labels, check_cond=True):
    """Weighted normal equations via Cholesky; returns (beta, cov, resid, chol)."""
    Xw = X * w[:, None]
    gram = X.T @ Xw
    if check_cond:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            bad = _describe_singular(X, labels)
            detail = f" offending columns: {', '.join(bad)}." if bad else ""
            raise SingularDesignError(
                f"weighted design is singular or near-singular "
                f"(condition estimate {cond:.3g} exceeds {CONDITION_LIMIT:.0e})."
                + detail,
                columns=bad,
            )
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond guard usually fires
        raise SingularDesignError(f"weighted design is singular: {exc}") from exc
    beta = cho_solve(chol, Xw.T @ y)
    residuals = y - X @ beta
    cov = cho_solve(chol, np.eye(X.shape[1]))
    cov = 0.5 * (cov + cov.T)
    return beta, cov, residuals, chol


def wls_fit(design, y, weights, check_cond=True):
    """Weighted least squares fit of ``y`` on the design.

    Parameters
    ----------
    design : DesignMatrix or (k, p) array
    y : (k,) response vector
    weights : (k,) strictly positive weights

    Returns
    -------
    (beta, cov_unscaled, residuals) where ``cov_unscaled`` is the inverse
    of the weighted Gram matrix.
    """
    X = _as_matrix(design)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    k, p = X.shape
    if k < p:
        raise InsufficientStudiesError(k, p)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be strictly positive and finite")
    beta, cov, residuals, _ = _solve_normal_equations(X, y, w, _labels(design, p), check_cond)
    return beta, cov, residuals


def _effect_arrays(effects):
    if isinstance(effects, tuple) and len(effects) == 2:
        y, v = effects
        return np.asarray(y, dtype=np.float64), np.asarray(v, dtype=np.float64)
    y = np.array([e.y for e in effects], dtype=np.float64)
    v = np.array([e.v for e in effects], dtype=np.float64)
    return y, v


def restricted_loglik(tau2, design, effects):
    """Restricted log-likelihood of ``tau2`` (additive constants dropped).

    Computes -0.5 * [sum log(v + tau2) + log det(X'WX) + sum w r^2] with
    W = diag(1 / (v + tau2)) and r the WLS residuals at that W. ``tau2``
    may be a scalar or a 1-D array (evaluated pointwise, e.g. for grids).
    """
    X = _as_matrix(design)
    y, v = _effect_arrays(effects)
    t = np.asarray(tau2, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DataError("tau2 must be finite and nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)

    w = 1.0 / (v[None, :] + t[:, None])
    Xw = X[None, :, :] * w[:, :, None]
    gram = np.einsum("kp,mkq->mpq", X, Xw)
    sign, logdet = np.linalg.slogdet(gram)
    if np.any(sign <= 0):
        raise SingularDesignError("weighted design is singular in restricted_loglik")
    beta = np.linalg.solve(gram, np.einsum("mkp,k->mp", Xw, y)[..., None])[..., 0]
    residuals = y[None, :] - np.einsum("kp,mp->mk", X, beta)
    quad = np.einsum("mk,mk->m", w * residuals, residuals)
    ll = -0.5 * (np.sum(np.log(v[None, :] + t[:, None]), axis=1) + logdet + quad)
    return float(ll[0]) if scalar else ll


def dl_tau2(design, effects):
    """DerSimonian-Laird moment estimate of the between-study variance.

    Generalized to arbitrary designs: with fixed-effect weights
    W0 = diag(1/v) and Q the weighted residual sum of squares,
    tau2 = max(0, (Q - (k - p)) / (tr(W0) - tr((X'W0X)^-1 X'W0^2 X))).
    """
    X = _as_matrix(design)
    y, v = _effect_arrays(effects)
    k, p = X.shape
    if k <= p:
        raise InsufficientStudiesError(k, p)
    w0 = 1.0 / v
    _, _, residuals, chol = _solve_normal_equations(X, y, w0, _labels(design, p))
    q_stat = float(np.sum(w0 * residuals**2))
    Xw = X * w0[:, None]
    denom = float(w0.sum() - np.trace(cho_solve(chol, Xw.T @ Xw)))
    if denom <= 0:
        return 0.0
    return max(0.0, (q_stat - (k - p)) / denom)


def _reml_profile(X, y, w):
    """Quantities shared by the REML objective, score, and information."""
    Xw = X * w[:, None]
    gram = X.T @ Xw
    chol = cho_factor(gram, lower=True)
    beta = cho_solve(chol, Xw.T @ y)
    residuals = y - X @ beta
    wr = w * residuals
    gram_w2 = Xw.T @ Xw
    inv_gram_w2 = cho_solve(chol, gram_w2)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    return Xw, chol, residuals, wr, gram_w2, inv_gram_w2, logdet


def _reml_parts(X, y, v, t):
    """(loglik, score, fisher_info) of the restricted likelihood at ``t``."""
    w = 1.0 / (v + t)
    Xw, chol, residuals, wr, _, inv_gram_w2, logdet = _reml_profile(X, y, w)
    ll = -0.5 * (float(np.sum(np.log(v + t))) + logdet + float(wr @ residuals))
    tr_p = float(w.sum() - np.trace(inv_gram_w2))
    score = -0.5 * (tr_p - float(wr @ wr))
    gram_w3 = Xw.T @ (Xw * w[:, None])
    tr_p2 = float(
        np.sum(w**2)
        - 2.0 * np.trace(cho_solve(chol, gram_w3))
        + np.trace(inv_gram_w2 @ inv_gram_w2)
    )
    info = 0.5 * tr_p2
    return ll, score, info


def reml_tau2(design, effects, settings: FitSettings = FitSettings()):
    """Restricted maximum likelihood estimate of the between-study variance.

    Starts from the DerSimonian-Laird value and Fisher-scores the REML
    objective with step halving; if scoring stalls or ``max_iter`` is
    reached, falls back to bounded derivative-free maximization over
    [0, tau2_max]. The estimate is truncated at zero and flagged when the
    maximizer sits on an endpoint.

    Returns
    -------
    (tau2, Convergence)

    Raises
    ------
    NonConvergenceError
        If the iteration budget is exhausted and the fallback is disabled;
        carries the last iterate.
    """
    X = _as_matrix(design)
    y, v = _effect_arrays(effects)
    k, p = X.shape
    if k <= p:
        raise InsufficientStudiesError(k, p)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v)) and np.all(v > 0)):
        raise DataError("effects must be finite with positive variances")

    tau2_max = settings.tau2_max if settings.tau2_max is not None else 100.0 * float(v.max())
    tol = settings.tol

    # First solve doubles as the singularity check for this design.
    wls_fit(design, y, 1.0 / v, check_cond=True)

    t = min(dl_tau2(design, effects), tau2_max)
    ll, score, info = _reml_parts(X, y, v, t)
    iterations = 0
    stalled = False

    for iterations in range(1, settings.max_iter + 1):
        if abs(score) <= tol:
            return _finish(t, iterations - 1, score, tau2_max, tol, "fisher")
        if t <= 0.0 and score < 0.0:
            return _finish(0.0, iterations - 1, score, tau2_max, tol, "fisher")
        if t >= tau2_max and score > 0.0:
            return _finish(tau2_max, iterations - 1, score, tau2_max, tol, "fisher")

        step = score / info
        candidate = float(np.clip(t + step, 0.0, tau2_max))
        improved = False
        for _ in range(30):
            cand_ll, cand_score, cand_info = _reml_parts(X, y, v, candidate)
            if cand_ll >= ll - 1e-13 * max(1.0, abs(ll)):
                improved = True
                break
            candidate = t + 0.5 * (candidate - t)
        if not improved:
            stalled = True
            break
        delta = candidate - t
        t, ll, score, info = candidate, cand_ll, cand_score, cand_info
        if abs(delta) <= tol * (1.0 + t):
            return _finish(t, iterations, score, tau2_max, tol, "fisher")

    if settings.use_fallback:
        result = minimize_scalar(
            lambda s: -restricted_loglik(s, design, (y, v)),
            bounds=(0.0, tau2_max),
            method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        candidates = [0.0, float(result.x), tau2_max]
        values = [restricted_loglik(c, design, (y, v)) for c in candidates]
        best = candidates[int(np.argmax(values))]
        _, score, _ = _reml_parts(X, y, v, best)
        return _finish(best, iterations, score, tau2_max, tol, "fallback")

    reason = "stalled" if stalled else f"no convergence in {settings.max_iter} iterations"
    raise NonConvergenceError(
        f"REML did not converge ({reason}); last tau2 = {t:.6g}", last_tau2=t
    )


def _finish(t, iterations, score, tau2_max, tol, method):
    boundary = t <= 0.0 or t >= tau2_max * (1.0 - 1e-12)
    conv = Convergence(
        iterations=iterations,
        score=abs(float(score)),
        boundary=bool(boundary),
        method=method,
        converged=True,
    )
    return max(0.0, float(t)), conv


def fit_model(dataset: Dataset, spec: ModelSpec, effects=None, settings: FitSettings = FitSettings()) -> FitResult:
    """Fit the mixed-effects meta-regression given by ``spec``.

    Composes design construction (with complete-case filtering), REML
    heterogeneity estimation, the weighted least squares solve at
    W = diag(1 / (v + tau2)), and the Knapp-Hartung variance scale.

    Parameters
    ----------
    dataset : Dataset
    spec : ModelSpec
    effects : optional sequence of EffectData aligned with dataset.studies;
        computed from each study's event counts when omitted.
    settings : FitSettings
    """
    design, retained = build_design(dataset, spec)
    if effects is None:
        events = np.array([s.events for s in dataset.studies])
        totals = np.array([s.total for s in dataset.studies])
        y_all, v_all = logit_effect_arrays(events, totals)
    else:
        if len(effects) != len(dataset.studies):
            raise DataError(
                f"effects length {len(effects)} does not match "
                f"{len(dataset.studies)} studies"
            )
        y_all, v_all = _effect_arrays(effects)
    idx = np.asarray(retained, dtype=np.intp)
    result = _fit_design(design, y_all[idx], v_all[idx], settings)
    return replace(result, spec=spec, retained=tuple(retained))


def _fit_design(design: DesignMatrix, y, v, settings: FitSettings) -> FitResult:
    """Fit on an already-built design and aligned effect arrays."""
    k, p = design.values.shape
    if k <= p:
        raise InsufficientStudiesError(k, p)
    tau2, convergence = reml_tau2(design, (y, v), settings)
    weights = 1.0 / (v + tau2)
    beta, cov, residuals = wls_fit(design, y, weights, check_cond=False)
    q = kh_scale(residuals, weights, k, p, truncate=settings.kh_truncate)
    return FitResult(
        coef=beta,
        tau2=tau2,
        cov_unscaled=cov,
        weights=weights,
        residuals=residuals,
        kh_scale=q,
        df=k - p,
        convergence=convergence,
        design=design,
    )
