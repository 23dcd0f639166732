"""Logit propensity model fitted by Newton-Raphson (IRLS)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from attboot.data import Dataset

SEPARATION_BOUND = 30.0
SEPARATION_CLAMP = 1e-6


class ConvergenceWarning(UserWarning):
    pass


class PerfectSeparationWarning(UserWarning):
    pass


def expit(eta):
    # stable for large |eta|
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def linear_predictor(intercept: float, coefficients: np.ndarray, x: np.ndarray) -> np.ndarray:
    """intercept + x @ coefficients, summed column by column.

    The fixed summation order makes a row scored alone bitwise equal to the
    same row scored inside a matrix, whatever BLAS does.
    """
    eta = np.full(x.shape[0], float(intercept))
    for j in range(x.shape[1]):
        eta += x[:, j] * coefficients[j]
    return eta


def _design(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.hstack([np.ones((x.shape[0], 1)), x])


def log_likelihood(beta, x, z) -> float:
    """Bernoulli log-likelihood of ``z`` under logit(p) = beta[0] + x @ beta[1:]."""
    eta = _design(x) @ np.asarray(beta, dtype=float)
    # log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
    return float(np.sum(z * -np.logaddexp(0.0, -eta) + (1 - z) * -np.logaddexp(0.0, eta)))


def log_likelihood_grad(beta, x, z) -> np.ndarray:
    xd = _design(x)
    return xd.T @ (np.asarray(z, dtype=float) - expit(xd @ np.asarray(beta, dtype=float)))


@dataclass(frozen=True, eq=False)
class PropensityModel:
    intercept: float
    coefficients: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int
    separated: bool = False
    ridge: float = 0.0

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coefficients])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.coefficients.size:
            raise ValueError(f"expected {self.coefficients.size} covariates, got {x.shape[1]}")
        return _to_open_interval(expit(linear_predictor(self.intercept, self.coefficients, x)), self.separated)

    def to_dict(self) -> dict:
        return {
            "intercept": float(self.intercept),
            "coefficients": [float(c) for c in self.coefficients],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def _to_open_interval(p: np.ndarray, separated: bool) -> np.ndarray:
    if separated:
        return np.clip(p, SEPARATION_CLAMP, 1.0 - SEPARATION_CLAMP)
    # only touches values that rounded to exactly 0 or 1
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def fit_propensity(
    d: Dataset,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
) -> PropensityModel:
    """Maximum-likelihood logit of treatment on covariates.

    Newton steps with step-halving; stops when the largest coefficient change
    is below ``tol``. If any coefficient exceeds ``SEPARATION_BOUND`` in
    magnitude the data are treated as (quasi-)separated: fitting stops, the
    model is flagged ``separated`` and its scores are clamped to
    ``[1e-6, 1 - 1e-6]``.

    ``ridge`` adds ``ridge/2 * ||coefficients||^2`` (intercept unpenalized).
    """
    d.require_both_groups()
    xd = _design(d.covariates)
    z = d.treatment.astype(float)
    k = xd.shape[1]
    penalty = np.full(k, float(ridge))
    penalty[0] = 0.0

    def objective(b):
        eta = xd @ b
        ll = np.sum(z * -np.logaddexp(0.0, -eta) + (1 - z) * -np.logaddexp(0.0, eta))
        return ll - 0.5 * np.sum(penalty * b * b)

    beta = np.zeros(k)
    p_bar = z.mean()
    beta[0] = np.log(p_bar / (1.0 - p_bar))
    current = objective(beta)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(xd @ beta)
        w = p * (1.0 - p)
        grad = xd.T @ (z - p) - penalty * beta
        hess = (xd * w[:, None]).T @ xd + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        candidate = beta + step
        value = objective(candidate)
        while value < current and t > 1e-10:
            t *= 0.5
            candidate = beta + t * step
            value = objective(candidate)
        change = np.max(np.abs(candidate - beta))
        beta, current = candidate, value
        if np.max(np.abs(beta[1:]), initial=0.0) > SEPARATION_BOUND or abs(beta[0]) > SEPARATION_BOUND:
            separated = True
            break
        if change < tol:
            converged = True
            break

    if separated:
        warnings.warn(
            "perfect or quasi-perfect separation in propensity fit; scores clamped",
            PerfectSeparationWarning,
            stacklevel=2,
        )
    elif not converged:
        warnings.warn(
            f"propensity fit did not converge in {max_iter} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    coefs = beta[1:].copy()
    coefs.flags.writeable = False
    # same expression as predict() so stored scores and score() agree exactly
    scores = _to_open_interval(expit(linear_predictor(beta[0], coefs, d.covariates)), separated)
    scores.flags.writeable = False
    return PropensityModel(
        intercept=float(beta[0]),
        coefficients=coefs,
        scores=scores,
        converged=converged,
        iterations=it,
        separated=separated,
        ridge=float(ridge),
    )


def score(m: PropensityModel, x) -> float:
    """Propensity score of a single covariate vector."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != m.coefficients.size:
        raise ValueError(f"dimension mismatch: model has {m.coefficients.size} covariates, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariate vector must be finite")
    return float(m.predict(x.reshape(1, -1))[0])
