import math
import warnings

import numpy as np
import pytest
from oracles import grid_search_mle

from attboot.data import Dataset
from attboot.propensity import (
    PerfectSeparationWarning,
    PropensityModel,
    fit_propensity,
    log_likelihood,
    log_likelihood_grad,
    score,
)


def small_logit_dataset(seed, n=20):
    """Random 20 x 2 logit data whose MLE lies well inside the search box."""
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(size=(n, 2))
        z = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + x @ [0.8, -0.5])))).astype(int)
        if 0 < z.sum() < n:
            beta, ll, edge = grid_search_mle(x, z)
            if not edge and np.max(np.abs(beta)) < 5:
                return x, z, beta, ll


def test_intercept_only_closed_form():
    z = np.r_[np.ones(30), np.zeros(70)]
    m = fit_propensity(Dataset(np.empty((100, 0)), z, np.zeros(100)))
    assert m.converged
    assert m.intercept == pytest.approx(math.log(30 / 70), abs=1e-12)
    assert m.intercept == pytest.approx(-0.8473, abs=1e-4)
    np.testing.assert_allclose(m.scores, 0.30, atol=1e-12)


def test_null_model_limit():
    rng = np.random.default_rng(1)
    n = 200_000
    x = rng.normal(size=(n, 3))
    z = (rng.random(n) < 0.25).astype(int)
    m = fit_propensity(Dataset(x, z, np.zeros(n)))
    # coefficient SE is about 1/sqrt(n p (1-p)) ~ 0.005
    assert np.all(np.abs(m.coefficients) < 0.025)
    assert abs(m.scores.mean() - z.mean()) < 1e-8
    assert m.scores.std() < 0.01


@pytest.mark.parametrize("seed", range(5))
def test_matches_grid_search_oracle(seed):
    x, z, beta_grid, ll_grid = small_logit_dataset(seed)
    m = fit_propensity(Dataset(x, z, np.zeros(len(z))))
    assert m.converged
    np.testing.assert_allclose(m.params, beta_grid, atol=1e-3)
    assert log_likelihood(m.params, x, z) >= ll_grid - 1e-6


def test_gradient_small_at_convergence(obs_dataset):
    m = fit_propensity(obs_dataset)
    g = log_likelihood_grad(m.params, obs_dataset.covariates, obs_dataset.treatment)
    assert m.converged and np.max(np.abs(g)) <= 1e-6


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(40, 3))
    z = rng.integers(0, 2, 40)
    h = 1e-5
    for _ in range(50):
        beta = rng.normal(scale=1.5, size=4)
        fd = np.empty(4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            fd[k] = (log_likelihood(beta + e, x, z) - log_likelihood(beta - e, x, z)) / (2 * h)
        g = log_likelihood_grad(beta, x, z)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) <= 1e-4


def test_score_examples():
    zero = PropensityModel(0.0, np.zeros(2), np.array([0.5]), True, 1)
    assert score(zero, [3.0, -7.0]) == 0.5
    m = PropensityModel(math.log(3), np.zeros(1), np.array([0.75]), True, 1)
    assert score(m, [12.0]) == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(ValueError, match="dimension"):
        score(m, [1.0, 2.0])
    with pytest.raises(ValueError):
        score(m, [np.nan])


def test_score_agrees_with_stored_scores():
    x, z, _, _ = small_logit_dataset(0)
    m = fit_propensity(Dataset(x, z, np.zeros(len(z))))
    for i in range(len(z)):
        assert score(m, x[i]) == m.scores[i]


def test_scores_are_logistic_of_linear_predictor(obs_dataset):
    m = fit_propensity(obs_dataset)
    eta = m.intercept + obs_dataset.covariates @ m.coefficients
    np.testing.assert_allclose(m.scores, 1 / (1 + np.exp(-eta)), rtol=1e-14)
    assert np.all((m.scores > 0) & (m.scores < 1))


def test_monotone_in_positive_coefficient(obs_dataset):
    m = fit_propensity(obs_dataset)
    j = int(np.argmax(m.coefficients))
    assert m.coefficients[j] > 0
    x = obs_dataset.covariates[0].copy()
    values = []
    for step in np.linspace(-3, 3, 13):
        xx = x.copy()
        xx[j] = step
        values.append(score(m, xx))
    assert np.all(np.diff(values) > 0)


def test_duplicate_zero_column_leaves_scores_unchanged(obs_dataset):
    d = obs_dataset
    m1 = fit_propensity(d)
    padded = Dataset(np.hstack([d.covariates, np.zeros((d.n, 1))]), d.treatment, d.outcome)
    m2 = fit_propensity(padded)
    np.testing.assert_allclose(m2.scores, m1.scores, atol=1e-10)


def test_separation_flagged_and_clamped():
    x = np.linspace(-2, 2, 20).reshape(-1, 1)
    z = (x[:, 0] > 0).astype(int)
    with pytest.warns(PerfectSeparationWarning):
        m = fit_propensity(Dataset(x, z, np.zeros(20)))
    assert m.separated and not m.converged
    assert m.scores.min() >= 1e-6 and m.scores.max() <= 1 - 1e-6


def test_ridge_shrinks_coefficients(obs_dataset):
    plain = fit_propensity(obs_dataset)
    shrunk = fit_propensity(obs_dataset, ridge=50.0)
    assert np.linalg.norm(shrunk.coefficients) < np.linalg.norm(plain.coefficients)


def test_model_json_export(obs_dataset):
    d = fit_propensity(obs_dataset).to_dict()
    assert set(d) == {"intercept", "coefficients", "converged", "iterations"}
    assert len(d["coefficients"]) == obs_dataset.p


def test_requires_both_groups():
    with pytest.raises(ValueError):
        fit_propensity(Dataset(np.zeros((3, 1)), [0, 0, 0], np.zeros(3)))


def test_non_convergence_warns(obs_dataset):
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        m = fit_propensity(obs_dataset, max_iter=1)
    assert not m.converged
    assert any("did not converge" in str(w.message) for w in rec)
