"""Sampled moment identities for the gauge-transformed variables.

Every check compares a Monte Carlo mean against its closed form within five
empirical standard errors at 1e5 samples.  The closed-loop sampler here is
written from the model equations directly, independent of the simulation
engine, so these tests also cross-validate that engine's recursions.
"""

import numpy as np

from teamlqg import make_model, normalize_influence
from teamlqg.filters import precompute_global, precompute_local

N_SAMPLES = 100_000
SIGMAS = 5.0


def _statistics_model():
    return make_model(
        T=4, n=3,
        alpha=normalize_influence(np.array([0.6, 1.0, 1.5])),
        A=np.array([[0.8, 0.2], [0.0, 0.7]]),
        A_bar=np.array([[0.2, 0.0], [0.1, 0.1]]),
        B=np.array([[0.5], [1.0]]),
        C=np.array([[1.0, 0.3], [0.0, 1.0]]),
        C_bar=np.array([[0.4, 0.0], [0.2, 0.3]]),
        S_bar=np.array([[0.1, 0.0], [0.0, 0.1]]),
        Q=np.eye(2), Q_bar=0.5 * np.eye(2),
        R=np.array([[1.0]]), R_bar=np.array([[0.3]]),
        Sigma_x=np.array([[1.0, 0.2], [0.2, 0.8]]),
        Sigma_w=np.array([[0.5, 0.1], [0.1, 0.6]]),
        Sigma_v=np.array([[0.7, 0.0], [0.0, 0.5]]),
    )


def _assert_mean_matches(products, target, label):
    """products: (N, ...) per-sample outer products; target: same trailing shape."""
    mean = products.mean(axis=0)
    se = products.std(axis=0, ddof=1) / np.sqrt(products.shape[0])
    gap = np.abs(mean - target)
    assert np.all(gap <= SIGMAS * se + 1e-12), (
        f"{label}: worst z-score {np.max(gap / np.maximum(se, 1e-300)):.2f}")


def _outer(a, b):
    """Batched outer products: (N, d), (N, e) -> (N, d, e)."""
    return a[:, :, None] * b[:, None, :]


def _draw_population(rng, cov, n):
    fac = np.linalg.cholesky(cov)
    return rng.standard_normal((N_SAMPLES, n, cov.shape[0])) @ fac.T


def test_primitive_moment_identities():
    """Deviations anticorrelate across agents, are orthogonal to the
    aggregate, and carry the population-deflated covariance."""
    model = _statistics_model()
    n = model.n
    alpha = model.alpha
    rng = np.random.default_rng(1234)
    cases = (("initial-state", model.Sigma_x), ("process", model.Sigma_w[0]),
             ("observation", model.Sigma_v[0]))
    for label, cov in cases:
        sample = _draw_population(rng, cov, n)
        bar = alpha @ sample / n
        dev = sample - alpha[None, :, None] * bar[:, None, :]
        _assert_mean_matches(_outer(dev[:, 0], dev[:, 1]),
                             -(alpha[0] * alpha[1] / n) * cov,
                             f"{label} cross-deviation")
        for i in range(n):
            _assert_mean_matches(_outer(dev[:, i], dev[:, i]),
                                 (1.0 - alpha[i]**2 / n) * cov,
                                 f"{label} own-deviation agent {i + 1}")
            _assert_mean_matches(_outer(sample[:, i], bar),
                                 (alpha[i] / n) * cov,
                                 f"{label} raw-vs-aggregate agent {i + 1}")
            _assert_mean_matches(_outer(dev[:, i], bar),
                                 np.zeros_like(cov),
                                 f"{label} deviation-vs-aggregate agent {i + 1}")


def _sample_closed_loop(model, t_probe, seed):
    """Truth and both filters under zero actions, vectorized over samples.

    Returns quantities at stage ``t_probe``: true state deviations, the
    population state, prediction errors, and the innovation family.
    """
    d = model.dims
    n = d.n
    alpha = model.alpha
    a3 = alpha[None, :, None]
    local = precompute_local(model)
    glob = precompute_global(model)
    rng = np.random.default_rng(seed)

    x = _draw_population(rng, model.Sigma_x, n)
    delta_pred = np.zeros((N_SAMPLES, n, d.d_x))
    z_pred = np.zeros((N_SAMPLES, d.d_x))
    for t in range(t_probe + 1):
        C, C_bar = model.C[t], model.C_bar[t]
        S, S_bar = model.S[t], model.S_bar[t]
        x_bar = alpha @ x / n
        v = _draw_population(rng, model.Sigma_v[t], n)
        v_bar = alpha @ v / n
        y = x @ C.T + v @ S.T + a3 * (x_bar @ C_bar.T + v_bar @ S_bar.T)[:, None, :]
        predicted = delta_pred @ C.T + a3 * (z_pred @ (C + C_bar).T)[:, None, :]
        p_raw = y - predicted
        p_bar = alpha @ p_raw / n
        p_dev = p_raw - a3 * p_bar[:, None, :]
        if t == t_probe:
            dev_true = x - a3 * x_bar[:, None, :]
            return {
                "x_bar": x_bar,
                "dev_true": dev_true,
                "err_pred": dev_true - delta_pred,
                "p_raw": p_raw,
                "p_dev": p_dev,
                "p_bar": p_bar,
            }
        delta_post = delta_pred + p_dev @ local.gain[t].T
        z_post = z_pred + p_bar @ glob.gain[t].T
        A, A_bar, E, E_bar = (model.A[t], model.A_bar[t], model.E[t],
                              model.E_bar[t])
        w = _draw_population(rng, model.Sigma_w[t], n)
        w_bar = alpha @ w / n
        x = x @ A.T + w @ E.T + a3 * (x_bar @ A_bar.T + w_bar @ E_bar.T)[:, None, :]
        delta_pred = delta_post @ A.T
        z_pred = (z_post @ (A + A_bar).T)


def test_innovation_orthogonality():
    model = _statistics_model()
    probe = 2
    got = _sample_closed_loop(model, probe, seed=99)
    d_y = model.dims.d_y
    zero = np.zeros((d_y, d_y))
    for i in range(model.n):
        _assert_mean_matches(_outer(got["p_dev"][:, i], got["p_bar"]), zero,
                             f"deviation innovation vs aggregate, agent {i + 1}")
        _assert_mean_matches(_outer(got["p_dev"][:, i], got["x_bar"]),
                             np.zeros((d_y, model.dims.d_x)),
                             f"deviation innovation vs population state {i + 1}")
        _assert_mean_matches(_outer(got["dev_true"][:, i], got["p_bar"]),
                             np.zeros((model.dims.d_x, d_y)),
                             f"state deviation vs aggregate innovation {i + 1}")


def _aggregate_innovation_cov(model, glob, t):
    C_all = model.C[t] + model.C_bar[t]
    S_all = model.S[t] + model.S_bar[t]
    return (C_all @ glob.Sigma_pred[t] @ C_all.T
            + S_all @ model.Sigma_v[t] @ S_all.T / model.n)


def test_innovation_covariance_decomposition():
    """Raw innovation covariance splits into deviation and aggregate parts."""
    model = _statistics_model()
    probe = 2
    got = _sample_closed_loop(model, probe, seed=7)
    d_y = model.dims.d_y
    for i in range(model.n):
        per_sample = (_outer(got["p_raw"][:, i], got["p_raw"][:, i])
                      - _outer(got["p_dev"][:, i], got["p_dev"][:, i])
                      - model.alpha[i]**2 * _outer(got["p_bar"], got["p_bar"]))
        _assert_mean_matches(per_sample, np.zeros((d_y, d_y)),
                             f"innovation covariance split, agent {i + 1}")


def test_innovation_cross_covariances():
    """Finite-population couplings carry an explicit -1/n weight."""
    model = _statistics_model()
    probe = 2
    got = _sample_closed_loop(model, probe, seed=55)
    local = precompute_local(model)
    glob = precompute_global(model)
    alpha = model.alpha
    n = model.n
    C, S = model.C[probe], model.S[probe]
    innov_cov = (C @ local.Sigma_pred[probe] @ C.T
                 + S @ model.Sigma_v[probe] @ S.T)
    _assert_mean_matches(
        _outer(got["p_dev"][:, 0], got["p_dev"][:, 1]),
        -(alpha[0] * alpha[1] / n) * innov_cov,
        "cross-agent deviation innovations")
    agg_cov = _aggregate_innovation_cov(model, glob, probe)
    for i in range(n):
        _assert_mean_matches(_outer(got["p_raw"][:, i], got["p_bar"]),
                             alpha[i] * agg_cov,
                             f"raw innovation vs aggregate, agent {i + 1}")


def test_prediction_error_covariances():
    """Per-agent error covariance is the schedule matrix under the
    population-deflation factor, with the matching cross-agent weight."""
    model = _statistics_model()
    probe = 2
    got = _sample_closed_loop(model, probe, seed=31)
    local = precompute_local(model)
    sigma = local.Sigma_pred[probe]
    alpha = model.alpha
    n = model.n
    for i in range(n):
        _assert_mean_matches(_outer(got["err_pred"][:, i], got["err_pred"][:, i]),
                             (1.0 - alpha[i]**2 / n) * sigma,
                             f"own prediction error, agent {i + 1}")
    _assert_mean_matches(_outer(got["err_pred"][:, 0], got["err_pred"][:, 2]),
                         -(alpha[0] * alpha[2] / n) * sigma,
                         "cross prediction error")
