import numpy as np
import pytest

from factory import random_case
from latentcapture.data import DataError
from latentcapture.model import ModelSpec, loglinear_design, recursive_design
from latentcapture.sim import (
    SimConfig,
    enumerate_probs,
    generate,
    pool_dataset,
    simulate_histories,
    true_tau,
)

POOL = np.array([[0.0], [1.0], [2.0]])
WEIGHTS = np.array([0.2, 0.5, 0.3])


def _latent_spec(family="recursive"):
    design = recursive_design(4, "captured_before") if family == "recursive" else loglinear_design(4, [(1, 2)])
    return ModelSpec(C=2, conditional=design, latent_covariates=("x",))


def _beta(spec, seed=0):
    return np.random.default_rng(seed).normal(scale=0.7, size=spec.dim_beta)


def _config(spec, N, seed, beta=None):
    return SimConfig(N_true=N, beta=_beta(spec) if beta is None else beta, pool=POOL, weights=WEIGHTS,
                     covariate_names=("x",), seed=seed)


@pytest.mark.parametrize("family", ["recursive", "loglinear"])
def test_same_seed_same_data(family):
    spec = _latent_spec(family)
    a = generate(_config(spec, 500, seed=4), spec)
    b = generate(_config(spec, 500, seed=4), spec)
    c = generate(_config(spec, 500, seed=5), spec)
    np.testing.assert_array_equal(a.Y, b.Y)
    assert a.n == b.n
    assert not np.array_equal(a.Y, c.Y) or a.n != c.n


def test_no_observable_units():
    spec = ModelSpec(C=1, conditional=recursive_design(3, "occasion"))
    cfg = SimConfig(N_true=50, beta=np.full(3, -60.0), pool=np.zeros((1, 0)), weights=np.ones(1))
    with pytest.raises(DataError, match="no observable units"):
        generate(cfg, spec)


@pytest.mark.parametrize("family", ["recursive", "loglinear"])
def test_configuration_counts_follow_the_model(family):
    # every cell count lies within 3 binomial standard deviations of N tau_i p_i(h)
    spec = _latent_spec(family)
    N = 100_000
    cfg = _config(spec, N, seed=21)
    H, cov = simulate_histories(cfg, spec)
    idx = H @ (1 << np.arange(spec.J - 1, -1, -1))
    P = enumerate_probs(pool_dataset(cfg, spec.J), spec, cfg.beta)
    for i in range(len(WEIGHTS)):
        prob = WEIGHTS[i] * P[i]
        observed = np.bincount(idx[cov == i], minlength=2**spec.J)
        bound = 3 * np.sqrt(N * prob * (1 - prob))
        assert np.all(np.abs(observed - N * prob) <= bound + 1)


def test_true_tau_aligned_with_strata():
    spec = _latent_spec()
    ds = generate(_config(spec, 2000, seed=2), spec)
    tau = true_tau(_config(spec, 2000, seed=2), ds)
    expected = {0.0: 0.2, 1.0: 0.5, 2.0: 0.3}
    assert tau.tolist() == [expected[float(st.x[0])] for st in ds.strata]


@pytest.mark.parametrize("seed", range(6))
def test_oracle_probabilities_match_model_state(seed):
    ds, spec, params = random_case(seed, C=2)
    P = enumerate_probs(ds, spec, params.beta)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(P, spec.bind(ds).state(params.beta).ptilde, rtol=1e-11, atol=1e-15)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(N_true=0), "at least 1"),
        (dict(weights=np.array([0.5, 0.6, -0.1])), "simplex"),
        (dict(weights=np.array([0.5, 0.5])), "differ"),
    ],
)
def test_config_validation(kwargs, message):
    base = dict(N_true=10, beta=np.zeros(2), pool=POOL, weights=WEIGHTS)
    with pytest.raises(ValueError, match=message):
        SimConfig(**{**base, **kwargs})
