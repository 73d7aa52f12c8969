import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factory import random_case
from latentcapture.data import Dataset, Stratum
from latentcapture.model import (
    BUILTIN_PARTITIONS,
    ModelError,
    ModelSpec,
    Restriction,
    Term,
    build_history_matrix,
    build_loglinear_design,
    build_partition_matrices,
    conditional_probs,
    latent_weights,
    loglinear_design,
    recursive_design,
    table_classifier,
)
from latentcapture.sim import finite_diff


def _dataset(xs, J=3):
    strata = tuple(Stratum(x=np.array(x, float), n=1, y=np.eye(2**J - 1, dtype=np.int64)[0]) for x in xs)
    return Dataset(strata=strata, J=J, covariate_names=tuple(f"x{i + 1}" for i in range(len(xs[0]))))


def test_history_matrix():
    H = build_history_matrix(3)
    assert H.shape == (8, 3)
    assert H[5].tolist() == [1, 0, 1]
    with pytest.raises(ModelError):
        build_history_matrix(1)


@pytest.mark.parametrize("name", sorted(BUILTIN_PARTITIONS))
@pytest.mark.parametrize("J", [2, 4])
def test_partition_classes_cover_every_occasion_once(name, J):
    design = recursive_design(J, name)
    np.testing.assert_array_equal(design.Hv.sum(axis=0), np.ones((2**J, J)))


def test_captured_before_classes():
    Hv = recursive_design(3, "captured_before").Hv
    # history (0,1,1): occasion 1 and 2 unseen before, occasion 3 seen before
    r = 0b011
    assert Hv[0, r].tolist() == [1, 1, 0]
    assert Hv[1, r].tolist() == [0, 0, 1]


@pytest.mark.parametrize(
    "partial, expected",
    [((), 1), ((0,), 1), ((1,), 2), ((1, 0), 1), ((1, 1), 4), ((1, 0, 1), 4), ((1, 1, 0), 3), ((0, 0, 1), 2)],
)
def test_example1_classes(partial, expected):
    classify = BUILTIN_PARTITIONS["example1"][0](4)
    assert classify(partial) == expected


def test_recursive_design_identities():
    H = build_history_matrix(3)
    d = recursive_design(3, "example1")
    for v in range(d.Hv.shape[0]):
        np.testing.assert_array_equal(d.A[:, v], (H * d.Hv[v]).sum(axis=1))
        np.testing.assert_array_equal(d.B[:, v], d.Hv[v].sum(axis=1))


def _explicit_recursive_q(Hv, delta, J):
    out = []
    for bits in itertools.product((0, 1), repeat=J):
        r = int("".join(map(str, bits)), 2)
        prob = 1.0
        for j in range(J):
            v = int(np.flatnonzero(Hv[:, r, j])[0])
            p = 1 / (1 + math.exp(-delta[v]))
            prob *= p if bits[j] else 1 - p
        out.append(prob)
    return np.array(out)


@pytest.mark.parametrize("name", sorted(BUILTIN_PARTITIONS))
def test_recursive_q_is_a_product_of_bernoullis(name):
    rng = np.random.default_rng(1)
    d = recursive_design(3, name)
    delta = rng.normal(size=d.dim_delta)
    q = conditional_probs(d, delta)
    assert q.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(q, _explicit_recursive_q(d.Hv, delta, 3), rtol=1e-13)


def test_independence_loglinear_equals_time_effects_recursive():
    delta = np.array([0.3, -1.2, 0.8, 2.0])
    q_ll = conditional_probs(loglinear_design(4), delta)
    q_rec = conditional_probs(recursive_design(4, "occasion"), delta)
    np.testing.assert_allclose(q_ll, q_rec, rtol=1e-13)


def test_loglinear_columns_and_validation():
    H = build_history_matrix(3)
    G = build_loglinear_design(H, [(1, 3)])
    np.testing.assert_array_equal(G[:, 3], H[:, 0] * H[:, 2])
    with pytest.raises(ModelError, match="bivariate"):
        build_loglinear_design(H, [(1, 2, 3)])
    with pytest.raises(ModelError, match="duplicate"):
        build_loglinear_design(H, [(1, 2), (2, 1)])
    with pytest.raises(ModelError, match="invalid"):
        build_loglinear_design(H, [(1, 4)])


def test_table_partition():
    table = {(): 1, (0,): 1, (1,): 2, (0, 0): 1, (0, 1): 2, (1, 0): 2, (1, 1): 2}
    d = recursive_design(3, table_classifier(table))
    np.testing.assert_array_equal(d.Hv, recursive_design(3, "captured_before").Hv)
    with pytest.raises(ModelError, match="no entry"):
        build_partition_matrices(3, table_classifier({(): 1}))


def test_latent_weights_reference_class():
    X = np.zeros((2, 3, 4))
    X[:, 1, :2] = [1.0, 2.0]
    X[:, 2, 2:] = [1.0, 2.0]
    xi = latent_weights(X, np.zeros(4))
    np.testing.assert_allclose(xi, 1 / 3)
    xi = latent_weights(X, np.array([np.log(2), 0, 0, 0]))
    np.testing.assert_allclose(xi[0], [0.25, 0.5, 0.25])


def test_restriction_tensor_with_covariate():
    ds = _dataset([[1.0, 3.0], [2.0, -1.0]])
    R = Restriction(("a", "b"), {(0, 0): (Term(1, "a"), Term(2, "b", "x2")), (1, 0): (Term(-1, "a"),)})
    M = R.tensor(ds, 2, 1)
    assert M.shape == (2, 2, 1, 2)
    np.testing.assert_array_equal(M[:, 0, 0], [[1, 6], [1, -2]])
    np.testing.assert_array_equal(M[:, 1, 0], [[-1, 0], [-1, 0]])


def test_spec_names_and_dimensions():
    spec = ModelSpec(C=3, conditional=recursive_design(3, "captured_before"), latent_covariates=("x1",))
    assert spec.J == 3
    assert spec.dim_zeta == 4 and spec.dim_lambda == 6
    assert spec.param_names[:2] == ["zeta[2]:intercept", "zeta[2]:x1"]
    with pytest.raises(ModelError, match="shape"):
        spec.split(np.zeros(3))
    with pytest.raises(ModelError, match="J=3"):
        spec.bind(_dataset([[0.0]], J=2))


def test_manifest_probabilities_are_distributions():
    ds, spec, params = random_case(3, C=3)
    state = spec.bind(ds).state(params.beta)
    np.testing.assert_allclose(state.ptilde.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(state.xi.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(state.dptilde.sum(axis=1), 0.0, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_dptilde_matches_finite_differences(seed):
    ds, spec, params = random_case(seed)
    bound = spec.bind(ds)
    beta = params.beta
    num = finite_diff(lambda b: bound.state(b).ptilde, beta)
    np.testing.assert_allclose(bound.state(beta).dptilde, num, atol=1e-8)
