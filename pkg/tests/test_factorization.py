import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, max_rel_err
from factorgan import checks
from factorgan.data import GaussianTask, ZeroHead, oracle_heads
from factorgan.factorization import (
    ConfigurationError, HierarchySpec, Partition, PartitionError, SubDiscriminatorSet, combine,
    combine_with_grad, combined_logit, conditional_combined_logit, h_inv, h_map, independent_combined_logit,
    logit_sum, product_of_ratios, sigmoid, split,
)
from factorgan.nn import init_params
from factorgan.training import NetHead

TWO = Partition([[0, 1], [2, 3]])


def net_head(rng, width, hidden=(6,)):
    return NetHead(init_params([width, *hidden, 1], rng, "leaky_relu", "identity"))


def joint_set(rng, part=TWO):
    marg = [net_head(rng, len(p)) for p in part.parts]
    return SubDiscriminatorSet(part, "joint", marg, net_head(rng, part.total_dim), net_head(rng, part.total_dim))


# partitions

def test_split_join_round_trip(rng):
    part = Partition([[2, 0], [1], [3, 4]])
    x = rng.standard_normal((5, 5))
    pieces = split(x, part)
    np.testing.assert_array_equal(pieces[0], x[:, [0, 2]])
    np.testing.assert_array_equal(pieces[1], x[:, [1]])
    np.testing.assert_array_equal(part.join(pieces), x)


@pytest.mark.parametrize("parts", [[[0, 1]], [[0], []], [[0, 1], [1, 2]], [[0], [2]]])
def test_bad_partitions(parts):
    with pytest.raises(PartitionError):
        Partition(parts)


def test_split_width_mismatch():
    with pytest.raises(PartitionError):
        TWO.split(np.zeros((2, 5)))


def test_hierarchy_must_cover_parts():
    with pytest.raises(PartitionError):
        HierarchySpec([[[0]], [[2], [3]]]).validate(TWO)
    HierarchySpec([[[1], [0]], [[2, 3]]]).validate(TWO)


# h bijection and the product-of-ratios identity

def test_h_values():
    assert h_map(0.5) == 1.0
    assert h_map(0.0) == 0.0
    assert h_inv(3.0) == 0.75
    with pytest.raises(ValueError):
        h_map(1.0)
    with pytest.raises(ValueError):
        h_inv(-0.1)


@given(st.floats(0.0, 0.999))
def test_h_round_trip(a):
    assert abs(h_inv(h_map(a)) - a) < 1e-12


def test_sigmoid_is_stable():
    z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5
    np.testing.assert_allclose(s[1] + s[3], 1.0, rtol=0, atol=1e-15)


@settings(max_examples=300)
@given(
    st.floats(-8, 8), st.floats(-8, 8),
    st.lists(st.floats(-8, 8), min_size=2, max_size=4),
)
def test_logit_sum_matches_product_of_ratios(d_p, d_q, d_marg):
    lhs = float(sigmoid(logit_sum(d_p, d_q, d_marg)))
    rhs = float(product_of_ratios(d_p, d_q, d_marg))
    assert abs(lhs - rhs) < 1e-12


# oracle heads in every mode

def test_oracle_heads_exact_for_every_fixture(rng):
    for name, (p, q, mode, hier) in checks.gaussian_fixtures(rng).items():
        heads = oracle_heads(p, q, mode, hier)
        x = np.concatenate([p.sample_joint(50, rng), q.sample_joint(50, rng)])
        direct = np.exp(p.log_density(x)) / (np.exp(p.log_density(x)) + np.exp(q.log_density(x)))
        np.testing.assert_allclose(sigmoid(combine(x, heads)), direct, rtol=0, atol=1e-9, err_msg=name)


def test_oracle_conditional_and_independent_modes(rng):
    p = GaussianTask(rng.normal(size=4), checks.random_spd(rng, 4), TWO)
    q_cov = checks.random_spd(rng, 4)
    q_cov[:2, 2:] = q_cov[2:, :2] = 0.0
    q = GaussianTask(rng.normal(size=4), q_cov, TWO)
    x = rng.normal(size=(40, 4))
    target = sigmoid(p.log_density(x) - q.log_density(x))
    # conditional drops the first marginal ratio: logit of p(x2|x1) / q(x2|x1)
    cond = oracle_heads(p, q, "conditional")
    shift = p.marginal_log_density(0, x[:, :2]) - q.marginal_log_density(0, x[:, :2])
    np.testing.assert_allclose(sigmoid(combine(x, cond) + shift), target, rtol=0, atol=1e-9)
    np.testing.assert_allclose(combine(x, cond), conditional_combined_logit(x[:, :2], x[:, 2:], cond), atol=1e-12)
    # independent mode is exact when the real parts are independent
    p_cov = checks.random_spd(rng, 4)
    p_cov[:2, 2:] = p_cov[2:, :2] = 0.0
    p_ind = GaussianTask(rng.normal(size=4), p_cov, TWO)
    ind = oracle_heads(p_ind, q, "independent_marginals")
    np.testing.assert_allclose(sigmoid(independent_combined_logit(x, ind)),
                               sigmoid(p_ind.log_density(x) - q.log_density(x)), rtol=0, atol=1e-9)


def test_identical_tasks_give_half(rng):
    p = GaussianTask(rng.normal(size=4), checks.random_spd(rng, 4), TWO)
    heads = oracle_heads(p, p, "joint")
    x = rng.normal(size=(20, 4))
    np.testing.assert_allclose(sigmoid(combine(x, heads)), 0.5, atol=1e-12)


def test_independent_p_task_has_zero_p_head(rng):
    cov = np.diag(rng.uniform(0.5, 2.0, size=4))
    p = GaussianTask(rng.normal(size=4), cov, TWO)
    heads = oracle_heads(p, p, "joint")
    np.testing.assert_allclose(heads.p_dep(rng.normal(size=(20, 4))), 0.0, atol=1e-12)


# mode reductions

def test_mode_reductions(rng):
    for res in checks.check_mode_reductions(rng):
        assert res.passed, res


def test_independent_equals_joint_with_zero_p(rng):
    heads = joint_set(rng)
    zeroed = SubDiscriminatorSet(TWO, "joint", heads.marginal, ZeroHead(), heads.q_dep)
    ind = SubDiscriminatorSet(TWO, "independent_marginals", heads.marginal, None, heads.q_dep)
    x = rng.normal(size=(100, 4))
    np.testing.assert_allclose(combine(x, ind), combined_logit(x, zeroed), rtol=0, atol=1e-12)


# gradients through the combination

@pytest.mark.parametrize("mode", ["joint", "conditional", "independent_marginals", "hierarchical", "autoregressive"])
def test_combined_gradient_matches_finite_differences(rng, mode):
    if mode == "hierarchical":
        part = TWO
        heads = SubDiscriminatorSet(
            part, mode, None, net_head(rng, 4), net_head(rng, 4),
            hierarchy=HierarchySpec([[[0], [1]], [[2, 3]]]),
            group_marginal=[[net_head(rng, 1), net_head(rng, 1)], [net_head(rng, 2)]],
            group_p=[net_head(rng, 2), None], group_q=[net_head(rng, 2), None],
        )
    elif mode == "autoregressive":
        part = Partition([[0], [1], [2]])
        heads = SubDiscriminatorSet(
            part, mode, [net_head(rng, 1) for _ in range(3)],
            prefix_p=[None, net_head(rng, 2), net_head(rng, 3)],
            prefix_q=[None, net_head(rng, 2), net_head(rng, 3)],
        )
    else:
        part = TWO
        js = joint_set(rng)
        marg = list(js.marginal)
        p_dep = js.p_dep
        if mode == "conditional":
            marg[0] = None
        if mode == "independent_marginals":
            p_dep = None
        heads = SubDiscriminatorSet(part, mode, marg, p_dep, js.q_dep)
    x = rng.normal(size=(4, part.total_dim))
    val, grad = combine_with_grad(x, heads)
    np.testing.assert_allclose(val, combine(x, heads), rtol=0, atol=1e-12)
    num = central_diff(lambda: float(np.sum(combine(x, heads))), [x])
    assert max_rel_err([grad], num) < 1e-5


def test_factor_names_and_signs(rng):
    heads = joint_set(rng)
    names = [(f.name, f.sign) for f in heads.factors()]
    assert names == [("d_p", 1.0), ("d_q", -1.0), ("d_marg_1", 1.0), ("d_marg_2", 1.0)]


# configuration errors

def test_configuration_errors(rng):
    h = net_head(rng, 2)
    j = net_head(rng, 4)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "joint", [h, h], None, j)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "independent_marginals", [h, h], j, j)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "conditional", [h, h], j, j)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "joint", [h], j, j)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "bogus", [h, h], j, j)
    with pytest.raises(ConfigurationError):
        SubDiscriminatorSet(TWO, "hierarchical", None, j, j, hierarchy=HierarchySpec([[[0], [1]], [[2, 3]]]),
                            group_marginal=[[h, h], [h]])


def test_mode_specific_combiner_rejects_other_modes(rng):
    heads = joint_set(rng)
    with pytest.raises(ConfigurationError):
        independent_combined_logit(np.zeros((1, 4)), heads)
