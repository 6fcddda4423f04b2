"""Analytic-oracle identities, runnable as a self-check of an installed build.

Every check returns a :class:`CheckResult` with the worst error it observed
and the tolerance it was held to. ``run_all`` is what ``factorgan
oracle-check`` executes.
"""
from typing import NamedTuple

import numpy as np

from . import factorization as fz
from .data import GaussianTask, ZeroHead, oracle_heads
from .factorization import HierarchySpec, Partition, SubDiscriminatorSet, sigmoid
from .nn import init_params, net_backward, net_forward
from .training import (
    Generator, NetHead, disc_loss, disc_loss_grad, gen_loss, gen_loss_grad, mask_sources,
)


class CheckResult(NamedTuple):
    name: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""


def _result(name, err, tol, detail=""):
    return CheckResult(name, float(err), tol, bool(err < tol), detail)


def random_spd(rng, d, jitter=0.5):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + jitter * np.eye(d)


def chain_cov(d, rho, scale=1.0):
    idx = np.arange(d)
    return scale * rho ** np.abs(idx[:, None] - idx[None, :])


def gaussian_fixtures(rng):
    """``{name: (p_task, q_task, mode, hierarchy)}`` for the exactness check."""
    two = Partition([[0, 1], [2, 3]])
    fixtures = {
        "joint_k2": (
            GaussianTask(rng.normal(0, 0.5, 4), random_spd(rng, 4), two),
            GaussianTask(rng.normal(0, 0.5, 4), random_spd(rng, 4), two),
            "joint", None,
        ),
        "hierarchical_4d": (
            GaussianTask(rng.normal(0, 0.5, 4), random_spd(rng, 4), two),
            GaussianTask(rng.normal(0, 0.5, 4), random_spd(rng, 4), two),
            "hierarchical", HierarchySpec([[[0], [1]], [[2], [3]]]),
        ),
        "autoregressive_t3": (
            GaussianTask(np.zeros(3), chain_cov(3, 0.8), Partition([[0], [1], [2]])),
            GaussianTask(np.full(3, 0.3), chain_cov(3, -0.4, 1.5), Partition([[0], [1], [2]])),
            "autoregressive", None,
        ),
    }
    return fixtures


def _mixed_points(p_task, q_task, n, rng):
    x = np.concatenate([p_task.sample_joint(n, rng), q_task.sample_joint(n, rng)])
    return x[rng.permutation(len(x))[:n]]


def check_combination_identity(rng, n=1000, tol=1e-12):
    """Logit-space sum against the explicit product of density ratios."""
    worst = 0.0
    for i in range(n):
        k = (2, 3, 4)[i % 3]
        d_p, d_q = rng.uniform(-5, 5, size=2)
        d_marg = rng.uniform(-5, 5, size=k)
        lhs = float(sigmoid(fz.logit_sum(d_p, d_q, d_marg)))
        rhs = float(fz.product_of_ratios(d_p, d_q, d_marg))
        worst = max(worst, abs(lhs - rhs))
    return _result("combination_identity", worst, tol, f"{n} logit tuples, K in 2..4")


def check_oracle_exactness(rng, n=100, tol=1e-9):
    out = []
    for name, (p, q, mode, hier) in gaussian_fixtures(rng).items():
        heads = oracle_heads(p, q, mode, hier)
        x = _mixed_points(p, q, n, rng)
        target = sigmoid(p.log_density(x) - q.log_density(x))
        err = np.max(np.abs(sigmoid(fz.combine(x, heads)) - target))
        out.append(_result(f"oracle_exactness[{name}]", err, tol, f"{n} points"))
    return out


def _random_net_heads(rng, partition, hidden=(8,), input_scale=1.0):
    def head(width):
        return NetHead(init_params([width, *hidden, 1], rng, "leaky_relu", "identity"), input_scale=input_scale)
    marg = [head(len(p)) for p in partition.parts]
    d = partition.total_dim
    return marg, head(d), head(d)


def check_mode_reductions(rng, n=100, tol=1e-12):
    """Each special mode equals the joint combination with the matching heads zeroed."""
    part = Partition([[0, 1], [2, 3]])
    marg, p_head, q_head = _random_net_heads(rng, part)
    x = rng.normal(0, 2, size=(n, 4))
    out = []

    indep = SubDiscriminatorSet(part, "independent_marginals", marg, None, q_head)
    zero_p = SubDiscriminatorSet(part, "joint", marg, ZeroHead(), q_head)
    out.append(_result("reduction[independent]", np.max(np.abs(fz.combine(x, indep) - fz.combine(x, zero_p))), tol))

    cond = SubDiscriminatorSet(part, "conditional", [None, marg[1]], p_head, q_head)
    zero_1 = SubDiscriminatorSet(part, "joint", [ZeroHead(), marg[1]], p_head, q_head)
    out.append(_result("reduction[conditional]", np.max(np.abs(fz.combine(x, cond) - fz.combine(x, zero_1))), tol))

    joint = SubDiscriminatorSet(part, "joint", marg, p_head, q_head)
    ref = fz.combine(x, joint)
    hier = SubDiscriminatorSet(part, "hierarchical", None, p_head, q_head,
                               hierarchy=HierarchySpec([[[0, 1]], [[2, 3]]]),
                               group_marginal=[[marg[0]], [marg[1]]])
    out.append(_result("reduction[hierarchical_trivial]", np.max(np.abs(fz.combine(x, hier) - ref)), tol))

    auto = SubDiscriminatorSet(part, "autoregressive", marg, prefix_p=[None, p_head], prefix_q=[None, q_head])
    out.append(_result("reduction[autoregressive_t2]", np.max(np.abs(fz.combine(x, auto) - ref)), tol))
    return out


def check_h_bijection(rng, n=1000, tol=1e-10):
    a = rng.uniform(0, 0.99, size=n)
    r = np.exp(rng.uniform(-10, 10, size=n))
    err_a = np.max(np.abs(fz.h_inv(fz.h_map(a)) - a))
    err_r = np.max(np.abs(fz.h_map(fz.h_inv(r)) - r) / r)
    return _result("h_bijection", max(err_a, err_r), tol)


def check_spectral_norm(rng, n=50, iterations=100, tol=1e-3):
    errs, gaps = [], []
    for _ in range(n):
        rows, cols = rng.integers(2, 65, size=2)
        net = init_params([cols, rows], rng, output_activation="identity",
                          spectral_norm=True, power_iterations=iterations)
        net.refresh_spectral_norm()
        w_sn = net.effective_weights()[0][0]
        sv = np.sqrt(np.clip(np.linalg.eigvalsh(w_sn.T @ w_sn), 0.0, None))
        errs.append(abs(sv[-1] - 1.0))
        gaps.append(sv[-2] / sv[-1])
    errs = np.asarray(errs)
    worst = int(np.argmax(errs))
    detail = (f"{n} matrices, {iterations} power iterations, {int(np.sum(errs < tol))} within tolerance; "
              f"worst matrix has sigma2/sigma1 = {gaps[worst]:.4f}")
    return _result("spectral_norm", errs[worst], tol, detail)


def central_diff(f, arrays, step=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + step
            up = f()
            a[idx] = orig - step
            down = f()
            a[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def rel_err(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(b), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def _jitter_biases(net, rng):
    # zero biases put dead-relu layers exactly on the kink, where differences are one-sided
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.5, size=b.shape)
    return net


def _grad_dense(rng, i):
    hidden = ("relu", "leaky_relu")[i % 2]
    output = ("identity", "sigmoid")[(i // 2) % 2]
    sn = bool((i // 4) % 2)
    dims = [int(d) for d in rng.integers(1, 6, size=rng.integers(2, 5))]
    net = _jitter_biases(init_params(dims, rng, hidden, output, spectral_norm=sn), rng)
    x = rng.standard_normal((3, dims[0]))
    up = rng.standard_normal((3, dims[-1]))

    def f():
        return float(np.sum(up * net_forward(net, x)[1]))

    f()
    grads, gx = net_backward(net, up)
    num = central_diff(f, net.params() + [x])
    return f"dense {dims} {hidden}/{output} sn={sn}", rel_err(grads + [gx], num)


def _grad_losses(rng, i):
    real = rng.normal(0, 3, size=5)
    fake = rng.normal(0, 3, size=4)
    gr, gf = disc_loss_grad(real, fake)
    num_d = central_diff(lambda: disc_loss(real, fake), [real, fake])
    num_g = central_diff(lambda: gen_loss(fake), [fake])
    return "losses", max(rel_err([gr, gf], num_d), rel_err([gen_loss_grad(fake)], num_g))


def _grad_combination(rng, i):
    mode = ("joint", "independent_marginals", "conditional")[i % 3]
    part = Partition([[0, 1], [2, 3]])
    marg, p_head, q_head = _random_net_heads(rng, part, hidden=(5,), input_scale=float(rng.uniform(0.5, 10.0)))
    if mode == "independent_marginals":
        p_head = None
    if mode == "conditional":
        marg[0] = None
    heads = SubDiscriminatorSet(part, mode, marg, p_head, q_head)
    x = rng.standard_normal((3, 4))
    _, g = fz.combine_with_grad(x, heads)
    num = central_diff(lambda: float(np.sum(fz.combine(x, heads))), [x])
    return f"combined logit ({mode})", rel_err([g], num)


def _grad_generator(rng, i):
    mode = ("joint", "conditional", "mask")[i % 3]
    noise = 3
    if mode == "mask":
        part = Partition([[0, 1], [2, 3]])
        net = init_params([2 + noise, 6, 2], rng, "relu", "sigmoid")
        cond = rng.uniform(0.5, 2.0, size=(4, 2))
    elif mode == "conditional":
        part = Partition([[0], [1, 2]])
        net = init_params([1 + noise, 6, 2], rng, "relu", "sigmoid")
        cond = rng.standard_normal((4, 1))
    else:
        part = Partition([[0], [1, 2]])
        net = init_params([noise, 6, 3], rng, "relu", "sigmoid")
        cond = None
    low, high = (-2.0, 3.0) if mode != "mask" else (0.0, 1.0)
    gen = Generator(_jitter_biases(net, rng), part, noise, mode, low, high)
    seed = int(rng.integers(1 << 31))
    up = rng.standard_normal((4, part.total_dim))

    def f():
        return float(np.sum(up * gen.sample(4, np.random.default_rng(seed), cond)))

    f()
    grads = gen.backward(up)
    num = central_diff(f, net.params())
    return f"generator ({mode})", rel_err(grads, num)


def _grad_head_training(rng, i):
    sn = bool(i % 2)
    net = _jitter_biases(init_params([2, 6, 1], rng, "leaky_relu", "identity", spectral_norm=sn), rng)
    real = rng.standard_normal((4, 2))
    fake = rng.standard_normal((4, 2)) + 1.0
    batch = np.concatenate([real, fake])

    def f():
        logits = net_forward(net, batch)[0][:, 0]
        return disc_loss(logits[:4], logits[4:])

    logits = net_forward(net, batch)[0][:, 0]
    gr, gf = disc_loss_grad(logits[:4], logits[4:])
    grads, _ = net_backward(net, np.concatenate([gr, gf])[:, None])
    num = central_diff(f, net.params())
    return f"discriminator loss wrt params sn={sn}", rel_err(grads, num)


_GRAD_CASES = (_grad_dense, _grad_dense, _grad_losses, _grad_combination, _grad_generator, _grad_head_training)


def check_gradients(rng, n=50, tol=1e-4):
    worst, where = 0.0, ""
    for i in range(n):
        label, err = _GRAD_CASES[i % len(_GRAD_CASES)](rng, i // len(_GRAD_CASES) + i)
        if err > worst:
            worst, where = err, label
    return _result("gradients", worst, tol, f"{n} configurations, worst: {where}")


def check_mask_constraint(rng, n=10_000):
    m = rng.uniform(-5, 5, size=(n, 2)) * 10.0 ** rng.integers(-3, 4, size=(n, 1))
    b = rng.uniform(0, 1, size=(n, 2))
    out = mask_sources(b, m)
    bad = int(np.count_nonzero(out[:, :2] + out[:, 2:] != m))
    return CheckResult("mask_sum_constraint", float(bad), 1.0, bad == 0, f"{bad} of {n} rows not bitwise equal")


def run_all(seed=0, sn_iterations=1000):
    """Every check on one seeded stream.

    ``sn_iterations`` is generous on purpose: a random matrix whose top two
    singular values nearly coincide can need far more than 100 power
    iterations to pin the top one to 1e-3.
    """
    rng = np.random.default_rng(seed)
    results = [check_combination_identity(rng)]
    results += check_oracle_exactness(rng)
    results += check_mode_reductions(rng)
    results.append(check_h_bijection(rng))
    results.append(check_spectral_norm(rng, iterations=sn_iterations))
    results.append(check_gradients(rng))
    results.append(check_mask_constraint(rng))
    return results
