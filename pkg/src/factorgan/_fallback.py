"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

ACT_IDENTITY, ACT_RELU, ACT_LEAKY, ACT_SIGMOID = 0, 1, 2, 3


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def dense_forward(x, w, b, act, slope):
    if w.shape[1] != x.shape[1] or b.shape[0] != w.shape[0]:
        raise ValueError("dense_forward: shape mismatch")
    z = x @ w.T + b
    if act == ACT_RELU:
        a = np.where(z > 0, z, 0.0)
    elif act == ACT_LEAKY:
        a = np.where(z > 0, z, slope * z)
    elif act == ACT_SIGMOID:
        a = _sigmoid(z)
    else:
        a = z.copy()
    return z, a


def dense_backward(x, w, z, a, grad_a, act, slope):
    if grad_a.shape != z.shape:
        raise ValueError("dense_backward: upstream gradient shape mismatch")
    if act == ACT_RELU:
        gz = np.where(z > 0, grad_a, 0.0)
    elif act == ACT_LEAKY:
        gz = np.where(z > 0, grad_a, slope * grad_a)
    elif act == ACT_SIGMOID:
        gz = grad_a * a * (1.0 - a)
    else:
        gz = grad_a.copy()
    return gz.T @ x, gz.sum(axis=0), gz @ w


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def power_iteration(w, u, v, n_iter):
    for _ in range(n_iter):
        nv = w.T @ u
        nrm = np.linalg.norm(nv)
        if nrm == 0.0:
            raise ZeroDivisionError("power iteration hit a zero vector")
        v[:] = nv / nrm
        nu = w @ v
        nrm = np.linalg.norm(nu)
        if nrm == 0.0:
            raise ZeroDivisionError("power iteration hit a zero vector")
        u[:] = nu / nrm
    return float(u @ (w @ v))
