"""Time the compiled kernels against the numpy fallback.

Each kernel runs at the shapes one training step actually uses (batch 25,
hidden width 128), and one short end-to-end training run is timed per
backend. Outputs of the two backends are compared on the same inputs.

    python benchmarks/bench_kernels.py --repeat 2000
"""
import argparse
import time
import timeit

import numpy as np

from factorgan import backend
from factorgan.data import DatasetSplitSpec, PairedCategoricalTask
from factorgan.training import TrainConfig, training_loop

LEAKY = 2


def kernel_cases(rng, batch, width):
    x = rng.normal(size=(batch, width))
    w = rng.normal(size=(width, width)) / np.sqrt(width)
    b = rng.normal(size=width)
    z = x @ w.T + b
    a = np.where(z > 0, z, 0.2 * z)
    grad = rng.normal(size=z.shape)
    p = rng.normal(size=width * width)
    g = rng.normal(size=p.shape)
    u0 = rng.normal(size=width)
    u0 /= np.linalg.norm(u0)
    v0 = rng.normal(size=width)
    v0 /= np.linalg.norm(v0)

    def forward(k):
        return k.dense_forward(x, w, b, LEAKY, 0.2)

    def backward(k):
        return k.dense_backward(x, w, z, a, grad, LEAKY, 0.2)

    # buffers are reused so the timing is the update, not allocation; the
    # values drift across calls, so the diff check uses fresh copies below
    bufs = {}

    def adam(k, fresh=False):
        if fresh or k not in bufs:
            bufs[k] = (p.copy(), np.zeros_like(p), np.zeros_like(p))
        pp, m, v = bufs[k]
        k.adam_update(pp, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 1)
        return pp

    def power(k):
        u, v = u0.copy(), v0.copy()
        return k.power_iteration(w, u, v, 1)

    return {"dense_forward": forward, "dense_backward": backward, "adam_update": adam,
            "power_iteration": power}


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def time_training(name, steps):
    backend.use(name)
    cfg = TrainConfig(total_gen_steps=steps, eval_interval=steps, n_eval=500)
    start = time.perf_counter()
    training_loop(PairedCategoricalTask(), cfg, DatasetSplitSpec(1000, 250))
    return time.perf_counter() - start


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000, help="calls per kernel timing")
    ap.add_argument("--batch", type=int, default=25)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--train-steps", type=int, default=200, help="generator steps in the end-to-end timing")
    args = ap.parse_args(argv)

    names = backend.available()
    if "cython" not in names:
        print("compiled extension not importable; only the numpy fallback can be timed")
    cases = kernel_cases(np.random.default_rng(0), args.batch, args.width)
    print(f"{'kernel':<18}" + "".join(f"{n + ' us/call':>18}" for n in names) + f"{'speedup':>10}{'max diff':>12}")
    for kname, fn in cases.items():
        per_call = {}
        for n in names:
            k = backend.get(n)
            per_call[n] = min(timeit.repeat(lambda: fn(k), number=args.repeat, repeat=3)) / args.repeat * 1e6
        row = f"{kname:<18}" + "".join(f"{per_call[n]:>18.2f}" for n in names)
        if len(names) == 2:
            kw = {"fresh": True} if kname == "adam_update" else {}
            diff = max_diff(fn(backend.get("cython"), **kw), fn(backend.get("python"), **kw))
            row += f"{per_call['python'] / per_call['cython']:>10.2f}{diff:>12.1e}"
        print(row)

    previous = backend.NAME
    try:
        wall = {n: time_training(n, args.train_steps) for n in names}
    finally:
        backend.use(previous)
    line = ", ".join(f"{n} {wall[n]:.2f} s" for n in names)
    print(f"training run ({args.train_steps} generator steps): {line}")
    if len(names) == 2:
        print(f"end-to-end speedup: {wall['python'] / wall['cython']:.2f}x")


if __name__ == "__main__":
    main()
