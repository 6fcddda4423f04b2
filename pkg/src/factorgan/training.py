"""Losses, samplers and update schedules for GAN and factorised-discriminator training."""
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import evaluation
from .checkpoint import save_checkpoint
from .data import AdditiveMixtureTask, DatasetSplitSpec, GaussianTask, PairedCategoricalTask, make_dataset_split
from .factorization import MODES, HierarchySpec, SubDiscriminatorSet, combine_with_grad, sigmoid
from .nn import AdamState, adam_step, init_params, net_backward, net_forward

MODEL_KINDS = ("gan_baseline", "factorgan")


class EmptyPoolError(ValueError):
    """A head needs samples from a pool that has none (or too few)."""


def softplus(z):
    return np.logaddexp(0.0, z)


def _nonempty(*arrays):
    for a in arrays:
        if len(a) == 0:
            raise ValueError("loss needs a non-empty batch")


def disc_loss(real_logits, fake_logits):
    """``-(mean log sigma(real) + mean log(1 - sigma(fake)))`` in softplus form."""
    real_logits = np.asarray(real_logits, dtype=np.float64)
    fake_logits = np.asarray(fake_logits, dtype=np.float64)
    _nonempty(real_logits, fake_logits)
    return float(np.mean(softplus(-real_logits)) + np.mean(softplus(fake_logits)))


def disc_loss_grad(real_logits, fake_logits):
    """Gradients of :func:`disc_loss` w.r.t. each real and fake logit."""
    return -sigmoid(-real_logits) / len(real_logits), sigmoid(fake_logits) / len(fake_logits)


def gen_loss(fake_combined_logits):
    """Non-saturating generator loss ``-mean log sigma(logit)``."""
    z = np.asarray(fake_combined_logits, dtype=np.float64)
    _nonempty(z)
    return float(np.mean(softplus(-z)))


def gen_loss_grad(fake_combined_logits):
    z = np.asarray(fake_combined_logits, dtype=np.float64)
    return -sigmoid(-z) / len(z)


def _blocks_or_columns(blocks, width):
    if blocks is None:
        return [np.arange(width)]
    return [np.asarray(b, dtype=np.intp) for b in blocks]


def independent_real_batch(paired_pool, batch_size, rng, blocks):
    """Joint-shaped rows whose column blocks each come from an independently drawn pool row."""
    pool = np.asarray(paired_pool, dtype=np.float64)
    if len(pool) < 2:
        raise EmptyPoolError(f"need at least 2 paired rows to decouple parts, have {len(pool)}")
    out = np.empty((batch_size, pool.shape[1]))
    for block in _blocks_or_columns(blocks, pool.shape[1]):
        rows = rng.integers(0, len(pool), size=batch_size)
        out[:, block] = pool[np.ix_(rows, block)]
    return out


def shuffle_fake_parts(generated_batch, rng, blocks):
    """Permute every block but the first across rows, independently per block."""
    batch = np.asarray(generated_batch, dtype=np.float64)
    if len(batch) < 2:
        raise ValueError("need at least 2 generated rows to shuffle parts")
    out = batch.copy()
    for block in _blocks_or_columns(blocks, batch.shape[1])[1:]:
        perm = rng.permutation(len(batch))
        out[:, block] = batch[np.ix_(perm, block)]
    return out


class NetHead:
    """A trainable logit head: a dense net with one output plus its Adam state.

    Inputs are multiplied by ``input_scale`` before the net sees them, so a
    spectrally normalized head is at most ``input_scale``-Lipschitz in data
    units.
    """

    def __init__(self, net, lr=1e-4, input_scale=1.0):
        if net.out_dim != 1 or net.output_activation != "identity":
            raise ValueError("a head needs a single identity output")
        if not input_scale > 0:
            raise ValueError("input_scale must be positive")
        self.net = net
        self.input_scale = float(input_scale)
        self.adam = AdamState.for_params(net.params(), lr=lr)

    def __call__(self, x):
        return net_forward(self.net, np.asarray(x, dtype=np.float64) * self.input_scale)[0][:, 0]

    def value_and_grad(self, x):
        logits, _ = net_forward(self.net, np.asarray(x, dtype=np.float64) * self.input_scale)
        _, gx = net_backward(self.net, np.ones_like(logits))
        return logits[:, 0], gx * self.input_scale

    def train_step(self, real, fake):
        """Advance spectral norm, take one Adam step on the discriminator loss, return that loss."""
        self.net.refresh_spectral_norm()
        batch = np.concatenate([real, fake], axis=0) * self.input_scale
        logits, _ = net_forward(self.net, batch)
        lr_, lf = logits[:len(real), 0], logits[len(real):, 0]
        loss = disc_loss(lr_, lf)
        gr, gf = disc_loss_grad(lr_, lf)
        grads, _ = net_backward(self.net, np.concatenate([gr, gf])[:, None])
        adam_step(self.net.params(), grads, self.adam)
        return loss


@dataclass
class Generator:
    """Dense generator emitting a full joint sample.

    ``mode`` is ``joint`` (noise only), ``conditional`` (conditioning part plus
    noise, emits the remaining parts) or ``mask`` (mixture plus noise, emits a
    mask ``b`` and the sources ``(b * m, m - b * m)``). The sigmoid output is
    mapped affinely onto ``[low, high]`` outside mask mode.
    """

    net: object
    partition: object
    noise_dim: int = 50
    mode: str = "joint"
    low: np.ndarray = 0.0
    high: np.ndarray = 1.0
    adam: AdamState = None
    _last: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState.for_params(self.net.params())
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        self._cond_dims = list(self.partition.parts[0])
        self._out_dims = sorted(d for p in self.partition.parts[1:] for d in p)

    @property
    def needs_conditioning(self):
        return self.mode in ("conditional", "mask")

    def sample(self, n, rng, cond=None):
        z = rng.standard_normal((n, self.noise_dim))
        d = self.partition.total_dim
        if self.mode == "joint":
            _, s = net_forward(self.net, z)
            x = self.low + (self.high - self.low) * s
        elif self.mode == "conditional":
            _, s = net_forward(self.net, np.concatenate([cond, z], axis=1))
            x = np.empty((n, d))
            x[:, self._cond_dims] = cond
            x[:, self._out_dims] = self.low + (self.high - self.low) * s
        elif self.mode == "mask":
            _, b = net_forward(self.net, np.concatenate([cond, z], axis=1))
            x = mask_sources(b, cond)
        else:
            raise ValueError(f"unknown generator mode {self.mode!r}")
        self._last = (cond,)
        return x

    def backward(self, grad_x):
        """Parameter gradients for ``sum(grad_x * x)`` of the last :meth:`sample`."""
        if self.mode == "joint":
            g = grad_x * (self.high - self.low)
        elif self.mode == "conditional":
            g = grad_x[:, self._out_dims] * (self.high - self.low)
        else:
            m = self._last[0]
            w = m.shape[1]
            g = m * (grad_x[:, :w] - grad_x[:, w:])
        grads, _ = net_backward(self.net, g)
        return grads


def mask_sources(mask, mixture):
    """Sources ``(b * m, m - b * m)`` whose floating-point sum is exactly ``m``.

    ``v = m - b*m`` is rounded once, then ``a = m - v``. For ``b`` in [0, 1]
    either ``v >= m/2`` (so ``m - v`` is exact) or ``b*m >= m/2`` (so ``v``
    itself was exact and ``a == b*m``); both ways ``a + v == m`` bitwise.
    """
    v = mixture - mask * mixture
    a = mixture - v
    return np.concatenate([a, v], axis=1)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 25
    disc_updates_per_gen_update: int = 2
    total_gen_steps: int = 2000
    seed: int = 0
    noise_dim: int = 50
    model_kind: str = "factorgan"
    combination_mode: str = "joint"
    gen_hidden: tuple = (128, 128)
    disc_hidden: tuple = (128, 128)
    spectral_norm: bool = True
    power_iterations: int = 1
    eval_interval: int = 100
    n_eval: int = 2000
    checkpoint_interval: int = 0
    hierarchy: list = None
    output_range: tuple = None
    disc_input_scale: float = None
    record_wall_time: bool = False

    def __post_init__(self):
        for name in ("batch_size", "disc_updates_per_gen_update", "noise_dim", "power_iterations",
                     "eval_interval", "n_eval"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_gen_steps < 0 or self.checkpoint_interval < 0:
            raise ValueError("step counts must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.disc_input_scale is not None and not self.disc_input_scale > 0:
            raise ValueError("disc_input_scale must be positive")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.combination_mode not in MODES:
            raise ValueError(f"combination_mode must be one of {MODES}")
        self.gen_hidden = tuple(int(h) for h in self.gen_hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def default_output_range(task):
    if isinstance(task, PairedCategoricalTask):
        r = task.radius + 4.0 * task.std
        return (-r, r)
    if isinstance(task, GaussianTask):
        sd = np.sqrt(np.diag(task.cov))
        return (task.mean - 5.0 * sd, task.mean + 5.0 * sd)
    return (0.0, 1.0)


def default_input_scale(task):
    """Head input multiplier used when the config leaves it unset.

    At unit scale, spectrally normalized heads on the paired task barely move
    their logits in 2000 steps and the generator collapses onto a few classes;
    10 was the smallest tried value that trained reliably.
    """
    if isinstance(task, PairedCategoricalTask):
        return 10.0
    return 1.0


def make_head(in_dim, cfg, rng, input_scale=1.0):
    net = init_params([in_dim, *cfg.disc_hidden, 1], rng, "leaky_relu", "identity",
                      spectral_norm=cfg.spectral_norm, power_iterations=cfg.power_iterations)
    return NetHead(net, cfg.lr, input_scale)


def build_heads(partition, cfg, rng, input_scale=None):
    """Fresh trainable heads for the configured model kind and combination mode."""
    scale = input_scale or cfg.disc_input_scale or 1.0

    def head(width):
        return make_head(width, cfg, rng, scale)

    d = partition.total_dim
    if cfg.model_kind == "gan_baseline":
        return SubDiscriminatorSet(partition, "gan", joint_head=head(d))
    mode = cfg.combination_mode
    parts = partition.parts
    if mode == "hierarchical":
        if cfg.hierarchy is None:
            raise ValueError("hierarchical mode needs a hierarchy in the config")
        hier = HierarchySpec([[list(s) for s in subs] for subs in cfg.hierarchy])
        hier.validate(partition)
        gm = [[head(len(s)) for s in subs] for subs in hier.sub_parts]
        gp = [head(len(p)) if len(subs) > 1 else None for p, subs in zip(parts, hier.sub_parts)]
        gq = [head(len(p)) if len(subs) > 1 else None for p, subs in zip(parts, hier.sub_parts)]
        return SubDiscriminatorSet(partition, mode, None, head(d), head(d),
                                   hierarchy=hier, group_marginal=gm, group_p=gp, group_q=gq)
    if mode == "autoregressive":
        marg = [head(len(p)) for p in parts]
        widths = np.cumsum([len(p) for p in parts])
        pp = [None] + [head(int(w)) for w in widths[1:]]
        pq = [None] + [head(int(w)) for w in widths[1:]]
        return SubDiscriminatorSet(partition, mode, marg, prefix_p=pp, prefix_q=pq)
    marg = [head(len(p)) for p in parts]
    if mode == "conditional":
        marg[0] = None
    p_dep = None if mode == "independent_marginals" else head(d)
    return SubDiscriminatorSet(partition, mode, marg, p_dep, head(d))


def build_generator(task, cfg, rng):
    part = task.partition
    d = part.total_dim
    if isinstance(task, AdditiveMixtureTask):
        w = task.part_dim
        net = init_params([w + cfg.noise_dim, *cfg.gen_hidden, w], rng, "relu", "sigmoid")
        gen = Generator(net, part, cfg.noise_dim, "mask")
    elif cfg.combination_mode == "conditional" and cfg.model_kind == "factorgan":
        c = len(part.parts[0])
        lo, hi = cfg.output_range or default_output_range(task)
        out_dims = sorted(dd for p in part.parts[1:] for dd in p)
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,))[out_dims]
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,))[out_dims]
        net = init_params([c + cfg.noise_dim, *cfg.gen_hidden, d - c], rng, "relu", "sigmoid")
        gen = Generator(net, part, cfg.noise_dim, "conditional", lo, hi)
    else:
        lo, hi = cfg.output_range or default_output_range(task)
        net = init_params([cfg.noise_dim, *cfg.gen_hidden, d], rng, "relu", "sigmoid")
        gen = Generator(net, part, cfg.noise_dim, "joint", lo, hi)
    gen.adam.lr = cfg.lr
    return gen


def conditioning_pool(data, generator):
    if generator.mode == "mask":
        return data.mixtures
    if generator.mode == "conditional":
        return data.marginal_pool(0)
    return None


def _draw(pool, n, rng):
    if pool is None or len(pool) == 0:
        raise EmptyPoolError("required sample pool is empty")
    return pool[rng.integers(0, len(pool), size=n)]


def _generate(generator, data, n, rng):
    cond = None
    if generator.needs_conditioning:
        cond = _draw(conditioning_pool(data, generator), n, rng)
    return generator.sample(n, rng, cond)


def train_discriminators_step(heads, generator, data, cfg, rng, observer=None):
    """One Adam step for every head; returns ``{head_name: loss}``.

    ``observer(name, real, fake)``, when given, sees each head's batches.
    """
    b = cfg.batch_size
    fake = _generate(generator, data, b, rng)
    losses = {}
    for f in heads.factors():
        if f.kind == "marginal":
            pool = data.marginal_pool(f.part)
            local = np.searchsorted(data.partition.parts[f.part], f.dims)
            real = _draw(pool, b, rng)[:, local]
            neg = fake[:, f.dims]
        elif f.kind == "joint":
            real = _draw(data.paired, b, rng)
            neg = fake
        elif f.kind == "p":
            if data.n_paired < 2:
                raise EmptyPoolError(f"{f.name} needs paired data, pool has {data.n_paired} rows")
            pool = data.paired[:, f.dims]
            real = _draw(pool, b, rng)
            neg = independent_real_batch(pool, b, rng, f.blocks)
        else:
            real = fake[:, f.dims]
            neg = shuffle_fake_parts(real, rng, f.blocks)
        if observer is not None:
            observer(f.name, real, neg)
        losses[f.name] = f.head.train_step(real, neg)
    return losses


def train_generator_step(heads, generator, data, cfg, rng):
    """One Adam step on the generator against the combined discriminator; returns the loss."""
    x = _generate(generator, data, cfg.batch_size, rng)
    logits, dlogit_dx = combine_with_grad(x, heads)
    loss = gen_loss(logits)
    grad_x = gen_loss_grad(logits)[:, None] * dlogit_dx
    grads = generator.backward(grad_x)
    adam_step(generator.net.params(), grads, generator.adam)
    return loss


@dataclass
class Model:
    generator: Generator
    heads: SubDiscriminatorSet

    def networks(self):
        return [self.generator.net] + [f.head.net for f in self.heads.factors()]

    def adam_states(self):
        return [self.generator.adam] + [f.head.adam for f in self.heads.factors()]

    def head_names(self):
        return [f.name for f in self.heads.factors()]


@dataclass
class TrainResult:
    model: Model
    data: object
    metrics: list
    disc_records: list
    gen_records: list


def rng_streams(seed):
    """Independent generators for data, initialisation, training and evaluation."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(4)]


def build_model(task, cfg, rng):
    gen = build_generator(task, cfg, rng)
    heads = build_heads(task.partition, cfg, rng, cfg.disc_input_scale or default_input_scale(task))
    return Model(gen, heads)


def training_loop(task, cfg, split_spec=None, split=None, checkpoint_dir=None, on_metrics=None,
                  observer=None):
    """Alternate discriminator and generator updates for ``cfg.total_gen_steps`` steps.

    Each generator step is preceded by ``cfg.disc_updates_per_gen_update``
    discriminator steps. Metrics are computed every ``cfg.eval_interval``
    generator steps and passed to ``on_metrics`` as they arrive.
    """
    data_rng, init_rng, train_rng, eval_rng = rng_streams(cfg.seed)
    if split is None:
        if split_spec is None:
            split_spec = DatasetSplitSpec(5000, 5000)
        split = make_dataset_split(task, split_spec, data_rng)
    model = build_model(task, cfg, init_rng)
    evaluator = evaluation.Evaluator(task, cfg.n_eval, eval_rng)
    metrics, disc_records, gen_records = [], [], []
    start = time.perf_counter()
    for step in range(1, cfg.total_gen_steps + 1):
        for _ in range(cfg.disc_updates_per_gen_update):
            losses = train_discriminators_step(model.heads, model.generator, split, cfg, train_rng, observer)
            disc_records.append({"gen_step": step, "losses": losses})
        g = train_generator_step(model.heads, model.generator, split, cfg, train_rng)
        gen_records.append({"step": step, "loss": g})
        if step % cfg.eval_interval == 0:
            wall = time.perf_counter() - start if cfg.record_wall_time else None
            rec = evaluator.record(step, model, split, g, disc_records[-1]["losses"], wall)
            metrics.append(rec)
            if on_metrics is not None:
                on_metrics(rec)
        if checkpoint_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(f"{checkpoint_dir}/step_{step:07d}.fgan", model.networks(), model.adam_states())
    if checkpoint_dir is not None:
        save_checkpoint(f"{checkpoint_dir}/final.fgan", model.networks(), model.adam_states())
    return TrainResult(model, split, metrics, disc_records, gen_records)


def train_ratio_head(head, sample_real, sample_fake, steps, batch_size, rng):
    """Fit a single head as a real-vs-fake classifier on two fixed samplers.

    ``sample_real(n, rng)`` and ``sample_fake(n, rng)`` return ``(n, dim)``
    batches. Returns the per-step losses.
    """
    losses = np.empty(steps)
    for i in range(steps):
        losses[i] = head.train_step(sample_real(batch_size, rng), sample_fake(batch_size, rng))
    return losses


def config_with(cfg, **changes):
    return replace(cfg, **changes)
