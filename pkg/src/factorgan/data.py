"""Synthetic target distributions with exact samplers and, where possible, densities."""
from dataclasses import dataclass, field

import numpy as np

from .factorization import HierarchySpec, Partition, PartitionError, SubDiscriminatorSet

_LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefiniteError(ValueError):
    pass


def _cholesky(cov):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise NotPositiveDefiniteError("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("covariance is not positive definite") from exc


def gaussian_log_density(x, mean, cov):
    """Multivariate normal log-density of each row of ``x`` via Cholesky."""
    chol = _cholesky(cov)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = x - np.asarray(mean, dtype=np.float64)
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (len(chol) * _LOG_2PI + logdet + maha)


@dataclass
class PairedCategoricalTask:
    """Two 2-D parts, each an isotropic Gaussian around one of C circle points.

    The bottom class equals the top class with probability ``coupling`` and is
    otherwise uniform over the other C - 1 classes.
    """

    class_count: int = 10
    coupling: float = 0.9
    radius: float = 3.0
    std: float = 0.25
    kind: str = field(default="paired_categorical", init=False)

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must be a probability")

    @property
    def partition(self):
        return Partition([[0, 1], [2, 3]])

    @property
    def part_dim(self):
        return 2

    def class_means(self):
        angles = 2.0 * np.pi * np.arange(self.class_count) / self.class_count
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def joint_class_table(self):
        c = self.class_count
        off = (1.0 - self.coupling) / (c * (c - 1))
        table = np.full((c, c), off)
        np.fill_diagonal(table, self.coupling / c)
        return table

    def sample_classes(self, n, rng):
        c = self.class_count
        top = rng.integers(0, c, size=n)
        same = rng.random(n) < self.coupling
        # uniform over the other c - 1 classes
        shift = rng.integers(1, c, size=n)
        bottom = np.where(same, top, (top + shift) % c)
        return top, bottom

    def emit(self, classes, rng):
        means = self.class_means()
        return means[classes] + self.std * rng.standard_normal((len(classes), 2))

    def sample_joint(self, n, rng, return_labels=False):
        top, bottom = self.sample_classes(n, rng)
        x = np.concatenate([self.emit(top, rng), self.emit(bottom, rng)], axis=1)
        return (x, np.stack([top, bottom], axis=1)) if return_labels else x

    def sample_marginal(self, part, n, rng):
        _check_part(self, part)
        return self.emit(rng.integers(0, self.class_count, size=n), rng)


@dataclass
class GaussianTask:
    mean: np.ndarray
    cov: np.ndarray
    partition: Partition
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if not isinstance(self.partition, Partition):
            self.partition = Partition(self.partition)
        if self.mean.shape != (self.partition.total_dim,) or self.cov.shape != (len(self.mean),) * 2:
            raise ValueError("mean/covariance do not match the partition")
        self._chol = _cholesky(self.cov)
        self.part_means = [self.mean[list(p)] for p in self.partition.parts]
        self.part_covs = [self.cov[np.ix_(p, p)] for p in self.partition.parts]

    @property
    def dim(self):
        return len(self.mean)

    def sub(self, dims):
        """Mean and covariance of the marginal over ``dims``."""
        dims = list(dims)
        return self.mean[dims], self.cov[np.ix_(dims, dims)]

    def sample_joint(self, n, rng):
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def sample_marginal(self, part, n, rng):
        _check_part(self, part)
        chol = np.linalg.cholesky(self.part_covs[part])
        return self.part_means[part] + rng.standard_normal((n, len(chol))) @ chol.T

    def log_density(self, x):
        return gaussian_log_density(x, self.mean, self.cov)

    def marginal_log_density(self, part, xi):
        _check_part(self, part)
        return gaussian_log_density(xi, self.part_means[part], self.part_covs[part])


@dataclass
class GaussianMixture:
    means: np.ndarray
    std: float
    weights: np.ndarray = None

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if self.weights is None:
            self.weights = np.full(len(self.means), 1.0 / len(self.means))
        self.weights = np.asarray(self.weights, dtype=np.float64)

    def sample(self, n, rng):
        comp = rng.choice(len(self.means), size=n, p=self.weights)
        return self.means[comp] + self.std * rng.standard_normal((n, self.means.shape[1]))

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        mu = self.mean()
        centred = self.means - mu
        between = (self.weights[:, None] * centred).T @ centred
        return between + self.std**2 * np.eye(self.means.shape[1])


def _default_accompaniment():
    return GaussianMixture([[2.0, 1.0], [1.0, 2.0]], 0.2)


def _default_vocals():
    return GaussianMixture([[0.5, 0.5], [1.5, 0.2]], 0.2)


@dataclass
class AdditiveMixtureTask:
    """Sources ``a`` and ``v`` drawn independently; the observed mixture is ``a + v``.

    Joint samples are ``(a, v)``. A generator for this task emits a mask ``b``
    and outputs ``(b * m, m - b * m)`` so the sources always sum to ``m``.
    """

    source_a: GaussianMixture = field(default_factory=_default_accompaniment)
    source_v: GaussianMixture = field(default_factory=_default_vocals)
    kind: str = field(default="additive_mixture", init=False)

    def __post_init__(self):
        if self.source_a.means.shape[1] != self.source_v.means.shape[1]:
            raise ValueError("sources must share a dimension")

    @property
    def part_dim(self):
        return self.source_a.means.shape[1]

    @property
    def partition(self):
        d = self.part_dim
        return Partition([list(range(d)), list(range(d, 2 * d))])

    def sample_joint(self, n, rng):
        a = self.source_a.sample(n, rng)
        v = self.source_v.sample(n, rng)
        return np.concatenate([a, v], axis=1)

    def sample_marginal(self, part, n, rng):
        _check_part(self, part)
        return (self.source_a if part == 0 else self.source_v).sample(n, rng)

    def sample_mixture(self, n, rng):
        return self.mixture_of(self.sample_joint(n, rng))

    def mixture_of(self, x):
        d = self.part_dim
        return x[:, :d] + x[:, d:]


def _check_part(task, part):
    if not 0 <= part < task.partition.k:
        raise PartitionError(f"part index {part} out of range for {task.partition.k} parts")


def sample_joint(task, n, rng):
    if n < 0:
        raise ValueError("sample count must be non-negative")
    return task.sample_joint(n, rng)


def sample_marginal(task, part, n, rng):
    return task.sample_marginal(part, n, rng)


def analytic_log_density(task, x):
    return task.log_density(x)


def analytic_marginal_log_density(task, part, xi):
    return task.marginal_log_density(part, xi)


class GaussianLogRatioHead:
    """Exact logit head: a signed sum of Gaussian log-densities on column subsets.

    ``terms`` is a list of ``(coef, mean, cov, cols)`` with ``cols`` indexing
    the head's input columns.
    """

    def __init__(self, terms, dim):
        self.dim = dim
        self.terms = []
        for coef, mean, cov, cols in terms:
            cols = np.asarray(cols, dtype=np.intp)
            self.terms.append((float(coef), np.asarray(mean, float), np.asarray(cov, float),
                               np.linalg.inv(cov), cols))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(len(x))
        for coef, mean, cov, _, cols in self.terms:
            out += coef * gaussian_log_density(x[:, cols], mean, cov)
        return out

    def value_and_grad(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        grad = np.zeros_like(x)
        for coef, mean, _, prec, cols in self.terms:
            grad[:, cols] -= coef * (x[:, cols] - mean) @ prec
        return self(x), grad


class ZeroHead:
    """Head that always returns logit 0."""

    def __call__(self, x):
        return np.zeros(len(np.atleast_2d(x)))

    def value_and_grad(self, x):
        x = np.atleast_2d(x)
        return np.zeros(len(x)), np.zeros_like(x, dtype=np.float64)


def _ratio_head(p_task, q_task, dims):
    """log p(x_dims) - log q(x_dims)."""
    pm, pc = p_task.sub(dims)
    qm, qc = q_task.sub(dims)
    cols = np.arange(len(dims))
    return GaussianLogRatioHead([(1.0, pm, pc, cols), (-1.0, qm, qc, cols)], len(dims))


def _dependency_head(task, dims, blocks):
    """log p(x_dims) - sum_b log p(x_block_b), blocks given as absolute dims."""
    m, c = task.sub(dims)
    pos = {d: i for i, d in enumerate(dims)}
    terms = [(1.0, m, c, np.arange(len(dims)))]
    for block in blocks:
        bm, bc = task.sub(block)
        terms.append((-1.0, bm, bc, [pos[d] for d in block]))
    return GaussianLogRatioHead(terms, len(dims))


def oracle_heads(p_task, q_task, mode="joint", hierarchy=None):
    """Exact sub-discriminator logits for two Gaussian tasks on a shared partition."""
    if p_task.partition != q_task.partition:
        raise PartitionError("oracle heads need matching partitions")
    part = p_task.partition
    parts = [list(p) for p in part.parts]
    all_dims = list(range(part.total_dim))
    marg = [_ratio_head(p_task, q_task, p) for p in parts]
    if mode == "joint":
        return SubDiscriminatorSet(part, "joint", marg,
                                   _dependency_head(p_task, all_dims, parts),
                                   _dependency_head(q_task, all_dims, parts))
    if mode == "conditional":
        return SubDiscriminatorSet(part, "conditional", [None] + marg[1:],
                                   _dependency_head(p_task, all_dims, parts),
                                   _dependency_head(q_task, all_dims, parts))
    if mode == "independent_marginals":
        return SubDiscriminatorSet(part, "independent_marginals", marg, None,
                                   _dependency_head(q_task, all_dims, parts))
    if mode == "hierarchical":
        if not isinstance(hierarchy, HierarchySpec):
            hierarchy = HierarchySpec(hierarchy)
        hierarchy.validate(part)
        gm, gp, gq = [], [], []
        for i, subs in enumerate(hierarchy.sub_parts):
            subs = [sorted(s) for s in subs]
            gm.append([_ratio_head(p_task, q_task, s) for s in subs])
            if len(subs) > 1:
                gp.append(_dependency_head(p_task, parts[i], subs))
                gq.append(_dependency_head(q_task, parts[i], subs))
            else:
                gp.append(None)
                gq.append(None)
        return SubDiscriminatorSet(part, "hierarchical", None,
                                   _dependency_head(p_task, all_dims, parts),
                                   _dependency_head(q_task, all_dims, parts),
                                   hierarchy=hierarchy, group_marginal=gm, group_p=gp, group_q=gq)
    if mode == "autoregressive":
        pp, pq = [None], [None]
        for i in range(1, len(parts)):
            prefix = [d for p in parts[:i + 1] for d in p]
            prev = [d for p in parts[:i] for d in p]
            pp.append(_dependency_head(p_task, prefix, [prev, parts[i]]))
            pq.append(_dependency_head(q_task, prefix, [prev, parts[i]]))
        return SubDiscriminatorSet(part, "autoregressive", marg, prefix_p=pp, prefix_q=pq)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class DatasetSplitSpec:
    n_total: int
    n_paired: int
    unpaired_counts: list = None

    def counts(self, k):
        if self.n_total < 0 or not 0 <= self.n_paired <= self.n_total:
            raise ValueError(f"need 0 <= n_paired <= n_total, got {self.n_paired}/{self.n_total}")
        if self.unpaired_counts is not None:
            if len(self.unpaired_counts) != k or min(self.unpaired_counts) < 0:
                raise ValueError("unpaired_counts needs one non-negative count per part")
            return list(self.unpaired_counts)
        rest = self.n_total - self.n_paired
        return [rest // k + (1 if i < rest % k else 0) for i in range(k)]


@dataclass
class DatasetSplit:
    paired: np.ndarray
    unpaired: list
    partition: Partition
    mixtures: np.ndarray = None

    @property
    def n_paired(self):
        return len(self.paired)

    def marginal_pool(self, part):
        """Paired projections of ``part`` stacked on its unpaired pool."""
        proj = self.paired[:, list(self.partition.parts[part])]
        return np.concatenate([proj, self.unpaired[part]], axis=0)


def make_dataset_split(task, spec, rng):
    part = task.partition
    counts = spec.counts(part.k)
    paired = task.sample_joint(spec.n_paired, rng)
    unpaired = [task.sample_marginal(i, n, rng) for i, n in enumerate(counts)]
    mixtures = None
    if isinstance(task, AdditiveMixtureTask):
        extra = task.sample_mixture(spec.n_total - spec.n_paired, rng)
        mixtures = np.concatenate([task.mixture_of(paired), extra], axis=0)
    return DatasetSplit(paired, unpaired, part, mixtures)
