"""Metrics: class-dependency metric, Fréchet distance, ratio error and chi-squared tests."""
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .data import PairedCategoricalTask
from .factorization import SubDiscriminatorSet, combine, sigmoid


def classify_parts(samples, task):
    """Nearest class mean for every part of every sample; ties go to the lower class."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    means = task.class_means()
    labels = []
    for idx in task.partition.index_arrays():
        xi = samples[:, idx]
        d2 = np.sum((xi[:, None, :] - means[None, :, :]) ** 2, axis=2)
        labels.append(np.argmin(d2, axis=1))
    return np.stack(labels, axis=1)


@dataclass
class ClassTable:
    joint: np.ndarray

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=np.float64)
        if np.any(self.joint < 0) or not np.isclose(self.joint.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("class table must be non-negative and sum to 1")

    @classmethod
    def from_labels(cls, labels, class_count):
        labels = np.asarray(labels)
        counts = np.zeros((class_count, class_count))
        np.add.at(counts, (labels[:, 0], labels[:, 1]), 1.0)
        return cls(counts / counts.sum())

    @property
    def top(self):
        return self.joint.sum(axis=1)

    @property
    def bottom(self):
        return self.joint.sum(axis=0)

    def dependency_ratios(self):
        """Joint probability over the product of marginals, per cell."""
        return self.joint / np.outer(self.top, self.bottom)


class DependencyMetric(NamedTuple):
    value: float
    degenerate: bool


def dependency_metric(real_table, gen_table):
    """Mean absolute difference of joint-to-marginal-product ratios over all cells.

    Undefined when either table has an empty marginal class; that case comes
    back as ``DependencyMetric(nan, True)`` rather than being smoothed over.
    """
    for t in (real_table, gen_table):
        if np.any(t.top == 0) or np.any(t.bottom == 0):
            return DependencyMetric(float("nan"), True)
    diff = np.abs(real_table.dependency_ratios() - gen_table.dependency_ratios())
    return DependencyMetric(float(diff.mean()), False)


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -1e-6:
        warnings.warn(f"clamping eigenvalue {vals.min():.3g} of a covariance product to 0", RuntimeWarning)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T, np.clip(vals, 0.0, None)


def frechet_from_moments(mu1, cov1, mu2, cov2):
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    root1, _ = _psd_sqrt(cov1)
    # Tr((C1 C2)^1/2) = Tr((C1^1/2 C2 C1^1/2)^1/2), which is symmetric PSD
    _, vals = _psd_sqrt(root1 @ cov2 @ root1)
    fd = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * np.sum(np.sqrt(vals)))
    return max(fd, 0.0)


def frechet_distance(samples_a, samples_b):
    """Fréchet distance between Gaussian fits of two sample sets."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples on each side")
    return frechet_from_moments(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


def ratio_mae(model_heads, oracle_heads, test_points):
    """Mean |sigma(model logit) - sigma(oracle logit)| per head and for the combination.

    Accepts two :class:`SubDiscriminatorSet` objects with matching structure,
    or two bare heads (then only ``"combined"`` is reported).
    """
    x = np.asarray(test_points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not isinstance(model_heads, SubDiscriminatorSet):
        return {"combined": float(np.mean(np.abs(sigmoid(model_heads(x)) - sigmoid(oracle_heads(x)))))}
    out = {}
    for fm, fo in zip(model_heads.factors(), oracle_heads.factors()):
        if fm.name != fo.name:
            raise ValueError(f"head sets differ: {fm.name} vs {fo.name}")
        xs = x[:, fm.dims]
        out[fm.name] = float(np.mean(np.abs(sigmoid(fm.head(xs)) - sigmoid(fo.head(xs)))))
    out["combined"] = float(np.mean(np.abs(sigmoid(combine(x, model_heads)) - sigmoid(combine(x, oracle_heads)))))
    return out


class Chi2Result(NamedTuple):
    statistic: float
    dof: int
    p_value: float
    reject: bool
    valid: bool


def chi2_independence(class_pairs, class_count=None, alpha=0.01):
    """Pearson chi-squared test of independence on the table of label pairs.

    Expected counts come from the product of the empirical marginals. Empty
    rows/columns are dropped before counting degrees of freedom; ``valid`` is
    False when any remaining expected count is below 5.
    """
    pairs = np.asarray(class_pairs)
    c = class_count or int(pairs.max()) + 1
    table = np.zeros((c, c))
    np.add.at(table, (pairs[:, 0], pairs[:, 1]), 1.0)
    table = table[table.sum(1) > 0][:, table.sum(0) > 0]
    n = table.sum()
    expected = np.outer(table.sum(1), table.sum(0)) / n
    stat = float(np.sum((table - expected) ** 2 / expected))
    dof = (table.shape[0] - 1) * (table.shape[1] - 1)
    p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return Chi2Result(stat, dof, p, p < alpha, bool(np.all(expected >= 5)))


def _head_rank(name):
    for rank, prefix in enumerate(("d_marg", "d_p", "d_q", "d_joint")):
        if name.startswith(prefix):
            return rank
    return 4


def head_column_order(names):
    """Marginal head losses first, then p-dependency, q-dependency and joint heads."""
    return sorted(names, key=_head_rank)


@dataclass
class MetricsRecord:
    step: int
    gen_loss: float
    head_losses: dict
    dependency_metric: float = None
    frechet_per_part: list = field(default_factory=list)
    ratio_mae: float = None
    wall_time: float = None

    def columns(self):
        cols = ["step", "gen_loss", *head_column_order(self.head_losses), "d_dep"]
        cols += [f"frechet_part_{i + 1}" for i in range(len(self.frechet_per_part))]
        return cols + ["ratio_mae", "wall_time"]

    def values(self):
        heads = [self.head_losses[k] for k in head_column_order(self.head_losses)]
        vals = [self.step, self.gen_loss, *heads, self.dependency_metric]
        return vals + list(self.frechet_per_part) + [self.ratio_mae, self.wall_time]


class Evaluator:
    """Scores generator samples against a fixed real reference set.

    The dependency metric uses the task's exact class table as the real side.
    """

    def __init__(self, task, n_eval, rng):
        self.task = task
        self.n_eval = n_eval
        self.rng = rng
        self.reference = task.sample_joint(n_eval, rng)

    def generated(self, model, data):
        from .training import _generate

        return _generate(model.generator, data, self.n_eval, self.rng)

    def record(self, step, model, data, gen_loss_value, head_losses, wall_time=None):
        x = self.generated(model, data)
        part = self.task.partition
        fds = [frechet_distance(self.reference[:, list(p)], x[:, list(p)]) for p in part.parts]
        ddep = None
        if isinstance(self.task, PairedCategoricalTask):
            gen_table = ClassTable.from_labels(classify_parts(x, self.task), self.task.class_count)
            res = dependency_metric(ClassTable(self.task.joint_class_table()), gen_table)
            ddep = None if res.degenerate else res.value
        return MetricsRecord(step, gen_loss_value, dict(head_losses), ddep, fds, None, wall_time)
