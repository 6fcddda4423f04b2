"""Splitting a joint variable into parts and recombining sub-discriminator logits.

A sub-discriminator ("head") is anything with

* ``head(x) -> (n,)`` raw logits for a batch ``x`` of shape ``(n, dim)``, and
* ``head.value_and_grad(x) -> (logits, dlogit/dx)`` with the gradient of each
  sample's logit w.r.t. that sample, shape ``(n, dim)``.

All combinations are sums of signed logits; probabilities only appear when a
caller applies :func:`sigmoid`.
"""
from dataclasses import dataclass, field

import numpy as np

MODES = ("joint", "conditional", "independent_marginals", "hierarchical", "autoregressive")


class PartitionError(ValueError):
    pass


class ConfigurationError(ValueError):
    """Head set does not match what its combination mode requires."""


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def h_map(a):
    """Map a discriminator probability in [0, 1) to a density ratio a / (1 - a)."""
    a = np.asarray(a, dtype=np.float64)
    if np.any((a < 0) | (a >= 1)):
        raise ValueError("h_map is defined on [0, 1)")
    out = a / (1.0 - a)
    return float(out) if out.ndim == 0 else out


def h_inv(r):
    """Inverse of :func:`h_map`: ratio r >= 0 to r / (1 + r)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("h_inv is defined on [0, inf)")
    out = r / (1.0 + r)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Partition:
    """Ordered, disjoint parts covering dimensions ``0 .. total_dim - 1``."""

    parts: tuple

    def __init__(self, parts):
        parts = tuple(tuple(int(i) for i in p) for p in parts)
        if len(parts) < 2:
            raise PartitionError("a partition needs at least two parts")
        if any(len(p) == 0 for p in parts):
            raise PartitionError("every part must be non-empty")
        flat = [i for p in parts for i in p]
        if sorted(flat) != list(range(len(flat))):
            raise PartitionError(f"parts {parts} must disjointly cover 0..{len(flat) - 1}")
        object.__setattr__(self, "parts", tuple(tuple(sorted(p)) for p in parts))

    @property
    def total_dim(self):
        return sum(len(p) for p in self.parts)

    @property
    def k(self):
        return len(self.parts)

    def index_arrays(self):
        return [np.asarray(p, dtype=np.intp) for p in self.parts]

    def split(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.total_dim:
            raise PartitionError(f"expected last dim {self.total_dim}, got {x.shape[-1]}")
        return [x[..., idx] for idx in self.index_arrays()]

    def join(self, parts):
        parts = [np.asarray(p, dtype=np.float64) for p in parts]
        if len(parts) != self.k:
            raise PartitionError(f"expected {self.k} parts, got {len(parts)}")
        lead = parts[0].shape[:-1]
        out = np.empty(lead + (self.total_dim,))
        for idx, p in zip(self.index_arrays(), parts):
            if p.shape[-1] != len(idx):
                raise PartitionError("part width does not match the partition")
            out[..., idx] = p
        return out


def split(x, partition):
    return partition.split(x)


@dataclass
class HierarchySpec:
    """Sub-partition of each top-level part (absolute dimension indices)."""

    sub_parts: list

    def validate(self, partition):
        if len(self.sub_parts) != partition.k:
            raise PartitionError("need one sub-partition per top-level part")
        for i, (part, subs) in enumerate(zip(partition.parts, self.sub_parts)):
            flat = [d for s in subs for d in s]
            if not subs or any(len(s) == 0 for s in subs):
                raise PartitionError(f"part {i}: empty sub-part")
            if sorted(flat) != list(part):
                raise PartitionError(f"part {i}: sub-parts {subs} do not cover {part} disjointly")


@dataclass
class Factor:
    """One signed logit term of a combination, with the data it needs for training.

    ``kind`` is ``marginal``, ``p``, ``q`` or ``joint``. ``dims`` index into the
    joint sample; for dependency factors ``blocks`` index into ``x[:, dims]``
    and describe which column groups are decoupled for the negative class.
    ``part`` is the top-level part holding ``dims`` (marginal factors only).
    """

    name: str
    kind: str
    sign: float
    dims: np.ndarray
    head: object
    blocks: list = None
    part: int = None


@dataclass
class SubDiscriminatorSet:
    """Heads plus the combination mode that turns their logits into one.

    ``marginal[i]`` consumes part ``i``. Hierarchical sets use
    ``group_marginal[i][j]`` / ``group_p[i]`` / ``group_q[i]`` instead of
    ``marginal``; autoregressive sets add ``prefix_p[i]`` / ``prefix_q[i]``
    (index 0 unused) over parts ``0..i``. ``joint_head`` is the single
    discriminator of a plain GAN.
    """

    partition: Partition
    mode: str = "joint"
    marginal: list = None
    p_dep: object = None
    q_dep: object = None
    hierarchy: HierarchySpec = None
    group_marginal: list = None
    group_p: list = None
    group_q: list = None
    prefix_p: list = None
    prefix_q: list = None
    joint_head: object = None
    _factors: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in MODES and self.mode != "gan":
            raise ConfigurationError(f"unknown combination mode {self.mode!r}")
        self.validate()

    def validate(self):
        k = self.partition.k
        mode = self.mode
        if mode == "gan":
            if self.joint_head is None:
                raise ConfigurationError("gan mode needs a joint head")
            return
        if mode == "hierarchical":
            if self.hierarchy is None:
                raise ConfigurationError("hierarchical mode needs a HierarchySpec")
            self.hierarchy.validate(self.partition)
            gm = self.group_marginal or []
            if len(gm) != k or any(len(g) != len(s) for g, s in zip(gm, self.hierarchy.sub_parts)):
                raise ConfigurationError("group_marginal must match the hierarchy")
            for name in ("group_p", "group_q"):
                val = getattr(self, name)
                if val is None:
                    setattr(self, name, [None] * k)
                elif len(val) != k:
                    raise ConfigurationError(f"{name} needs one slot per part")
            for i, subs in enumerate(self.hierarchy.sub_parts):
                if len(subs) > 1 and (self.group_p[i] is None or self.group_q[i] is None):
                    raise ConfigurationError(f"part {i} has {len(subs)} sub-parts but no group dependency heads")
        else:
            if self.marginal is None or len(self.marginal) != k:
                raise ConfigurationError(f"need {k} marginal head slots")
            if mode == "conditional":
                if self.marginal[0] is not None:
                    raise ConfigurationError("conditional mode takes no marginal head for the conditioning part")
                if any(h is None for h in self.marginal[1:]):
                    raise ConfigurationError("missing marginal head for an output part")
            elif any(h is None for h in self.marginal):
                raise ConfigurationError("missing marginal head")
        if mode == "independent_marginals":
            if self.p_dep is not None:
                raise ConfigurationError("independent_marginals mode takes no p-dependency head")
            if self.q_dep is None:
                raise ConfigurationError("missing q-dependency head")
        elif mode == "autoregressive":
            for name in ("prefix_p", "prefix_q"):
                val = getattr(self, name)
                if val is None or len(val) != k or any(h is None for h in val[1:]):
                    raise ConfigurationError(f"{name} needs a head for every step after the first")
        elif self.p_dep is None or self.q_dep is None:
            raise ConfigurationError(f"{mode} mode needs both dependency heads")

    def factors(self):
        """Signed terms making up the combined logit, in a fixed order."""
        if self._factors is not None:
            return self._factors
        part_idx = self.partition.index_arrays()
        all_dims = np.arange(self.partition.total_dim)
        blocks = [np.asarray(p) for p in self.partition.parts]
        out = []
        if self.mode == "gan":
            out.append(Factor("d_joint", "joint", 1.0, all_dims, self.joint_head))
        elif self.mode == "hierarchical":
            out.append(Factor("d_p", "p", 1.0, all_dims, self.p_dep, blocks))
            out.append(Factor("d_q", "q", -1.0, all_dims, self.q_dep, blocks))
            for i, subs in enumerate(self.hierarchy.sub_parts):
                dims = part_idx[i]
                local = [np.searchsorted(dims, sorted(s)) for s in subs]
                if self.group_p[i] is not None:
                    out.append(Factor(f"d_p_{i + 1}", "p", 1.0, dims, self.group_p[i], local))
                if self.group_q[i] is not None:
                    out.append(Factor(f"d_q_{i + 1}", "q", -1.0, dims, self.group_q[i], local))
                for j, s in enumerate(subs):
                    out.append(Factor(f"d_marg_{i + 1}_{j + 1}", "marginal", 1.0,
                                      np.asarray(sorted(s), dtype=np.intp), self.group_marginal[i][j], part=i))
        elif self.mode == "autoregressive":
            out.append(Factor("d_marg_1", "marginal", 1.0, part_idx[0], self.marginal[0], part=0))
            for i in range(1, self.partition.k):
                prefix = np.concatenate(part_idx[:i + 1])
                n_prev = sum(len(p) for p in part_idx[:i])
                local = [np.arange(n_prev), np.arange(n_prev, len(prefix))]
                out.append(Factor(f"d_p_{i + 1}", "p", 1.0, prefix, self.prefix_p[i], local))
                out.append(Factor(f"d_q_{i + 1}", "q", -1.0, prefix, self.prefix_q[i], local))
                out.append(Factor(f"d_marg_{i + 1}", "marginal", 1.0, part_idx[i], self.marginal[i], part=i))
        else:
            if self.p_dep is not None:
                out.append(Factor("d_p", "p", 1.0, all_dims, self.p_dep, blocks))
            out.append(Factor("d_q", "q", -1.0, all_dims, self.q_dep, blocks))
            for i, h in enumerate(self.marginal):
                if h is not None:
                    out.append(Factor(f"d_marg_{i + 1}", "marginal", 1.0, part_idx[i], h, part=i))
        self._factors = out
        return out

    def heads(self):
        return {f.name: f.head for f in self.factors()}


def _require(heads, mode):
    if heads.mode != mode:
        raise ConfigurationError(f"expected a {mode} head set, got {heads.mode}")


def _rows(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != dim:
        raise PartitionError(f"expected inputs of width {dim}, got {x.shape[1]}")
    return x


def _marginal_sum(parts, heads_list):
    total = 0.0
    for xi, head in zip(parts, heads_list):
        if head is not None:
            total = total + head(xi)
    return total


def logit_sum(d_p, d_q, d_marg):
    """``d_p - d_q + sum(d_marg)``: the combined logit from raw head outputs."""
    total = np.asarray(d_p, dtype=np.float64) - np.asarray(d_q, dtype=np.float64)
    for d in d_marg:
        total = total + d
    return total


def combined_logit(x, heads):
    """``d_p(x) - d_q(x) + sum_i d_i(x^i)`` for a joint head set."""
    _require(heads, "joint")
    x = _rows(x, heads.partition.total_dim)
    parts = heads.partition.split(x)
    return logit_sum(heads.p_dep(x), heads.q_dep(x), [h(xi) for h, xi in zip(heads.marginal, parts)])


def conditional_combined_logit(x1, x2, heads):
    """Combination without a marginal head on the conditioning input ``x1``.

    ``x1`` fills partition part 0; ``x2`` fills the remaining parts in
    ascending dimension order.
    """
    _require(heads, "conditional")
    p = heads.partition
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, len(p.parts[0]))
    x2 = np.asarray(x2, dtype=np.float64).reshape(len(x1), -1)
    x = np.empty((len(x1), p.total_dim))
    x[:, list(p.parts[0])] = x1
    x[:, sorted(d for part in p.parts[1:] for d in part)] = x2
    parts = p.split(x)
    return heads.p_dep(x) - heads.q_dep(x) + _marginal_sum(parts[1:], heads.marginal[1:])


def independent_combined_logit(x, heads):
    """``-d_q(x) + sum_i d_i(x^i)``: the real parts are assumed independent."""
    _require(heads, "independent_marginals")
    x = _rows(x, heads.partition.total_dim)
    parts = heads.partition.split(x)
    return -heads.q_dep(x) + _marginal_sum(parts, heads.marginal)


def hierarchical_combined_logit(x, heads):
    """Top-level dependency pair, plus per-part group dependency pairs and sub-marginals."""
    _require(heads, "hierarchical")
    x = _rows(x, heads.partition.total_dim)
    total = heads.p_dep(x) - heads.q_dep(x)
    for i, (part, subs) in enumerate(zip(heads.partition.parts, heads.hierarchy.sub_parts)):
        xi = x[:, list(part)]
        if heads.group_p[i] is not None:
            total = total + heads.group_p[i](xi)
        if heads.group_q[i] is not None:
            total = total - heads.group_q[i](xi)
        for j, s in enumerate(subs):
            total = total + heads.group_marginal[i][j](x[:, sorted(s)])
    return total


def autoregressive_combined_logit(x, heads):
    """``d_1(x^1) + sum_{i>=2} [d_p_i(x^1..x^i) - d_q_i(x^1..x^i) + d_i(x^i)]``."""
    _require(heads, "autoregressive")
    x = _rows(x, heads.partition.total_dim)
    parts = heads.partition.parts
    total = heads.marginal[0](x[:, list(parts[0])])
    for i in range(1, len(parts)):
        prefix = x[:, [d for p in parts[:i + 1] for d in p]]
        total = total + heads.prefix_p[i](prefix) - heads.prefix_q[i](prefix) + heads.marginal[i](x[:, list(parts[i])])
    return total


_COMBINERS = {
    "joint": combined_logit,
    "independent_marginals": independent_combined_logit,
    "hierarchical": hierarchical_combined_logit,
    "autoregressive": autoregressive_combined_logit,
}


def combine(x, heads):
    """Combined logit for any mode, taking the full joint sample."""
    if heads.mode == "gan":
        return heads.joint_head(_rows(x, heads.partition.total_dim))
    if heads.mode == "conditional":
        x = _rows(x, heads.partition.total_dim)
        rest = sorted(d for part in heads.partition.parts[1:] for d in part)
        return conditional_combined_logit(x[:, list(heads.partition.parts[0])], x[:, rest], heads)
    return _COMBINERS[heads.mode](x, heads)


def combine_with_grad(x, heads):
    """Combined logit and its per-sample gradient w.r.t. the joint input.

    Each head's input gradient is scattered back onto the dimensions it reads.
    """
    x = _rows(x, heads.partition.total_dim)
    total = np.zeros(len(x))
    grad = np.zeros_like(x)
    for f in heads.factors():
        val, g = f.head.value_and_grad(x[:, f.dims])
        total += f.sign * val
        grad[:, f.dims] += f.sign * g
    return total, grad


def product_of_ratios(d_p, d_q, d_marg):
    """Combined probability through explicit density ratios.

    ``h_inv(h(sigma(d_p)) / h(sigma(d_q)) * prod_i h(sigma(d_i)))`` evaluated in
    probability space, as a cross-check on the logit-space sum.
    """
    ratio = h_map(sigmoid(d_p)) / h_map(sigmoid(d_q))
    for d in d_marg:
        ratio = ratio * h_map(sigmoid(d))
    return h_inv(ratio)
