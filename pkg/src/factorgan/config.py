"""YAML experiment and sweep configuration.

Errors name the offending field and, when the file is available, its line::

    config.yaml:7: train.lr: must be a positive number
"""
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .data import AdditiveMixtureTask, DatasetSplitSpec, GaussianMixture, GaussianTask, PairedCategoricalTask
from .training import MODEL_KINDS, TrainConfig

SCHEMA_VERSION = 1

TASK_KINDS = ("paired_categorical", "gaussian", "additive_mixture")


class ConfigError(ValueError):
    def __init__(self, message, field_path=None, line=None, source=None):
        self.field_path = field_path
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        prefix = f"{field_path}: " if field_path else ""
        super().__init__(f"{where}{prefix}{message}")


def _key_lines(node, path=(), out=None):
    """Map dotted field paths to 1-based line numbers from a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            sub = path + (str(key.value),)
            out[".".join(sub)] = key.start_mark.line + 1
            _key_lines(value, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            sub = path + (str(i),)
            out[".".join(sub)] = value.start_mark.line + 1
            _key_lines(value, sub, out)
    return out


class _Source:
    """Parsed YAML plus the line lookup used to decorate errors."""

    def __init__(self, text, name=None):
        self.name = name
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})",
                              line=mark.line + 1 if mark else None, source=name) from exc
        self.lines = _key_lines(node) if node is not None else {}
        if self.data is None:
            self.data = {}
        if not isinstance(self.data, dict):
            raise ConfigError("top level must be a mapping", line=1, source=name)

    def error(self, path, message):
        line = None
        parts = path.split(".")
        while parts and line is None:
            line = self.lines.get(".".join(parts))
            parts.pop()
        return ConfigError(message, path, line, self.name)


def _check_keys(src, mapping, allowed, path):
    if not isinstance(mapping, dict):
        raise src.error(path, "must be a mapping")
    for key in mapping:
        if key not in allowed:
            sub = f"{path}.{key}" if path else str(key)
            raise src.error(sub, f"unknown field (expected one of: {', '.join(sorted(allowed))})")


def _task_from(src, spec, path="task"):
    _check_keys(src, spec, {"kind", "class_count", "coupling", "radius", "std", "mean", "cov", "partition",
                            "source_a", "source_v"}, path)
    kind = spec.get("kind")
    if kind not in TASK_KINDS:
        raise src.error(f"{path}.kind", f"must be one of {', '.join(TASK_KINDS)}, got {kind!r}")
    try:
        if kind == "paired_categorical":
            kw = {k: spec[k] for k in ("class_count", "coupling", "radius", "std") if k in spec}
            return PairedCategoricalTask(**kw)
        if kind == "gaussian":
            for k in ("mean", "cov", "partition"):
                if k not in spec:
                    raise src.error(f"{path}.{k}", "required for a gaussian task")
            return GaussianTask(np.asarray(spec["mean"], float), np.asarray(spec["cov"], float), spec["partition"])
        kw = {}
        for k in ("source_a", "source_v"):
            if k in spec:
                _check_keys(src, spec[k], {"means", "std", "weights"}, f"{path}.{k}")
                kw[k] = GaussianMixture(spec[k]["means"], float(spec[k]["std"]), spec[k].get("weights"))
        return AdditiveMixtureTask(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise src.error(path, str(exc)) from exc


def _train_from(src, spec, path="train"):
    names = set(TrainConfig.field_names())
    _check_keys(src, spec, names, path)
    kw = dict(spec)
    for key in ("gen_hidden", "disc_hidden", "output_range"):
        if key in kw and kw[key] is not None:
            kw[key] = tuple(kw[key])
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        bad = next((n for n in sorted(names, key=len, reverse=True) if msg.startswith(n)), None)
        raise src.error(f"{path}.{bad}" if bad else path, msg) from exc


def _split_from(src, spec, path="split"):
    _check_keys(src, spec, {"n_total", "n_paired", "unpaired_counts"}, path)
    for k in ("n_total", "n_paired"):
        if not isinstance(spec.get(k), int) or isinstance(spec.get(k), bool):
            raise src.error(f"{path}.{k}", "must be an integer")
    out = DatasetSplitSpec(spec["n_total"], spec["n_paired"], spec.get("unpaired_counts"))
    try:
        out.counts(2)
    except ValueError as exc:
        raise src.error(f"{path}.n_paired", str(exc)) from exc
    return out


@dataclass
class ExperimentConfig:
    task_spec: dict
    train: TrainConfig
    split: DatasetSplitSpec
    out_dir: str = None
    schema_version: int = SCHEMA_VERSION
    task: object = field(default=None, repr=False, compare=False)

    def to_dict(self):
        train = asdict(self.train)
        for key in ("gen_hidden", "disc_hidden", "output_range"):
            if train[key] is not None:
                train[key] = list(train[key])
        out = {
            "schema_version": self.schema_version,
            "task": dict(self.task_spec),
            "split": {k: v for k, v in asdict(self.split).items() if v is not None},
            "train": train,
        }
        if self.out_dir is not None:
            out["out_dir"] = self.out_dir
        return out

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_changes(self, seed=None, n_paired=None, model_kind=None):
        train = self.train
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if model_kind is not None:
            changes["model_kind"] = model_kind
        if changes:
            train = TrainConfig(**{**asdict(train), **changes})
        split = self.split
        if n_paired is not None:
            split = DatasetSplitSpec(split.n_total, int(n_paired), split.unpaired_counts)
        return ExperimentConfig(self.task_spec, train, split, self.out_dir, self.schema_version, self.task)


def _check_version(src, data):
    version = data.get("schema_version")
    if version is None:
        raise src.error("schema_version", "missing (this build reads version 1)")
    if version != SCHEMA_VERSION:
        raise src.error("schema_version", f"unsupported version {version!r} (this build reads {SCHEMA_VERSION})")


def _experiment_from(src, data, prefix=""):
    def p(name):
        return f"{prefix}{name}"

    _check_keys(src, data, {"schema_version", "task", "train", "split", "out_dir"}, prefix.rstrip("."))
    for key in ("task", "split"):
        if key not in data:
            raise src.error(p(key), "required")
    task = _task_from(src, data["task"], p("task"))
    train = _train_from(src, data.get("train") or {}, p("train"))
    split = _split_from(src, data["split"], p("split"))
    return ExperimentConfig(dict(data["task"]), train, split, data.get("out_dir"), SCHEMA_VERSION, task)


def parse_experiment(text, source=None):
    src = _Source(text, source)
    _check_version(src, src.data)
    return _experiment_from(src, src.data)


def load_experiment(path):
    with open(path, encoding="utf-8") as fh:
        return parse_experiment(fh.read(), str(path))


@dataclass
class SweepSpec:
    base: ExperimentConfig
    n_paired: list
    model_kinds: list
    seeds: list

    def cells(self):
        """``(n_paired, model_kind, seed)`` in run order."""
        return [(n, k, s) for n in self.n_paired for k in self.model_kinds for s in self.seeds]

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "base": self.base.to_dict(),
            "n_paired": list(self.n_paired),
            "model_kinds": list(self.model_kinds),
            "seeds": list(self.seeds),
        }


def parse_sweep(text, source=None, seed=None):
    src = _Source(text, source)
    data = src.data
    _check_version(src, data)
    _check_keys(src, data, {"schema_version", "base", "n_paired", "model_kinds", "repeats", "seeds"}, "")
    if "base" not in data:
        raise src.error("base", "required")
    base_data = dict(data["base"]) if isinstance(data["base"], dict) else data["base"]
    if isinstance(base_data, dict):
        base_data.setdefault("schema_version", SCHEMA_VERSION)
    base = _experiment_from(src, base_data, "base.")
    n_paired = data.get("n_paired", [base.split.n_paired])
    if not isinstance(n_paired, list) or not n_paired:
        raise src.error("n_paired", "must be a non-empty list")
    for i, n in enumerate(n_paired):
        if not isinstance(n, int) or not 0 <= n <= base.split.n_total:
            raise src.error(f"n_paired.{i}", f"must be an integer in [0, n_total={base.split.n_total}]")
    kinds = data.get("model_kinds", [base.train.model_kind])
    if not isinstance(kinds, list) or not kinds:
        raise src.error("model_kinds", "must be a non-empty list")
    for i, k in enumerate(kinds):
        if k not in MODEL_KINDS:
            raise src.error(f"model_kinds.{i}", f"must be one of {', '.join(MODEL_KINDS)}")
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise src.error("seeds", "must be a non-empty list of integers")
        if seed is not None:
            seeds = [seed + s - seeds[0] for s in seeds]
    else:
        repeats = data.get("repeats", 1)
        if not isinstance(repeats, int) or repeats < 1:
            raise src.error("repeats", "must be a positive integer")
        first = base.train.seed if seed is None else seed
        seeds = [first + r for r in range(repeats)]
    return SweepSpec(base, list(n_paired), list(kinds), list(seeds))


def load_sweep(path, seed=None):
    with open(path, encoding="utf-8") as fh:
        return parse_sweep(fh.read(), str(path), seed)

