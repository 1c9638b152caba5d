"""Run configuration: one INI file with five sections.

Section/key names are the contract; unknown keys are rejected so typos
fail loudly instead of silently running defaults. Parsing fills defaults,
checks cross-field invariants with path-qualified messages, and the
resulting tree serializes back to a canonical INI that reparses to an
identical tree.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from pathlib import Path

from .dataio import RawDataset, load_dataset
from .evaluate import StudentConfig
from .recover import RecoverConfig, RecoverError
from .squeeze import TeacherConfig


class ConfigError(RuntimeError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "mnist"
    classes: int = 10
    ipc: int = 10
    mean: tuple = (0.5,)
    std: tuple = (0.5,)
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_files: tuple = ()
    test_files: tuple = ()

    def data_files(self) -> list[str]:
        if self.kind == "mnist":
            return [self.train_images, self.train_labels,
                    self.test_images, self.test_labels]
        return list(self.train_files) + list(self.test_files)

    def load_train(self) -> RawDataset:
        if self.kind == "mnist":
            return load_dataset("mnist", self.train_images, self.train_labels,
                                self.classes, self.mean, self.std)
        return load_dataset("cifar10", list(self.train_files), None,
                            self.classes, self.mean, self.std)

    def load_test(self) -> RawDataset:
        if self.kind == "mnist":
            return load_dataset("mnist", self.test_images, self.test_labels,
                                self.classes, self.mean, self.std)
        return load_dataset("cifar10", list(self.test_files), None,
                            self.classes, self.mean, self.std)


@dataclass
class MetricsConfig:
    enabled: bool = True
    stride: int = 0  # 0 -> iterations // 20


@dataclass
class RunConfig:
    dataset: DatasetConfig
    teacher: TeacherConfig
    recover: RecoverConfig
    eval: StudentConfig
    metrics: MetricsConfig

    def as_tree(self) -> dict[str, dict[str, str]]:
        tree = {}
        for section, obj in self.sections():
            tree[section] = {
                f.name: _to_text(getattr(obj, f.name)) for f in fields(obj)
            }
        return tree

    def sections(self):
        return [("dataset", self.dataset), ("teacher", self.teacher),
                ("recover", self.recover), ("eval", self.eval),
                ("metrics", self.metrics)]

    def serialize(self) -> str:
        out = io.StringIO()
        for section, obj in self.sections():
            out.write(f"[{section}]\n")
            for f in fields(obj):
                out.write(f"{f.name} = {_to_text(getattr(obj, f.name))}\n")
            out.write("\n")
        return out.getvalue()


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "teacher": TeacherConfig,
    "recover": RecoverConfig,
    "eval": StudentConfig,
    "metrics": MetricsConfig,
}

# accepted spellings that mirror the published hyperparameter tables;
# serialization always emits the canonical field name
_ALIASES = {
    ("recover", "iteration"): "iterations",
}


def _to_text(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _from_text(path: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is tuple:
            if not text:
                return ()
            parts = [p.strip() for p in text.split(",")]
            try:
                return tuple(float(p) for p in parts)
            except ValueError:
                return tuple(parts)
        return text
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    objs = {}
    for section, cls in _SECTION_TYPES.items():
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                key = _ALIASES.get((section, key), key)
                if key not in known:
                    raise ConfigError(f"{section}.{key}: unknown key")
                f = known[key]
                ftype = {"str": str, "int": int, "float": float,
                         "bool": bool, "tuple": tuple}.get(
                             f.type if isinstance(f.type, str) else f.type.__name__,
                             str)
                kwargs[key] = _from_text(f"{section}.{key}", raw, ftype)
        try:
            objs[section] = cls(**kwargs)
        except (RecoverError, RuntimeError) as e:
            raise ConfigError(f"{section}: {e}") from e
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"{section}: unknown section")

    cfg = RunConfig(dataset=objs["dataset"], teacher=objs["teacher"],
                    recover=objs["recover"], eval=objs["eval"],
                    metrics=objs["metrics"])
    if not (parser.has_section("eval") and parser.has_option("eval", "flip_prob")):
        cfg.eval.flip_prob = default_flip_prob(cfg.dataset.kind)
    _cross_validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def _cross_validate(cfg: RunConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in ("mnist", "cifar10"):
        raise ConfigError(f"dataset.kind: unknown kind {ds.kind!r}")
    if ds.classes < 1:
        raise ConfigError("dataset.classes: must be >= 1")
    if ds.ipc < 0:
        raise ConfigError("dataset.ipc: must be >= 0")
    channels = 1 if ds.kind == "mnist" else 3
    if len(ds.mean) != channels or len(ds.std) != channels:
        raise ConfigError(
            f"dataset.mean/std: expected {channels} channel value(s), "
            f"got {len(ds.mean)}/{len(ds.std)}"
        )
    if any(s <= 0 for s in ds.std):
        raise ConfigError("dataset.std: entries must be positive")
    rc = cfg.recover
    if rc.iterations > 0 and rc.resolved_k() >= rc.iterations:
        raise ConfigError(
            f"recover.k ({rc.resolved_k()}) must be smaller than "
            f"recover.iterations ({rc.iterations})"
        )
    try:
        rc.validate(ds.ipc)
    except RecoverError as e:
        raise ConfigError(f"recover: {e}") from e
    if cfg.metrics.stride < 0:
        raise ConfigError("metrics.stride: must be >= 0")
    if cfg.teacher.epochs < 0:
        raise ConfigError("teacher.epochs: must be >= 0")
    if cfg.eval.epochs < 0:
        raise ConfigError("eval.epochs: must be >= 0")


def default_flip_prob(kind: str) -> float:
    """Horizontal flips destroy glyph identity; color sets keep them."""
    return 0.5 if kind == "cifar10" else 0.0
