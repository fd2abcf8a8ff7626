"""Experiment configuration: nested sections serialised as versioned YAML.

Grammar (``version: 1``)::

    version: 1                 # required, must equal CONFIG_VERSION
    run_id: <str>
    target:
      method: SimCLR|MoCo|BYOL|SimSiam|Supervised
      seed: <int>
      arch: {kind, input_shape, widths, embed_dim, with_projector, proj_dim, activation}
      dataset:
        source: synthetic|cifar
        synthetic: {classes, samples_per_class, image_size, generator, noise_sigma, seed, variant}
        cifar_train: <path or null>
        cifar_test: <path or null>
        test_fraction: <float>   # synthetic only
        split_seed: <int>
      hyper: {epochs, batch_size, lr, tau, moco_tau, moco_k, moco_momentum, byol_decay,
              policy: {n, m, op_set, rng_seed}}
      checkpoint: <path or null>  # load a trained target instead of pretraining
    attack:
      response_type: Label|Posterior|Embedding
      steal: {attack, tau, epochs, batch_size, lr, include_d_self,
              include_d_encoder_negatives, policy, seed, adapter}
      surrogate_arch: <arch mapping or null>   # null = same as target
      surrogate_data: {source: target-train|synthetic, shift, spec, fraction, seed}
      budget: <int or null>
      allow_partial: <bool>
    eval:
      probe: {epochs, lr, batch_size}
      seed: <int>
      probe_data: target-train|surrogate
    output: {dir: <path>}
    grid: {<dotted.key>: [values, ...]}   # optional, used by `grid`

Unknown keys are rejected. Every mapping may be partial; omitted keys take
the dataclass defaults below.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .augment import AugmentPolicy
from .data import SHIFTS, SyntheticSpec
from .evaluation import ProbeHyper
from .exceptions import ConfigurationError
from .nn.model import ArchSpec
from .pretrain import METHODS, PretrainHyper
from .steal import RESPONSE_TYPES, StealConfig

CONFIG_VERSION = 1


def _build(cls, data, where):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def _plain(obj):
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain({f.name: getattr(obj, f.name) for f in fields(obj)})
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass
class DatasetSection:
    source: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    cifar_train: str | None = None
    cifar_test: str | None = None
    test_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        self.synthetic = _build(SyntheticSpec, self.synthetic, "target.dataset.synthetic")
        if self.source not in ("synthetic", "cifar"):
            raise ConfigurationError(f"unknown dataset source {self.source!r}")
        if self.source == "cifar" and not (self.cifar_train and self.cifar_test):
            raise ConfigurationError("cifar source needs cifar_train and cifar_test paths")

    def to_dict(self):
        return _plain(dict(self.__dict__))


@dataclass
class TargetSection:
    method: str = "SimCLR"
    seed: int = 0
    arch: ArchSpec = field(default_factory=ArchSpec)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    hyper: PretrainHyper = field(default_factory=PretrainHyper)
    checkpoint: str | None = None

    def __post_init__(self):
        self.arch = _build(ArchSpec, self.arch, "target.arch")
        self.dataset = _build(DatasetSection, self.dataset, "target.dataset")
        self.hyper = _build(PretrainHyper, self.hyper, "target.hyper")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")

    def to_dict(self):
        return _plain(dict(self.__dict__))


@dataclass
class SurrogateData:
    source: str = "target-train"
    shift: str = "none"
    spec: SyntheticSpec | None = None
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.spec is not None:
            self.spec = _build(SyntheticSpec, self.spec, "attack.surrogate_data.spec")
        if self.source not in ("target-train", "synthetic"):
            raise ConfigurationError(f"unknown surrogate source {self.source!r}")
        if self.shift not in SHIFTS:
            raise ConfigurationError(f"unknown shift {self.shift!r}")
        if not 0 < self.fraction <= 1:
            raise ConfigurationError("fraction must lie in (0, 1]")
        if self.source == "target-train" and (self.shift != "none" or self.spec is not None):
            raise ConfigurationError("shift and spec apply only to the synthetic surrogate source")

    def to_dict(self):
        return _plain(dict(self.__dict__))


@dataclass
class AttackSection:
    response_type: str = "Embedding"
    steal: StealConfig = field(default_factory=StealConfig)
    surrogate_arch: ArchSpec | None = None
    surrogate_data: SurrogateData = field(default_factory=SurrogateData)
    budget: int | None = None
    allow_partial: bool = False

    def __post_init__(self):
        self.steal = _build(StealConfig, self.steal, "attack.steal")
        if self.surrogate_arch is not None:
            self.surrogate_arch = _build(ArchSpec, self.surrogate_arch, "attack.surrogate_arch")
        self.surrogate_data = _build(SurrogateData, self.surrogate_data, "attack.surrogate_data")
        if self.response_type not in RESPONSE_TYPES:
            raise ConfigurationError(f"unknown response type {self.response_type!r}")
        encoder_attack = self.steal.attack in ("ConvEncoder", "ContSteal")
        if encoder_attack != (self.response_type == "Embedding"):
            raise ConfigurationError(
                f"attack {self.steal.attack} is incompatible with {self.response_type} responses"
            )
        if self.budget is not None and self.budget < 1:
            raise ConfigurationError("budget must be a positive integer or null")

    def to_dict(self):
        return _plain(dict(self.__dict__))


@dataclass
class EvalSection:
    probe: ProbeHyper = field(default_factory=ProbeHyper)
    seed: int = 0
    probe_data: str = "target-train"

    def __post_init__(self):
        self.probe = _build(ProbeHyper, self.probe, "eval.probe")
        if self.probe_data not in ("target-train", "surrogate"):
            raise ConfigurationError(f"unknown probe_data {self.probe_data!r}")

    def to_dict(self):
        return _plain(dict(self.__dict__))


@dataclass
class OutputSection:
    dir: str = "runs/default"

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    run_id: str = "run"
    target: TargetSection = field(default_factory=TargetSection)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigurationError(f"config version {self.version!r} unsupported (expected {CONFIG_VERSION})")
        self.target = _build(TargetSection, self.target, "target")
        self.attack = _build(AttackSection, self.attack, "attack")
        self.eval = _build(EvalSection, self.eval, "eval")
        self.output = _build(OutputSection, self.output, "output")
        if not isinstance(self.grid, dict) or any(not isinstance(v, list) for v in self.grid.values()):
            raise ConfigurationError("grid must map dotted keys to lists of values")

    def to_dict(self):
        return _plain(dict(self.__dict__))

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be a mapping")
        if "version" not in data:
            raise ConfigurationError("config must declare 'version'")
        return _build(cls, data, "config")

    def hash(self):
        """SHA-256 of the canonical JSON form, ignoring output location."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed):
        """Copy with every training/eval seed set to ``seed`` (dataset seeds untouched)."""
        d = self.to_dict()
        d["target"]["seed"] = seed
        d["attack"]["steal"]["seed"] = seed
        d["attack"]["surrogate_data"]["seed"] = seed
        d["eval"]["seed"] = seed
        return ExperimentConfig.from_dict(d)

    def with_overrides(self, overrides):
        """Copy with ``{"a.b.c": value}`` assignments applied."""
        d = copy.deepcopy(self.to_dict())
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for part in parts[:-1]:
                if node.get(part) is None:
                    node[part] = {}
                node = node[part]
                if not isinstance(node, dict):
                    raise ConfigurationError(f"override {key!r} descends into a scalar")
            node[parts[-1]] = copy.deepcopy(value)
        return ExperimentConfig.from_dict(d)


def dumps(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def loads(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def load_config(path):
    with open(path) as fh:
        return loads(fh.read())


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
    return path
