"""Experiment configuration: YAML in, validated frozen dataclasses out.

Omitted seeds are derived from the master ``seed`` when the document is parsed,
and :func:`emit_config` writes them back explicitly, so an emitted config
reproduces the run on its own.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import types
import typing
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import yaml

from .chansim import ArrayGeometry, ScenarioConfig
from .errors import ConfigError, CsilabError
from .refiner import RefinerConfig
from .trainer import TrainingConfig

__all__ = [
    "Mode",
    "Framework",
    "DatasetSpec",
    "EvalSettings",
    "OracleSettings",
    "ExperimentConfig",
    "parse_config",
    "emit_config",
    "config_digest",
    "derive_seed",
]


class Mode(str, enum.Enum):
    SS = "SS"
    DS = "DS"


class Framework(str, enum.Enum):
    SSLCF = "SSLCF"
    MSLCF = "MSLCF"


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 8000
    n_val: int = 1000
    n_test: int = 1000
    n_sites: int = 1


@dataclass(frozen=True)
class EvalSettings:
    users: int = 4
    snr_db: tuple[float, ...] = (0.0, 10.0, 20.0)
    drops: int = 200


@dataclass(frozen=True)
class OracleSettings:
    max_iters: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple[ScenarioConfig, ...]
    bits: tuple[int, ...] = (8,)
    framework: Framework = Framework.SSLCF
    mode: Mode = Mode.SS
    seed: int = 0
    rvq_seed: int = 0
    output_dir: str = "out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def scenario(self, env_id: int) -> ScenarioConfig:
        for sc in self.scenarios:
            if sc.env_id == env_id:
                return sc
        raise KeyError(env_id)


def derive_seed(master: int, *tags: int) -> int:
    """Independent 63-bit seed for the stream named by ``tags``."""
    state = np.random.SeedSequence(int(master), spawn_key=tuple(int(t) for t in tags)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & (2**63 - 1)


_SEED_TAGS = {"scenario": 1, "rvq": 2, "refiner": 3, "training": 4}

_TOP_KEYS = {"scenarios", "bits", "framework", "mode", "seed", "rvq_seed", "output_dir",
             "dataset", "refiner", "training", "oracle", "eval"}


def _fail(path, msg):
    raise ConfigError(path, msg)


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(value, inner, path)
    if tp is bool:
        if not isinstance(value, bool):
            _fail(path, f"expected boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, f"expected integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, f"expected number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            _fail(path, f"expected string, got {value!r}")
        return value
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            _fail(path, f"expected one of {[m.value for m in tp]}, got {value!r}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            _fail(path, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            _fail(path, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    raise TypeError(f"unsupported config type {tp!r}")  # pragma: no cover


def _build(cls, data, path):
    if not isinstance(data, dict):
        _fail(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        _fail(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, hints[name], f"{path}.{name}" if path else name)
    missing = [n for n, f in fields.items() if n not in kwargs
               and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    if missing:
        _fail(f"{path}.{missing[0]}" if path else missing[0], "missing required key")
    try:
        return cls(**kwargs)
    except CsilabError as exc:
        _fail(path, str(exc))
    except (TypeError, ValueError) as exc:
        _fail(path, str(exc))


def parse_config(text: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment description.

    ``seed`` overrides the document's master seed before any derived seed is
    filled in.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        _fail("", "top level must be a mapping")
    doc = dict(doc)
    if "scenarios" not in doc:
        _fail("scenarios", "missing required key")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        _fail(unknown[0], "unknown key")
    if seed is not None:
        doc["seed"] = seed
    master = doc.get("seed", 0)
    if isinstance(master, bool) or not isinstance(master, int) or master < 0:
        _fail("seed", f"expected non-negative integer, got {master!r}")

    scenarios = doc["scenarios"]
    if not isinstance(scenarios, list) or not scenarios:
        _fail("scenarios", "need at least one scenario")
    filled = []
    for i, sc in enumerate(scenarios):
        if not isinstance(sc, dict):
            _fail(f"scenarios[{i}]", "expected a mapping")
        sc = dict(sc)
        sc.setdefault("env_id", i + 1)
        sc.setdefault("seed", derive_seed(master, _SEED_TAGS["scenario"], i))
        filled.append(sc)
    doc["scenarios"] = filled
    doc.setdefault("rvq_seed", derive_seed(master, _SEED_TAGS["rvq"]))
    for section in ("refiner", "training"):
        sub = doc.get(section) or {}
        if not isinstance(sub, dict):
            _fail(section, "expected a mapping")
        sub = dict(sub)
        sub.setdefault("seed", derive_seed(master, _SEED_TAGS[section]))
        doc[section] = sub

    # n_t follows from the array geometry
    geo = filled[0].get("geometry") or {}
    if isinstance(geo, dict):
        n_t = int(geo.get("n_h", ArrayGeometry.n_h)) * int(geo.get("n_v", ArrayGeometry.n_v))
        if doc["refiner"].setdefault("n_t", n_t) != n_t:
            _fail("refiner.n_t", f"{doc['refiner']['n_t']} does not match the array ({n_t} elements)")

    cfg = _build(ExperimentConfig, doc, "")
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    ids = [sc.env_id for sc in cfg.scenarios]
    if len(set(ids)) != len(ids):
        _fail("scenarios", "env_id values must be unique")
    n_cs = {sc.n_c for sc in cfg.scenarios}
    if len(n_cs) != 1:
        _fail("scenarios", "all scenarios must share one array geometry size")
    if cfg.framework is Framework.MSLCF:
        if len(cfg.scenarios) < 2:
            _fail("scenarios", "MSLCF needs at least two scenarios")
        if cfg.mode is not Mode.DS:
            _fail("mode", "MSLCF uses dual-side deployment (mode: DS)")
    if not cfg.bits:
        _fail("bits", "need at least one feedback bit count")
    for i, b in enumerate(cfg.bits):
        if not 1 <= b <= 24:
            _fail(f"bits[{i}]", "must lie in [1, 24]")
    ds = cfg.dataset
    for name in ("n_train", "n_val", "n_test"):
        if getattr(ds, name) < 0:
            _fail(f"dataset.{name}", "must be >= 0")
    if ds.n_sites < 1:
        _fail("dataset.n_sites", "must be >= 1")
    if cfg.eval.users < 1 or cfg.eval.drops < 1:
        _fail("eval", "users and drops must be >= 1")
    if cfg.oracle.max_iters < 1:
        _fail("oracle.max_iters", "must be >= 1")


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical YAML text; ``parse_config(emit_config(c)) == c``."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical YAML; the output directory does not take part."""
    text = emit_config(dataclasses.replace(cfg, output_dir=""))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
