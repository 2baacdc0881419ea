"""Experiment configuration: INI sections plus ``section.key=value`` overrides.

Sections are ``[corpus]``, ``[scatter]``, ``[upstream]``, ``[downstream]`` and
``[train]``; keys mirror the fields of the corresponding config classes. Tuples
are written comma-separated. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, Optional

from .downstream import HFEConfig
from .errors import InvalidInput
from .scatter import ScatterConfig
from .trainer import TrainConfig
from .upstream import UpstreamConfig


@dataclass(frozen=True)
class CorpusConfig:
    classes: int = 8
    per_class: int = 40
    seed: int = 0


# Desk-scale defaults: 128-point targets, widths <= 64, high-sparsity inputs.
DESK_UPSTREAM = UpstreamConfig(encoder_widths=(32, 64), coarse_points=64, split_ratios=(1, 1, 2),
                               target_points=128, decoder_hidden=128, split_hidden=32)
DESK_DOWNSTREAM = HFEConfig(levels=3, k_per_level=(8, 16, 24), level_widths=(32, 48, 64),
                            head_dim=64, classes=8, seg_hidden=32)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    scatter: ScatterConfig = field(default_factory=lambda: ScatterConfig.preset("high"))
    upstream: UpstreamConfig = DESK_UPSTREAM
    downstream: HFEConfig = DESK_DOWNSTREAM
    train: TrainConfig = field(default_factory=TrainConfig)

    def with_overrides(self, overrides: Iterable[str]) -> "ExperimentConfig":
        values: Dict[str, Dict[str, str]] = {}
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise InvalidInput(f"override must look like section.key=value, got {item!r}")
            values.setdefault(section, {})[name] = value.strip()
        return _apply(self, values)

    def dumps(self) -> str:
        cp = configparser.ConfigParser()
        for section in SECTIONS:
            obj = getattr(self, section)
            cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


SECTIONS = ("corpus", "scatter", "upstream", "downstream", "train")


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "yes" if v else "no"
    return str(v)


def _parse(raw: str, current, where: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise InvalidInput(f"{where}: cannot parse {raw!r}") from None
    return raw


def _apply(cfg: ExperimentConfig, values: Dict[str, Dict[str, str]]) -> ExperimentConfig:
    updates = {}
    for section, kv in values.items():
        if section not in SECTIONS:
            raise InvalidInput(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name for f in fields(obj)}
        changes = {}
        for key, raw in kv.items():
            if key not in known:
                raise InvalidInput(f"unknown key {section}.{key}")
            changes[key] = _parse(raw, getattr(obj, key), f"{section}.{key}")
        updates[section] = replace(obj, **changes) if changes else obj
    return replace(cfg, **updates)


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise InvalidInput(f"{path}: {exc}") from None
        cfg = _apply(cfg, {s: dict(cp[s]) for s in cp.sections()})
    return cfg.with_overrides(overrides)
