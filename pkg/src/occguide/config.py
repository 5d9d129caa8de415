"""Toolkit configuration: one dataclass per subsystem, loaded from TOML."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import tomli
import tomli_w

from .detection import NmsParams, OracleDetectorParams
from .evaluation import EvalSettings
from .exceptions import FormatError, InvalidArgumentError
from .netmath import LossWeights
from .occlusion_map import MapParams
from .region_select import SelectParams
from .scenes import OcclusionBins, SceneGenParams

__all__ = ["TppSettings", "NetSettings", "Config", "load_config", "dataclass_from_mapping", "load_section"]


@dataclass(frozen=True)
class TppSettings:
    n_sub: int = 3
    fine_size: Tuple[int, int] = (1024, 1024)
    coarse_size: Tuple[int, int] = (1024, 1024)
    augment_min_visible: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "fine_size", tuple(int(v) for v in self.fine_size))
        object.__setattr__(self, "coarse_size", tuple(int(v) for v in self.coarse_size))
        if self.n_sub < 0:
            raise InvalidArgumentError("n_sub must be >= 0")
        if len(self.fine_size) != 2 or min(self.fine_size) <= 0 or len(self.coarse_size) != 2 or min(self.coarse_size) <= 0:
            raise InvalidArgumentError("fine_size and coarse_size must be two positive integers")
        if not 0.0 <= self.augment_min_visible <= 1.0:
            raise InvalidArgumentError("augment_min_visible must lie in [0, 1]")


@dataclass(frozen=True)
class NetSettings:
    p_stages: int = 2
    stage_widths: Tuple[int, ...] = (8, 8)
    lk_kernel: int = 13
    smooth_l1_beta: float = 1.0
    thr_occ: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(v) for v in self.stage_widths))
        if self.p_stages < 0:
            raise InvalidArgumentError("p_stages must be >= 0")
        if self.lk_kernel < 1 or self.lk_kernel % 2 == 0:
            raise InvalidArgumentError("lk_kernel must be a positive odd integer")
        if not self.smooth_l1_beta > 0 or not self.thr_occ > 0:
            raise InvalidArgumentError("smooth_l1_beta and thr_occ must be positive")


@dataclass(frozen=True)
class Config:
    seed: int = 0
    map: MapParams = MapParams()
    select: SelectParams = SelectParams()
    nms: NmsParams = NmsParams()
    loss: LossWeights = LossWeights()
    net: NetSettings = NetSettings()
    oracle: OracleDetectorParams = OracleDetectorParams()
    tpp: TppSettings = TppSettings()
    eval: EvalSettings = EvalSettings()
    synth: SceneGenParams = SceneGenParams()
    visdrone_occlusion: Dict[str, float] = field(
        default_factory=lambda: {"0": 0.0, "1": 0.25, "2": 0.75}
    )

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def occlusion_table(self) -> Dict[int, float]:
        return {int(k): float(v) for k, v in self.visdrone_occlusion.items()}


def _to_plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value) if f.init}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _to_plain(v) for k, v in value.items()}
    return value


def _coerce(default, raw, where: str):
    if dataclasses.is_dataclass(default):
        if not isinstance(raw, Mapping):
            raise FormatError(f"{where}: expected a table")
        return dataclass_from_mapping(type(default), raw, where)
    if isinstance(default, enum.Enum):
        try:
            return type(default)(raw)
        except ValueError:
            valid = [m.value for m in type(default)]
            raise FormatError(f"{where}: {raw!r} is not one of {valid}") from None
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise FormatError(f"{where}: expected true/false, got {raw!r}")
        return raw
    if isinstance(default, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise FormatError(f"{where}: expected an integer, got {raw!r}")
        return raw
    if isinstance(default, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise FormatError(f"{where}: expected a number, got {raw!r}")
        return float(raw)
    if isinstance(default, tuple):
        if not isinstance(raw, list):
            raise FormatError(f"{where}: expected an array, got {raw!r}")
        return tuple(raw)
    if isinstance(default, dict):
        if not isinstance(raw, Mapping):
            raise FormatError(f"{where}: expected a table")
        return dict(raw)
    return raw


def dataclass_from_mapping(cls, raw: Mapping[str, Any], where: str = ""):
    """Build ``cls`` from a mapping, starting from its defaults; unknown keys are errors."""
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in raw.items():
        loc = f"{where}.{key}" if where else key
        if key not in names:
            raise FormatError(f"{loc}: unknown key; expected one of {sorted(names)}")
        kwargs[key] = _coerce(getattr(defaults, key), value, loc)
    try:
        return dataclasses.replace(defaults, **kwargs)
    except InvalidArgumentError as exc:
        raise FormatError(f"{where or cls.__name__}: {exc}") from None


def _read_toml(path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    except tomli.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> Config:
    """Load a TOML config over the defaults; ``overrides`` is merged on top per section."""
    raw: Dict[str, Any] = _read_toml(path) if path else {}
    for section, values in (overrides or {}).items():
        if isinstance(values, Mapping):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    cfg = dataclass_from_mapping(Config, raw)
    for level, ratio in cfg.occlusion_table.items():
        if not 0.0 <= ratio <= 1.0:
            raise FormatError(f"visdrone_occlusion.{level}: ratio must lie in [0, 1]")
    return cfg


def load_section(path, cls, section: str):
    """Load one parameter dataclass from a TOML file.

    The keys may sit at the top level or under ``[section]``.
    """
    raw = _read_toml(path)
    if section in raw and isinstance(raw[section], Mapping):
        raw = raw[section]
    return dataclass_from_mapping(cls, raw, section)
