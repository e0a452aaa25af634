"""
JSON configuration files.

A configuration file is a JSON object whose keys mirror the fields of
`RunConfig` and of the parameter dataclasses nested in it, for instance:

    {
      "mods": {
        "ladder": "5,1-7",
        "theta_m": 20,
        "ransac": {"inlier_threshold": 3.0, "seed": 42}
      },
      "threads": 4
    }

Keys that are not fields raise `ConfigError` naming the dotted path
(`mods.ransac.max_iters`), as do values of the wrong type and values
the dataclasses themselves reject.  Missing keys keep their defaults.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import (
    Any,
    Dict,
    Literal,
    Tuple,
    Type,
    TypeVar,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import numpy as np

from wxbs.evalkit import CORRECT_RADIUS
from wxbs.exceptions import ConfigError
from wxbs.losslab import LOSS_KINDS, TOY_POINTS
from wxbs.mods import ModsConfig
from wxbs.synth import StepConfig, default_steps

log = logging.getLogger(__name__)

_D = TypeVar("_D")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings.

    Attributes:
      thetas: error thresholds (pixels) of the recall curves.
      radius: correctness radius of the pair verdicts.
      maa_max: largest mAA threshold, degrees.
      maa_step: mAA threshold spacing, degrees.
    """

    thetas: Tuple[float, ...] = tuple(float(t) for t in range(1, 21))
    radius: float = CORRECT_RADIUS
    maa_max: float = 10.0
    maa_step: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        if not self.thetas or min(self.thetas) <= 0:
            raise ValueError("thetas must be a non-empty list of positive thresholds")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command can be configured with.

    Attributes:
      detect: the step `wxbs detect` runs on its single image.
      mods: matcher configuration for `wxbs mods` and `wxbs eval`.
      eval: evaluation settings.
      seed: overrides `mods.ransac.seed` when set.
      threads: worker processes (1 runs in-process).
      output: output path or prefix.
    """

    detect: StepConfig = field(default_factory=lambda: default_steps()[0])
    mods: ModsConfig = field(default_factory=ModsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: Union[int, None] = None
    threads: Union[int, None] = None
    output: Union[str, None] = None

    def __post_init__(self) -> None:
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")

    def mods_config(self) -> ModsConfig:
        """`mods` with the seed override applied."""
        if self.seed is None:
            return self.mods
        ransac = dataclasses.replace(self.mods.ransac, seed=self.seed)
        return dataclasses.replace(self.mods, ransac=ransac)


def _typename(tp: Any) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def _convert(tp: Any, value: Any, path: str) -> Any:
    origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")
        return build(tp, value, path)  # type: ignore[arg-type]
    if origin is Union:
        args = get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: null is not allowed")
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _convert(arg, value, path)
            except ConfigError as e:
                errors.append(str(e))
        raise ConfigError("; ".join(errors))
    if origin is Literal:
        if value not in get_args(tp):
            choices = ", ".join(repr(a) for a in get_args(tp))
            raise ConfigError(f"{path}: expected one of {choices}, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (item, *rest) = get_args(tp)
        if rest != [Ellipsis]:
            raise ConfigError(f"{path}: unsupported field type {_typename(tp)}")
        return tuple(_convert(item, v, f"{path}[{i}]") for i, v in enumerate(value))
    # bool is an int, but an int is not a bool
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {_typename(tp)}")


def build(cls: Type[_D], obj: Dict[str, Any], path: str = "") -> _D:
    """Instantiate the dataclass `cls` from a JSON object."""
    hints = get_type_hints(cls)
    fields = dataclasses.fields(cls)  # type: ignore[arg-type]
    names = {f.name for f in fields if f.init}
    kwargs = {}
    for key, value in obj.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"Unknown key {where!r}")
        kwargs[key] = _convert(hints[key], value, where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse a JSON configuration document.

    Raises:
      ConfigError: with "source:line:column" for syntax errors and the
                   dotted key path for bad keys or values.
    """
    return build(RunConfig, _load_object(text, source))


def load_config(path: Union[PathLike, str, None] = None) -> RunConfig:
    """Read a configuration file (defaults if `path` is None)."""
    if path is None:
        return RunConfig()
    path = Path(path)
    log.debug("Reading configuration from %s", path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


@dataclass(frozen=True)
class ToySpec:
    """A toy loss optimization for `wxbs losslab`.

    Attributes:
      points: pairs `[[ax, ay], [bx, by]]` (the built-in layout if None).
      loss: loss kind.
      steps: Adam steps.
      margin: loss margin.
      lr: Adam learning rate.
    """

    points: Union[Tuple[Tuple[Tuple[float, ...], ...], ...], None] = None
    loss: str = "hardnegc"
    steps: int = 150
    margin: float = 1.0
    lr: float = 0.1

    def __post_init__(self) -> None:
        if self.loss not in LOSS_KINDS:
            kinds = ", ".join(LOSS_KINDS)
            raise ValueError(f"Unknown loss kind {self.loss!r}, expected {kinds}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.points is not None:
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim != 3 or pts.shape[1:] != (2, 2) or len(pts) == 0:
                raise ValueError(
                    "points must be a non-empty list of [[ax, ay], [bx, by]]"
                )

    def point_array(self) -> np.ndarray:
        if self.points is None:
            return TOY_POINTS.copy()
        return np.array(self.points, dtype=float)


def load_toy_spec(path: Union[PathLike, str]) -> ToySpec:
    path = Path(path)
    return build(ToySpec, _load_object(path.read_text(encoding="utf-8"), str(path)))


def _load_object(text: str, source: str) -> Dict[str, Any]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: expected a JSON object")
    return obj
