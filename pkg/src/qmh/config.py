"""Experiment configuration: dataclass plus a sectioned ``key = value`` file format.

Grammar (read with :mod:`configparser`)::

    [instance]
    grid_side = 4
    temperature = 1.0
    [filter]
    m = 1,2,3,4          # comma list, or a range such as 3..11
    varphi = 1.0472
    mode = coherent
    penalised = true
    [sweep]
    beta = 0.1:4.0:0.1   # start:stop:step, stop inclusive
    [output]
    out = results.json
    [resources]
    sim_cap = 28
    dense_cap = 16384
    jobs = 1

Section names only group keys; every key is unique across sections and can
be overridden by the command-line flag of the same name.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields

from .filters import DEFAULT_VARPHI, MODES
from .sim import DEFAULT_DENSE_CAP, DEFAULT_SIM_CAP


class ConfigError(ValueError):
    pass


def parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        vals = tuple(range(int(lo), int(hi) + 1))
    else:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    if not vals:
        raise ConfigError(f"empty integer list {text!r}")
    return vals


def parse_grid(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive stop) or a comma list of floats."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ConfigError("grid step must be positive")
        if stop < start:
            raise ConfigError("grid stop precedes start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = tuple(round(start + k * step, 12) for k in range(n))
    else:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    if not vals:
        raise ConfigError(f"empty grid {text!r}")
    return vals


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    instance: str = "double-well"
    grid_side: int = 4
    temperature: float = 1.0
    n_spins: int = 4
    J: float = 1.0
    h: float = 0.0
    m: tuple[int, ...] = (1, 2, 3, 4)
    beta: tuple[float, ...] = field(default_factory=lambda: parse_grid("0.1:4.0:0.1"))
    varphi: float = DEFAULT_VARPHI
    mode: str = "coherent"
    penalised: bool = True
    compare_unpenalised: bool = False
    out: str | None = None
    sim_cap: int = DEFAULT_SIM_CAP
    dense_cap: int = DEFAULT_DENSE_CAP
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.instance not in ("double-well", "ising"):
            raise ConfigError(f"unknown instance {self.instance!r}")
        if not self.m or min(self.m) < 1:
            raise ConfigError("m list must be non-empty and >= 1")
        if not self.beta or min(self.beta) <= 0:
            raise ConfigError("beta grid must be non-empty and positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not 0 <= self.varphi < 2 * math.pi:
            raise ConfigError("varphi must lie in [0, 2 pi)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.sim_cap < 1 or self.dense_cap < 1:
            raise ConfigError("caps must be positive")
        return self

    def as_dict(self) -> dict:
        d = asdict(self)
        d["m"] = list(self.m)
        d["beta"] = list(self.beta)
        return d


_PARSERS = {
    "instance": str, "grid_side": int, "temperature": float, "n_spins": int,
    "J": float, "h": float, "m": parse_int_list, "beta": parse_grid, "varphi": float,
    "mode": str, "penalised": parse_bool, "compare_unpenalised": parse_bool,
    "out": str, "sim_cap": int, "dense_cap": int, "jobs": int,
}


def apply_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    for key, raw in values.items():
        if raw is None:
            continue
        if key not in names:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            val = _PARSERS[key](raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        setattr(cfg, key, val)
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (J, h)
    with open(path) as fh:
        cp.read_file(fh)
    values: dict = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            if k in values:
                raise ConfigError(f"key {k!r} appears in more than one section")
            values[k] = v
    return apply_overrides(base or ExperimentConfig(), values)
