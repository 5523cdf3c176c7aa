"""Run configuration: JSON in, validated dataclasses out.

Unknown keys are rejected; missing keys take the documented defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

LOSS_KINDS = ("bce", "dice")


@dataclass
class WorldConfig:
    """Tunables of the synthetic paired-domain generator.

    Subpopulation means are placed on a shell `base_offset` from the origin
    with pairwise separation sep_sigma * noise_sigma; the far shell keeps
    L2-normalized feature clusters tight, which is what makes small DBSCAN
    eps values meaningful.
    """

    s_text: int = 3
    s_back: int = 3
    noise_sigma: float = 0.5
    sep_sigma: float = 10.0
    base_offset: float = 32.0
    shift_norm: float = 1.5
    n_train: int = 32
    n_eval: int = 16
    text_regions: tuple[int, int] = (2, 4)
    region_size: tuple[int, int] = (8, 24)


@dataclass
class RunConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    d_in: int = 8
    d_h: int = 16
    eps: float = 0.01
    min_pts: int = 4
    downsample: int = 4
    lambda_bi: float = 1.0
    lambda_sub: float = 1.0
    rho_schedule: tuple[float, ...] = (20.0, 40.0, 60.0, 80.0, 100.0)
    rho_reg: float = 10.0
    lr0: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    epochs_per_round: int = 20
    source_epochs: int = 400
    batch_size: int = 12
    loss: str = "bce"
    world: WorldConfig = field(default_factory=WorldConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rho_schedule"] = list(self.rho_schedule)
        d["world"]["text_regions"] = list(self.world.text_regions)
        d["world"]["region_size"] = list(self.world.region_size)
        return d


def _require(cond: bool, fld: str, msg: str) -> None:
    if not cond:
        raise ConfigError(fld, msg)


def _as_int(value, fld: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(fld, f"expected integer, got {value!r}")
    return value


def _as_float(value, fld: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(fld, f"expected number, got {value!r}")
    return float(value)


def _as_pair(value, fld: str) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(fld, f"expected [lo, hi], got {value!r}")
    return (_as_int(value[0], fld), _as_int(value[1], fld))


def _parse_world(raw: dict) -> WorldConfig:
    w = WorldConfig()
    known = {
        "s_text", "s_back", "noise_sigma", "sep_sigma", "base_offset",
        "shift_norm", "n_train", "n_eval", "text_regions", "region_size",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("world", f"unknown keys {sorted(unknown)}")
    for key in ("s_text", "s_back", "n_train", "n_eval"):
        if key in raw:
            setattr(w, key, _as_int(raw[key], f"world.{key}"))
    for key in ("noise_sigma", "sep_sigma", "base_offset", "shift_norm"):
        if key in raw:
            setattr(w, key, _as_float(raw[key], f"world.{key}"))
    for key in ("text_regions", "region_size"):
        if key in raw:
            setattr(w, key, _as_pair(raw[key], f"world.{key}"))
    return w


def validate(cfg: RunConfig) -> RunConfig:
    """Check every config invariant; raise ConfigError naming the field."""
    _require(cfg.seed >= 0, "seed", "must be a non-negative integer")
    _require(cfg.height >= 1, "height", "must be >= 1")
    _require(cfg.width >= 1, "width", "must be >= 1")
    _require(cfg.d_in >= 1, "d_in", "must be >= 1")
    _require(cfg.d_h >= 1, "d_h", "must be >= 1")
    _require(cfg.eps > 0, "eps", "must be > 0")
    _require(cfg.min_pts >= 1, "min_pts", "must be >= 1")
    _require(cfg.downsample >= 1, "downsample", "must be >= 1")
    _require(cfg.height % cfg.downsample == 0, "downsample",
             f"must divide height {cfg.height}")
    _require(cfg.width % cfg.downsample == 0, "downsample",
             f"must divide width {cfg.width}")
    _require(cfg.lambda_bi >= 0, "lambda_bi", "must be >= 0")
    _require(cfg.lambda_sub >= 0, "lambda_sub", "must be >= 0")
    _require(len(cfg.rho_schedule) >= 1, "rho_schedule", "must be non-empty")
    for rho in cfg.rho_schedule:
        _require(0 < rho <= 100, "rho_schedule", f"entry {rho} outside (0, 100]")
    for a, b in zip(cfg.rho_schedule, cfg.rho_schedule[1:]):
        _require(a < b, "rho_schedule", f"must be strictly increasing, got {a} before {b}")
    _require(0 <= cfg.rho_reg < 100, "rho_reg", "must be in [0, 100)")
    _require(cfg.lr0 > 0, "lr0", "must be > 0")
    _require(0 <= cfg.momentum < 1, "momentum", "must be in [0, 1)")
    _require(cfg.weight_decay >= 0, "weight_decay", "must be >= 0")
    _require(cfg.power > 0, "power", "must be > 0")
    _require(cfg.epochs_per_round >= 0, "epochs_per_round", "must be >= 0")
    _require(cfg.source_epochs >= 0, "source_epochs", "must be >= 0")
    _require(cfg.batch_size >= 2 and cfg.batch_size % 2 == 0, "batch_size",
             "must be an even number >= 2 (half source, half target)")
    _require(cfg.loss in LOSS_KINDS, "loss", f"must be one of {LOSS_KINDS}")

    w = cfg.world
    _require(w.s_text >= 1, "world.s_text", "must be >= 1")
    _require(w.s_back >= 1, "world.s_back", "must be >= 1")
    _require(w.s_text + w.s_back <= cfg.d_in, "world.s_text",
             f"s_text + s_back must be <= d_in ({cfg.d_in}) for the default mean layout")
    _require(w.noise_sigma > 0, "world.noise_sigma", "must be > 0")
    _require(w.sep_sigma > 0, "world.sep_sigma", "must be > 0")
    _require(w.base_offset >= 0, "world.base_offset", "must be >= 0")
    _require(w.shift_norm >= 0, "world.shift_norm", "must be >= 0")
    _require(w.n_train >= 1, "world.n_train", "must be >= 1")
    _require(w.n_eval >= 1, "world.n_eval", "must be >= 1")
    _require(1 <= w.text_regions[0] <= w.text_regions[1], "world.text_regions",
             "must be [lo, hi] with 1 <= lo <= hi")
    _require(1 <= w.region_size[0] <= w.region_size[1], "world.region_size",
             "must be [lo, hi] with 1 <= lo <= hi")
    _require(w.region_size[1] <= min(cfg.height, cfg.width), "world.region_size",
             "max region side exceeds the grid")
    return cfg


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", f"config must be a JSON object, got {type(raw).__name__}")
    cfg = RunConfig()
    known_int = {"seed", "height", "width", "d_in", "d_h", "min_pts", "downsample",
                 "epochs_per_round", "source_epochs", "batch_size"}
    known_float = {"eps", "lambda_bi", "lambda_sub", "rho_reg", "lr0", "momentum",
                   "weight_decay", "power"}
    known_other = {"rho_schedule", "loss", "world"}
    unknown = set(raw) - known_int - known_float - known_other
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config key")
    for key in known_int & set(raw):
        setattr(cfg, key, _as_int(raw[key], key))
    for key in known_float & set(raw):
        setattr(cfg, key, _as_float(raw[key], key))
    if "rho_schedule" in raw:
        sched = raw["rho_schedule"]
        if not isinstance(sched, (list, tuple)) or not sched:
            raise ConfigError("rho_schedule", f"expected non-empty list, got {sched!r}")
        cfg.rho_schedule = tuple(_as_float(v, "rho_schedule") for v in sched)
    if "loss" in raw:
        if not isinstance(raw["loss"], str):
            raise ConfigError("loss", f"expected string, got {raw['loss']!r}")
        cfg.loss = raw["loss"].lower()
    if "world" in raw:
        if not isinstance(raw["world"], dict):
            raise ConfigError("world", "expected an object")
        cfg.world = _parse_world(raw["world"])
    return validate(cfg)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise OSError(f"reading config from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON: {exc}") from exc
    return from_dict(raw)
