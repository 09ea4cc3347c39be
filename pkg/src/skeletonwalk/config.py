"""Experiment configuration.

Flat ``key = value`` text.  Keys before the first section header are global;
a ``[subcommand]`` section overrides global keys for that subcommand only.
``#`` and ``;`` start comments.  Unknown keys and sections are rejected.

Example::

    master_seed = 2013
    levels = 2,3,4,5
    T = 1.0
    n_paths = 10000
    functional = bachelier_call
    K = 0.0

    [martingale-test]
    levels = 3
    bins = 10
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .functionals import CATALOG

SUBCOMMANDS = ("sample-exit", "simulate", "martingale-test", "counterexample",
               "covariation", "derivative-rates", "jump-bound")
REQUIRED = ("master_seed", "levels", "T", "n_paths")
_GLOBAL_ONLY = ("master_seed", "output_dir")
_HEAD = "__global__"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_levels(text: str) -> list[int]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    return [int(p) for p in parts]


def _parse_int(text) -> int:
    if isinstance(text, int):
        return text
    f = float(text)
    if not f.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(f)


PARSERS = {
    "master_seed": _parse_int,
    "levels": _parse_levels,
    "T": float,
    "n_paths": _parse_int,
    "functional": str,
    "K": float,
    "c": float,
    "mc_inner_count": _parse_int,
    "bins": _parse_int,
    "prior_bins": _parse_int,
    "z_threshold": float,
    "dt": float,
    "n_coupled": _parse_int,
    "n_draws": _parse_int,
    "n_dump": _parse_int,
    "antithetic": _parse_bool,
    "workers": _parse_int,
    "output_dir": str,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration with defaults applied."""

    master_seed: int
    levels: list
    T: float
    n_paths: int
    functional: str = "identity"
    K: float = 0.0
    c: float = 0.0
    mc_inner_count: int = 1000
    bins: int = 10
    prior_bins: int = 1
    z_threshold: float = 4.0
    dt: float = 1e-5
    n_coupled: int = 100
    n_draws: int = 100_000
    n_dump: int = 3
    antithetic: bool = False
    workers: int = 1
    output_dir: str = "results"
    sections: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate(self)

    def for_subcommand(self, name: str) -> "ExperimentConfig":
        """This config with the ``[name]`` section applied."""
        overrides = self.sections.get(name, {})
        if not overrides:
            return self
        return dataclasses.replace(self, **overrides)

    def functional_params(self) -> dict:
        return {"K": self.K, "c": self.c, "mc_inner_count": self.mc_inner_count}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        """sha256 of the result-determining fields (not output_dir or workers)."""
        d = self.to_dict()
        for key in ("output_dir", "workers"):
            d.pop(key)
            for sec in d["sections"].values():
                sec.pop(key, None)
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _validate(cfg: ExperimentConfig):
    if cfg.master_seed < 0 or cfg.master_seed >= 2**64:
        raise ConfigError("master_seed: must be a 64-bit non-negative integer")
    if not cfg.levels:
        raise ConfigError("levels: must list at least one level")
    if any(k < 0 for k in cfg.levels):
        raise ConfigError("levels: every level must be >= 0")
    if not cfg.T > 0:
        raise ConfigError(f"T: must be positive, got {cfg.T}")
    if cfg.n_paths < 1:
        raise ConfigError(f"n_paths: must be >= 1, got {cfg.n_paths}")
    if cfg.functional not in CATALOG:
        raise ConfigError(f"functional: unknown name {cfg.functional!r}; "
                          f"choose from {sorted(CATALOG)}")
    if cfg.mc_inner_count < 1:
        raise ConfigError("mc_inner_count: must be >= 1")
    if cfg.bins < 5:
        raise ConfigError("bins: must be >= 5")
    if cfg.prior_bins < 1:
        raise ConfigError("prior_bins: must be >= 1")
    if not cfg.z_threshold > 0:
        raise ConfigError("z_threshold: must be positive")
    if not cfg.dt > 0:
        raise ConfigError("dt: must be positive")
    for name in ("n_coupled", "n_draws", "workers"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be >= 1")
    if cfg.n_dump < 0:
        raise ConfigError("n_dump: must be >= 0")
    for sec, keys in cfg.sections.items():
        if sec not in SUBCOMMANDS:
            raise ConfigError(f"[{sec}]: unknown section; sections are {list(SUBCOMMANDS)}")
        for key in keys:
            if key in _GLOBAL_ONLY:
                raise ConfigError(f"[{sec}] {key}: may only be set globally")
        if keys:
            # validate the merged view
            dataclasses.replace(cfg, sections={}, **keys)


def _convert(key: str, raw, where: str):
    if key not in PARSERS:
        raise ConfigError(f"{where}{key}: unknown key; known keys are {sorted(PARSERS)}")
    try:
        return PARSERS[key](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}{key}: cannot parse {raw!r} ({exc})") from None


def parse_config(text: str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Parse and validate configuration text.

    ``overrides`` (e.g. from command-line flags) take precedence over both
    global and section values; they may be strings or already-typed values.
    """
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#", ";"),
                                       interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive (T, K)
    try:
        parser.read_string(f"[{_HEAD}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    values: dict[str, Any] = {}
    for key, raw in parser[_HEAD].items():
        values[key] = _convert(key, raw, "")
    given = set()
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _convert(key, raw, "") if isinstance(raw, str) else raw
        given.add(key)
    sections: dict[str, dict] = {}
    for sec in parser.sections():
        if sec == _HEAD:
            continue
        if sec not in SUBCOMMANDS:
            raise ConfigError(f"[{sec}]: unknown section; sections are {list(SUBCOMMANDS)}")
        sections[sec] = {k: _convert(k, v, f"[{sec}] ") for k, v in parser[sec].items()
                         if k not in given}
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)} "
                          f"(required: {', '.join(REQUIRED)})")
    try:
        return ExperimentConfig(**values, sections=sections)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
