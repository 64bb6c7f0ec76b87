"""Strict sectioned configuration with documented defaults.

The text format is INI (``[section]`` headers, ``key = value`` lines).  JSON
with the same two-level layout is accepted too, as is a run manifest, whose
``config`` block is read back.  Unknown sections or keys, values of the wrong
type and values violating model constraints raise :class:`ConfigError` naming
the key as ``section.key``.

Config reference (defaults in brackets):

``[run]``
    ``seed`` [0] master seed of the noise generator; ``threads`` [auto]
    worker threads, ``auto`` defers to ``CHC_THREADS``.
``[mesh]``
    ``h`` [1/64] mesh size, fractions allowed, ``1/h`` must be an integer;
    ``r`` [2] element order plus one (P1, P2, P3 for r = 2, 3, 4).
``[noise]``
    ``gamma`` [4] regularity index in [3, 4]; ``decay_s`` [auto] exponent of
    ``q_j = scale lambda_j^{-s}``, auto is ``gamma - 1.5 + 0.01``;
    ``modes`` [auto] truncation, auto is four times the finest dof count;
    ``scale`` [1] covariance prefactor, 0 switches the noise off.
``[scheme]``
    ``T`` [0.1] final time; ``n_steps`` [256] time steps; ``newton_tol``
    [1e-11]; ``newton_max_iters`` [30]; ``linear`` [false] drops the
    nonlinearity; ``amplitude`` [0.1] of the initial cosine;
    ``checkpoints`` [2] number of evenly spaced stored states (first and last
    included); ``dump_path`` [false] writes the binary noise table.
``[study]``
    ``samples`` [100]; ``moment`` [2]; ``space_ladder`` [16,32,64,128] element
    counts; ``space_ref_elements`` [512]; ``ref_steps`` [8192];
    ``time_ladder`` [16,32,64,128,256,512] step counts; ``time_elements``
    [128]; ``floor_samples`` [20] samples used for the temporal floor.
``[checks]``
    ``tol_space`` [0.2]; ``tol_time`` [0.15]; ``invariant_tol`` [1e-10].
``[hoelder]``
    ``enabled`` [false] adds the Hoelder probe to ``check-operators``;
    ``samples`` [200]; ``elements`` [128]; ``steps`` [8192]; ``max_lag_exp`` [6].
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError, SpecInvalidError
from .noise import DEFAULT_DECAY_EPS, NoiseSpec, default_truncation, validate_spec

AUTO = "auto"


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text) -> int:
    if isinstance(text, bool):
        raise ValueError("boolean given where an integer is expected")
    if isinstance(text, float):
        if not text.is_integer():
            raise ValueError(f"not an integer: {text!r}")
        return int(text)
    return int(str(text).strip())


def _float(text) -> float:
    if isinstance(text, bool):
        raise ValueError("boolean given where a number is expected")
    if isinstance(text, (int, float)):
        return float(text)
    return float(Fraction(str(text).strip()))


def _auto(conv: Callable) -> Callable:
    def parse(text):
        if text is None or str(text).strip().lower() == AUTO:
            return None
        return conv(text)
    return parse


def _int_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(_int(v) for v in text)
    return tuple(_int(v) for v in str(text).split(",") if v.strip())


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "run": {"seed": (_int, 0), "threads": (_auto(_int), None)},
    "mesh": {"h": (_float, 1 / 64), "r": (_int, 2)},
    "noise": {"gamma": (_float, 4.0), "decay_s": (_auto(_float), None),
              "modes": (_auto(_int), None), "scale": (_float, 1.0)},
    "scheme": {"T": (_float, 0.1), "n_steps": (_int, 256), "newton_tol": (_float, 1e-11),
               "newton_max_iters": (_int, 30), "linear": (_bool, False),
               "amplitude": (_float, 0.1), "checkpoints": (_int, 2),
               "dump_path": (_bool, False)},
    "study": {"samples": (_int, 100), "moment": (_int, 2),
              "space_ladder": (_int_list, (16, 32, 64, 128)),
              "space_ref_elements": (_int, 512), "ref_steps": (_int, 8192),
              "time_ladder": (_int_list, (16, 32, 64, 128, 256, 512)),
              "time_elements": (_int, 128), "floor_samples": (_int, 20)},
    "checks": {"tol_space": (_float, 0.2), "tol_time": (_float, 0.15),
               "invariant_tol": (_float, 1e-10)},
    "hoelder": {"enabled": (_bool, False), "samples": (_int, 200), "elements": (_int, 128),
                "steps": (_int, 8192), "max_lag_exp": (_int, 6)},
}


@dataclass
class RunConfig:
    """Validated configuration, ``values[section][key]`` with defaults applied."""

    values: dict = field(default_factory=dict)
    subcommand: str | None = None
    out_dir: str | None = None

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def set(self, dotted: str, raw) -> None:
        section, key = _check_key(*dotted.split(".", 1))
        self.values[section][key] = _convert(section, key, raw)
        validate(self)

    # derived quantities ---------------------------------------------------

    @property
    def n_elements(self) -> int:
        return _n_elements(self["mesh.h"])

    @property
    def degree(self) -> int:
        return self["mesh.r"] - 1

    @property
    def k(self) -> float:
        return self["scheme.T"] / self["scheme.n_steps"]

    def noise_spec(self, finest_dofs: int | None = None) -> NoiseSpec:
        dofs = finest_dofs or self.degree * self.n_elements + 1
        J = self["noise.modes"] or default_truncation(dofs)
        return NoiseSpec(self["noise.gamma"], self["noise.decay_s"], J, self["run.seed"],
                         self["noise.scale"])

    def to_dict(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
                for s, d in self.values.items()}


def defaults() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _check_key(section: str, key: str) -> tuple[str, str]:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]", section)
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
    return section, key


def _convert(section: str, key: str, raw):
    conv = SCHEMA[section][key][0]
    try:
        return conv(raw)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}", f"{section}.{key}") from None


def _n_elements(h: float) -> int:
    n = round(1.0 / h)
    if n < 1 or abs(n * h - 1.0) > 1e-12:
        raise ConfigError(f"1/h must be a positive integer, got h = {h}", "mesh.h")
    return int(n)


def validate(cfg: RunConfig) -> RunConfig:
    """Check cross-field constraints; raises :class:`ConfigError`."""
    _n_elements(cfg["mesh.h"])
    if cfg["mesh.r"] not in (2, 3, 4):
        raise ConfigError("r must be 2, 3 or 4 (P1, P2, P3 elements)", "mesh.r")
    if cfg["scheme.T"] <= 0:
        raise ConfigError("T must be positive", "scheme.T")
    for key in ("scheme.n_steps", "scheme.newton_max_iters", "scheme.checkpoints",
                "study.samples", "study.space_ref_elements", "study.ref_steps",
                "study.time_elements", "hoelder.samples", "hoelder.elements", "hoelder.steps"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be positive", key)
    if cfg["study.moment"] < 2 or cfg["study.moment"] % 2:
        raise ConfigError("moment must be an even integer >= 2", "study.moment")
    if cfg["scheme.newton_tol"] < 1e-13:
        raise ConfigError("newton_tol below 1e-13 is not attainable", "scheme.newton_tol")
    if cfg["noise.scale"] < 0:
        raise ConfigError("noise scale must be non-negative", "noise.scale")
    if cfg["noise.modes"] is not None and cfg["noise.modes"] < 1:
        raise ConfigError("modes must be positive", "noise.modes")
    if not 0 <= cfg["run.seed"] < 2**64:
        raise ConfigError("seed must fit in 64 bits", "run.seed")
    if cfg["run.threads"] is not None and cfg["run.threads"] < 1:
        raise ConfigError("threads must be positive", "run.threads")
    gamma = cfg["noise.gamma"]
    try:
        validate_spec(NoiseSpec(gamma, cfg["noise.decay_s"], 8, 0, 1.0, DEFAULT_DECAY_EPS))
    except SpecInvalidError as exc:
        key = "noise.gamma" if not 3 <= gamma <= 4 else "noise.decay_s"
        raise ConfigError(str(exc), key) from None
    return cfg


def _from_mapping(data: dict) -> RunConfig:
    cfg = defaults()
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    for section, body in data.items():
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must map keys to values", section)
        for key, raw in body.items():
            s, k = _check_key(section, key)
            cfg.values[s][k] = _convert(s, k, raw)
    return validate(cfg)


def parse_config(text: str) -> RunConfig:
    """Parse INI or JSON text into a validated :class:`RunConfig`."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return _from_mapping(data)
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       default_section="__no_defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError:
        raise ConfigError("key outside of any [section]") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return _from_mapping({s: dict(parser.items(s)) for s in parser.sections()})


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return defaults()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
