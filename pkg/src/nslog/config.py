"""``key = value`` run configuration with ``[section]`` headers.

Keys before the first header belong to ``[run]``.  Every section and key
is declared in :data:`SCHEMA`; anything else is rejected.  Parsed values
are validated against the domains of the modules that consume them.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import formulas
from .errors import ConfigError, DomainError

MODES = ("formulas", "ode", "simulate", "analyze", "audit", "sweep")
U64 = 2 ** 64


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text: str) -> int:
    return int(text, 0)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(item):
    def parse(text: str) -> tuple:
        text = text.strip()
        return tuple(item(p.strip()) for p in text.split(",")) if text else ()
    return parse


def _str(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""


def _positive(v):
    return v > 0


def _between(lo, hi, lo_open=True, hi_open=True):
    def check(v):
        return (v > lo if lo_open else v >= lo) and (v < hi if hi_open else v <= hi)
    return check


FLOATS = _list(_float)
INTS = _list(_int)

SCHEMA: dict = {
    "run": {
        "mode": Key(_str, None, lambda v: v in MODES, f"one of {', '.join(MODES)}"),
        "seed": Key(_int, 0, lambda v: 0 <= v < U64, "an unsigned 64-bit integer"),
        "out_dir": Key(_str, "out"),
    },
    "ladder": {
        "deltas": Key(FLOATS, (), lambda v: all(d >= 0 for d in v), "non-negative"),
        "cs": Key(FLOATS, None, lambda v: all(c > 0 for c in v), "positive"),
        "c0": Key(_float, 1.0, _positive, "positive"),
        "c3": Key(_float, 1.0, _positive, "positive"),
    },
    "formulas": {
        "s": Key(_float, 0.75, _between(0.5, 1.0), "in (1/2, 1): must exceed 1/2"),
        "q": Key(_float, 12.0, lambda v: v > 3, "greater than 3"),
        "eta": Key(_float, 0.01, lambda v: v >= 0, "non-negative"),
        "s_min": Key(_float, 0.501, _between(0.5, 1.0), "in (1/2, 1)"),
        "s_max": Key(_float, 0.99, _between(0.5, 1.0), "in (1/2, 1)"),
        "s_count": Key(_int, 50, lambda v: v >= 2, "at least 2"),
        "eps_values": Key(FLOATS, (1.0, 0.5, 0.1, 0.01, 1e-3, 1e-4),
                          lambda v: all(0 < e <= 1 for e in v), "in (0, 1]"),
        "p_values": Key(FLOATS, tuple(0.5 * i for i in range(1, 17)), lambda v: all(p > 0 for p in v), "positive"),
        "delta_scales": Key(FLOATS, (0.0, 0.5, 1.0, 2.0, 4.0), lambda v: all(d >= 0 for d in v), "non-negative"),
        "h_count": Key(_int, 201, lambda v: v >= 2, "at least 2"),
        "k_min": Key(_float, 1.0, _positive, "positive"),
        "k_max": Key(_float, 1000.0, _positive, "positive"),
        "k_count": Key(_int, 50, lambda v: v >= 2, "at least 2"),
        "t": Key(_float, 0.0, lambda v: v >= 0, "non-negative"),
        "k0": Key(_float, 1.0, _positive, "positive"),
        "eps_rate": Key(_float, 1.0, _positive, "positive"),
        "nu": Key(_float, 1.0, _positive, "positive"),
        "kolmogorov_c": Key(_float, 1.0, _positive, "positive"),
        "beta0": Key(FLOATS, None),
        "small_c": Key(_float, 1.0, _positive, "positive"),
        "flux_c": Key(_float, 1.0, _positive, "positive"),
    },
    "ode": {
        "kind": Key(_str, "comparison", lambda v: v in ("comparison", "dichotomy"), "comparison or dichotomy"),
        "y0": Key(_float, 2.0, _positive, "positive"),
        "c": Key(_float, 1.0, _positive, "positive"),
        "mu": Key(_float, 1.0, _positive, "positive"),
        "c1": Key(_float, 1.0, lambda v: v >= 0, "non-negative"),
        "c2": Key(_float, 1.0, _positive, "positive"),
        "beta": Key(_float, 0.5, _positive, "positive"),
        "omega": Key(_float, 0.0, lambda v: v >= 0, "non-negative"),
        "t_end": Key(_float, 1.0, _positive, "positive"),
        "tol": Key(_float, 1e-10, _positive, "positive"),
        "bracket_rtol": Key(_float, 1e-4, _between(0.0, 1.0), "in (0, 1)"),
    },
    "sweep": {
        "s": Key(_float, 0.75, _between(0.5, 1.0), "in (1/2, 1): must exceed 1/2"),
        "q": Key(_float, 12.0, lambda v: v > 3, "greater than 3"),
        "lambda_min": Key(_float, 1.0, lambda v: v >= 1, "at least 1"),
        "lambda_max": Key(_float, 1e8, lambda v: v > 1, "greater than 1"),
        "lambda_count": Key(_int, 200, lambda v: v >= 2, "at least 2"),
        "rtol": Key(_float, 1e-6, _between(0.0, 1.0), "in (0, 1)"),
        "run_ode": Key(_bool, False),
        "y0": Key(_float, 1.0, _positive, "positive"),
        "c1": Key(_float, 1.0, lambda v: v >= 0, "non-negative"),
        "c2": Key(_float, 1.0, _positive, "positive"),
        "t_end": Key(_float, 10.0, _positive, "positive"),
    },
    "field": {
        "npts": Key(INTS, (32, 32, 32)),
        "box": Key(FLOATS, None),
        "init": Key(_str, "random", lambda v: v in ("shear", "taylor_green", "random", "shell", "constant", "file"),
                    "one of shear, taylor_green, random, shell, constant, file"),
        "k": Key(_int, 1, lambda v: v >= 1, "a positive integer"),
        "amp": Key(_float, 1.0),
        "slope": Key(_float, -5.0 / 3.0),
        "k_lo": Key(_float, 1.0, _positive, "positive"),
        "k_hi": Key(_float, 4.0, _positive, "positive"),
        "energy": Key(_float, 0.5, _positive, "positive"),
        "r": Key(_float, 2.0, _positive, "positive"),
        "input": Key(_str, None),
    },
    "solver": {
        "nu": Key(_float, 0.05, _positive, "positive"),
        "s": Key(_float, 1.0, _between(0.5, 1.0, hi_open=False), "in (1/2, 1]: must exceed 1/2"),
        "q": Key(_float, 12.0, lambda v: v >= 1, "at least 1"),
        "dt": Key(_float, None, _positive, "positive"),
        "cfl": Key(_float, None, _between(0.0, 1.0), "in (0, 1)"),
        "t_end": Key(_float, 1.0, lambda v: v >= 0, "non-negative"),
        "record_every": Key(_float, 0.01, _positive, "positive"),
        "dealias": Key(_bool, True),
        "forcing_rate": Key(_float, None, _positive, "positive"),
        "forcing_k_lo": Key(_float, 1.0, _positive, "positive"),
        "forcing_k_hi": Key(_float, 2.0, _positive, "positive"),
        "snapshot": Key(_bool, True),
    },
    "analyze": {
        "input": Key(_str, None),
        "nu": Key(_float, 0.05, lambda v: v >= 0, "non-negative"),
        "s": Key(_float, 1.0, _between(0.5, 1.0, hi_open=False), "in (1/2, 1]: must exceed 1/2"),
        "orders": Key(FLOATS, (1.0, 2.0, 3.0, 4.0, 5.0, 6.0), lambda v: all(p > 0 for p in v), "positive"),
        "separations_cells": Key(INTS, (0, 1, 2, 4, 8), lambda v: all(m >= 0 for m in v), "non-negative"),
        "n_samples": Key(_int, 0, lambda v: v >= 0, "non-negative"),
        "eps_values": Key(FLOATS, (0.1, 0.05, 0.01), lambda v: all(0 < e < 1 for e in v), "in (0, 1)"),
        "radii_cells": Key(INTS, (1, 2, 4), lambda v: len(v) >= 3 and all(m > 0 for m in v),
                           "at least three positive integers"),
        "bins": Key(_int, 20, lambda v: v >= 1, "positive"),
    },
    "audit": {
        "s": Key(_float, 0.6, _between(0.5, 1.0), "in (1/2, 1): must exceed 1/2"),
        "sigma": Key(_float, 0.2, _positive, "positive"),
        "k0": Key(_float, 1.0, _positive, "positive"),
        "k_nu": Key(_float, 8.0, _positive, "positive"),
        "nu": Key(_float, 0.05, _positive, "positive"),
        "c_env": Key(_float, 1.0, _positive, "positive"),
        "beta_env": Key(_float, 1.0, _positive, "positive"),
        "q": Key(_float, 12.0, lambda v: v > 3, "greater than 3"),
        "run": Key(_bool, False),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: ``sections[name][key]`` with defaults filled in."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> dict:
        return self.sections[name]

    @property
    def mode(self) -> str:
        return self.sections["run"]["mode"]

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    def ladder(self) -> formulas.LogLadderParams:
        lad = self.sections["ladder"]
        return formulas.LogLadderParams(lad["deltas"], lad["cs"], c0=lad["c0"], c3=lad["c3"])

    def with_run(self, **changes) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        sections["run"].update(changes)
        return validate(sections)


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(
        strict=True, interpolation=None, comment_prefixes=("#",),
        inline_comment_prefixes=("#",), delimiters=("=",), default_section="\0defaults",
        empty_lines_in_values=False,
    )
    p.optionxform = str
    return p


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    out = {}
    section = "run"
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif "=" in line:
            out.setdefault((section, line.split("=", 1)[0].strip()), n)
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text."""
    p = _parser()
    try:
        p.read_string("[run]\n" + text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key in [{exc.section}]", key=exc.option, line=exc.lineno - 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=(exc.lineno or 1) - 1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] - 1 if exc.errors else None
        raise ConfigError("expected 'key = value' or '[section]'", line=lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    lines = _key_lines(text)
    raw = {}
    for name in p.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        raw[name] = {}
        for key, value in p.items(name):
            line = lines.get((name, key))
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key in [{name}]", key=key, line=line)
            try:
                raw[name][key] = SCHEMA[name][key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"cannot parse {value!r}: {exc}", key=key, line=line) from None
    return validate(raw, lines)


def validate(raw: dict, lines: Optional[dict] = None) -> RunConfig:
    lines = lines or {}
    sections = {}
    for name, keys in SCHEMA.items():
        given = raw.get(name, {})
        vals = {}
        for key, spec in keys.items():
            v = given.get(key, spec.default)
            if v is not None and spec.check is not None and not spec.check(v):
                raise ConfigError(f"value {v!r} must be {spec.rule}", key=key, line=lines.get((name, key)))
            vals[key] = v
        sections[name] = vals
    if sections["run"]["mode"] is None:
        raise ConfigError("mode is required", key="mode")
    cfg = RunConfig(sections)
    _cross_checks(cfg, lines)
    return cfg


def _cross_checks(cfg: RunConfig, lines: dict) -> None:
    def fail(section, key, msg):
        raise ConfigError(msg, key=key, line=lines.get((section, key)))

    try:
        params = cfg.ladder()
    except DomainError as exc:
        fail("ladder", "cs", str(exc))
    f = cfg["formulas"]
    if f["s_min"] >= f["s_max"]:
        fail("formulas", "s_min", "must be below s_max")
    if f["k_min"] >= f["k_max"]:
        fail("formulas", "k_min", "must be below k_max")
    if f["k_min"] < f["k0"]:
        fail("formulas", "k_min", "must be at least k0")
    if f["beta0"] is not None and len(f["beta0"]) != params.n:
        fail("formulas", "beta0", f"needs {params.n} entries, one per ladder level")
    sw = cfg["sweep"]
    if sw["lambda_min"] >= sw["lambda_max"]:
        fail("sweep", "lambda_min", "must be below lambda_max")
    fd = cfg["field"]
    if len(fd["npts"]) not in (2, 3):
        fail("field", "npts", "needs two or three entries")
    if any(n < 8 or n & (n - 1) for n in fd["npts"]):
        fail("field", "npts", "entries must be powers of two >= 8")
    if fd["box"] is not None and (len(fd["box"]) != len(fd["npts"]) or any(b <= 0 for b in fd["box"])):
        fail("field", "box", "needs one positive length per axis")
    if fd["k_lo"] > fd["k_hi"]:
        fail("field", "k_lo", "must not exceed k_hi")
    if fd["init"] == "file" and not fd["input"]:
        fail("field", "input", "required when init = file")
    so = cfg["solver"]
    if so["dt"] is not None and so["cfl"] is not None:
        fail("solver", "cfl", "set either dt or cfl, not both")
    if so["dt"] is None and so["cfl"] is None:
        so["dt"] = 0.005
    try:
        cfg_solver(cfg)
    except ConfigError as exc:
        fail("solver", exc.key, str(exc).split(": ", 1)[-1])
    au = cfg["audit"]
    if not au["sigma"] < 1 - au["s"]:
        fail("audit", "sigma", f"must lie in (0, 1 - s) = (0, {1 - au['s']})")
    if au["k_nu"] <= au["k0"]:
        fail("audit", "k_nu", "must exceed k0")


def cfg_solver(cfg: RunConfig):
    from .solver import Forcing, SolverConfig

    so = cfg["solver"]
    forcing = None
    if so["forcing_rate"] is not None:
        forcing = Forcing(so["forcing_rate"], so["forcing_k_lo"], so["forcing_k_hi"])
    return SolverConfig(
        nu=so["nu"], s=so["s"], t_end=so["t_end"], dt=so["dt"], cfl=so["cfl"], dealias=so["dealias"],
        forcing=forcing, record_every=so["record_every"], q=so["q"], params=cfg.ladder(),
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(emit_config(c)) == c``."""
    out = []
    for name in SCHEMA:
        vals = cfg[name]
        body = [f"{k} = {_fmt(v)}" for k, v in vals.items() if v is not None]
        if name == "run":
            out.extend(body)
        elif body:
            out.append("")
            out.append(f"[{name}]")
            out.extend(body)
    return "\n".join(out) + "\n"

