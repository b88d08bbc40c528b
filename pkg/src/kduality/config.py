"""Line-oriented run configuration.

Format::

    # comment
    [model]
    a = "1 + 0.1*sin(x)"     # quoted expression
    jump = none              # bare tag
    [grid]
    n = 400                  # number
    [task]
    spots = -1, 0, 1         # comma-separated numbers

Every value remembers its line so errors can point at it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import expr as ex
from .errors import ConfigError, ParseError
from .fractional import Grid
from .model import DensityJump, GeneratorSpec, NoJump, StableLike, SymmetricStable

_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_TAG = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Value:
    raw: object
    line: int
    quoted: bool = False


def _strip_comment(text: str) -> str:
    quoted = False
    for i, ch in enumerate(text):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return text[:i]
    return text


def _parse_value(text: str, path, line) -> Value:
    if not text:
        raise ConfigError("missing value", path, line)
    if text.startswith('"'):
        if len(text) < 2 or not text.endswith('"') or '"' in text[1:-1]:
            raise ConfigError("unterminated or malformed quoted string", path, line)
        return Value(text[1:-1], line, True)
    if "," in text:
        try:
            return Value(tuple(float(p) for p in text.split(",")), line)
        except ValueError:
            raise ConfigError(f"invalid number list {text!r}", path, line) from None
    try:
        return Value(float(text), line)
    except ValueError:
        pass
    if _TAG.match(text):
        return Value(text, line)
    raise ConfigError(f"invalid value {text!r}", path, line)


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Value]] = field(default_factory=dict)
    path: str | None = None

    @classmethod
    def from_text(cls, text: str, path: str | None = None) -> "RunConfig":
        cfg = cls(path=path)
        current = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            m = _SECTION.match(line)
            if m:
                current = m.group(1)
                if current in cfg.sections:
                    raise ConfigError(f"duplicate section [{current}]", path, lineno)
                cfg.sections[current] = {}
                continue
            m = _KEY.match(line)
            if not m:
                raise ConfigError(f"cannot parse line {raw.strip()!r}", path, lineno)
            if current is None:
                raise ConfigError("key outside of any section", path, lineno)
            key, val = m.group(1), m.group(2).strip()
            if key in cfg.sections[current]:
                raise ConfigError(f"duplicate key {key!r} in [{current}]", path, lineno)
            cfg.sections[current][key] = _parse_value(val, path, lineno)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err.strerror}", str(path)) from err
        except UnicodeDecodeError:
            raise ConfigError("config is not valid UTF-8", str(path)) from None
        return cls.from_text(text, str(path))

    # -- typed access -----------------------------------------------------
    def has(self, section, key=None) -> bool:
        if section not in self.sections:
            return False
        return key is None or key in self.sections[section]

    def require(self, section):
        if section not in self.sections:
            raise ConfigError(f"missing section [{section}]", self.path)
        return self.sections[section]

    def _value(self, section, key, required):
        sec = self.sections.get(section, {})
        if key not in sec:
            if required:
                raise ConfigError(f"missing key {key!r} in [{section}]", self.path)
            return None
        return sec[key]

    def number(self, section, key, default=None, required=False) -> float | None:
        v = self._value(section, key, required and default is None)
        if v is None:
            return default
        if not isinstance(v.raw, float) or v.quoted:
            raise ConfigError(f"{key} must be a number", self.path, v.line)
        return v.raw

    def integer(self, section, key, default=None, required=False) -> int | None:
        val = self.number(section, key, default, required)
        if val is None:
            return None
        if float(val) != int(val):
            line = self.sections[section][key].line
            raise ConfigError(f"{key} must be an integer", self.path, line)
        return int(val)

    def numbers(self, section, key, default=None, required=False) -> tuple[float, ...] | None:
        v = self._value(section, key, required and default is None)
        if v is None:
            return default
        if isinstance(v.raw, float) and not v.quoted:
            return (v.raw,)
        if isinstance(v.raw, tuple):
            return v.raw
        raise ConfigError(f"{key} must be a number or a comma-separated list", self.path, v.line)

    def tag(self, section, key, choices, default=None, required=False) -> str | None:
        v = self._value(section, key, required and default is None)
        if v is None:
            return default
        if v.quoted or not isinstance(v.raw, str) or v.raw not in choices:
            raise ConfigError(f"{key} must be one of {', '.join(choices)}", self.path, v.line)
        return v.raw

    def flag(self, section, key, default=False) -> bool:
        return self.tag(section, key, ("true", "false"), "true" if default else "false") == "true"

    def expression(self, section, key, default=None, required=False) -> ex.Expr | None:
        v = self._value(section, key, required and default is None)
        if v is None:
            return None if default is None else ex.as_expr(default)
        if isinstance(v.raw, float) and not v.quoted:
            return ex.Num(v.raw)
        if not v.quoted:
            raise ConfigError(f"{key} must be a quoted expression or a number", self.path, v.line)
        try:
            return ex.parse(v.raw)
        except ParseError as err:
            raise ConfigError(f"invalid expression for {key}: {err}", self.path, v.line) from err

    def line_of(self, section, key) -> int | None:
        v = self.sections.get(section, {}).get(key)
        return None if v is None else v.line


def grid_from_config(cfg: RunConfig, default=(-10.0, 10.0, 400), n_override=None) -> Grid:
    lo = cfg.number("grid", "x_min", default[0])
    hi = cfg.number("grid", "x_max", default[1])
    n = n_override if n_override is not None else cfg.integer("grid", "n", default[2])
    try:
        return Grid(lo, hi, n)
    except Exception as err:
        raise ConfigError(f"invalid grid: {err}", cfg.path, cfg.line_of("grid", "n")) from err


def spec_from_config(cfg: RunConfig) -> GeneratorSpec:
    cfg.require("model")
    td = cfg.flag("model", "time_dependent")
    a = cfg.expression("model", "a", ex.ZERO)
    b = cfg.expression("model", "b", ex.ZERO)
    kind = cfg.tag("model", "jump", ("none", "density", "stable", "symmetric"), "none")
    try:
        if kind == "none":
            jump = NoJump()
        elif kind == "density":
            jump = DensityJump(cfg.expression("model", "nu", required=True), cfg.flag("model", "compensated"))
        elif kind == "stable":
            jump = StableLike(cfg.number("model", "beta", required=True),
                              cfg.tag("model", "side", ("plus", "minus"), "plus"),
                              cfg.expression("model", "scale", ex.ONE))
        else:
            jump = SymmetricStable(cfg.number("model", "beta", required=True), cfg.expression("model", "scale", ex.ONE))
        return GeneratorSpec(a, b, jump, td)
    except ValueError as err:
        raise ConfigError(f"invalid model: {err}", cfg.path, cfg.line_of("model", "jump")) from err
