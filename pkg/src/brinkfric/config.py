"""Line-oriented run configuration.

Format::

    # comment
    [params]
    nu = 0.1
    a = 1          ; trailing comments start with '#' or ';'

Every key belongs to a ``[section]``. Unknown sections or keys, duplicate
keys and malformed values are errors that name the line.
"""
from dataclasses import dataclass, field
import math

from .core import (
    FORCING_PRESETS,
    INIT_PRESETS,
    ForcingSpec,
    InitSpec,
    PhysicalParams,
    build_grid,
    make_initial,
    make_partition,
)
from .transient import Problem, StepConfig

__all__ = ["ConfigError", "OutputConfig", "RunConfig", "parse_config", "load_config", "SCHEMA"]


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise ValueError(f"expected an integer >= 1, got {v}")
    return v


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _g(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) not in (1, 2):
        raise ValueError("g takes one value or a 'bottom, top' pair")
    vals = tuple(_float(p) for p in parts)
    if any(v < 0 for v in vals):
        raise ValueError("g must be >= 0")
    return vals[0] if len(vals) == 1 else vals


def _word(choices):
    def conv(text):
        t = text.strip()
        if t not in choices:
            raise ValueError(f"expected one of {', '.join(sorted(choices))}; got {t!r}")
        return t
    return conv


def _str(text):
    t = text.strip()
    if not t:
        raise ValueError("empty value")
    return t


# section -> key -> (converter, default); a default of None means required
SCHEMA = {
    "grid": {"nx": (_pos_int, 16), "ny": (_pos_int, 16), "lx": (_float, 1.0), "ly": (_float, 1.0)},
    "params": {"nu": (_float, None), "a": (_float, None), "b": (_float, None),
               "alpha": (_float, None), "eps": (_float, None)},
    "friction": {"g": (_g, 0.0)},
    "forcing": {"preset": (_word(set(FORCING_PRESETS)), "zero"), "amplitude": (_float, 1.0),
                "amplitude_y": (_float, 0.0), "rate": (_float, 1.0)},
    "init": {"preset": (_word(set(INIT_PRESETS)), "zero"), "amplitude": (_float, 1.0)},
    "stepping": {"dt": (_float, 1e-3), "t_end": (_float, 0.1), "picard_tol": (_float, 1e-10),
                 "picard_max": (_pos_int, 200), "uzawa_tol": (_float, 1e-10),
                 "uzawa_max": (_pos_int, 500), "lag_mode": (_bool, True),
                 "predictor": (_word({"newton", "none"}), "newton")},
    "output": {"directory": (_str, "out"), "emit_svg": (_bool, False), "precision": (_pos_int, 17)},
}


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    emit_svg: bool = False
    precision: int = 17


@dataclass(frozen=True, eq=False)
class RunConfig:
    grid: object
    params: PhysicalParams
    g: object
    forcing: ForcingSpec
    init: InitSpec
    stepping: StepConfig
    output: OutputConfig
    values: dict = field(default_factory=dict, repr=False)

    @property
    def partition(self):
        return make_partition(self.grid, self.g)

    @property
    def problem(self):
        return Problem(self.grid, self.partition, self.params, self.forcing)

    def initial_state(self):
        return make_initial(self.init, self.grid)


def _tokenize(text):
    """Yield (section, key, raw value, line number) and collect syntax errors."""
    section = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, value = line.split("=", 1)
        key = key.strip()
        for mark in (" #", "\t#", " ;", "\t;"):
            if mark in value:
                value = value[: value.index(mark)]
        value = value.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {section}.{key} (first set on line {seen[section, key]})"
            )
        seen[section, key] = lineno
        yield section, key, value, lineno


def parse_config(text, overrides=None):
    """Parse and validate config text into a RunConfig.

    ``overrides`` maps dotted keys (``"params.b"``) to raw string values and
    replaces or adds them after parsing, as a sweep does.
    """
    raw = {}
    for section, key, value, lineno in _tokenize(text):
        raw[section, key] = (value, f"line {lineno}")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"override: unknown key {dotted!r}")
        raw[section, key] = (str(value), "override")

    vals = {}
    for section, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            if (section, key) in raw:
                text_value, where = raw[section, key]
                try:
                    vals[section, key] = conv(text_value)
                except ValueError as exc:
                    raise ConfigError(f"{where}: {section}.{key}: {exc}") from None
            elif default is None:
                raise ConfigError(f"missing required key {section}.{key}")
            else:
                vals[section, key] = default

    def where(section, key):
        return raw.get((section, key), (None, "default"))[1]

    def build(section, fn, keys):
        try:
            return fn(**{k: vals[section, k] for k in keys})
        except ValueError as exc:
            msg = str(exc)
            named = [k for k in keys if msg.startswith(k + " ")]
            loc = f"{where(section, named[0])}: {section}.{named[0]}" if named else f"[{section}]"
            raise ConfigError(f"{loc}: {msg}") from None

    for key, ok, rule in (("nx", vals["grid", "nx"] >= 2, ">= 2"), ("ny", vals["grid", "ny"] >= 2, ">= 2"),
                          ("lx", vals["grid", "lx"] > 0, "> 0"), ("ly", vals["grid", "ly"] > 0, "> 0")):
        if not ok:
            raise ConfigError(f"{where('grid', key)}: grid.{key}: must be {rule}")
    grid = build("grid", build_grid, ("nx", "ny", "lx", "ly"))
    params = build("params", PhysicalParams, ("nu", "a", "b", "alpha", "eps"))
    forcing = build("forcing", ForcingSpec, ("preset", "amplitude", "amplitude_y", "rate"))
    if vals["forcing", "rate"] < 0:
        raise ConfigError(f"{where('forcing', 'rate')}: forcing.rate: rate must be >= 0")
    init = build("init", InitSpec, ("preset", "amplitude"))
    stepping = build("stepping", StepConfig, ("dt", "t_end", "picard_tol", "picard_max",
                                              "uzawa_tol", "uzawa_max", "lag_mode", "predictor"))
    if stepping.t_end < stepping.dt:
        raise ConfigError(f"{where('stepping', 't_end')}: stepping.t_end: t_end must be >= dt")
    steps = stepping.t_end / stepping.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"{where('stepping', 't_end')}: stepping.t_end: t_end must be a multiple of dt")
    if not 1 <= vals["output", "precision"] <= 17:
        raise ConfigError(f"{where('output', 'precision')}: output.precision: must lie in [1, 17]")
    output = OutputConfig(vals["output", "directory"], vals["output", "emit_svg"], vals["output", "precision"])
    return RunConfig(grid, params, vals["friction", "g"], forcing, init, stepping, output,
                     values={f"{s}.{k}": v for (s, k), v in vals.items()})


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)

