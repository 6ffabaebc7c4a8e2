"""Run configuration: flat key=value files plus flag overrides.

The key set is closed: unknown keys are rejected with the offending
line.  Merge order is defaults, then file, then flags; the resolved map
is echoed to ``out.dir/config.resolved`` by the runner so every output
directory records exactly what produced it.
"""

from __future__ import annotations

import math

from .errors import ConfigError

__all__ = ["KEYS", "defaults", "parse_config", "parse_value", "resolve"]


def _bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _positive(x):
    return x > 0


def _nonnegative(x):
    return x >= 0


# key -> (parser, default, validator, description)
KEYS = {
    "grid.dim": (int, 2, lambda v: v in (2, 3), "2 or 3"),
    "grid.n": (int, 64, lambda v: v >= 8 and v % 2 == 0, "even, >= 8"),
    "grid.l": (float, 2.0 * math.pi, _positive, "> 0"),
    "solver.kind": (
        str, "stochastic",
        lambda v: v in ("stochastic", "euler", "diffusive", "reference"),
        "stochastic | euler | diffusive | reference",
    ),
    "solver.nu": (float, 0.01, _nonnegative, ">= 0"),
    "solver.dt": (float, 0.01, _positive, "> 0"),
    "solver.t_final": (float, 0.25, _positive, "> 0"),
    "solver.samples": (int, 256, lambda v: v >= 1, ">= 1"),
    "solver.seed": (int, 0, _nonnegative, ">= 0"),
    "solver.picard_tol": (float, 1e-8, _positive, "> 0"),
    "solver.picard_max": (int, 40, lambda v: v >= 1, ">= 1"),
    "solver.remap_threshold": (
        float, 0.4, lambda v: 0.0 < v < 0.5, "in (0, 1/2)",
    ),
    "interp.kind": (
        str, "lagrange", lambda v: v in ("lagrange", "trig"),
        "lagrange | trig",
    ),
    "init.kind": (
        str, "taylor_green",
        lambda v: v in ("taylor_green", "shear", "constant",
                        "random_divfree", "file"),
        "taylor_green | shear | constant | random_divfree | file",
    ),
    "init.param": (str, "", lambda v: True, "free-form"),
    "out.dir": (str, "out", lambda v: bool(v), "non-empty"),
    "out.snapshots": (_bool, False, lambda v: True, "boolean"),
}


def defaults():
    return {key: spec[1] for key, spec in KEYS.items()}


def parse_value(key, raw, where=""):
    """Convert and range-check one raw string against the registry."""
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}{where}")
    parser, _, check, description = KEYS[key]
    try:
        value = parser(raw.strip() if isinstance(raw, str) else raw)
    except (ValueError, TypeError) as err:
        raise ConfigError(
            f"bad value for {key}{where}: {err}"
        ) from None
    if not check(value):
        raise ConfigError(
            f"{key} = {value!r} out of range{where} (expected {description})"
        )
    return value


def parse_config(path=None, flags=None):
    """Merge defaults, an optional key=value file, and flag overrides.

    ``flags`` maps keys to raw strings (or already-typed values).
    Raises :class:`ConfigError` naming the offending line or key.
    """
    config = defaults()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {text!r}"
                )
            key, raw = text.split("=", 1)
            key = key.strip()
            config[key] = parse_value(key, raw, where=f" ({path}:{lineno})")
    for key, raw in (flags or {}).items():
        if isinstance(raw, str):
            config[key] = parse_value(key, raw, where=" (flag)")
        else:
            config[key] = parse_value(key, str(raw), where=" (flag)")
    return config


def resolve(config):
    """Render the resolved configuration as deterministic text."""
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
