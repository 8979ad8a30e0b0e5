"""Line-based `key = value` run configuration files.

Blank lines and lines starting with ``#`` are ignored.  Each command
declares a schema (key -> type and default); unknown keys and missing
required keys are configuration errors so typos fail loudly.
"""

from pathlib import Path

from udeer.errors import ConfigError

REQUIRED = object()


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def typed_config(raw: dict[str, str], schema: dict[str, tuple]) -> dict:
    """Validate raw strings against (type, default) pairs from `schema`."""
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out: dict = {}
    for key, (kind, default) in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"missing required config key: {key}")
            out[key] = default
            continue
        value = raw[key]
        try:
            if kind is bool:
                out[key] = _parse_bool(value)
            else:
                out[key] = kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"key {key!r}: cannot parse {value!r} as {kind.__name__}") from exc
    return out
