"""Plain key=value configuration files.

One `key = value` pair per line, `#` comments, no sections.  Values stay
strings; typed getters do the coercion so error messages can name the
offending key.  Command-line flags override file values, which override
built-in defaults.
"""

from __future__ import annotations

from pathlib import Path

from sublm.errors import ConfigError, DataError


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path: str | Path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


class KV:
    """Typed view over merged key=value layers (later layers win)."""

    def __init__(self, *layers: dict):
        self.values: dict[str, str] = {}
        for layer in layers:
            for k, v in layer.items():
                if v is not None:
                    self.values[k] = str(v)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int | None = None) -> int | None:
        if key not in self.values:
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float | None:
        if key not in self.values:
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self.values:
            return default
        value = self.values[key].lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self.values[key]!r}")

    def get_ints(self, key: str, default=None):
        if key not in self.values:
            return default
        try:
            return tuple(int(v) for v in self.values[key].split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"{key} must be a comma list of integers") from None

    def get_strs(self, key: str, default=None):
        if key not in self.values:
            return default
        return tuple(v.strip() for v in self.values[key].split(",") if v.strip())
