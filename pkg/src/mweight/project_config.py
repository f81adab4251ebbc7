"""mweight.toml project config: numeric defaults and simulation settings."""

from __future__ import annotations

import dataclasses
import types
from collections.abc import Mapping
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._config import configure
from .exceptions import ConfigError


# key → accepted Python types
_DEFAULT_KEYS: dict[str, tuple[type, ...]] = {
    "delta":    (float,),
    "tol":      (float,),
    "max_iter": (int,),
    "jac_step": (float,),
    "bins":     (int,),
    "caliper":  (float, int),
    "n_strata": (int,),
    "n_jobs":   (int,),
}

_SIMULATE_KEYS: dict[str, tuple[type, ...]] = {
    "seed":   (int,),
    "reps":   (int,),
    "n":      (int,),
    "n_jobs": (int,),
}


@dataclasses.dataclass(frozen=True)
class ProjectConfig:
    """
    Loaded mweight.toml.

    Optional. Every setting has a built-in default; the file lets a project pin
    its numerical choices and simulation settings without repeating CLI flags.

    defaults: [defaults] table, forwarded to configure()
    simulate: [simulate] table, used as simulate subcommand defaults

    Both mappings are read-only (MappingProxyType) after construction.
    """
    defaults: Mapping[str, Any]
    simulate: Mapping[str, Any]

    def __post_init__(self) -> None:
        object.__setattr__(self, "defaults", types.MappingProxyType(dict(self.defaults)))
        object.__setattr__(self, "simulate", types.MappingProxyType(dict(self.simulate)))

    # -----------------------------------------------------------------------
    # Construction
    # -----------------------------------------------------------------------

    @classmethod
    def load(cls, path: Path | str | None = None) -> ProjectConfig:
        """
        Load config from mweight.toml. Returns an empty config if the file does
        not exist. Raises ConfigError on parse or validation errors.

        Args:
            path: Path to mweight.toml. Defaults to ./mweight.toml.
        """
        resolved = Path(path) if path is not None else Path("mweight.toml")
        if not resolved.exists():
            return cls.empty()
        with open(resolved, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"mweight.toml: TOML parse error: {exc}") from exc
        return cls._parse(raw)

    @classmethod
    def empty(cls) -> ProjectConfig:
        """Return a config with no overrides."""
        return cls(defaults={}, simulate={})

    @classmethod
    def _parse(cls, raw: dict[str, Any]) -> ProjectConfig:
        unknown = set(raw) - {"defaults", "simulate"}
        if unknown:
            raise ConfigError(
                f"mweight.toml: unknown table(s) {sorted(unknown)}. "
                f"Valid tables: ['defaults', 'simulate']"
            )
        return cls(
            defaults=_parse_table(raw.get("defaults", {}), "defaults", _DEFAULT_KEYS),
            simulate=_parse_table(raw.get("simulate", {}), "simulate", _SIMULATE_KEYS),
        )

    # -----------------------------------------------------------------------
    # Application
    # -----------------------------------------------------------------------

    def apply(self) -> None:
        """Push [defaults] into the process-wide configuration."""
        if self.defaults:
            configure(**dict(self.defaults))

    def simulate_default(self, key: str, fallback: Any) -> Any:
        """Return the [simulate] value for key, or fallback if not set."""
        return self.simulate.get(key, fallback)


def _parse_table(
    table: Any,
    name: str,
    allowed: dict[str, tuple[type, ...]],
) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(f"mweight.toml: [{name}] must be a table")
    parsed: dict[str, Any] = {}
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(
                f"mweight.toml: unknown key '{key}' in [{name}]. "
                f"Valid keys: {sorted(allowed)}"
            )
        # bool is an int subclass; never accept it for numeric settings
        if isinstance(value, bool) or not isinstance(value, allowed[key]):
            expected = " or ".join(t.__name__ for t in allowed[key])
            raise ConfigError(
                f"mweight.toml: [{name}] {key} must be {expected}, "
                f"got {type(value).__name__!r}"
            )
        parsed[key] = value
    return parsed
