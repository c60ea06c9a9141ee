"""
Config Module

Builds the PipelineConfig from built-in defaults, an optional dotenv-style
KEY=VALUE file, ``AVTAG_``-prefixed environment variables and command-line
overrides, in that order of precedence.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

from dotenv import dotenv_values

from core.alias_resolver import AliasParams
from core.dataset_builder import DEFAULT_FLOORS, SplitConfig
from core.errors import ConfigError
from core.label_parser import TAG_CATEGORIES
from core.tagger import Thresholds

log = logging.getLogger(__name__)

PREFIX = "AVTAG_"
DATA_DIR = Path(__file__).resolve().parent.parent / "data"

PATH_KEYS = ("reports", "rules", "wordlist", "affixes", "aliases", "correlations", "output_dir")


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


# key (without prefix) -> parser
_PARSERS: Dict[str, Callable[[str], Any]] = {
    "REPORTS": str,
    "RULES": str,
    "WORDLIST": str,
    "AFFIXES": str,
    "ALIASES": str,
    "CORRELATIONS": str,
    "OUTPUT_DIR": str,
    "THREADS": int,
    "BATCH_SIZE": int,
    "STRICT": _bool,
    "SEED": int,
    "THRESHOLD_BEH": int,
    "THRESHOLD_PLAT": int,
    "THRESHOLD_VULN": int,
    "THRESHOLD_PACK": int,
    "ALIAS_E": float,
    "ALIAS_C": float,
    "SPLIT_MODE": str,
    "TRAIN_CHUNK_MAX": int,
    "FLOOR_BEH": int,
    "FLOOR_PLAT": int,
    "FLOOR_VULN": int,
    "FLOOR_PACK": int,
    "TRAIN_CAP_MULTIPLIER": int,
    "TEST_CAP_MULTIPLIER": int,
    "TEST_FRACTION": float,
}


@dataclass
class PipelineConfig:
    """Everything a subcommand needs; immutable once a run starts."""

    reports: Optional[str] = None
    rules: str = str(DATA_DIR / "default.rules")
    wordlist: str = str(DATA_DIR / "default.wordlist")
    affixes: str = str(DATA_DIR / "default.affixes")
    aliases: Optional[str] = str(DATA_DIR / "default.aliases")
    correlations: str = str(DATA_DIR / "default.correlations")
    output_dir: str = "output"
    thresholds: Thresholds = field(default_factory=Thresholds)
    alias_params: AliasParams = field(default_factory=AliasParams)
    split: SplitConfig = field(default_factory=SplitConfig)
    threads: int = 1
    batch_size: int = 512
    strict: bool = False
    seed: int = 0
    progress: bool = True

    def require(self, *names: str) -> None:
        """
        Check that the named path settings point at existing files.

        Raises:
            ConfigError: unset or missing path
        """
        for name in names:
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"{name} is not set (use --{name.replace('_', '-')} or {PREFIX}{name.upper()})")
            if not Path(value).exists():
                raise ConfigError(f"{name} not found: {value}")

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        return {
            **{key: getattr(self, key) for key in PATH_KEYS},
            "thresholds": {c.value: self.thresholds.get(c) for c in TAG_CATEGORIES},
            "alias_e": self.alias_params.E,
            "alias_c": self.alias_params.C,
            "split": self.split.to_dict(),
            "threads": self.threads,
            "batch_size": self.batch_size,
            "strict": self.strict,
            "seed": self.seed,
        }


def _read_file(path: str) -> Dict[str, str]:
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    base = Path(path).resolve().parent
    settings = {}
    for key, value in values.items():
        if value is None:
            continue
        name = key[len(PREFIX):] if key.startswith(PREFIX) else key
        if name.lower() in PATH_KEYS and value and not Path(value).is_absolute():
            value = str(base / value)
        settings[name] = value
    return settings


def _read_environment(environ: Mapping[str, str]) -> Dict[str, str]:
    return {key[len(PREFIX):]: value for key, value in environ.items() if key.startswith(PREFIX)}


def _parse(raw: Mapping[str, Any]) -> Dict[str, Any]:
    parsed = {}
    for name, value in raw.items():
        parser = _PARSERS.get(name.upper())
        if parser is None:
            log.warning("Ignoring unknown setting %s%s", PREFIX, name.upper())
            continue
        if not isinstance(value, str):
            parsed[name.upper()] = value
            continue
        try:
            parsed[name.upper()] = parser(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{PREFIX}{name.upper()}: invalid value {value!r}") from exc
    return parsed


def _build(settings: Dict[str, Any]) -> PipelineConfig:
    config = PipelineConfig()
    for key in PATH_KEYS:
        if key.upper() in settings:
            setattr(config, key, settings[key.upper()] or None)
    for key in ("threads", "batch_size", "strict", "seed"):
        if key.upper() in settings:
            setattr(config, key, settings[key.upper()])

    if config.threads < 1:
        raise ConfigError(f"{PREFIX}THREADS must be >= 1, got {config.threads}")
    if config.batch_size < 1:
        raise ConfigError(f"{PREFIX}BATCH_SIZE must be >= 1, got {config.batch_size}")

    try:
        config.thresholds = Thresholds(**{
            name: settings.get(f"THRESHOLD_{name.upper()}", getattr(config.thresholds, name))
            for name in ("beh", "plat", "vuln", "pack")
        })
    except ValueError as exc:
        raise ConfigError(f"{PREFIX}THRESHOLD_*: {exc}") from exc

    try:
        config.alias_params = AliasParams(
            E=settings.get("ALIAS_E", config.alias_params.E),
            C=settings.get("ALIAS_C", config.alias_params.C),
        )
    except ValueError as exc:
        raise ConfigError(f"{PREFIX}ALIAS_E/{PREFIX}ALIAS_C: {exc}") from exc

    floors = {
        category: settings.get(f"FLOOR_{category.value}", floor) for category, floor in DEFAULT_FLOORS.items()
    }
    defaults = SplitConfig()
    try:
        config.split = SplitConfig(
            mode=settings.get("SPLIT_MODE", defaults.mode),
            train_chunk_max=settings.get("TRAIN_CHUNK_MAX", defaults.train_chunk_max),
            floors=floors,
            train_cap_multiplier=settings.get("TRAIN_CAP_MULTIPLIER", defaults.train_cap_multiplier),
            test_cap_multiplier=settings.get("TEST_CAP_MULTIPLIER", defaults.test_cap_multiplier),
            test_fraction=settings.get("TEST_FRACTION", defaults.test_fraction),
            rng_seed=config.seed,
        )
    except ValueError as exc:
        raise ConfigError(f"split settings: {exc}") from exc
    return config


def load_config(
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """
    Resolve the effective configuration.

    Args:
        config_path: Optional dotenv-style file
        overrides: Command-line values keyed by setting name (``threads``,
            ``seed``, ...); None values are ignored
        environ: Environment mapping, defaults to ``os.environ``

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: unreadable file, unparsable or out-of-range value
    """
    settings: Dict[str, Any] = {}
    if config_path:
        settings.update(_parse(_read_file(config_path)))
    settings.update(_parse(_read_environment(os.environ if environ is None else environ)))
    if overrides:
        settings.update(_parse({key: value for key, value in overrides.items() if value is not None}))
    config = _build(settings)
    log.debug("Effective configuration: %s", config.to_dict())
    return config

