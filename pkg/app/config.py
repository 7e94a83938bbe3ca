import os
from dotenv import load_dotenv
from pathlib import Path
from typing import Dict, Iterable, Optional

from pydantic import ValidationError

from app.errors import ConfigError
from app.models import RunConfig

load_dotenv()

class Settings:
    """Application configuration settings."""

    APP_NAME: str = os.getenv("APP_NAME", "GSMFlow")
    APP_VERSION: str = os.getenv("APP_VERSION", "1.0.0")
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    LOG_DIR: str = os.getenv("LOG_DIR", "logs")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))

settings = Settings()


_NULLS = {"", "none", "null"}


def parse_assignments(lines: Iterable[str], source: str = "<overrides>") -> Dict[str, str]:
    """Parse flat ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values: Dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{line_no}: expected key=value, got '{line}'")
        values[key.strip()] = value.strip()
    return values


def _nest(flat: Dict[str, str]) -> Dict:
    tree: Dict = {}
    for key, value in flat.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"config key '{key}' conflicts with scalar '{part}'")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"config key '{key}' names a section, not a value")
        node[parts[-1]] = None if value.lower() in _NULLS else value
    return tree


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    Build a RunConfig with precedence: overrides > config file > defaults.
    Unknown keys and invalid values raise ConfigError naming the key.
    """
    flat: Dict[str, str] = {}
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        flat.update(parse_assignments(config_path.read_text(encoding="utf-8").splitlines(), str(config_path)))
    flat.update(overrides or {})
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}")
