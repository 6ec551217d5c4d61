import json
import logging
from pathlib import Path
from typing import Any, Dict

import yaml

LOG = logging.getLogger(__name__)


def load_config_file(path: str | None) -> Dict[str, Any]:
    """Best-effort read of optional defaults; a broken file is logged, not fatal."""
    if not path:
        return {}
    file_path = Path(path)
    if not file_path.exists():
        return {}

    try:
        return read_structured(file_path)
    except Exception as exc:  # noqa: BLE001
        LOG.warning("[config] failed to load %s: %r", path, exc)
    return {}


def read_structured(file_path: Path) -> Dict[str, Any]:
    """Parse a YAML or JSON mapping. Raises on bad syntax or non-mapping content."""
    text = file_path.read_text(encoding="utf-8")
    if file_path.suffix.lower() in {".yml", ".yaml"}:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ValueError(f"{file_path}: {exc}") from exc
    elif file_path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        raise ValueError(f"unsupported config extension {file_path.suffix!r}")
    if not isinstance(data, dict):
        raise ValueError(f"{file_path} does not contain a mapping")
    return data
