"""Report writers and the run manifest. Every file is written atomically."""
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

from pydantic import BaseModel

from . import __version__
from .evaluation import FoldReport

LOG = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def write_atomic(path: str | Path, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over `path`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    LOG.debug("[reports] wrote %s", target)
    return target


def csv_text(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def json_text(data: Any) -> str:
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


def write_csv(path: str | Path, rows: Iterable[Sequence[Any]]) -> Path:
    return write_atomic(path, csv_text(rows))


def write_json(path: str | Path, data: Any) -> Path:
    return write_atomic(path, json_text(data))


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest(BaseModel):
    """What a run was given. No timestamps, so identical runs write identical manifests."""

    subcommand: str
    config: dict[str, Any]
    inputs: dict[str, str] = {}
    version: str = __version__
    seed: int

    @classmethod
    def for_run(cls, subcommand: str, config: dict[str, Any], inputs: dict[str, str | Path | None], seed: int):
        digests = {name: file_digest(path) for name, path in sorted(inputs.items()) if path is not None}
        return cls(subcommand=subcommand, config=config, inputs=digests, seed=seed)

    def write(self, out_dir: str | Path) -> Path:
        return write_json(Path(out_dir) / MANIFEST_NAME, self.model_dump())


def percent(value: float | None, digits: int = 1) -> str:
    return "" if value is None else f"{100.0 * value:.{digits}f}"


def fold_rows(report: FoldReport) -> list[list[str]]:
    """Per-fold `fold,eer,accuracy` rows, rates in percent."""
    rows = [["fold", "eer", "accuracy"]]
    accuracies = report.accuracies or [None] * len(report.folds)
    for fold, eer, acc in zip(report.folds, report.eers, accuracies):
        rows.append([str(fold), percent(eer), percent(acc)])
    return rows
