"""
Report writers: flat TOML config echo, diagnostics CSV, JSON reports and
phase-table archives. Every file is written to a temporary sibling and then
renamed into place.
"""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        dir=path.parent, prefix=f".{path.name}.", delete=False
    ) as handle:
        handle.write(data)
        handle.flush()
        os.fsync(handle.fileno())
        tmp_name = handle.name
    os.replace(tmp_name, path)
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(item) for item in value) + "]"
    raise TypeError(f"Cannot express {type(value).__name__} as a flat TOML value")


def config_to_toml(config: BaseModel) -> str:
    """Render a flat settings model as a TOML document keyed by its aliases."""
    data = config.model_dump(mode="json", by_alias=True)
    lines = [
        f"{key} = {_toml_value(value)}"
        for key, value in data.items()
        if value is not None
    ]
    return "\n".join(lines) + "\n"


def write_json(model: BaseModel, path: Path) -> None:
    atomic_write_text(path, model.model_dump_json(indent=2) + "\n")


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: Iterable[BaseModel], columns: Sequence[str], path: Path) -> None:
    """Write model rows in a fixed column order; floats keep full precision."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        data = row.model_dump()
        writer.writerow([_csv_cell(data[column]) for column in columns])
    atomic_write_text(path, buffer.getvalue())


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def write_arrays(path: Path, arrays: Dict[str, np.ndarray]) -> None:
    buffer = io.BytesIO()
    np.savez_compressed(buffer, **arrays)
    atomic_write_bytes(path, buffer.getvalue())
