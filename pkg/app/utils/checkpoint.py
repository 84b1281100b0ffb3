"""
Binary snapshot files.

A 40-byte little-endian header followed by the spinor payload: component-major,
x fastest, each value an interleaved (re, im) complex128.
"""

import logging
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models import CheckpointFormatError, Representation, UnsupportedVersionError
from app.spectral import SpinorField, make_grid
from app.utils.reports import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"DIRSCAT1"
FORMAT_VERSION = 1
LAYOUT_COMPONENT_MAJOR_X_FASTEST = 1
PAYLOAD_DTYPE = np.dtype("<c16")

HEADER_DTYPE = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n_per_axis", "<u4"),
        ("box_length", "<f8"),
        ("time", "<f8"),
        ("content", "<u4"),
        ("layout", "<u4"),
    ]
)


class CheckpointContent(int, Enum):
    FULL = 0
    PROFILE_PLUS = 1
    PROFILE_MINUS = 2


class CheckpointHeader(BaseModel):
    version: int = FORMAT_VERSION
    n_per_axis: int = Field(gt=0)
    box_length: float = Field(gt=0)
    time: float
    content: CheckpointContent = CheckpointContent.FULL
    layout: int = LAYOUT_COMPONENT_MAJOR_X_FASTEST

    @property
    def payload_bytes(self) -> int:
        return 4 * self.n_per_axis**3 * PAYLOAD_DTYPE.itemsize

    def to_bytes(self) -> bytes:
        record = np.array(
            [
                (
                    MAGIC,
                    self.version,
                    self.n_per_axis,
                    self.box_length,
                    self.time,
                    int(self.content),
                    self.layout,
                )
            ],
            dtype=HEADER_DTYPE,
        )
        return record.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CheckpointHeader":
        if len(data) < HEADER_DTYPE.itemsize:
            raise CheckpointFormatError(
                f"Header needs {HEADER_DTYPE.itemsize} bytes, got {len(data)}"
            )
        record = np.frombuffer(data[: HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
        if bytes(record["magic"]) != MAGIC:
            raise CheckpointFormatError(
                f"Bad magic {bytes(record['magic'])!r}, expected {MAGIC!r}"
            )
        version = int(record["version"])
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"Checkpoint version {version} is not supported "
                f"(this build reads version {FORMAT_VERSION})"
            )
        layout = int(record["layout"])
        if layout != LAYOUT_COMPONENT_MAJOR_X_FASTEST:
            raise CheckpointFormatError(f"Unknown payload layout {layout}")
        try:
            content = CheckpointContent(int(record["content"]))
        except ValueError as e:
            raise CheckpointFormatError(f"Unknown content flag: {e}") from e
        return cls(
            version=version,
            n_per_axis=int(record["n_per_axis"]),
            box_length=float(record["box_length"]),
            time=float(record["time"]),
            content=content,
            layout=layout,
        )


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    time: float
    content: CheckpointContent = CheckpointContent.FULL
    field: SpinorField


def write_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """Full states are stored physical, profiles spectral."""
    field = checkpoint.field
    if checkpoint.content is CheckpointContent.FULL:
        field = field.to_physical()
    else:
        field = field.to_spectral()
    header = CheckpointHeader(
        n_per_axis=field.grid.n_per_axis,
        box_length=field.grid.box_length,
        time=checkpoint.time,
        content=checkpoint.content,
    )
    payload = np.ascontiguousarray(
        field.values.transpose(0, 3, 2, 1), dtype=PAYLOAD_DTYPE
    )
    atomic_write_bytes(Path(path), header.to_bytes() + payload.tobytes())
    logger.debug(
        f"Checkpoint t={checkpoint.time} ({checkpoint.content.name}) -> {path}"
    )


def read_checkpoint(path: Path) -> Checkpoint:
    data = Path(path).read_bytes()
    header = CheckpointHeader.from_bytes(data)
    payload = data[HEADER_DTYPE.itemsize :]
    if len(payload) != header.payload_bytes:
        raise CheckpointFormatError(
            f"{path}: payload has {len(payload)} bytes, header requires "
            f"{header.payload_bytes}"
        )
    n = header.n_per_axis
    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(4, n, n, n)
    representation = (
        Representation.PHYSICAL
        if header.content is CheckpointContent.FULL
        else Representation.SPECTRAL
    )
    field = SpinorField(
        grid=make_grid(n, header.box_length),
        values=values.transpose(0, 3, 2, 1).astype(np.complex128),
        representation=representation,
    )
    return Checkpoint(time=header.time, content=header.content, field=field)
