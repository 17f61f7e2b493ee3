"""JSON-lines annotation/detection records and binary PGM/PPM images.

One line per image::

    {"image_id": "000001", "width": 800, "height": 600,
     "objects": [{"class_id": 0, "bbox": [x1, y1, x2, y2],
                  "polygon": [[x, y], ...], "score": 0.9}]}

``polygon`` and ``score`` are optional; ``score`` marks a detection file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from .detect_eval import Detection, GroundTruth
from .geometry import Box, Polygon


class DataError(ValueError):
    """Malformed input data; carries the offending location in its message."""


class ObjectRecord(BaseModel):
    class_id: int = Field(ge=0)
    bbox: tuple[float, float, float, float]
    polygon: Optional[list[tuple[float, float]]] = None
    score: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    @field_validator("bbox")
    @classmethod
    def _corners(cls, v):
        if v[2] < v[0] or v[3] < v[1]:
            raise ValueError(f"bbox corners out of order: {list(v)}")
        return v

    @field_validator("polygon")
    @classmethod
    def _min_vertices(cls, v):
        if v is not None and len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        return v

    def to_box(self) -> Box:
        return Box(*self.bbox, class_id=self.class_id, score=self.score)

    def to_polygon(self) -> Optional[Polygon]:
        return None if self.polygon is None else Polygon(self.polygon)


class AnnotationRecord(BaseModel):
    image_id: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    objects: list[ObjectRecord] = Field(default_factory=list)

    def boxes(self) -> list[Box]:
        return [o.to_box() for o in self.objects]

    def ground_truth(self) -> list[GroundTruth]:
        return [
            GroundTruth(o.to_box(), o.to_polygon(), o.class_id, self.image_id)
            for o in self.objects
        ]

    def detections(self) -> list[Detection]:
        return [
            Detection(o.to_box(), o.to_polygon(), o.score if o.score is not None else 1.0,
                      o.class_id, self.image_id)
            for o in self.objects
        ]


def object_record(box: Box, polygon: Optional[Polygon] = None, score=None) -> ObjectRecord:
    poly = None if polygon is None else [tuple(map(float, p)) for p in polygon.vertices]
    return ObjectRecord(
        class_id=box.class_id,
        bbox=(box.x1, box.y1, box.x2, box.y2),
        polygon=poly,
        score=score,
    )


def parse_record(line: str, where: str = "<line>") -> AnnotationRecord:
    try:
        return AnnotationRecord.model_validate_json(line)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise DataError(f"{where}: {loc}: {first['msg']}") from None


def read_jsonl(path) -> Iterator[AnnotationRecord]:
    path = Path(path)
    with path.open() as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                yield parse_record(line, f"{path}:{n}")


def dump_record(rec: AnnotationRecord) -> str:
    # round-trip through the validator so nothing invalid ever reaches disk
    text = rec.model_dump_json(exclude_none=True)
    AnnotationRecord.model_validate_json(text)
    return text


def write_jsonl(path, records: Iterable[AnnotationRecord]) -> int:
    n = 0
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(dump_record(rec) + "\n")
            n += 1
    return n


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise DataError("truncated PNM header")
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) as ``(H, W)`` or PPM (P6) as ``(H, W, 3)``; 8 or 16 bit."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported image type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    if len(data) - offset < n * dtype.itemsize:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return pixels.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pnm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    maxval = 65535 if img.dtype == np.uint16 else 255
    body = img.astype(">u2" if maxval > 255 else "u1").tobytes()
    header = b"%s\n%d %d\n%d\n" % (magic, img.shape[1], img.shape[0], maxval)
    Path(path).write_bytes(header + body)


def load_json(path):
    return json.loads(Path(path).read_text())
