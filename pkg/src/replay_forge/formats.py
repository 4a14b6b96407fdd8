"""VOL1 binary tensors and episode manifests.

VOL1 layout, all integers little-endian, no padding::

    b"VOL1" | dtype:u8 | ndim:u8 | dims:u32 * ndim | payload (C order)

dtype 0 is float32, dtype 1 is uint8.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadDtype,
    BadMagic,
    DimensionMismatch,
    DuplicateSampleId,
    MissingField,
    MissingFile,
    NdimOutOfRange,
    SchemaMismatch,
    TruncatedPayload,
    UnknownModalityKey,
    Vol1Error,
)

MAGIC = b"VOL1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}
MANIFEST_VERSION = "1.0"


@dataclass(frozen=True)
class Vol1Header:
    dtype_code: int
    dims: tuple[int, ...]

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.dtype_code]

    @property
    def header_size(self) -> int:
        return 6 + 4 * len(self.dims)

    @property
    def payload_size(self) -> int:
        return self.dtype.itemsize * int(np.prod(self.dims, dtype=np.int64))


def _vol1_dtype(arr: np.ndarray) -> np.dtype:
    if arr.dtype == bool or arr.dtype == np.uint8:
        return np.dtype("u1")
    if np.issubdtype(arr.dtype, np.floating):
        return np.dtype("<f4")
    raise BadDtype(f"VOL1 stores float32 or uint8, not {arr.dtype}")


def write_vol1(tensor) -> bytes:
    arr = np.asarray(tensor)
    if not 1 <= arr.ndim <= 5:
        raise NdimOutOfRange(f"VOL1 supports 1..5 dims, got {arr.ndim}")
    dt = _vol1_dtype(arr)
    header = MAGIC + struct.pack("<BB", CODES[dt], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes(order="C")


def read_vol1_header(data: bytes) -> Vol1Header:
    if len(data) < 6:
        raise TruncatedPayload("file shorter than the fixed VOL1 header")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:4])!r}")
    code, ndim = data[4], data[5]
    if code not in DTYPES:
        raise BadDtype(f"unknown dtype code {code}")
    if not 1 <= ndim <= 5:
        raise NdimOutOfRange(f"ndim {ndim} outside 1..5")
    if len(data) < 6 + 4 * ndim:
        raise TruncatedPayload("file ends inside the dims table")
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    return Vol1Header(code, tuple(dims))


def read_vol1(data: bytes) -> tuple[np.ndarray, Vol1Header]:
    header = read_vol1_header(data)
    start = header.header_size
    have = len(data) - start
    if have < header.payload_size:
        raise TruncatedPayload(f"payload has {have} bytes, header needs {header.payload_size}")
    if have > header.payload_size:
        raise Vol1Error(f"{have - header.payload_size} trailing bytes after payload")
    arr = np.frombuffer(data, dtype=header.dtype, offset=start, count=int(np.prod(header.dims)))
    return arr.reshape(header.dims).copy(), header


def write_vol1_file(path, tensor) -> None:
    Path(path).write_bytes(write_vol1(tensor))


def read_vol1_file(path) -> tuple[np.ndarray, Vol1Header]:
    return read_vol1(Path(path).read_bytes())


def load_prob(path) -> np.ndarray:
    arr, _ = read_vol1_file(path)
    return arr.astype(np.float64)


def load_mask(path) -> np.ndarray:
    arr, _ = read_vol1_file(path)
    return arr.astype(bool)


# manifests


@dataclass
class SampleRecord:
    sample_id: str
    modalities: dict[str, str] = field(default_factory=dict)
    gt: str | None = None
    prob: str | None = None


@dataclass
class EpisodeManifest:
    episode: str
    lesion_type: str
    modalities: list[str]
    samples: list[SampleRecord]
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def sources(self, sample: SampleRecord) -> dict:
        """Resolved file paths for a sample, as stored in replay-buffer entries."""
        return {
            "prob": self.resolve(sample.prob).as_posix() if sample.prob else None,
            "gt": self.resolve(sample.gt).as_posix() if sample.gt else None,
            "modalities": {k: self.resolve(v).as_posix() for k, v in sample.modalities.items()},
        }

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "episode": self.episode,
            "lesion_type": self.lesion_type,
            "modalities": list(self.modalities),
            "samples": [
                {"sample_id": s.sample_id, "modalities": dict(s.modalities), "gt": s.gt, "prob": s.prob}
                for s in self.samples
            ],
        }


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise MissingField(f"{where}: missing field {key!r}")
    return doc[key]


def manifest_from_json(doc: dict, root: Path = Path(".")) -> EpisodeManifest:
    version = str(_require(doc, "version", "manifest"))
    if version.split(".")[0] != MANIFEST_VERSION.split(".")[0]:
        raise SchemaMismatch(f"unsupported manifest version {version!r}")
    samples = []
    for i, s in enumerate(_require(doc, "samples", "manifest")):
        samples.append(
            SampleRecord(
                sample_id=str(_require(s, "sample_id", f"samples[{i}]")),
                modalities=dict(s.get("modalities") or {}),
                gt=_require(s, "gt", f"samples[{i}]"),
                prob=s.get("prob"),
            )
        )
    return EpisodeManifest(
        episode=str(_require(doc, "episode", "manifest")),
        lesion_type=str(_require(doc, "lesion_type", "manifest")),
        modalities=[str(m) for m in _require(doc, "modalities", "manifest")],
        samples=samples,
        root=root,
    )


def load_manifest(path) -> EpisodeManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MissingField(f"{path}: not valid JSON ({exc})") from exc
    return manifest_from_json(doc, root=path.parent)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_manifest(m: EpisodeManifest, check_files: bool = True) -> list[Violation]:
    """Collect every problem instead of stopping at the first."""
    out: list[Violation] = []
    seen: set[str] = set()
    # compare modality keys case-insensitively, as the channel layout does
    listed = {str(x).strip().upper() for x in m.modalities}
    if not m.modalities:
        out.append(Violation("MissingField", "episode lists no modalities"))
    for s in m.samples:
        if s.sample_id in seen:
            out.append(Violation("DuplicateSampleId", f"sample_id {s.sample_id!r} appears twice"))
        seen.add(s.sample_id)
        for key in s.modalities:
            if str(key).strip().upper() not in listed:
                out.append(
                    Violation("UnknownModalityKey", f"{s.sample_id}: modality {key!r} not in {m.modalities}")
                )
        if not check_files:
            continue
        dims = {}
        paths = [("gt", s.gt), ("prob", s.prob)] + [(f"modality {k}", v) for k, v in s.modalities.items()]
        for label, rel in paths:
            if rel is None:
                continue
            p = m.resolve(rel)
            if not p.is_file():
                out.append(Violation("MissingFile", f"{s.sample_id}: {label} file {p} not found"))
                continue
            try:
                with open(p, "rb") as fh:
                    header = read_vol1_header(fh.read(26))
            except Vol1Error as exc:
                out.append(Violation(exc.code, f"{s.sample_id}: {label}: {exc}"))
                continue
            dims[label] = header.dims
        if len(set(dims.values())) > 1:
            out.append(Violation("DimensionMismatch", f"{s.sample_id}: inconsistent dims {dims}"))
        elif dims and len(next(iter(dims.values()))) != 3:
            out.append(Violation("DimensionMismatch", f"{s.sample_id}: volumes are not 3D"))
    return out


_ERRORS = {
    "MissingField": MissingField,
    "DuplicateSampleId": DuplicateSampleId,
    "UnknownModalityKey": UnknownModalityKey,
    "MissingFile": MissingFile,
    "DimensionMismatch": DimensionMismatch,
}


def check_manifest(m: EpisodeManifest, check_files: bool = True) -> EpisodeManifest:
    """Raise the first violation as an exception; return the manifest if clean."""
    problems = validate_manifest(m, check_files)
    if problems:
        first = problems[0]
        exc = _ERRORS.get(first.code, Vol1Error)
        raise exc("; ".join(str(p) for p in problems))
    return m
