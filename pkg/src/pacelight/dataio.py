"""On-disk dataset format: a JSON manifest plus one packed binary file of
per-record blobs.

Blob layout (little-endian):
    magic   7 bytes  b"PACEDS1"
    pad     1 byte   0
    M, N    uint32 each
    dtypes  5 bytes, one per channel: 0 = f32, 1 = f64
    payload channels in fixed order [eps, src_re, src_im, field_re, field_im],
            each M*N raw values
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import CorruptRecord, EmptyDataset
from .fields import SimDomain, SimulationInstance, assemble_instance, build_domain

MAGIC = b"PACEDS1"
FORMAT_VERSION = 1
DATA_FILE = "records.bin"
MANIFEST_FILE = "manifest.json"
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}

_HEADER = struct.Struct("<7sxII5B")


def pack_record(eps: np.ndarray, src: np.ndarray, fld: np.ndarray,
                dtype: np.dtype = np.dtype("float64")) -> bytes:
    """Serialize one record; eps real, src/field complex, all (M, N)."""
    m, n = eps.shape
    tag = _TAG_OF[np.dtype(dtype)]
    channels = [np.real(eps), np.real(src), np.imag(src), np.real(fld), np.imag(fld)]
    header = _HEADER.pack(MAGIC, m, n, *([tag] * 5))
    body = b"".join(np.ascontiguousarray(c, dtype=_DTYPE_TAGS[tag]).tobytes()
                    for c in channels)
    return header + body


def unpack_record(blob: bytes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of pack_record -> (eps, src, field)."""
    if len(blob) < _HEADER.size:
        raise CorruptRecord("blob shorter than header")
    magic, m, n, *tags = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptRecord(f"bad magic {magic!r}")
    offset = _HEADER.size
    channels = []
    for tag in tags:
        if tag not in _DTYPE_TAGS:
            raise CorruptRecord(f"unknown dtype tag {tag}")
        dt = _DTYPE_TAGS[tag]
        nbytes = m * n * dt.itemsize
        if offset + nbytes > len(blob):
            raise CorruptRecord("payload shorter than declared by header")
        channels.append(np.frombuffer(blob, dtype=dt, count=m * n,
                                      offset=offset).reshape(m, n))
        offset += nbytes
    if offset != len(blob):
        raise CorruptRecord("payload longer than declared by header")
    eps, sr, si, fr, fi = channels
    return (eps.astype(np.float64),
            (sr + 1j * si).astype(np.complex128),
            (fr + 1j * fi).astype(np.complex128))


@dataclass
class RecordMeta:
    id: str
    device: dict                 # device spec as JSON
    port: int
    wavelength: float
    split: str                   # train | val | test
    offset: int
    length: int
    residual: float
    status: str = "ok"           # ok | failed

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_json(d: dict) -> "RecordMeta":
        return RecordMeta(**d)


@dataclass
class DatasetManifest:
    format_version: int
    seed: int
    config_hash: str
    domain: dict                 # {l_x, l_z, M, N}
    records: list[RecordMeta]
    stats: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "domain": self.domain,
            "stats": self.stats,
            "notes": self.notes,
            "records": [r.to_json() for r in self.records],
        }

    @staticmethod
    def from_json(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            format_version=d["format_version"],
            seed=d["seed"],
            config_hash=d["config_hash"],
            domain=d["domain"],
            stats=d.get("stats", {}),
            notes=d.get("notes", {}),
            records=[RecordMeta.from_json(r) for r in d["records"]],
        )

    def split_ids(self, split: str) -> list[str]:
        return [r.id for r in self.records if r.split == split and r.status == "ok"]

    def sim_domain(self) -> SimDomain:
        d = self.domain
        return build_domain(d["l_x"], d["l_z"], d["M"], d["N"])


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def write_dataset(out_dir, manifest: DatasetManifest, blobs: dict[str, bytes]) -> None:
    """Write the packed data file and manifest; fills offsets/lengths in place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(out / DATA_FILE, "wb") as f:
        for rec in manifest.records:
            if rec.status != "ok":
                rec.offset, rec.length = 0, 0
                continue
            blob = blobs[rec.id]
            rec.offset, rec.length = offset, len(blob)
            f.write(blob)
            offset += len(blob)
    with open(out / MANIFEST_FILE, "w") as f:
        json.dump(manifest.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(data_dir) -> DatasetManifest:
    with open(Path(data_dir) / MANIFEST_FILE) as f:
        return DatasetManifest.from_json(json.load(f))


class Dataset:
    """Random access to dataset records as SimulationInstances."""

    def __init__(self, data_dir):
        self.dir = Path(data_dir)
        self.manifest = read_manifest(self.dir)
        if not any(r.status == "ok" for r in self.manifest.records):
            raise EmptyDataset(f"no usable records in {data_dir}")
        self.domain = self.manifest.sim_domain()
        self._by_id = {r.id: r for r in self.manifest.records}

    def raw(self, record_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rec = self._by_id[record_id]
        if rec.status != "ok":
            raise CorruptRecord(f"record {record_id} is flagged {rec.status}")
        with open(self.dir / DATA_FILE, "rb") as f:
            f.seek(rec.offset)
            blob = f.read(rec.length)
        if len(blob) != rec.length:
            raise CorruptRecord(f"record {record_id} truncated")
        return unpack_record(blob)

    def instance(self, record_id: str) -> SimulationInstance:
        rec = self._by_id[record_id]
        eps, src, fld = self.raw(record_id)
        return assemble_instance(eps.astype(np.complex128), src, rec.wavelength,
                                 self.domain, target=fld)

    def meta(self, record_id: str) -> RecordMeta:
        return self._by_id[record_id]

    def ids(self, split: Optional[str] = None) -> list[str]:
        if split is None:
            return [r.id for r in self.manifest.records if r.status == "ok"]
        return self.manifest.split_ids(split)

    def __len__(self) -> int:
        return sum(1 for r in self.manifest.records if r.status == "ok")

    def __iter__(self) -> Iterator[SimulationInstance]:
        for rid in self.ids():
            yield self.instance(rid)
