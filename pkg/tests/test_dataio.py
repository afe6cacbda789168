import json

import numpy as np
import pytest

from pacelight import dataio
from pacelight.dataio import (
    Dataset,
    DatasetManifest,
    RecordMeta,
    config_hash,
    pack_record,
    read_manifest,
    unpack_record,
    write_dataset,
)
from pacelight.errors import CorruptRecord, EmptyDataset


def sample_arrays(m=4, n=6, seed=0):
    rng = np.random.default_rng(seed)
    eps = 1.0 + rng.random((m, n))
    src = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    fld = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    return eps, src, fld


class TestRecordBlob:
    def test_roundtrip_f64(self):
        eps, src, fld = sample_arrays()
        e2, s2, f2 = unpack_record(pack_record(eps, src, fld))
        assert np.array_equal(e2, eps)
        assert np.array_equal(s2, src)
        assert np.array_equal(f2, fld)

    def test_roundtrip_f32(self):
        eps, src, fld = sample_arrays()
        blob = pack_record(eps, src, fld, dtype=np.dtype("float32"))
        e2, s2, f2 = unpack_record(blob)
        assert np.allclose(e2, eps, atol=1e-6)
        assert e2.dtype == np.float64  # promoted on read

    def test_blob_length_matches_header_declaration(self):
        eps, src, fld = sample_arrays(3, 5)
        blob = pack_record(eps, src, fld)
        assert len(blob) == dataio._HEADER.size + 5 * 3 * 5 * 8

    def test_bad_magic(self):
        blob = pack_record(*sample_arrays())
        with pytest.raises(CorruptRecord):
            unpack_record(b"XACEDS1" + blob[7:])

    def test_truncated(self):
        blob = pack_record(*sample_arrays())
        with pytest.raises(CorruptRecord):
            unpack_record(blob[:-8])
        with pytest.raises(CorruptRecord):
            unpack_record(blob[:4])

    def test_trailing_garbage(self):
        blob = pack_record(*sample_arrays())
        with pytest.raises(CorruptRecord):
            unpack_record(blob + b"\x00" * 8)

    def test_unknown_dtype_tag(self):
        blob = bytearray(pack_record(*sample_arrays()))
        blob[dataio._HEADER.size - 1] = 9
        with pytest.raises(CorruptRecord):
            unpack_record(bytes(blob))


def make_manifest(n_records=3, m=4, n=6):
    records = []
    blobs = {}
    for i in range(n_records):
        rid = f"d{i:04d}_p0"
        records.append(RecordMeta(id=rid, device={"kind": "etched_mmi"}, port=0,
                                  wavelength=1.55, split="train", offset=0,
                                  length=0, residual=1e-12))
        blobs[rid] = pack_record(*sample_arrays(m, n, seed=i))
    manifest = DatasetManifest(
        format_version=1, seed=0, config_hash="abc",
        domain={"l_x": 1.0, "l_z": 1.5, "M": m, "N": n},
        records=records,
        stats={"field_rms": 1.0, "source_rms": 1.0, "eps_min": 1.0, "eps_max": 2.0})
    return manifest, blobs


class TestManifest:
    def test_json_roundtrip(self):
        manifest, _ = make_manifest()
        again = DatasetManifest.from_json(manifest.to_json())
        assert again.to_json() == manifest.to_json()

    def test_config_hash_stable_and_order_free(self):
        a = config_hash({"x": 1, "y": [2, 3]})
        b = config_hash({"y": [2, 3], "x": 1})
        assert a == b and len(a) == 16

    def test_split_ids_filter_failures(self):
        manifest, _ = make_manifest()
        manifest.records[1].status = "failed: solver"
        assert manifest.split_ids("train") == ["d0000_p0", "d0002_p0"]


class TestDataset:
    def test_write_read_roundtrip(self, tmp_path):
        manifest, blobs = make_manifest()
        write_dataset(tmp_path, manifest, blobs)
        ds = Dataset(tmp_path)
        assert len(ds) == 3
        eps, src, fld = ds.raw("d0001_p0")
        e0, s0, f0 = unpack_record(blobs["d0001_p0"])
        assert np.array_equal(eps, e0)
        assert np.array_equal(fld, f0)

    def test_offsets_filled(self, tmp_path):
        manifest, blobs = make_manifest()
        write_dataset(tmp_path, manifest, blobs)
        on_disk = read_manifest(tmp_path)
        lengths = [r.length for r in on_disk.records]
        assert all(l > 0 for l in lengths)
        offsets = [r.offset for r in on_disk.records]
        assert offsets == sorted(offsets)

    def test_instance_carries_target(self, tmp_path):
        manifest, blobs = make_manifest()
        # make eps valid (positive) for prior computation: already is
        write_dataset(tmp_path, manifest, blobs)
        ds = Dataset(tmp_path)
        inst = ds.instance("d0000_p0")
        assert inst.target is not None
        assert inst.wavelength == 1.55

    def test_failed_record_raises(self, tmp_path):
        manifest, blobs = make_manifest()
        manifest.records[0].status = "failed: x"
        blobs.pop("d0000_p0")
        write_dataset(tmp_path, manifest, blobs)
        ds = Dataset(tmp_path)
        with pytest.raises(CorruptRecord):
            ds.raw("d0000_p0")

    def test_all_failed_is_empty(self, tmp_path):
        manifest, blobs = make_manifest()
        for r in manifest.records:
            r.status = "failed: x"
        write_dataset(tmp_path, manifest, {})
        with pytest.raises(EmptyDataset):
            Dataset(tmp_path)

    def test_manifest_is_sorted_json(self, tmp_path):
        manifest, blobs = make_manifest()
        write_dataset(tmp_path, manifest, blobs)
        text = (tmp_path / dataio.MANIFEST_FILE).read_text()
        parsed = json.loads(text)
        assert list(parsed) == sorted(parsed)
