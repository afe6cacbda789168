"""Random device sampling and deterministic dataset generation.

The generation config mirrors the device design-variable table (lengths in
micrometers, wavelengths uniform in the C-band, two-level permittivity);
defaults are desk-scale.  The cavity count is derived from the sampled cavity
ratio as round(ratio * body_area / mean_cavity_area); the rule is recorded in
the manifest notes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field

import numpy as np

from . import fdfd
from .dataio import DatasetManifest, RecordMeta, config_hash, pack_record
from .errors import PaceError
from .fields import DeviceSpec, Port, Rect, SimDomain, SourceSpec, build_domain


@dataclass(frozen=True)
class GenConfig:
    kind: str = "etched_mmi"
    M: int = 32
    N: int = 64
    dl: float = 0.1                                  # grid step, um
    n_ports_in: int = 3
    n_ports_out: int = 3
    length_range: tuple[float, float] = (3.8, 4.2)   # body extent along z, um
    width_range: tuple[float, float] = (1.8, 2.2)    # body extent along x, um
    port_width_range: tuple[float, float] = (0.35, 0.45)
    wavelength_range: tuple[float, float] = (1.53, 1.565)
    cavity_ratio_range: tuple[float, float] = (0.005, 0.02)
    cavity_size_range: tuple[float, float] = (0.2, 0.3)
    eps_background: float = 12.11
    eps_etch: float = 2.07
    pml_cells: int = 6
    pml_scale: float = 1.0
    pml_order: int = 3
    metaline_atoms: int = 20

    def domain(self) -> SimDomain:
        return build_domain(self.M * self.dl, self.N * self.dl, self.M, self.N)

    def pml(self) -> fdfd.PmlSpec:
        return fdfd.PmlSpec(self.pml_cells, self.pml_scale, self.pml_order)

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @staticmethod
    def from_json(d: dict) -> "GenConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return GenConfig(**d)


def device_to_json(spec: DeviceSpec) -> dict:
    return {
        "kind": spec.kind,
        "body": list(spec.body),
        "ports_in": [[p.center_x, p.width] for p in spec.ports_in],
        "ports_out": [[p.center_x, p.width] for p in spec.ports_out],
        "rects": [[r.center_x, r.center_z, r.size_x, r.size_z] for r in spec.rects],
        "eps_background": spec.eps_background,
        "eps_etch": spec.eps_etch,
    }


def device_from_json(d: dict) -> DeviceSpec:
    return DeviceSpec(
        kind=d["kind"],
        body=tuple(d["body"]),
        ports_in=tuple(Port(*p) for p in d["ports_in"]),
        ports_out=tuple(Port(*p) for p in d["ports_out"]),
        rects=tuple(Rect(*r) for r in d["rects"]),
        eps_background=d["eps_background"],
        eps_etch=d["eps_etch"],
    )


def sample_device(cfg: GenConfig, rng: np.random.Generator) -> tuple[DeviceSpec, float]:
    """Sample one device spec and its source wavelength."""
    domain = cfg.domain()
    margin = (cfg.pml_cells + 2) * cfg.dl
    max_lz = domain.l_z - 2 * margin
    max_lx = domain.l_x - 2 * margin
    body_lz = rng.uniform(*cfg.length_range)
    body_lx = rng.uniform(*cfg.width_range)
    body_lz = min(body_lz, max_lz)
    body_lx = min(body_lx, max_lx)
    if body_lz <= 0 or body_lx <= 0:
        raise PaceError("domain too small for the configured device and PML")
    x0 = (domain.l_x - body_lx) / 2
    z0 = (domain.l_z - body_lz) / 2
    body = (x0, x0 + body_lx, z0, z0 + body_lz)

    port_width = rng.uniform(*cfg.port_width_range)

    def ports(n):
        centers = x0 + (np.arange(n) + 1) * body_lx / (n + 1)
        return tuple(Port(float(c), float(port_width)) for c in centers)

    if cfg.kind == "etched_mmi":
        ratio = rng.uniform(*cfg.cavity_ratio_range)
        mean_area = np.mean(cfg.cavity_size_range) ** 2
        count = int(round(ratio * body_lx * body_lz / mean_area))
        rects = []
        for _ in range(count):
            sx = rng.uniform(*cfg.cavity_size_range)
            sz = rng.uniform(*cfg.cavity_size_range)
            cx = rng.uniform(x0 + sx / 2, x0 + body_lx - sx / 2)
            cz = rng.uniform(z0 + sz / 2, z0 + body_lz - sz / 2)
            rects.append(Rect(float(cx), float(cz), float(sx), float(sz)))
    else:  # metaline: fixed atom count in two layers
        per_layer = cfg.metaline_atoms // 2
        rects = []
        for layer in (1, 2):
            cz = z0 + layer * body_lz / 3
            centers = x0 + (np.arange(per_layer) + 0.5) * body_lx / per_layer
            for cx in centers:
                sx = rng.uniform(*cfg.cavity_size_range)
                sz = rng.uniform(*cfg.cavity_size_range)
                # keep atoms inside the body bounding box
                sx = min(sx, 2 * (cx - x0), 2 * (x0 + body_lx - cx))
                sz = min(sz, 2 * (cz - z0), 2 * (z0 + body_lz - cz))
                rects.append(Rect(float(cx), float(cz), float(sx), float(sz)))

    spec = DeviceSpec(
        kind=cfg.kind, body=body,
        ports_in=ports(cfg.n_ports_in), ports_out=ports(cfg.n_ports_out),
        rects=tuple(rects),
        eps_background=cfg.eps_background, eps_etch=cfg.eps_etch)
    wavelength = float(rng.uniform(*cfg.wavelength_range))
    return spec, wavelength


def _simulate_device(args):
    """Worker: all (device, port) records for one device index."""
    cfg_json, dev_index, seed = args
    cfg = GenConfig.from_json(cfg_json)
    rng = np.random.default_rng([seed, dev_index])
    spec, wavelength = sample_device(cfg, rng)
    domain, pml = cfg.domain(), cfg.pml()
    out = []
    for port in range(len(spec.ports_in)):
        rec_id = f"d{dev_index:04d}_p{port}"
        source = SourceSpec(port_index=port, wavelength=wavelength)
        try:
            inst = fdfd.simulate(spec, source, domain, pml)
            system = fdfd.assemble_system(
                inst.eps, wavelength, domain, pml, inst.source_field)
            res = fdfd.residual(system, inst.target)
            blob = pack_record(np.real(inst.eps), inst.source_field, inst.target)
            out.append((rec_id, device_to_json(spec), port, wavelength,
                        res, "ok", blob))
        except PaceError as exc:
            out.append((rec_id, device_to_json(spec), port, wavelength,
                        float("nan"), f"failed: {exc}", b""))
    return dev_index, out


def generate_dataset(cfg: GenConfig, n_devices: int, seed: int,
                     workers: int | None = None
                     ) -> tuple[DatasetManifest, dict[str, bytes]]:
    """Deterministic dataset: one record per (device, input port), split
    72/8/20 train/val/test."""
    if n_devices < 1:
        raise PaceError("n_devices must be >= 1")
    if workers is None:
        workers = int(os.environ.get("PACE_THREADS", "1"))

    cfg_json = cfg.to_json()
    jobs = [(cfg_json, d, seed) for d in range(n_devices)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_device, jobs))
    else:
        results = [_simulate_device(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    records, blobs = [], {}
    for _, recs in results:
        for rec_id, dev_json, port, wavelength, res, status, blob in recs:
            records.append(RecordMeta(
                id=rec_id, device=dev_json, port=port, wavelength=wavelength,
                split="", offset=0, length=0, residual=res, status=status))
            if status == "ok":
                blobs[rec_id] = blob

    # 72/8/20 split over a seeded shuffle of all records
    split_rng = np.random.default_rng([seed, 0x5B117])  # independent split stream
    order = split_rng.permutation(len(records))
    n = len(records)
    n_train = int(round(0.72 * n))
    n_val = int(round(0.08 * n))
    for rank, rec_idx in enumerate(order):
        if rank < n_train:
            records[rec_idx].split = "train"
        elif rank < n_train + n_val:
            records[rec_idx].split = "val"
        else:
            records[rec_idx].split = "test"

    domain = cfg.domain()
    manifest = DatasetManifest(
        format_version=1,
        seed=seed,
        config_hash=config_hash(cfg_json),
        domain={"l_x": domain.l_x, "l_z": domain.l_z, "M": domain.M, "N": domain.N},
        records=records,
        notes={
            "gen_config": cfg_json,
            "cavity_count_rule": "round(ratio * body_area / mean_cavity_area)",
            "mixup_weights": "unit-magnitude random phases, within-device port pairs",
        },
    )
    manifest.stats = _dataset_stats(manifest, blobs)
    return manifest, blobs


def _dataset_stats(manifest: DatasetManifest, blobs: dict[str, bytes]) -> dict:
    """Normalization constants from the training split."""
    from .dataio import unpack_record

    field_sq, src_sq, count = 0.0, 0.0, 0
    eps_min, eps_max = np.inf, -np.inf
    for rec in manifest.records:
        if rec.split != "train" or rec.status != "ok":
            continue
        eps, src, fld = unpack_record(blobs[rec.id])
        field_sq += float(np.mean(np.abs(fld) ** 2))
        src_sq += float(np.mean(np.abs(src) ** 2))
        eps_min = min(eps_min, float(eps.min()))
        eps_max = max(eps_max, float(eps.max()))
        count += 1
    if count == 0:
        return {}
    return {
        "field_rms": float(np.sqrt(field_sq / count)),
        "source_rms": float(np.sqrt(src_sq / count)),
        "eps_min": eps_min,
        "eps_max": eps_max,
        "n_train_records": count,
    }
