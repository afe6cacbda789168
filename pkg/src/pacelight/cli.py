"""Command-line entry points: dataset generation, training, evaluation,
spectrum analysis, timing benchmarks, and plot export."""

from __future__ import annotations

import csv
import json
import os
import statistics
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import fdfd, sampling, training
from .dataio import Dataset, read_manifest, write_dataset
from .errors import MalformedReport
from .model import (
    CascadeConfig,
    CascadeModel,
    ModelConfig,
    PaceModel,
    count_parameters,
    model_from_checkpoint,
)
from .spectrum import radial_energy_spectrum
from .training import NormStats, TrainConfig, encode_batch, evaluate, predict


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _build_model(cfg_json: dict, seed: int = 0) -> torch.nn.Module:
    gen = torch.Generator().manual_seed(seed)
    if "stage_one" in cfg_json:
        return CascadeModel(CascadeConfig.from_json(cfg_json), generator=gen)
    return PaceModel(ModelConfig.from_json(cfg_json), generator=gen)


@click.group()
def main():
    """PACE: neural-operator surrogate and FDFD oracle for optical fields."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Generation config JSON; defaults are desk-scale.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", "n_devices", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=None, type=int,
              help="Worker processes; defaults to PACE_THREADS or 1.")
def generate(config_path, out_dir, n_devices, seed, workers):
    """Generate an FDFD dataset (one record per device/input-port pair)."""
    cfg = sampling.GenConfig.from_json(_load_json(config_path)) if config_path \
        else sampling.GenConfig()
    t0 = time.perf_counter()
    manifest, blobs = sampling.generate_dataset(cfg, n_devices, seed, workers=workers)
    write_dataset(out_dir, manifest, blobs)
    wall = time.perf_counter() - t0
    ok = [r for r in manifest.records if r.status == "ok"]
    failed = len(manifest.records) - len(ok)
    mean_res = float(np.mean([r.residual for r in ok])) if ok else float("nan")
    click.echo(f"records: {len(manifest.records)} ({failed} failed)")
    click.echo(f"mean residual: {mean_res:.3e}")
    click.echo(f"wall time: {wall:.2f} s")


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--model-config", "model_config_path", required=True,
              type=click.Path(exists=True))
@click.option("--train-config", "train_config_path", default=None,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume/--no-resume", default=True, show_default=True)
@click.option("--sequential", is_flag=True,
              help="Cascade only: freeze stage-I, train stage-II.")
def train(data_dir, model_config_path, train_config_path, out_dir, resume, sequential):
    """Train a model; emits per-epoch CSV report and checkpoints."""
    dataset = Dataset(data_dir)
    model_cfg = _load_json(model_config_path)
    cfg = TrainConfig.from_json(_load_json(train_config_path)) if train_config_path \
        else TrainConfig()
    model = _build_model(model_cfg, seed=cfg.seed)
    click.echo(f"parameters: {count_parameters(model)}")
    if sequential:
        if not isinstance(model, CascadeModel):
            raise click.UsageError("--sequential requires a cascade model config")
        rows = training.train_sequential(dataset, model, cfg, out_dir=out_dir)
    else:
        rows = training.train(dataset, model, cfg, out_dir=out_dir, resume=resume)
    final = rows[-1]
    click.echo(f"final train N-MSE: {final['train_nmse']}  "
               f"val N-MSE: {final['val_nmse']}")


@main.command("eval")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Optional JSON output path; per-sample CSV lands next to it.")
def eval_cmd(data_dir, checkpoint, split, out_path):
    """Evaluate a checkpoint: mean N-MSE and a per-sample CSV."""
    dataset = Dataset(data_dir)
    model = model_from_checkpoint(checkpoint)
    mean_nmse, per_sample = evaluate(dataset, split, model)
    click.echo(f"mean N-MSE ({split}): {mean_nmse:.6g}")
    if out_path:
        with open(out_path, "w") as f:
            json.dump({"split": split, "mean_nmse": mean_nmse,
                       "n_samples": len(per_sample)}, f, indent=1)
        csv_path = Path(out_path).with_suffix(".samples.csv")
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["record_id", "nmse"])
            w.writerows(per_sample)
        click.echo(f"wrote {out_path} and {csv_path}")


@main.command()
@click.option("--field", "field_path", default=None, type=click.Path(exists=True),
              help="A .npy complex 2-D field.")
@click.option("--data", "data_dir", default=None, type=click.Path(exists=True))
@click.option("--record", "record_id", default=None,
              help="Dataset record id; uses its stored field.")
@click.option("--checkpoint", default=None, type=click.Path(exists=True),
              help="With --data/--record: analyze the model prediction instead.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--png", is_flag=True, help="Also write a PNG next to the CSV.")
def spectrum(field_path, data_dir, record_id, checkpoint, out_path, png):
    """Radial energy spectrum of a field, written as CSV (bin, energy)."""
    if field_path:
        field = np.load(field_path)
    elif data_dir and record_id:
        dataset = Dataset(data_dir)
        inst = dataset.instance(record_id)
        if checkpoint:
            model = model_from_checkpoint(checkpoint)
            stats = NormStats.from_manifest(dataset.manifest.stats)
            x, _ = encode_batch([inst], stats, torch.float32)
            with torch.no_grad():
                field = predict(model, x)[0].numpy() * stats.field_rms
        else:
            field = inst.target
    else:
        raise click.UsageError("need --field or --data with --record")
    report = radial_energy_spectrum(np.asarray(field, dtype=complex))
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["wavenumber", "energy"])
        w.writerows(zip(report.wavenumber.tolist(), report.energy.tolist()))
    click.echo(f"bins: {report.wavenumber.size}, total energy: {report.total_energy:.6g}")
    if png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots()
        ax.semilogy(report.wavenumber, np.maximum(report.energy, 1e-300))
        ax.set_xlabel("wavenumber bin")
        ax.set_ylabel("energy")
        fig.savefig(Path(out_path).with_suffix(".png"), dpi=120)
        plt.close(fig)


@main.command()
@click.option("--grid", default="32x64", show_default=True, help="MxN")
@click.option("--model-config", "model_config_path", required=True,
              type=click.Path(exists=True))
@click.option("--repeats", default=5, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def bench(grid, model_config_path, repeats, out_path):
    """Wall-time comparison: FDFD assemble+solve vs model forward (CPU).

    Descriptive only; reports median/p95 and their ratio, no pass/fail.
    """
    m, n = (int(v) for v in grid.lower().split("x"))
    threads = int(os.environ.get("PACE_THREADS", torch.get_num_threads()))
    torch.set_num_threads(threads)
    gen_cfg = sampling.GenConfig(M=m, N=n)
    rng = np.random.default_rng(0)
    spec, wavelength = sampling.sample_device(gen_cfg, rng)
    domain, pml = gen_cfg.domain(), gen_cfg.pml()
    from .fields import SourceSpec
    source = SourceSpec(port_index=0, wavelength=wavelength)

    solver_times = []
    inst = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        inst = fdfd.simulate(spec, source, domain, pml)
        solver_times.append(time.perf_counter() - t0)

    model = _build_model(_load_json(model_config_path))
    model.eval()
    stats = NormStats(eps_min=2.07, eps_max=12.11, source_rms=1.0, field_rms=1.0)
    x, _ = encode_batch([inst], stats, torch.float32)
    model_times = []
    cold = None
    with torch.no_grad():
        for i in range(repeats + 1):
            t0 = time.perf_counter()
            predict(model, x)
            dt = time.perf_counter() - t0
            if i == 0:
                cold = dt  # first call includes allocation/plan setup
            else:
                model_times.append(dt)

    def stat(ts):
        med = statistics.median(ts)
        p95 = sorted(ts)[max(0, int(round(0.95 * len(ts))) - 1)]
        return med, p95

    s_med, s_p95 = stat(solver_times)
    m_med, m_p95 = stat(model_times)
    rows = [
        {"task": "fdfd_assemble_solve", "median_s": s_med, "p95_s": s_p95},
        {"task": "model_forward_warm", "median_s": m_med, "p95_s": m_p95},
    ]
    ratio = s_med / m_med
    click.echo(f"grid {m}x{n}, threads {threads}, repeats {repeats}")
    click.echo("| task | median (s) | p95 (s) |")
    click.echo("|------|-----------:|--------:|")
    for r in rows:
        click.echo(f"| {r['task']} | {r['median_s']:.6f} | {r['p95_s']:.6f} |")
    click.echo(f"cold model forward: {cold:.6f} s")
    click.echo(f"solver/model median ratio: {ratio:.2f}")
    if out_path:
        with open(out_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["task", "median_s", "p95_s"])
            w.writeheader()
            w.writerows(rows)


@main.command("export-plots")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_plots(report_path, out_dir):
    """Loss-curve images from a training report, plus tidy CSV of the data."""
    with open(report_path) as f:
        rows = list(csv.DictReader(f))
    if not rows or "train_nmse" not in rows[0]:
        raise MalformedReport(f"{report_path} has no usable rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    epochs = [int(r["epoch"]) for r in rows]
    series = {}
    for col in ("train_nmse", "val_nmse"):
        vals = [float(r[col]) for r in rows]
        series[col] = vals
    tidy = out / "loss_curve.csv"
    with open(tidy, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "metric", "value"])
        for col, vals in series.items():
            for e, v in zip(epochs, vals):
                w.writerow([e, col, v])

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots()
    for col, vals in series.items():
        ax.plot(epochs, vals, label=col)
    ax.set_xlabel("epoch")
    ax.set_ylabel("N-MSE")
    ax.set_yscale("log")
    ax.legend()
    fig.savefig(out / "loss_curve.png", dpi=120)
    plt.close(fig)
    click.echo(f"wrote {tidy} and {out / 'loss_curve.png'}")


if __name__ == "__main__":
    main()
