"""Command line: synth, train, dehaze, eval, bmode.

Every command reads the JSON config given by ``--config`` (defaults when
omitted) and draws all randomness from one root seed:

    synth   -> SeededRng(seed).child(0)
    train   -> ScoreNet(seed=SeededRng(seed).child(1 | 2).seed) for tissue | haze
    dehaze  -> DehazeConfig(seed=SeededRng(seed).child(3).seed)

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import math
import os
import sys
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from .errors import ConfigError, DataFileError, NumericalError
from .imaging import DEFAULT_DYNAMIC_RANGE, bmode, brightness_match, envelope, export_png
from .metrics import fwhm_lateral, gcnr, ks_statistic, load_mask, psnr, save_mask_png
from .phantom import make_dataset, mix
from .score import ScoreNet, load_checkpoint, save_checkpoint
from .tensor import RFGrid, SeededRng, read_urf, write_urf

logger = logging.getLogger("hazesep")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
METRICS = ("psnr", "gcnr", "ks", "fwhm")
GCNR_DOMAINS = ("db", "envelope")
MIN_FWHM_ROI = 16
HIGHER_IS_BETTER = ("psnr", "gcnr")

_EPILOG = (
    "\b\nConfig keys and defaults (JSON, section.key):\n"
    + config_mod.describe_defaults()
    + "\n\b\nExit codes: 0 ok, 2 config, 3 I/O, 4 numerical."
)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map failure classes to exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
        except NumericalError as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except (DataFileError, OSError) as exc:
            _fail(EXIT_IO, str(exc))
        except ValueError as exc:
            _fail(EXIT_IO, f"invalid input: {exc}")

    return wrapper


def _common(fn):
    fn = click.option("--threads", type=click.IntRange(min=1), default=None,
                      help="Thread cap for numeric kernels (default: all cores).")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None,
                      help="Root seed; overrides the config's seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="JSON config file (defaults for absent keys).")(fn)
    return fn


def _setup(config_path, seed) -> config_mod.RunConfig:
    if config_path is not None and not Path(config_path).is_file():
        raise ConfigError(f"config file {config_path} does not exist")
    cfg = config_mod.load(config_path)
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


def _threads(n):
    return threadpool_limits(limits=n or os.cpu_count() or 1)


def _read(path) -> RFGrid:
    try:
        return read_urf(path)
    except FileNotFoundError as exc:
        raise DataFileError(f"{path}: no such file") from exc
    except ValueError as exc:
        raise DataFileError(str(exc)) from exc


def _write(path, samples) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_urf(path, RFGrid(samples))


def _load_model(path, cfg: config_mod.RunConfig):
    if not Path(path).is_file():
        raise DataFileError(f"checkpoint {path} does not exist")
    try:
        model = load_checkpoint(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataFileError(f"{path}: unreadable checkpoint ({exc})") from exc
    if isinstance(model, ScoreNet):
        expected = (cfg.patch.rows, cfg.patch.cols)
        if tuple(model.patch_shape) != expected:
            raise ConfigError(f"{path}: checkpoint patch shape {tuple(model.patch_shape)} != config {expected}")
    return model


@click.group(help=__doc__.split("\n\n")[0])
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# -- synth ----------------------------------------------------------------------------


@cli.command(epilog=_EPILOG)
@_common
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Dataset directory (default: paths.dataset).")
@click.option("--n-frames", type=click.IntRange(min=1), default=None, help="Default: synth.n_frames.")
@click.option("--levels", default=None,
              help='Comma-separated haze levels, "" for none (default: synth.levels).')
@_guarded
def synth(config_path, seed, threads, out_dir, n_frames, levels):
    """Synthesize paired tissue / haze frames, mixtures, patch sets and masks."""
    cfg = _setup(config_path, seed)
    n_frames = n_frames or cfg.synth.n_frames
    if levels is None:
        level_list = list(cfg.synth.levels)
    else:
        try:
            level_list = [float(v) for v in levels.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--levels: {exc}") from exc
    out = Path(out_dir or cfg.paths.dataset)
    with _threads(threads):
        phantom = cfg.phantom_spec()
        data = make_dataset(phantom, cfg.haze_spec(), n_frames, cfg.patch_layout(),
                            SeededRng(cfg.seed).child(0), cfg.compand.mu)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": cfg.seed, "config": cfg.to_dict(), "frames": [], "mixed": [],
                "patches": {"tissue": "tissue_patches.npy", "haze": "haze_patches.npy"},
                "masks": {"A": "mask_A.png", "B": "mask_B.png"}}
    np.save(out / "tissue_patches.npy", data.tissue_patches.astype("<f4"))
    np.save(out / "haze_patches.npy", data.haze_patches.astype("<f4"))
    mask_a, mask_b = phantom.masks()
    save_mask_png(mask_a, out / "mask_A.png")
    save_mask_png(mask_b, out / "mask_B.png")
    for i, (x, h) in enumerate(zip(data.clean_frames, data.haze_frames)):
        entry = {"index": i, "clean": f"clean/frame_{i:04d}.urf", "haze": f"haze/frame_{i:04d}.urf",
                 "seeds": list(data.seeds[i])}
        _write(out / entry["clean"], x)
        _write(out / entry["haze"], h)
        manifest["frames"].append(entry)
        for level in level_list:
            rel = f"mixed/level_{level:.3f}/frame_{i:04d}.urf"
            _write(out / rel, mix(x, h, level))
            manifest["mixed"].append({"index": i, "level": level, "path": rel})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(f"wrote {n_frames} clean, {n_frames} haze and {len(manifest['mixed'])} mixed frames to {out}")


# -- train ----------------------------------------------------------------------------


@cli.command(epilog=_EPILOG)
@_common
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), default=None,
              help="Dataset directory from synth (default: paths.dataset).")
@click.option("--which", type=click.Choice(["tissue", "haze"]), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint path (default: paths.checkpoints/<which>.hsnet).")
@_guarded
def train(config_path, seed, threads, dataset_dir, which, out_path):
    """Train one score model; writes a .hsnet checkpoint and a loss-curve CSV."""
    cfg = _setup(config_path, seed)
    root = Path(dataset_dir or cfg.paths.dataset)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataFileError(f"{manifest_path} not found; run `hazesep synth` first")
    manifest = json.loads(manifest_path.read_text())
    try:
        patches = np.load(root / manifest["patches"][which]).astype(np.float64)
    except (OSError, ValueError, KeyError) as exc:
        raise DataFileError(f"cannot load {which} patches from {root}: {exc}") from exc
    net = cfg.score_net(seed=SeededRng(cfg.seed).child(1 if which == "tissue" else 2).seed)
    with _threads(threads):
        try:
            net.fit(patches)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    out = Path(out_path or Path(cfg.paths.checkpoints) / f"{which}.hsnet")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out)
    per_epoch = max(1, math.ceil(len(patches) / net.batch_size))
    with open(out.with_suffix(".loss.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss"])
        for step, loss in enumerate(net.loss_curve_):
            writer.writerow([step, step // per_epoch, f"{loss:.8g}"])
    click.echo(f"trained {which} model for {net.epochs} epochs -> {out}")


# -- dehaze ---------------------------------------------------------------------------


@cli.command(epilog=_EPILOG)
@_common
@click.option("--input", "inputs", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Measurement URF1 file; repeat to dehaze same-shape frames together.")
@click.option("--tissue", "tissue_path", required=True, type=click.Path(dir_okay=False))
@click.option("--haze", "haze_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: paths.outputs).")
@_guarded
def dehaze(config_path, seed, threads, inputs, tissue_path, haze_path, out_dir):
    """Separate measurements into tissue (x) and haze (h) URF1 files plus diagnostics CSV."""
    from .dehaze import dehaze as run

    cfg = _setup(config_path, seed)
    grids = [_read(p) for p in inputs]
    if len({g.shape for g in grids}) != 1:
        raise ConfigError("all --input frames must share one shape")
    tissue = _load_model(tissue_path, cfg)
    haze = _load_model(haze_path, cfg)
    dcfg = cfg.dehaze_config(seed=SeededRng(cfg.seed).child(3).seed)
    frames = np.stack([g.samples for g in grids])
    with _threads(threads):
        try:
            result = run(frames, tissue, haze, dcfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    out = Path(out_dir or cfg.paths.outputs)
    out.mkdir(parents=True, exist_ok=True)
    for path, grid, x, h in zip(inputs, grids, result.x_rf, result.h_rf):
        stem = Path(path).stem
        write_urf(out / f"{stem}_tissue.urf", grid.with_samples(x))
        write_urf(out / f"{stem}_haze.urf", grid.with_samples(h))
    diag = out / (f"{Path(inputs[0]).stem}_diagnostics.csv" if len(inputs) == 1 else "diagnostics.csv")
    result.write_diagnostics(diag)
    click.echo(f"dehazed {len(inputs)} frame(s) -> {out}")


# -- eval -----------------------------------------------------------------------------


def frame_metrics(clean, measurement, dehazed, mask_a=None, mask_b=None,
                  dynamic_range: float = DEFAULT_DYNAMIC_RANGE, gcnr_domain: str = "db") -> dict:
    """Metric -> {source: value} for one frame.

    Measurement and dehazed B-mode images are brightness-matched to the clean
    one before PSNR and KS. gCNR uses A (chamber) vs B (wall) on dB values or,
    with ``gcnr_domain="envelope"``, on the linear envelope; KS and FWHM use
    the wall region. Mask-dependent metrics are omitted when a mask is missing.
    """
    if gcnr_domain not in GCNR_DOMAINS:
        raise ValueError(f"gcnr_domain must be one of {GCNR_DOMAINS}, got {gcnr_domain!r}")
    ref = bmode(clean, dynamic_range)
    images = {"clean": ref}
    for name, rf in (("measurement", measurement), ("dehazed", dehazed)):
        images[name] = brightness_match(bmode(rf, dynamic_range), ref)
    rfs = {"clean": clean, "measurement": measurement, "dehazed": dehazed}
    out = {"psnr": {k: psnr(img, ref) for k, img in images.items()}}
    if mask_a is None or mask_b is None:
        return out
    if not (np.any(mask_a) and np.any(mask_b)):
        logger.warning("empty ROI mask; skipping mask-based metrics")
        return out
    wall = ref.db_values[mask_b]
    if gcnr_domain == "db":
        out["gcnr"] = {k: gcnr(img, mask_a, mask_b) for k, img in images.items()}
    else:
        out["gcnr"] = {k: gcnr(envelope(rf), mask_a, mask_b) for k, rf in rfs.items()}
    out["ks"] = {k: ks_statistic(img.db_values[mask_b], wall) for k, img in images.items()}
    rows, cols = np.flatnonzero(mask_b.any(axis=1)), np.flatnonzero(mask_b.any(axis=0))
    if min(rows[-1] - rows[0], cols[-1] - cols[0]) + 1 < MIN_FWHM_ROI:
        logger.warning("wall ROI bounding box is under %dx%d; skipping FWHM", MIN_FWHM_ROI, MIN_FWHM_ROI)
        return out
    out["fwhm"] = {k: fwhm_lateral(envelope(rf), mask_b) for k, rf in rfs.items()}
    return out


def _summary(values: list[float]) -> tuple[float, float]:
    """Mean and std; a column that is +inf throughout (identical images) has std 0."""
    arr = np.asarray(values, dtype=np.float64)
    if np.all(np.isposinf(arr)):
        return math.inf, 0.0
    if np.any(np.isinf(arr)):
        return math.inf, math.nan
    return float(arr.mean()), float(arr.std())


def filter_outliers(values: list[dict], percentile: float = 10.0) -> list[dict]:
    """Frames whose measurement score is at or above the measurement's percentile.

    Infinite scores are kept; the percentile is taken over finite ones.
    """
    scores = np.array([v["measurement"] for v in values], dtype=np.float64)
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        return values
    cut = np.percentile(finite, percentile)
    return [v for v, s in zip(values, scores) if not s < cut]


def _fmt(value: float) -> str:
    if math.isnan(value):
        return "nan"
    return "inf" if math.isinf(value) else f"{value:.6g}"


@cli.command(name="eval", epilog=_EPILOG)
@_common
@click.option("--manifest", "manifest_path", required=True, type=click.Path(dir_okay=False),
              help="JSON list of {level, clean, measurement, dehazed, mask_a, mask_b}.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Metrics CSV (default: paths.outputs/metrics.csv).")
@click.option("--dynamic-range", type=click.FloatRange(min=0, min_open=True),
              default=DEFAULT_DYNAMIC_RANGE, show_default=True)
@click.option("--gcnr-domain", type=click.Choice(GCNR_DOMAINS), default="db", show_default=True,
              help="Histogram gCNR on dB values or on the linear envelope.")
@click.option("--drop-outliers", is_flag=True,
              help="Summaries of PSNR and gCNR skip frames whose measurement score is below "
                   "the 10th percentile of measurement scores at that level.")
@_guarded
def eval_cmd(config_path, seed, threads, manifest_path, out_path, dynamic_range, gcnr_domain, drop_outliers):
    """Per-frame PSNR, gCNR, KS and FWHM plus mean / std summary rows per haze level."""
    cfg = _setup(config_path, seed)
    mpath = Path(manifest_path)
    if not mpath.is_file():
        raise DataFileError(f"{mpath} not found")
    try:
        entries = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataFileError(f"{mpath}: invalid JSON ({exc})") from exc
    if isinstance(entries, dict):
        entries = entries.get("pairs", [])
    base = mpath.parent
    rows, collected = [], {}
    with _threads(threads):
        for i, entry in enumerate(entries):
            try:
                level = float(entry["level"])
                grids = [_read(base / entry[k]).samples for k in ("clean", "measurement", "dehazed")]
            except KeyError as exc:
                raise DataFileError(f"manifest entry {i} lacks {exc}") from exc
            masks = []
            for key in ("mask_a", "mask_b"):
                rel = entry.get(key)
                if rel is None or not (base / rel).is_file():
                    logger.warning("frame %d: mask %s missing; skipping mask-based metrics", i, key)
                    masks = [None, None]
                    break
                masks.append(load_mask(base / rel, grids[0].shape))
            metrics = frame_metrics(*grids, *masks, dynamic_range=dynamic_range, gcnr_domain=gcnr_domain)
            frame = entry.get("frame", i)
            for name in METRICS:
                if name not in metrics:
                    continue
                v = metrics[name]
                rows.append(["frame", level, frame, name, _fmt(v["clean"]), _fmt(v["measurement"]),
                             _fmt(v["dehazed"])])
                collected.setdefault((level, name), []).append(v)
    for (level, name), values in sorted(collected.items(), key=lambda kv: (kv[0][0], METRICS.index(kv[0][1]))):
        if drop_outliers and name in HIGHER_IS_BETTER:
            values = filter_outliers(values)
        stats = [_summary([v[s] for v in values]) for s in ("clean", "measurement", "dehazed")]
        rows.append(["mean", level, "", name, *(_fmt(m) for m, _ in stats)])
        rows.append(["std", level, "", name, *(_fmt(sd) for _, sd in stats)])
    out = Path(out_path or Path(cfg.paths.outputs) / "metrics.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "level", "frame", "metric", "clean", "measurement", "dehazed"])
        writer.writerows(rows)
    click.echo(f"wrote {len(rows)} metric rows -> {out}")


# -- bmode ----------------------------------------------------------------------------


@cli.command(name="bmode", epilog=_EPILOG)
@_common
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dynamic-range", type=click.FloatRange(min=0, min_open=True),
              default=DEFAULT_DYNAMIC_RANGE, show_default=True)
@click.option("--reference", "reference_path", type=click.Path(dir_okay=False), default=None,
              help="URF1 frame whose brightness (top-decile dB mean) is matched.")
@_guarded
def bmode_cmd(config_path, seed, threads, input_path, out_path, dynamic_range, reference_path):
    """Envelope, log compression and optional brightness match to an 8-bit PNG."""
    _setup(config_path, seed)
    with _threads(threads):
        img = bmode(_read(input_path), dynamic_range)
        if reference_path is not None:
            img = brightness_match(img, bmode(_read(reference_path), dynamic_range))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    export_png(img, out_path)
    click.echo(f"wrote {out_path}")


def main(argv=None):
    cli.main(args=argv, prog_name="hazesep")


if __name__ == "__main__":
    main()
