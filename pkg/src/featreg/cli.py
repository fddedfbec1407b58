"""Command-line interface.

Every subcommand accepts ``--config run.json``; explicitly passed flags
override config keys. Outputs are written atomically (temp file + rename).
Exit codes: 0 success, 1 stage failure, 2 config/usage violation.
"""
from __future__ import annotations

import json
import logging
import sys
import time
from contextlib import contextmanager

import click
import numpy as np

from . import io
from .adam import AdamConfig, adam_refine
from .costvol import ConvexConfig, build_cost_volume, coupled_convex_coarse
from .ensemble import compose_fields, mean_fields
from .metrics import dice, sd_log_jacobian, tre, tre30
from .mind import MindConfig, encode_mind_ssc
from .pca import PcaConfig, joint_pca
from .slices import interpolate_slice_gap
from .types import DisplacementField, FeatureVolume, GridInfo, Volume3D
from .warp import NEAREST, TRILINEAR, upsample_field, warp

log = logging.getLogger("featreg")
logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                    stream=sys.stderr)


@contextmanager
def _timed(stage: str):
    t0 = time.perf_counter()
    yield
    log.info("%s: %.2fs", stage, time.perf_counter() - t0)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"cannot read config {path}: {e}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config {path} must hold a JSON object")
    return cfg


def _merge(ctx: click.Context, config: dict) -> dict:
    """Config values fill in parameters the user did not pass explicitly."""
    known = {p.name for p in ctx.command.params}
    unknown = set(config) - known - {"config"}
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(ctx.params)
    for key, value in config.items():
        src = ctx.get_parameter_source(key)
        if src is not None and src.name != "DEFAULT":
            continue  # explicit flag wins
        merged[key] = value
    return merged


class _Fail(click.ClickException):
    exit_code = 1


def _run(fn):
    try:
        fn()
    except click.UsageError:
        raise
    except Exception as e:  # stage failure -> exit 1, diagnostic on stderr
        raise _Fail(str(e)) from e


def _read_tensor(path, want=None):
    t = io.read_feature_tensor(path)
    if want is not None and not isinstance(t, want):
        raise click.UsageError(f"{path}: expected {want.__name__}, got {type(t).__name__}")
    return t


def _write_tensor(t, path):
    io.atomic_write(path, lambda p: io.write_feature_tensor(t, p))


@click.group()
def main():
    """Training-free deformable registration on dense feature volumes."""


@main.command("encode-mind")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--patch-radius", default=1, show_default=True)
@click.option("--dilation", default=2, show_default=True)
@click.pass_context
def encode_mind_cmd(ctx, config, **_):
    """Encode a NIfTI volume into 12-channel SSC descriptors (FTV)."""
    p = _merge(ctx, _load_config(config))

    def go():
        vol = io.read_volume(p["input_"])
        with _timed("encode-mind"):
            fv = encode_mind_ssc(vol, MindConfig(p["patch_radius"], p["dilation"]))
        _write_tensor(fv, p["output"])

    _run(go)


@main.command("interp-gap")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--gap", required=True, type=int)
@click.option("--axis", default=0, show_default=True)
@click.option("--target-extent", default=None, type=int)
@click.pass_context
def interp_gap_cmd(ctx, config, **_):
    """Densify a slice-sparse feature tensor along the encoding axis."""
    p = _merge(ctx, _load_config(config))

    def go():
        fv = _read_tensor(p["input_"], FeatureVolume)
        with _timed("interp-gap"):
            out = interpolate_slice_gap(fv, p["gap"], p["axis"], p["target_extent"])
        _write_tensor(out, p["output"])

    _run(go)


@main.command("pca")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--ref", required=True, type=click.Path(exists=True))
@click.option("--mov", required=True, type=click.Path(exists=True))
@click.option("--out-ref", required=True, type=click.Path())
@click.option("--out-mov", required=True, type=click.Path())
@click.option("--k", default=24, show_default=True)
@click.option("--mode", type=click.Choice(["full", "lowrank"]), default="full",
              show_default=True)
@click.option("--oversampling", default=10, show_default=True)
@click.option("--power-iterations", default=2, show_default=True)
@click.option("--seed", default=None, type=int)
@click.pass_context
def pca_cmd(ctx, config, **_):
    """Jointly reduce two feature tensors onto a shared k-dim PCA basis."""
    p = _merge(ctx, _load_config(config))
    if p["mode"] == "lowrank" and p["seed"] is None:
        raise click.UsageError("--seed is mandatory for pca --mode lowrank")

    def go():
        f_ref = _read_tensor(p["ref"], FeatureVolume)
        f_mov = _read_tensor(p["mov"], FeatureVolume)
        cfg = PcaConfig(p["k"], "LOW_RANK" if p["mode"] == "lowrank" else "FULL",
                        p["oversampling"], p["power_iterations"], p["seed"] or 0)
        with _timed("pca"):
            out_ref, out_mov = joint_pca(f_ref, f_mov, cfg)
        _write_tensor(out_ref, p["out_ref"])
        _write_tensor(out_mov, p["out_mov"])

    _run(go)


@main.command("register")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--fixed-features", required=True, type=click.Path(exists=True))
@click.option("--moving-features", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--search-radius", default=8, show_default=True)
@click.option("--quantization", default=2, show_default=True)
@click.option("--coarse-stride", default=2, show_default=True)
@click.option("--smoothing-sigma", default=1.0, show_default=True)
@click.option("--epochs", default=50, show_default=True)
@click.option("--learning-rate", default=1.0, show_default=True)
@click.option("--reg-weight", default=2.0, show_default=True)
@click.option("--lcc-window", default=1, show_default=True)
@click.option("--loss", type=click.Choice(["LCC", "SSD"]), default="LCC",
              show_default=True)
@click.pass_context
def register_cmd(ctx, config, **_):
    """Two-stage registration of moving features onto fixed features."""
    p = _merge(ctx, _load_config(config))

    def go():
        f = _read_tensor(p["fixed_features"], FeatureVolume)
        m = _read_tensor(p["moving_features"], FeatureVolume)
        cc = ConvexConfig(p["search_radius"], p["quantization"], p["coarse_stride"],
                          smoothing_sigma=p["smoothing_sigma"])
        ac = AdamConfig(p["epochs"], p["learning_rate"], p["reg_weight"],
                        p["lcc_window"], p["loss"])
        with _timed("cost-volume"):
            cv = build_cost_volume(f, m, cc)
        with _timed("coupled-convex"):
            init = coupled_convex_coarse(cv, cc)
        with _timed("adam-refine"):
            field = adam_refine(f, m, init, ac)
        _write_tensor(field, p["output"])

    _run(go)


@main.command("warp")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--field", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--interp", type=click.Choice(["trilinear", "nearest"]),
              default="trilinear", show_default=True)
@click.option("--labels", is_flag=True, help="treat the input volume as labels")
@click.pass_context
def warp_cmd(ctx, config, **_):
    """Warp a NIfTI volume (or FTV tensor) with a displacement field."""
    p = _merge(ctx, _load_config(config))

    def go():
        field = _read_tensor(p["field"], DisplacementField)
        interp = NEAREST if p["interp"] == "nearest" or p["labels"] else TRILINEAR
        path = p["input_"]
        if str(path).endswith((".nii", ".nii.gz")):
            vol = io.read_volume(path, as_labels=p["labels"])
            if field.grid_shape != vol.data.shape:
                field = upsample_field(field, (vol.data.shape, GridInfo()))
            out = warp(vol, field, interp)
            io.atomic_write(p["output"], lambda q: io.write_volume(out, q))
        else:
            fv = _read_tensor(path, FeatureVolume)
            if field.grid_shape != fv.grid_shape:
                field = upsample_field(field, fv)
            _write_tensor(warp(fv, field, interp), p["output"])

    _run(go)


@main.command("ensemble")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["mean", "sequential"]), required=True)
@click.option("--first", required=True, type=click.Path(exists=True))
@click.option("--second", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.pass_context
def ensemble_cmd(ctx, config, **_):
    """Combine two displacement fields (mean field or sequential composition)."""
    p = _merge(ctx, _load_config(config))

    def go():
        a = _read_tensor(p["first"], DisplacementField)
        b = _read_tensor(p["second"], DisplacementField)
        if b.grid_shape != a.grid_shape:
            b = upsample_field(b, a)
        out = mean_fields(a, b) if p["mode"] == "mean" else compose_fields(a, b)
        _write_tensor(out, p["output"])

    _run(go)


@main.command("evaluate")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--field", required=True, type=click.Path(exists=True))
@click.option("--landmarks-fixed", default=None, type=click.Path(exists=True))
@click.option("--landmarks-moving", default=None, type=click.Path(exists=True))
@click.option("--spacing-fixed", nargs=3, type=float, default=(1.0, 1.0, 1.0),
              show_default=True, help="(sz sy sx) mm")
@click.option("--spacing-moving", nargs=3, type=float, default=(1.0, 1.0, 1.0),
              show_default=True)
@click.option("--seg-fixed", default=None, type=click.Path(exists=True))
@click.option("--seg-moving", default=None, type=click.Path(exists=True))
@click.option("--output", default=None, type=click.Path(),
              help="JSON report path (default: stdout)")
@click.pass_context
def evaluate_cmd(ctx, config, **_):
    """Evaluate a field: TRE, TRE30, Dice, sdLogJ as a JSON report."""
    p = _merge(ctx, _load_config(config))
    if bool(p["landmarks_fixed"]) != bool(p["landmarks_moving"]):
        raise click.UsageError("landmarks require both --landmarks-fixed and --landmarks-moving")
    if bool(p["seg_fixed"]) != bool(p["seg_moving"]):
        raise click.UsageError("segmentations require both --seg-fixed and --seg-moving")
    if not p["landmarks_fixed"] and not p["seg_fixed"]:
        raise click.UsageError("nothing to evaluate: pass landmarks and/or segmentations")

    def go():
        field = _read_tensor(p["field"], DisplacementField)
        report = {}
        if p["landmarks_fixed"]:
            lm = io.read_landmarks(p["landmarks_fixed"], p["landmarks_moving"],
                                   tuple(p["spacing_fixed"]), tuple(p["spacing_moving"]))
            res = tre(lm, field)
            report["tre_mm"] = res.mean_mm
            report["tre30_mm"] = tre30(lm, field)
            report["per_landmark_mm"] = res.per_landmark_mm.tolist()
        if p["seg_fixed"]:
            sf = io.read_volume(p["seg_fixed"], as_labels=True)
            sm = io.read_volume(p["seg_moving"], as_labels=True)
            dfield = field
            if dfield.grid_shape != sf.data.shape:
                dfield = upsample_field(dfield, (sf.data.shape, GridInfo()))
            d = dice(sf, sm, dfield)
            report["dice_per_label"] = {str(k): v for k, v in d.per_label.items()}
            report["dice_mean"] = d.mean
        jac = sd_log_jacobian(field)
        report["sd_log_jacobian"] = jac.sd_log_jacobian
        report["folded_voxel_count"] = jac.folded_voxel_count
        text = json.dumps(report, indent=2, sort_keys=True)
        if p["output"]:
            io.atomic_write(p["output"], lambda q: open(q, "w").write(text))
        else:
            click.echo(text)

    _run(go)


@main.command("overlay")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--fixed", required=True, type=click.Path(exists=True))
@click.option("--warped", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--tiles", default=8, show_default=True)
@click.pass_context
def overlay_cmd(ctx, config, **_):
    """Write a checkerboard PNG of the axial mid-slices of two volumes."""
    p = _merge(ctx, _load_config(config))

    def go():
        from PIL import Image

        a = io.read_volume(p["fixed"]).data
        b = io.read_volume(p["warped"]).data
        if a.shape != b.shape:
            raise ValueError(f"volume shapes differ: {a.shape} vs {b.shape}")
        sa, sb = a[a.shape[0] // 2], b[b.shape[0] // 2]

        def to8(s):
            lo, hi = float(s.min()), float(s.max())
            return ((s - lo) / (hi - lo or 1.0) * 255).astype(np.uint8)

        sa, sb = to8(sa), to8(sb)
        h, w = sa.shape
        ty, tx = max(h // p["tiles"], 1), max(w // p["tiles"], 1)
        yy, xx = np.meshgrid(np.arange(h) // ty, np.arange(w) // tx, indexing="ij")
        board = (yy + xx) % 2 == 0
        img = np.where(board, sa, sb)
        io.atomic_write(p["output"], lambda q: Image.fromarray(img).save(q, format="PNG"))

    _run(go)


if __name__ == "__main__":
    main()
