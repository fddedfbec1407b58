"""Command-line entry point for the feature exporter."""
from __future__ import annotations

import sys

import click

from .encoders import make_encoder
from .export import VIEWS, ExportConfig, export_features


@click.command()
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--view", type=click.Choice(VIEWS), default="axial", show_default=True)
@click.option("--gap", default=3, show_default=True)
@click.option("--factor", default=3, show_default=True)
@click.option("--window", nargs=2, type=float, default=(-1000.0, 1000.0),
              show_default=True, help="intensity window (low high)")
@click.option("--encoder", "encoder_name", type=click.Choice(["dinov2", "linear"]),
              default="dinov2", show_default=True)
@click.option("--weights", default=None, type=str,
              help="local checkpoint directory (or hub id with --allow-download)")
@click.option("--allow-download", is_flag=True,
              help="permit fetching weights over the network")
@click.option("--seed", default=0, show_default=True,
              help="seed for the linear stand-in encoder")
def main(input_, out, view, gap, factor, window, encoder_name, weights,
         allow_download, seed):
    """Export ViT patch features of a NIfTI volume as a sparse FTV tensor."""
    try:
        enc = make_encoder(encoder_name, weights, allow_download, seed)
        cfg = ExportConfig(view=view, gap=gap, factor=factor, window=tuple(window))
        meta = export_features(input_, out, cfg, enc)
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    n = len(meta["extra"]["slice_indices"])
    click.echo(f"wrote {out}: {n} encoded slices, view={view}, gap={gap}")


if __name__ == "__main__":
    main()
