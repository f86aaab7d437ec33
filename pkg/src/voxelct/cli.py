from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .config_store import BATCH_PRESETS, build_recon_config, load_config_file
from .errors import DataFormatError, ExitCode, InvalidArgumentError
from .experiments import DEFAULT_NOVEL_VIEWS, time_epoch, tv_ablation, view_sweep
from .geometry import desk_geometry, make_circular_orbit
from .imaging import extract_slice, parse_axis, save_png
from .metrics import evaluate
from .models import PhantomKind, RendererKind, VoxelGrid
from .optim import reconstruct
from .phantoms import make_phantom
from .renderer import render_projections
from .volume_io import read_geometry, read_projections, read_volume, write_projections, write_volume

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, dict[str, Any]], int]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(int(ExitCode.USAGE), f"{self.prog}: error: {message}\n")


def _triple(cast: type) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [part for part in text.replace("x", ",").split(",") if part.strip()]
        try:
            values = tuple(cast(part) for part in parts)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}: {exc}") from exc
        if len(values) == 1:
            values = values * 3
        if len(values) != 3:
            raise argparse.ArgumentTypeError(f"expected one or three comma-separated values, got {text!r}")
        return values

    return parse


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _add_grid_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dims", type=_triple(int), required=True, help="voxel counts nx,ny,nz (or one value)")
    parser.add_argument(
        "--spacing",
        type=_triple(float),
        default=(1.0, 1.0, 1.0),
        help="voxel size in mm sx,sy,sz (default: %(default)s)",
    )


def _add_recon_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("reconstruction")
    group.add_argument("--config", type=Path, help="JSON document with reconstruction settings")
    group.add_argument("--renderer", choices=[kind.value for kind in RendererKind])
    group.add_argument("--lambda-tv", dest="lambda_tv", type=float, help="TV weight (default: 5 siddon, 3 trilinear)")
    group.add_argument("--iterations", type=int, help="number of epochs")
    group.add_argument("--lr", dest="lr_initial", type=float, help="initial learning rate (default: 0.05)")
    group.add_argument("--batch-rays", dest="batch_rays", type=int, help="rays per optimizer step")
    group.add_argument("--batch-preset", choices=sorted(BATCH_PRESETS), help="named batch size")
    group.add_argument("--m-samples", dest="m_samples", type=int, help="trilinear samples per ray")
    group.add_argument("--softplus-beta", dest="softplus_beta", type=float)
    group.add_argument("--seed", type=int)


def _recon_config(args: argparse.Namespace, user: dict[str, Any]):
    document = load_config_file(args.config) if args.config else None
    overrides = {
        "renderer": args.renderer,
        "lambda_tv": args.lambda_tv,
        "iterations": args.iterations,
        "lr_initial": args.lr_initial,
        "batch_rays": args.batch_rays,
        "m_samples": args.m_samples,
        "softplus_beta": args.softplus_beta,
        "seed": args.seed,
    }
    if args.batch_preset and args.batch_rays is None:
        overrides["batch_rays"] = BATCH_PRESETS[args.batch_preset]
    return build_recon_config(user, document, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxelct", description="Sparse-view CBCT reconstruction by differentiable X-ray rendering.")
    parser.add_argument("--threads", type=int, help="worker threads (default: config value, 0 = all cores)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log per-batch progress")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    phantom = commands.add_parser("phantom", help="write a synthetic ground-truth volume")
    phantom.add_argument("--kind", choices=[kind.value for kind in PhantomKind], required=True)
    _add_grid_args(phantom)
    phantom.add_argument("--seed", type=int, default=0)
    phantom.add_argument("--value", type=float, default=0.05, help="LAC of the uniform phantom")
    phantom.add_argument("--dtype", choices=["f32", "f64"])
    phantom.add_argument("--out", type=Path, required=True)
    phantom.set_defaults(handler=cmd_phantom)

    render = commands.add_parser("render", help="simulate projections of a volume on a circular orbit")
    render.add_argument("--volume", type=Path, required=True)
    render.add_argument("--geometry", type=Path, help="geometry JSON (default: desk geometry fitted to the volume)")
    render.add_argument("--views", type=int, help="number of evenly spaced views (overrides the geometry's angles)")
    render.add_argument("--detector-pixels", dest="detector_pixels", type=int, help="desk detector size")
    render.add_argument("--renderer", choices=[kind.value for kind in RendererKind], default=RendererKind.SIDDON.value)
    render.add_argument("--m-samples", dest="m_samples", type=int, default=500)
    render.add_argument("--dtype", choices=["f32", "f64"])
    render.add_argument("--out", type=Path, required=True)
    render.set_defaults(handler=cmd_render)

    recon = commands.add_parser("reconstruct", help="reconstruct a volume from projections")
    recon.add_argument("--projections", type=Path, required=True)
    _add_grid_args(recon)
    recon.add_argument("--origin", type=_triple(float), help="grid corner in mm (default: centered)")
    _add_recon_args(recon)
    recon.add_argument("--progress-csv", dest="progress_csv", type=Path, help="per-batch loss log (epoch,batch,loss)")
    recon.add_argument("--dtype", choices=["f32", "f64"])
    recon.add_argument("--out", type=Path, required=True)
    recon.set_defaults(handler=cmd_reconstruct)

    evaluate_cmd = commands.add_parser("evaluate", help="compare a volume against a reference")
    evaluate_cmd.add_argument("--test", type=Path, required=True)
    evaluate_cmd.add_argument("--reference", type=Path, required=True)
    evaluate_cmd.add_argument("--dynamic-range", dest="dynamic_range", type=float)
    evaluate_cmd.add_argument("--slice", type=int, help="slice index exported with --png")
    evaluate_cmd.add_argument("--axis", default="z", help="slice axis x, y or z (default: %(default)s)")
    evaluate_cmd.add_argument("--png", type=Path, help="write the test slice as 8-bit grayscale PNG")
    evaluate_cmd.set_defaults(handler=cmd_evaluate)

    view = commands.add_parser("view", help="open the slice viewer")
    view.add_argument("--test", type=Path, required=True)
    view.add_argument("--reference", type=Path)
    view.add_argument("--language", choices=["ja", "en"])
    view.set_defaults(handler=cmd_view)

    sweep = commands.add_parser("sweep", help="reconstruct a phantom at several view counts and report metrics")
    sweep.add_argument("--kind", choices=[kind.value for kind in PhantomKind], default=PhantomKind.SPHERES.value)
    _add_grid_args(sweep)
    sweep.add_argument("--phantom-seed", dest="phantom_seed", type=int, default=0)
    sweep.add_argument("--views", type=_int_list, default=[5, 15, 30, 60], help="comma-separated view counts")
    sweep.add_argument("--detector-pixels", dest="detector_pixels", type=int)
    sweep.add_argument("--novel-views", dest="novel_views", type=int, default=DEFAULT_NOVEL_VIEWS)
    sweep.add_argument("--tv-ablation", dest="tv_ablation", type=int, metavar="VIEWS", help="also run with and without TV")
    sweep.add_argument("--time-epoch", dest="time_epoch", action="store_true", help="also time one epoch per renderer")
    _add_recon_args(sweep)
    sweep.add_argument("--out", type=Path, required=True, help="JSON report")
    sweep.set_defaults(handler=cmd_sweep)

    return parser


def cmd_phantom(args: argparse.Namespace, user: dict[str, Any]) -> int:
    grid = make_phantom(args.kind, args.dims, args.spacing, seed=args.seed, value=args.value)
    write_volume(grid, args.out, args.dtype)
    return ExitCode.OK


def cmd_render(args: argparse.Namespace, user: dict[str, Any]) -> int:
    grid = read_volume(args.volume)
    if args.geometry is not None:
        geom = read_geometry(args.geometry)
        if args.views is not None:
            orbit = make_circular_orbit(args.views)
            geom = geom.with_angles(orbit.view_angles)
    else:
        if args.views is None:
            raise InvalidArgumentError("render needs --views when no --geometry is given")
        geom = desk_geometry(args.views, grid, args.detector_pixels)
    projections = render_projections(grid, geom, args.renderer, args.m_samples)
    write_projections(projections, args.out, args.dtype)
    return ExitCode.OK


def cmd_reconstruct(args: argparse.Namespace, user: dict[str, Any]) -> int:
    config = _recon_config(args, user)
    projections = read_projections(args.projections)
    if args.origin is None:
        template = VoxelGrid.centered(args.dims, args.spacing)
    else:
        template = VoxelGrid(dims=args.dims, spacing=args.spacing, origin=args.origin)

    if args.progress_csv is None:
        result = reconstruct(projections, template, config)
    else:
        args.progress_csv.parent.mkdir(parents=True, exist_ok=True)
        with args.progress_csv.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "batch", "loss"])
            result = reconstruct(
                projections,
                template,
                config,
                progress_sink=lambda epoch, batch, value: writer.writerow([epoch, batch, repr(value)]),
            )
    write_volume(result, args.out, args.dtype)
    return ExitCode.OK


def cmd_evaluate(args: argparse.Namespace, user: dict[str, Any]) -> int:
    test = read_volume(args.test)
    reference = read_volume(args.reference)
    if test.dims != reference.dims:
        raise DataFormatError(f"shape mismatch: test {test.dims} vs reference {reference.dims}")
    report = evaluate(reference, test, args.dynamic_range)
    print(json.dumps(report.to_dict(), indent=2))
    if args.png is not None:
        axis = parse_axis(args.axis)
        index = args.slice if args.slice is not None else test.dims[axis] // 2
        save_png(extract_slice(test, axis, index), args.png)
    return ExitCode.OK


def cmd_view(args: argparse.Namespace, user: dict[str, Any]) -> int:
    from .viewer import run_viewer

    test = read_volume(args.test)
    reference = read_volume(args.reference) if args.reference is not None else None
    if reference is not None and reference.dims != test.dims:
        raise DataFormatError(f"shape mismatch: test {test.dims} vs reference {reference.dims}")
    return run_viewer(test, reference, args.language or user.get("ui_language"))


def cmd_sweep(args: argparse.Namespace, user: dict[str, Any]) -> int:
    config = _recon_config(args, user)
    phantom = make_phantom(args.kind, args.dims, args.spacing, seed=args.phantom_seed)
    points = view_sweep(phantom, args.views, config, args.detector_pixels, args.novel_views)
    report: dict[str, Any] = {
        "phantom": {"kind": args.kind, "dims": list(phantom.dims), "spacing_mm": list(phantom.spacing)},
        "config": config.to_dict(),
        "points": [point.to_dict() for point in points],
    }
    if args.tv_ablation:
        ablation = tv_ablation(phantom, args.tv_ablation, config.renderer, config, args.detector_pixels)
        report["tv_ablation"] = {name: point.to_dict() for name, point in ablation.items()}
    if args.time_epoch:
        geom = desk_geometry(max(args.views), phantom, args.detector_pixels)
        report["epoch_seconds"] = {
            kind.value: time_epoch(phantom, geom, kind, config.batch_rays, config.m_samples, config.seed)
            for kind in RendererKind
        }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(report, indent=2, ensure_ascii=False), encoding="utf-8")
    logger.info("wrote sweep report %s", args.out)
    return ExitCode.OK


def dispatch(args: argparse.Namespace, user: dict[str, Any]) -> int:
    handler: Handler = args.handler
    return int(handler(args, user))


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
