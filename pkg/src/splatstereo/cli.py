"""Command-line front end.

Every option can also come from a TOML file passed with ``--config``.  Keys use
the option names with ``-`` or ``_``; top-level keys apply to every command and
a table named after a command (e.g. ``[synth]``) applies to that command only.
Explicit flags override file values.  Relative paths in the file resolve
against the file's directory.

Exit codes: 0 success, 1 validation or evaluation failure under ``--strict``,
2 usage error, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .errors import NonPositiveBaseline, SplatStereoError

logger = logging.getLogger("splatstereo")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

_PATH_KEYS = {"scene_dir", "colmap", "mesh", "splats", "color_splats", "out_dir", "report",
              "pred_dir", "manifest", "out", "disparity", "valid"}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing

def _resolution(text):
    if isinstance(text, (list, tuple)):
        w, h = text
    else:
        try:
            w, h = str(text).lower().split("x")
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    w, h = int(w), int(h)
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return (w, h)


def _add_model_args(p):
    p.add_argument("--scene-dir", type=Path, help="scene root; the model is read from SCENE_DIR/COLMAP_SUBDIR")
    p.add_argument("--colmap-subdir", default="sparse/0", help="model location inside the scene (default: %(default)s)")
    p.add_argument("--colmap", type=Path, help="COLMAP model directory (overrides --scene-dir)")


def _add_source_args(p, splats=True):
    p.add_argument("--mesh", type=Path, help="triangle mesh (PLY or OBJ)")
    if splats:
        p.add_argument("--splats", type=Path, help="Gaussian-splat PLY")
    p.add_argument("--largest-cluster", action="store_true", default=False,
                   help="keep only the largest connected mesh component")


def _add_common(p):
    p.add_argument("--config", type=Path, help="TOML file with option values")
    p.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
    p.add_argument("--strict", action="store_true", default=False,
                   help="exit 1 on validation warnings or evaluation failure")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatstereo", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="load a COLMAP model and check principal points")
    _add_model_args(p)
    p.add_argument("--tolerance", type=float, default=0.02,
                   help="allowed principal-point offset as a fraction of image size (default: %(default)s)")
    p.add_argument("--report", type=Path, help="also write the JSON report here")
    _add_common(p)

    p = sub.add_parser("observability", help="vertex observability heatmap and camera ranking")
    _add_model_args(p)
    _add_source_args(p, splats=False)
    p.add_argument("--out-dir", type=Path, help="output directory")
    p.add_argument("--grazing-limit", type=float, default=80.0, help="degrees (default: %(default)s)")
    p.add_argument("--top-k", type=int, default=5, help="cameras to select (default: %(default)s)")
    p.add_argument("--resolution", type=_resolution, help="render size WIDTHxHEIGHT for scoring")
    p.add_argument("--downscale", type=float, default=1.0, help="score at 1/DOWNSCALE resolution")
    _add_common(p)

    p = sub.add_parser("render", help="render depth (and colour) for posed images")
    _add_model_args(p)
    _add_source_args(p)
    p.add_argument("--image-ids", type=int, nargs="+", help="images to render (default: all)")
    p.add_argument("--resolution", type=_resolution, help="output size WIDTHxHEIGHT")
    p.add_argument("--alpha-threshold", type=float, default=0.5, help="splat depth validity (default: %(default)s)")
    p.add_argument("--out-dir", type=Path, help="output directory")
    _add_common(p)

    p = sub.add_parser("synth", help="write a rectified stereo dataset")
    _add_model_args(p)
    _add_source_args(p)
    p.add_argument("--color-splats", type=Path, help="splat PLY used for image colour with a mesh source")
    p.add_argument("--image-ids", type=int, nargs="+", help="left cameras (default: top-k by observability)")
    p.add_argument("--top-k", type=int, default=5, help="cameras to auto-select (default: %(default)s)")
    p.add_argument("--grazing-limit", type=float, default=80.0, help="degrees, for auto-selection")
    p.add_argument("--baselines", type=float, nargs="+", help="baselines in world units")
    p.add_argument("--resolution", type=_resolution, help="output size WIDTHxHEIGHT")
    p.add_argument("--alpha-threshold", type=float, default=0.5, help="splat depth validity (default: %(default)s)")
    p.add_argument("--scene-name", help="scene label in the manifest (default: output directory name)")
    p.add_argument("--out-dir", type=Path, help="output directory")
    _add_common(p)

    p = sub.add_parser("eval", help="bad-tau evaluation of predictions against a manifest")
    p.add_argument("--pred-dir", type=Path, help="directory with predicted disparities")
    p.add_argument("--manifest", type=Path, help="ground-truth manifest.json")
    p.add_argument("--dataset", help="dataset family: eth3d, middlebury or kitti")
    p.add_argument("--tau", type=float, help="override the family threshold")
    p.add_argument("--weighting", choices=["pair", "pixel"], default="pair")
    p.add_argument("--fail-above", type=float, help="with --strict, exit 1 if the All percentage exceeds this")
    p.add_argument("--report", type=Path, help="write the JSON report here")
    _add_common(p)

    p = sub.add_parser("histogram", help="disparity histogram of maps or a manifest")
    p.add_argument("--disparity", type=Path, nargs="+", help="PFM or 16-bit PNG disparity maps")
    p.add_argument("--valid", type=Path, help="validity mask for a single --disparity map")
    p.add_argument("--manifest", type=Path, help="use every entry of this manifest")
    p.add_argument("--bin-width", type=float, default=1.0, help="pixels (default: %(default)s)")
    p.add_argument("--out", type=Path, help="write CSV here instead of stdout")
    _add_common(p)

    return parser


def _load_config(path: Path, command: str, choices: dict) -> dict:
    """Values for ``command`` from a TOML file.

    Top-level keys may belong to any command and are ignored by commands that
    lack them; keys inside a command table must belong to that command.
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise SplatStereoError(f"{path}: {exc}") from None
    dests = {name: {a.dest for a in sp._actions} - {"config", "help"} for name, sp in choices.items()}
    everything = set().union(*dests.values())
    known = dests[command]
    values = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in choices:
            continue
        dest = key.replace("-", "_")
        if dest not in everything:
            raise UsageError(f"{path}: unknown option {key!r}")
        if dest in known:
            values[dest] = value
    for key, value in data.get(command, {}).items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        values[dest] = value
    out = {}
    for dest, value in values.items():
        if dest in _PATH_KEYS:
            value = [path.parent / v for v in value] if isinstance(value, list) else path.parent / value
        elif dest == "resolution":
            value = _resolution(value)
        out[dest] = value
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        choices = parser._subparsers._group_actions[0].choices
        try:
            choices[args.command].set_defaults(**_load_config(args.config, args.command, choices))
        except UsageError as exc:
            parser.error(str(exc))
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"{args.config}: {exc}")
        args = parser.parse_args(argv)
    return parser, args


# ------------------------------------------------------------------ helpers

def _model_dir(args) -> Path:
    if args.colmap is not None:
        return args.colmap
    if args.scene_dir is not None:
        return args.scene_dir / args.colmap_subdir
    raise UsageError("a COLMAP model is required (--colmap or --scene-dir)")


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _load_mesh_accel(args):
    from .mesh import build_bvh, keep_largest_cluster, load_mesh

    mesh = load_mesh(args.mesh)
    if args.largest_cluster:
        before = mesh.num_faces
        mesh = keep_largest_cluster(mesh)
        logger.info("largest cluster keeps %d of %d faces", mesh.num_faces, before)
    return build_bvh(mesh)


def _source(args):
    has_mesh = args.mesh is not None
    has_splats = getattr(args, "splats", None) is not None
    if has_mesh == has_splats:
        raise UsageError("give exactly one of --mesh or --splats")
    if has_mesh:
        return _load_mesh_accel(args)
    from .splat_render import load_splats

    return load_splats(args.splats)


def _write_json(path, obj):
    from .formats import atomic_write_bytes

    atomic_write_bytes(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


# ------------------------------------------------------------------ commands

def cmd_validate(args) -> int:
    from .colmap_io import load_scene_model, validate_principal_point

    model_dir = _model_dir(args)
    model = load_scene_model(model_dir)
    warnings = validate_principal_point(model, args.tolerance)
    for w in warnings:
        logger.warning(w.message)
    report = {
        "model": str(model_dir),
        "cameras": len(model.cameras),
        "images": len(model.images),
        "tolerance_fraction": args.tolerance,
        "warnings": [
            {"camera_id": w.camera_id, "width": w.width, "height": w.height, "cx": w.cx, "cy": w.cy,
             "offset_x": w.offset_x, "offset_y": w.offset_y, "message": w.message}
            for w in warnings
        ],
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.report is not None:
        _write_json(args.report, report)
    return EXIT_FAILURE if (warnings and args.strict) else EXIT_OK


def _observability(args, model, accel):
    from .observability import score_cameras, vertex_observability

    field = vertex_observability(accel, model, args.grazing_limit)
    scores = score_cameras(accel, field, model, resolution=getattr(args, "resolution", None),
                           downscale=getattr(args, "downscale", 1.0))
    return field, scores


def cmd_observability(args) -> int:
    from .colmap_io import load_scene_model
    from .formats import atomic_write_bytes
    from .mesh import save_mesh
    from .observability import export_heatmap, select_top_k, write_ranking_csv

    _require(args, "mesh", "out_dir")
    model = load_scene_model(_model_dir(args))
    accel = _load_mesh_accel(args)
    field, scores = _observability(args, model, accel)
    out = args.out_dir
    save_mesh(out / "heatmap.ply", export_heatmap(accel.mesh, field))
    write_ranking_csv(out / "ranking.csv", scores)
    selected = select_top_k(scores, args.top_k)
    atomic_write_bytes(out / "selection.txt", "".join(f"{i}\n" for i in selected).encode())
    logger.info("selected cameras %s", selected)
    return EXIT_OK


def cmd_render(args) -> int:
    from .colmap_io import load_scene_model
    from .formats import write_color_png, write_mask_png, write_pfm
    from .raycast import raycast_depth
    from .splat_render import SplatScene, render_splats

    _require(args, "out_dir")
    model = load_scene_model(_model_dir(args))
    source = _source(args)
    ids = args.image_ids or sorted(model.images)
    missing = [i for i in ids if i not in model.images]
    if missing:
        raise UsageError(f"image ids not in the model: {missing}")
    out = args.out_dir
    for image_id in ids:
        pose = model.images[image_id]
        intr = model.cameras[pose.camera_id]
        stem = f"{image_id:06d}"
        if isinstance(source, SplatScene):
            image, depth, alpha = render_splats(source, intr, pose, args.resolution,
                                                validity_threshold=args.alpha_threshold)
            write_color_png(out / f"{stem}.png", image)
            write_pfm(out / f"{stem}_alpha.pfm", alpha.values.astype(np.float32))
        else:
            depth = raycast_depth(source, intr, pose, args.resolution)
        write_pfm(out / f"{stem}_depth.pfm", depth.filled(0.0).astype(np.float32))
        write_mask_png(out / f"{stem}_valid.png", depth.valid)
        logger.info("rendered image %d (%d valid px)", image_id, int(depth.valid.sum()))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .colmap_io import load_scene_model
    from .formats import atomic_write_bytes
    from .observability import select_top_k, write_ranking_csv
    from .splat_render import load_splats
    from .stereo_synth import synth_dataset

    _require(args, "out_dir", "baselines")
    model = load_scene_model(_model_dir(args))
    source = _source(args)
    out = args.out_dir
    ids = args.image_ids
    if not ids:
        if args.mesh is None:
            raise UsageError("--image-ids is required without a mesh to rank cameras")
        _, scores = _observability(args, model, source)
        write_ranking_csv(out / "ranking.csv", scores)
        ids = select_top_k(scores, args.top_k)
        atomic_write_bytes(out / "selection.txt", "".join(f"{i}\n" for i in ids).encode())
        logger.info("auto-selected cameras %s", ids)
    color = load_splats(args.color_splats) if args.color_splats is not None else None
    manifest = synth_dataset(source, model, ids, args.baselines, out,
                             scene_name=args.scene_name or Path(out).resolve().name,
                             resolution=args.resolution, color_scene=color,
                             validity_threshold=args.alpha_threshold)
    logger.info("wrote %d pairs to %s", len(manifest.entries), out)
    print(out / "manifest.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import EvalConfig, EvalReport, evaluate_manifest, render_report, report_json

    _require(args, "pred_dir", "manifest")
    if args.tau is not None:
        config = EvalConfig(args.tau, args.dataset or "custom")
    elif args.dataset is not None:
        try:
            config = EvalConfig.for_family(args.dataset)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    else:
        raise UsageError("--dataset or --tau is required")
    results = evaluate_manifest(args.pred_dir, args.manifest, config, jobs=args.jobs)
    name = config.name
    report = EvalReport({name: results}, args.weighting, {name: config.tau})
    sys.stdout.write(render_report(report))
    if args.report is not None:
        from .formats import atomic_write_bytes

        atomic_write_bytes(args.report, report_json(report).encode("utf-8"))
    all_pct, _ = report.suite_aggregate()
    if args.strict and args.fail_above is not None and all_pct > args.fail_above:
        logger.error("All error %.2f%% exceeds %.2f%%", all_pct, args.fail_above)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_histogram(args) -> int:
    from .evaluation import load_disparity
    from .formats import atomic_write_bytes
    from .rasters import DisparityMap
    from .stereo_synth import DatasetManifest, disparity_histogram

    if (args.disparity is None) == (args.manifest is None):
        raise UsageError("give exactly one of --disparity or --manifest")
    if args.manifest is not None:
        root = args.manifest.parent
        entries = DatasetManifest.load(args.manifest).entries
        maps = [load_disparity(root / e.disparity, root / e.valid) for e in entries]
    else:
        if args.valid is not None and len(args.disparity) != 1:
            raise UsageError("--valid applies to a single --disparity map")
        maps = [load_disparity(p, args.valid) for p in args.disparity]
    if not maps:
        raise UsageError("no disparity maps to histogram")
    values = np.concatenate([m.values[m.valid] for m in maps])
    merged = DisparityMap(values[None, :], np.ones((1, values.size), dtype=bool))
    lines = ["bin_start,count"] + [f"{b!r},{c}" for b, c in disparity_histogram(merged, args.bin_width)]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        atomic_write_bytes(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "observability": cmd_observability,
    "render": cmd_render,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "histogram": cmd_histogram,
}


def main(argv=None) -> int:
    try:
        parser, args = parse_args(sys.argv[1:] if argv is None else argv)
    except (SplatStereoError, OSError) as exc:
        print(f"splatstereo: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be at least 1")
    from .mesh import set_num_threads

    set_num_threads(args.jobs)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"splatstereo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonPositiveBaseline as exc:
        print(f"splatstereo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SplatStereoError, OSError, ValueError, KeyError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
