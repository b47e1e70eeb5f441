"""Command line entry point: ``melidar <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import codec, metrics, ops, tensor_io
from .errors import MelidarError
from .model import MultiEchoFrame, SimConfig

log = logging.getLogger("melidar")

TOY_FILES = ("rgb.melt", "depth.melt", "normals.melt", "config.json", "labels.jsonl")


class CliError(Exception):
    """Runtime failure reported as a structured message with exit code 1."""


def toy_dir() -> Path:
    return Path(str(resources.files("melidar") / "data" / "toy"))


def _load_config(path, overrides) -> SimConfig:
    base = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as e:
                raise CliError(f"{path}: invalid JSON: {e}") from None
    return SimConfig.from_dict(base).updated(**overrides)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_simulate(args) -> int:
    from .simulate import simulate

    if args.toy:
        root = toy_dir()
        rgb_p, depth_p, normals_p = root / "rgb.melt", root / "depth.melt", root / "normals.melt"
        config_p = args.config or root / "config.json"
    else:
        missing = [f for f in ("rgb", "depth", "normals") if getattr(args, f) is None]
        if missing:
            raise CliError("missing inputs: " + ", ".join("--" + m for m in missing) + " (or use --toy)")
        rgb_p, depth_p, normals_p, config_p = args.rgb, args.depth, args.normals, args.config
    cfg = _load_config(config_p, {"sbr": args.sbr, "bins": args.bins, "seed": args.seed, "k": args.k})
    rgb, _ = tensor_io.read_tensor(rgb_p)
    depth, _ = tensor_io.read_tensor(depth_p)
    normals, _ = tensor_io.read_tensor(normals_p)
    res = simulate(rgb, depth, normals, cfg, threads=args.threads, backend=args.backend)
    out = _out_dir(args.out_dir)
    meta = {"bin_width": cfg.bin_width, "seed": cfg.seed, "sbr": cfg.sbr, "bins": cfg.bins, "tau": res.tau}
    tensor_io.write_tensor(out / "ambient.melt", res.ambient.astype(np.float32), dict(meta, kind="ambient"))
    tensor_io.write_tensor(out / "reflectance.melt", res.reflectance.astype(np.float32), dict(meta, kind="reflectance"))
    tensor_io.write_tensor(out / "points.melt", res.cloud, dict(meta, kind="points", layout="x,y,z,reflectance,valid"))
    counts = res.frame.echo_counts()
    print(f"wrote {out}: {res.frame.height}x{res.frame.width} beams, echoes per slot {counts.tolist()}")
    return 0


def _frame_from(cloud_path, ambient_path=None) -> MultiEchoFrame:
    cloud, meta = tensor_io.read_tensor(cloud_path)
    if cloud.ndim != 4 or cloud.shape[-1] != 5:
        raise CliError(f"{cloud_path}: expected an [H, W, K, 5] point tensor, got {list(cloud.shape)}")
    if ambient_path:
        ambient, _ = tensor_io.read_tensor(ambient_path)
        if ambient.shape != cloud.shape[:2]:
            raise CliError(f"{ambient_path}: shape {list(ambient.shape)} does not match cloud {list(cloud.shape[:2])}")
    else:
        ambient = np.zeros(cloud.shape[:2])
    return MultiEchoFrame.from_cloud_tensor(cloud, ambient, float(meta.get("bin_width", math.nan)))


def cmd_reassign(args) -> int:
    frame = _frame_from(args.cloud)
    pen, imp = ops.reassign(frame)
    out = _out_dir(args.out)
    layout = "x,y,z,reflectance,row,col,echo"
    tensor_io.write_tensor(out / "penetrable.melt", pen.to_tensor(), {"kind": "penetrable", "layout": layout})
    tensor_io.write_tensor(out / "impenetrable.melt", imp.to_tensor(), {"kind": "impenetrable", "layout": layout})
    print(f"penetrable {len(pen)} points, impenetrable {len(imp)} points")
    return 0


def cmd_encode_image(args) -> int:
    frame = _frame_from(args.cloud, args.ambient)
    img = frame.to_lidar_image()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor_io.write_tensor(out, img.data, {"kind": "lidar_image", "channels": "ambient," + ",".join(
        f"echo{i + 1}" for i in range(img.k))})
    print(f"wrote {out}: {list(img.data.shape)}")
    return 0


def cmd_encode_targets(args) -> int:
    boxes = tensor_io.read_labels(args.labels)
    pts, _ = tensor_io.read_tensor(args.points)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise CliError(f"{args.points}: expected an [M, >=3] point tensor, got {list(pts.shape)}")
    cfg = codec.BinCodecConfig()
    if args.codec:
        with open(args.codec, encoding="utf-8") as fh:
            cfg = codec.BinCodecConfig.from_dict(json.load(fh))
    xyz = pts[:, :3]
    # columns: foreground, box index, 3 bins, 7 residuals
    out = np.zeros((len(xyz), 12), dtype=np.float32)
    out[:, 1] = -1
    for bi, box in enumerate(boxes):
        inside = np.nonzero(box.contains(xyz) & (out[:, 0] == 0))[0]
        for i in inside:
            t = codec.encode(box, xyz[i], cfg)
            out[i, 0] = 1
            out[i, 1] = bi
            out[i, 2:5] = t.bins
            out[i, 5:] = t.residuals
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensor_io.write_tensor(path, out, {
        "kind": "box_targets",
        "layout": "fg,box,bin_x,bin_y,bin_yaw,res_x,res_y,res_yaw,res_z,res_h,res_w,res_l",
        "search_range": cfg.search_range, "bin_size": cfg.bin_size, "yaw_bins": cfg.yaw_bins,
    })
    print(f"wrote {path}: {int(out[:, 0].sum())} foreground of {len(out)} points")
    return 0


def cmd_eval(args) -> int:
    gts, gf = tensor_io.read_labels(args.gt, with_frames=True)
    dets, df = tensor_io.read_labels(args.det, with_frames=True)
    classes = [args.cls] if args.cls else sorted({b.label for b in gts} & set(metrics.IOU_THRESHOLDS))
    levels = [args.difficulty] if args.difficulty else list(metrics.DIFFICULTIES)
    rows = []
    for cls in classes:
        ious = [args.iou] if args.iou is not None else list(metrics.IOU_THRESHOLDS.get(cls, (0.5,)))
        for thr in ious:
            for level in levels:
                r = metrics.average_precision(dets, gts, cls, thr, level, args.mode, det_frames=df, gt_frames=gf)
                rows.append(dict(r.to_dict(), **{"class": cls, "iou": thr, "difficulty": level, "mode": args.mode}))
    if args.report == "json":
        print(json.dumps({"results": rows}, indent=2, sort_keys=True))
    else:
        for r in rows:
            ap = "nan" if r["ap"] is None else f"{100 * r['ap']:.2f}"
            note = " (no ground truth)" if r["num_gt"] == 0 else ""
            print(f"{r['class']:<8} iou={r['iou']:.2f} {r['difficulty']:<8} AP={ap}{note} "
                  f"gt={r['num_gt']} det={r['num_det']} tp={r['tp']} fp={r['fp']}")
    return 0


def cmd_inspect(args) -> int:
    for p in args.files:
        head = tensor_io.read_header(p)
        print(f"{p}: dims={head['dims']} dtype={head['dtype']} bytes={head['bytes']}")
        print(f"  meta: {json.dumps(head['meta'], sort_keys=True)}")
        dims = head["dims"]
        if len(dims) == 4 and dims[-1] == 5:
            frame = _frame_from(p)
            counts = frame.echo_counts()
            groups = int(np.asarray(frame.valid).any(axis=-1).sum())
            refl = np.asarray(frame.reflectance)[np.asarray(frame.valid)]
            print(f"  frame: {frame.height}x{frame.width}x{frame.max_echoes}, points={frame.num_points()}, "
                  f"non-empty groups={groups}, echoes per slot={counts.tolist()}")
            if refl.size:
                print(f"  reflectance: min={refl.min():.4g} mean={refl.mean():.4g} max={refl.max():.4g}")
    return 0


def cmd_make_toy(args) -> int:
    from .scene import toy_scene

    scene = toy_scene(args.scene_seed)
    out = _out_dir(args.out_dir)
    write_toy(scene, out)
    print(f"wrote toy scene to {out}")
    return 0


def write_toy(scene, out: Path) -> None:
    tensor_io.write_tensor(out / "rgb.melt", scene.rgb.astype(np.float32), {"kind": "rgb"})
    tensor_io.write_tensor(out / "depth.melt", scene.depth.astype(np.float32), {"kind": "depth", "no_hit": "inf"})
    tensor_io.write_tensor(out / "normals.melt", scene.normals.astype(np.float32), {"kind": "normals", "frame": "camera"})
    cfg = scene.config.to_dict()
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    tensor_io.write_labels(out / "labels.jsonl", list(scene.boxes))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="melidar", description="Multi-echo LiDAR simulation and evaluation tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate multi-echo LiDAR from RGB, depth and normal images")
    s.add_argument("--rgb")
    s.add_argument("--depth")
    s.add_argument("--normals")
    s.add_argument("--config", help="JSON SimConfig; flags override it")
    s.add_argument("--toy", action="store_true", help="use the bundled 32x64 toy scene")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--sbr", type=float)
    s.add_argument("--bins", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--backend", choices=["cython", "python"])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reassign", help="split a point tensor into penetrable and impenetrable sets")
    s.add_argument("--cloud", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_reassign)

    s = sub.add_parser("encode-image", help="build the [H, W, 1+K] LiDAR image")
    s.add_argument("--cloud", required=True)
    s.add_argument("--ambient", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode_image)

    s = sub.add_parser("encode-targets", help="bin-based regression targets for foreground points")
    s.add_argument("--labels", required=True)
    s.add_argument("--points", required=True, help="[M, >=3] point tensor, e.g. from reassign")
    s.add_argument("--codec", help="JSON codec config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode_targets)

    s = sub.add_parser("eval", help="average precision of detections against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--det", required=True)
    s.add_argument("--class", dest="cls")
    s.add_argument("--iou", type=float)
    s.add_argument("--difficulty", choices=list(metrics.DIFFICULTIES) + ["all"])
    s.add_argument("--mode", choices=["depth", "kitti"], default="depth")
    s.add_argument("--report", choices=["text", "json"], default="text")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="print container headers and frame statistics")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("make-toy", help="write a procedural toy scene")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--scene-seed", type=int, default=0)
    s.set_defaults(func=cmd_make_toy)
    return p


def _report(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, MelidarError, CliError, ValueError) as e:
        _report(type(e).__name__, str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
