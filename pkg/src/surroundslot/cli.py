"""Command-line interface: ``surroundslot <command> ...``.

Exit codes: 0 on success, 1 on malformed input files, 2 when a gradient
check or benchmark threshold fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import cv2
import numpy as np

from . import formats
from .detector import DetectorConfig, detect
from .errors import FormatError, SurroundSlotError
from .evaluation import EvalReport, evaluate
from .geometry import SlotClass
from .plane import BevSpec
from .scene import LayoutKind, crop_to_bev, default_rig, make_scene
from .stitch import synthesize_bev

ENTRANCE_COLOR = (0, 255, 0)
EDGE_COLOR = (255, 255, 0)
CORNER_COLORS = {
    SlotClass.REGULAR: (0, 255, 255),
    SlotClass.HANDICAPPED: (0, 0, 255),
    SlotClass.EV: (255, 0, 255),
}


def _bev_spec(size: int, extent_m: float) -> BevSpec:
    return BevSpec(width_px=size, height_px=size, extent_m=(extent_m, extent_m))


def _layout_kind(text: str) -> LayoutKind:
    try:
        return LayoutKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _write_report(report: EvalReport, out: Optional[Path], figures: Optional[Path]) -> None:
    if out is not None:
        formats.atomic_write_text(out.with_suffix(".txt"), report.to_text())
        formats.write_json(out.with_suffix(".json"), report.to_dict())
    if figures is not None:
        from .plotting import write_report_figures

        for path in write_report_figures(report, figures):
            print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rig = formats.read_rig(args.rig) if args.rig else default_rig()
    bev = _bev_spec(args.bev_size, args.extent_m)
    scene = make_scene(args.kind, args.slots, args.seed, rows=args.rows, rig=rig, bev=bev, noise=args.noise)
    formats.write_pnm(out / "texture.ppm", crop_to_bev(scene.texture))
    for label, image in scene.images.items():
        formats.write_pnm(out / f"cam_{label}.ppm", image)
    formats.write_rig(out / "rig.json", rig)
    formats.write_json(out / "labels.json", formats.labels_to_dict(scene.layout.slots))
    print(f"{len(scene.layout.slots)} {scene.layout.kind} slots written to {out}")
    return 0


def cmd_stitch(args: argparse.Namespace) -> int:
    rig = formats.read_rig(args.rig)
    images = {cam.label: formats.read_color_image(Path(args.images) / f"cam_{cam.label}.ppm") for cam in rig}
    bev = synthesize_bev(images, rig, _bev_spec(args.bev_size, args.extent_m), threads=args.threads)
    formats.write_pnm(args.out, bev)
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    image = formats.read_color_image(args.bev)
    cfg = formats.read_detector_config(args.config) if args.config else DetectorConfig()
    h, w = image.shape[:2]
    bev = BevSpec(width_px=w, height_px=h, extent_m=(args.extent_m * h / w, args.extent_m))
    dets = detect(image, cfg, bev)
    formats.write_json(args.out, formats.detections_to_dict(dets))
    print(f"{len(dets)} detections written to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dets = formats.read_detections(args.dets)
    gts = formats.read_labels(args.gt)
    report = evaluate(dets, gts, args.iou, method=args.ap_method)
    sys.stdout.write(report.to_text())
    _write_report(report, Path(args.out) if args.out else None, Path(args.figures) if args.figures else None)
    return 0


def draw_overlay(image: np.ndarray, slots: Sequence, bev: BevSpec, thickness: int = 2) -> np.ndarray:
    """Stroke slot rings on a copy of ``image``: entrance green, other edges yellow,
    corners dotted in the class color."""
    out = np.ascontiguousarray(image.copy())
    for poly, cls in slots:
        px = np.rint(bev.vehicle_to_pixel(poly.corners)).astype(int)
        el, er, endl, endr = (tuple(int(v) for v in p) for p in px)
        for a, b in ((er, endr), (endr, endl), (endl, el)):
            cv2.line(out, a, b, EDGE_COLOR, thickness, cv2.LINE_AA)
        cv2.line(out, el, er, ENTRANCE_COLOR, thickness, cv2.LINE_AA)
        for p in (el, er, endl, endr):
            cv2.circle(out, p, thickness + 3, CORNER_COLORS[cls], -1, cv2.LINE_AA)
    return out


def cmd_render_overlay(args: argparse.Namespace) -> int:
    image = formats.read_color_image(args.bev)
    doc = formats.read_json(args.labels)
    slots = formats.labels_from_dict(doc, str(args.labels))
    h, w = image.shape[:2]
    bev = BevSpec(width_px=w, height_px=h, extent_m=(args.extent_m * h / w, args.extent_m))
    formats.write_pnm(args.out, draw_overlay(image, slots, bev))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradcheck import check_iou_gradient, check_loss_gradient

    results = [check_iou_gradient(args.trials, args.seed), check_loss_gradient(args.trials, args.seed + 1)]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.trials} trials, worst error {r.worst:.3f} of tolerance")
    return 0 if all(r.passed for r in results) else 2


def cmd_bench(args: argparse.Namespace) -> int:
    from .pipeline import MIN_CLASS_AP, MIN_MEAN_AP, run_bench

    rig = formats.read_rig(args.rig) if args.rig else default_rig()
    cfg = formats.read_detector_config(args.config) if args.config else DetectorConfig()
    result = run_bench(args.seed, args.scenes, rows=args.rows, rig=rig, cfg=cfg, noise=args.noise,
                       iou_threshold=args.iou, threads=args.threads)
    sys.stdout.write(result.report.to_text())
    print(f"scenes {len(result.specs)}  slots {result.n_slots}  "
          f"mean_ap {result.report.mean_ap:.3f}  seconds {result.seconds:.1f}")
    _write_report(result.report, Path(args.out) if args.out else None,
                  Path(args.figures) if args.figures else None)
    if not result.passed:
        print(f"FAIL: bench needs per-class AP >= {MIN_CLASS_AP} and mean AP >= {MIN_MEAN_AP}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surroundslot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def bev_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--bev-size", type=int, default=1024, help="BEV width and height in pixels")
        p.add_argument("--extent-m", type=float, default=25.0, help="BEV side length in meters")

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--kind", type=_layout_kind, required=True, help="perp, parallel or fishbone:DEGREES")
    p.add_argument("--slots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, choices=(1, 2), default=1)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian pixel noise sigma")
    p.add_argument("--rig", help="rig JSON (default: built-in rig)")
    p.add_argument("--out", required=True, help="output directory")
    bev_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stitch", help="stitch four fisheye images into a BEV image")
    p.add_argument("--rig", required=True)
    p.add_argument("--images", required=True, help="directory holding cam_<label>.ppm")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    bev_args(p)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("detect", help="detect slots on a BEV image")
    p.add_argument("--bev", required=True)
    p.add_argument("--config", help="detector settings JSON")
    p.add_argument("--extent-m", type=float, default=25.0, help="BEV width in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against labels")
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--ap-method", choices=("all-point", "11-point"), default="all-point")
    p.add_argument("--out", help="report path; .txt and .json are both written")
    p.add_argument("--figures", help="directory for PR-curve and metric figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render-overlay", help="draw labelled slots on a BEV image")
    p.add_argument("--bev", required=True)
    p.add_argument("--labels", required=True, help="labels or detections JSON")
    p.add_argument("--extent-m", type=float, default=25.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_overlay)

    p = sub.add_parser("gradcheck", help="finite-difference check of IoU and loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="end-to-end synthetic benchmark")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--rows", type=int, choices=(1, 2), default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--rig")
    p.add_argument("--config")
    p.add_argument("--out", help="report path; .txt and .json are both written")
    p.add_argument("--figures", help="directory for PR-curve and metric figures")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, SurroundSlotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
