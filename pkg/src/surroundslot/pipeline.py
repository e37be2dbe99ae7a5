"""End-to-end benchmark: synthesize scenes, stitch, detect, evaluate."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .camera import CameraRig
from .detector import DetectorConfig, detect
from .evaluation import EvalReport, evaluate_scenes
from .geometry import SLOT_CLASSES
from .plane import BevSpec
from .rng import SplitMix64
from .scene import LayoutKind, RenderPlan, default_rig, make_scene, texture_window
from .stitch import StitchPlan

MIN_CLASS_AP = 0.85
MIN_MEAN_AP = 0.90


@dataclass(frozen=True)
class SceneSpec:
    kind: LayoutKind
    n_slots: int
    seed: int


def bench_specs(seed: int, n_scenes: int = 20) -> List[SceneSpec]:
    """Deterministic mix of perpendicular, parallel and fishbone scenes."""
    rng = SplitMix64(seed)
    specs = []
    for i in range(n_scenes):
        which = i % 3
        if which == 0:
            kind, n = LayoutKind("perpendicular"), 6 + int(rng.random() * 5)
        elif which == 1:
            kind, n = LayoutKind("parallel"), 2 + int(rng.random() * 5)
        else:
            angle = math.radians(round(rng.uniform(25.0, 50.0)))
            kind, n = LayoutKind("fishbone", angle), 4 + int(rng.random() * 5)
        specs.append(SceneSpec(kind, n, int(rng.next_u64() >> 33)))
    return specs


@dataclass(frozen=True)
class BenchResult:
    report: EvalReport
    specs: List[SceneSpec]
    seconds: float
    n_slots: int

    @property
    def passed(self) -> bool:
        return self.report.mean_ap >= MIN_MEAN_AP and all(
            self.report.per_class[c].ap >= MIN_CLASS_AP for c in SLOT_CLASSES
        )


def run_bench(
    seed: int = 7,
    n_scenes: int = 20,
    rows: int = 2,
    rig: Optional[CameraRig] = None,
    bev: BevSpec = BevSpec(),
    cfg: DetectorConfig = DetectorConfig(),
    noise: float = 0.0,
    iou_threshold: float = 0.5,
    threads: int = 1,
) -> BenchResult:
    """Run the full pipeline over ``n_scenes`` synthetic lots, reusing the camera plans."""
    start = time.perf_counter()
    rig = rig or default_rig()
    render_plan = RenderPlan.build(rig, texture_window(bev), threads)
    stitch_plan = StitchPlan.build(rig, bev, threads)
    specs = bench_specs(seed, n_scenes)
    pairs: List[Tuple[list, list]] = []
    for spec in specs:
        scene = make_scene(spec.kind, spec.n_slots, spec.seed, rows=rows, bev=bev,
                           plan=render_plan, noise=noise)
        image = stitch_plan.apply(scene.images, threads)
        pairs.append((detect(image, cfg, bev), list(scene.layout.slots)))
    report = evaluate_scenes(pairs, iou_threshold)
    return BenchResult(report, specs, time.perf_counter() - start, sum(len(g) for _, g in pairs))
