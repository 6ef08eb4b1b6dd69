#!/usr/bin/env python3
"""
OffYaw Engine - Lane-heading evaluation and loss for trajectory prediction

Usage:
    python main.py synth --kind straight --out fixtures/
    python main.py rasterize --scene fixtures/scene.json --out fixtures/raster.pgm
    python main.py eval --scene fixtures/scene.json --raster fixtures/raster.pgm --preds fixtures/predictions.json
    python main.py gradcheck --scene fixtures/scene.json --preds fixtures/predictions.json
    python main.py refine --scene fixtures/scene.json --preds fixtures/wrong_way.json --out refined/
    python main.py baseline --preds fixtures/predictions.json --model all --out baselines/
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, model_validator

from src.baselines import AgentState, baseline_prediction_set, single_model_prediction_set, MODELS
from src.errors import BatchShapeMismatch, InputFormatError, OffYawError
from src.exporter import (
    write_alpha_sweep,
    write_gradcheck,
    write_loss_trace,
    write_predictions,
    write_raster,
    write_report,
    write_samples,
    write_scene,
)
from src.fixtures import synth_batch, wrong_way_trajectory
from src.heading_raster import HeadingRaster, RasterSpec, rasterize
from src.ingestor import load_ground_truth, load_predictions, load_raster, load_samples, load_scene
from src.metrics import EvalConfig, PredictionSet, alpha_sweep, evaluate_batch, ground_truth_is_clean
from src.scene import Scene, SyntheticSpec, synth_scene
from src.yawloss import LossConfig, grad_check, refine
from models.app_settings import AppSettings
from models.files import PredictionSample
from models.report import GradCheckReport


EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_IO_ERROR = 3

INPUT_FIELDS = ("scene", "raster", "preds", "gt")


class RunConfig(BaseModel):
    """Paths and seed of one invocation. Input paths must exist before any work starts."""
    command: Literal["rasterize", "eval", "gradcheck", "refine", "synth", "baseline"]
    scene: Optional[Path] = None
    raster: Optional[Path] = None
    preds: Optional[Path] = None
    gt: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0

    @model_validator(mode="after")
    def _inputs_exist(self) -> "RunConfig":
        for name in INPUT_FIELDS:
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise ValueError(f"--{name} {path} does not exist")
        if self.raster is not None and not self.raster.with_suffix(".json").is_file():
            raise ValueError(f"raster sidecar {self.raster.with_suffix('.json')} does not exist")
        return self


def print_banner():
    """Print welcome banner."""
    print("=" * 60)
    print("OFFYAW ENGINE - lane heading metrics and loss")
    print("=" * 60)


def _parse_floats(text: str, count: Optional[int] = None) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")
    if count is not None and len(values) != count:
        raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    """Subcommands and their flags; unset flags fall back to settings."""
    parser = argparse.ArgumentParser(prog="offyaw", description="Off-yaw metric, heading raster and YawLoss tools")
    parser.add_argument("--log-level", default=None, help="Logging level (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *inputs: str, required: Tuple[str, ...] = (), out_help: str = "Output directory"):
        for name in inputs:
            p.add_argument(f"--{name}", type=Path, required=name in required, default=None)
        p.add_argument("--out", type=Path, default=None, help=out_help)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)

    def raster_flags(p: argparse.ArgumentParser):
        p.add_argument("--resolution", type=float, default=None, help="Raster cell size in meters")
        p.add_argument("--extents", type=lambda s: _parse_floats(s, 4), default=None,
                       help="behind,ahead,left,right in meters")

    p = sub.add_parser("rasterize", help="Build the heading raster of a scene")
    common(p, "scene", required=("scene",), out_help="Output PGM path (sidecar JSON is written next to it)")
    raster_flags(p)

    p = sub.add_parser("eval", help="Evaluate predictions against ground truth")
    common(p, "preds", "scene", "raster", "gt", required=("preds", "scene"))
    raster_flags(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--filter", choices=["none", "no-intersections"], default="none")
    p.add_argument("--alpha-sweep", type=_parse_floats, default=None, help="e.g. 15,30,45,60")

    p = sub.add_parser("gradcheck", help="Check YawLoss gradients against finite differences")
    common(p, "preds", "scene", "raster", required=("preds", "scene"), out_help="Optional JSON report path")
    raster_flags(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gate-width", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=None)

    p = sub.add_parser("refine", help="Refine predictions by descent on YawLoss")
    common(p, "preds", "scene", "raster", required=("preds", "scene"))
    raster_flags(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gate-width", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--anchor-weight", type=float, default=0.0)
    p.add_argument("--no-line-search", action="store_true")

    p = sub.add_parser("synth", help="Generate a synthetic scene and prediction fixtures")
    common(p)
    p.add_argument("--kind", choices=["straight", "arc", "four_way"], default="straight")
    p.add_argument("--num-lanes", type=int, default=1)
    p.add_argument("--rotation", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--modes", type=int, default=6)
    p.add_argument("--noise", type=float, default=1.0)

    p = sub.add_parser("baseline", help="Physics baseline predictions from agent states")
    common(p, "preds", required=("preds",))
    p.add_argument("--model", choices=sorted(MODELS) + ["oracle", "all"], default="all")
    return parser


def run_config(args: argparse.Namespace, settings: AppSettings) -> RunConfig:
    """Validate paths and seed of this run."""
    return RunConfig(
        command=args.command,
        scene=getattr(args, "scene", None),
        raster=getattr(args, "raster", None),
        preds=getattr(args, "preds", None),
        gt=getattr(args, "gt", None),
        out=args.out,
        seed=args.seed if args.seed is not None else settings.seed,
    )


def raster_spec_for(scene: Scene, args: argparse.Namespace, settings: AppSettings) -> RasterSpec:
    """Raster geometry around the scene ego, from flags or settings."""
    extents = args.extents or settings.extents_m
    resolution = args.resolution or settings.resolution_m
    return RasterSpec.from_extents(scene.ego, tuple(extents), resolution)


def load_or_build_raster(config: RunConfig, scene: Scene, args: argparse.Namespace,
                         settings: AppSettings, workers: int) -> HeadingRaster:
    if config.raster is not None:
        return load_raster(config.raster)
    print("⚠️  No --raster given, rasterizing the scene")
    return rasterize(scene, raster_spec_for(scene, args, settings), workers)


def cmd_rasterize(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Build the heading raster of a scene and save it as PGM plus sidecar."""
    scene = load_scene(config.scene)
    spec = raster_spec_for(scene, args, settings)
    started = time.perf_counter()
    raster = rasterize(scene, spec, workers)
    elapsed = time.perf_counter() - started

    out = config.out or Path("raster.pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = write_raster(raster, out)
    print(f"✅ Raster {spec.width}x{spec.height} ({spec.width * spec.height:,} cells) in {elapsed:.2f}s")
    print(f"📂 {out}\n📂 {sidecar}")
    return EXIT_OK


def _aligned_batch(config: RunConfig) -> Tuple[List[PredictionSet], List]:
    pairs = load_predictions(config.preds)
    preds = [p for p, _ in pairs]
    if config.gt is not None:
        gts = load_ground_truth(config.gt)
        if len(gts) != len(preds):
            raise BatchShapeMismatch(f"{config.gt} has {len(gts)} samples, {config.preds} has {len(preds)}")
    else:
        gts = [g for _, g in pairs]
        missing = [i for i, g in enumerate(gts) if g is None]
        if missing:
            raise BatchShapeMismatch(f"{config.preds}: samples {missing} have no gt and no --gt file was given")
    return preds, gts


def clean_samples(preds: Sequence[PredictionSet], gts: Sequence, raster: HeadingRaster, horizon_steps: int) -> List[int]:
    """
    Indices of samples whose ground truth stays on the map and out of intersections.

    Only the evaluated window counts: gt is cut to horizon_steps first, as evaluation does.
    """
    return [i for i, (p, gt) in enumerate(zip(preds, gts))
            if ground_truth_is_clean(gt.truncated(horizon_steps), raster, p.ego)]


def cmd_eval(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Evaluate a prediction batch and write report JSON, CSV and summary."""
    scene = load_scene(config.scene)
    raster = load_or_build_raster(config, scene, args, settings, workers)
    preds, gts = _aligned_batch(config)
    eval_config = EvalConfig(
        alpha=args.alpha if args.alpha is not None else settings.alpha_deg,
        k_values=tuple(settings.k_values),
        miss_threshold=settings.miss_threshold_m,
        horizon_steps=settings.horizon_steps,
    )

    kept = list(range(len(preds)))
    if args.filter == "no-intersections":
        kept = clean_samples(preds, gts, raster, eval_config.horizon_steps)
        print(f"🔎 Filter no-intersections kept {len(kept)} of {len(preds)} samples")
    kept_set = set(kept)
    excluded = [i for i in range(len(preds)) if i not in kept_set]

    report = evaluate_batch(
        [preds[i] for i in kept], [gts[i] for i in kept], [scene] * len(kept), [raster] * len(kept),
        eval_config, workers, sample_indices=kept, excluded_samples=excluded,
    )
    out = config.out or Path("outputs")
    json_path, csv_path, md_path = write_report(report, out)

    print("\n" + " | ".join(f"{key}={report.aggregate[key]:.4f}" for key in report.metric_keys[:-2]))
    if args.alpha_sweep:
        rates = alpha_sweep([(preds[i].truncated(eval_config.horizon_steps), raster) for i in kept], args.alpha_sweep)
        write_alpha_sweep(rates, out / "alpha_sweep.csv")
        print("📈 Alpha sweep: " + ", ".join(f"{a:g}°={r:.4f}" for a, r in rates.items()))
    print(f"\n📂 {json_path}\n📂 {csv_path}\n📂 {md_path}")
    return EXIT_OK


def cmd_gradcheck(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Compare analytic YawLoss gradients against finite differences for every sample."""
    scene = load_scene(config.scene)
    raster = load_or_build_raster(config, scene, args, settings, workers)
    pairs = load_predictions(config.preds)
    cfg = LossConfig(
        alpha=args.alpha if args.alpha is not None else settings.alpha_deg,
        scale=settings.loss_scale,
        smooth_gate_width=args.gate_width if args.gate_width is not None else settings.smooth_gate_width_deg,
    )
    h = args.h or settings.gradcheck_h
    tolerance = args.tolerance or settings.gradcheck_tolerance

    reports = []
    for i, (preds, _) in enumerate(pairs):
        report = grad_check(preds, raster, cfg, h=h, tolerance=tolerance)
        reports.append(report)
        print(f"   • sample {i}: {report.summary_line()}")

    if config.out is not None:
        config.out.parent.mkdir(parents=True, exist_ok=True)
        for i, report in enumerate(reports):
            target = config.out if len(reports) == 1 else config.out.with_name(f"{config.out.stem}_{i}{config.out.suffix}")
            write_gradcheck(report, target)

    total = GradCheckReport.merged(reports, h=h, tolerance=tolerance)
    print(f"{total.summary_line()}, {total.excluded_fraction:.1%} of coordinates excluded")
    if total.failed:
        print(f"❌ {total.failed} coordinates out of tolerance {tolerance}")
        return EXIT_CHECK_FAILED
    print("✅ Gradients match finite differences")
    return EXIT_OK


def cmd_refine(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Refine every sample by descent on YawLoss and write the refined predictions and loss trace."""
    scene = load_scene(config.scene)
    raster = load_or_build_raster(config, scene, args, settings, workers)
    pairs = load_predictions(config.preds)
    cfg = LossConfig(
        alpha=args.alpha if args.alpha is not None else settings.alpha_deg,
        scale=settings.loss_scale,
        smooth_gate_width=args.gate_width if args.gate_width is not None else settings.refine_gate_width_deg,
    )

    refined, traces = [], {}
    initial = final = 0.0
    for i, (preds, _) in enumerate(pairs):
        result = refine(preds, raster, cfg, anchor_weight=args.anchor_weight,
                        steps=args.steps or settings.refine_steps, lr=args.lr or settings.refine_lr,
                        line_search=not args.no_line_search)
        refined.append(result.preds)
        traces[i] = result.trace
        initial += result.initial_loss
        final += result.final_loss
        print(f"   • sample {i}: {result.stop_reason} after {len(result.trace) - 1} steps, "
              f"yaw {result.initial_loss:.4f} -> {result.final_loss:.4f}")

    out = config.out or Path("outputs")
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(refined, out / "refined_predictions.json", [g for _, g in pairs])
    write_loss_trace(traces, out / "loss_trace.csv")
    ratio = final / initial if initial > 0 else 0.0
    print(f"✅ final/initial yaw loss ratio: {ratio:.4f}")
    print(f"📂 {out / 'refined_predictions.json'}\n📂 {out / 'loss_trace.csv'}")
    return EXIT_OK


def cmd_synth(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Write a synthetic scene, a prediction batch and a wrong-way fixture."""
    spec = SyntheticSpec(kind=args.kind, num_lanes=args.num_lanes, rotation_deg=args.rotation, seed=config.seed)
    scene = synth_scene(spec)
    batch = synth_batch(scene, samples=args.samples, modes=args.modes, seed=config.seed,
                        steps=settings.horizon_steps, noise_m=args.noise)

    out = config.out or Path("fixtures")
    out.mkdir(parents=True, exist_ok=True)
    write_scene(scene, out / "scene.json")
    write_samples([PredictionSample.from_domain(s.preds, s.gt, s.state) for s in batch], out / "predictions.json")
    wrong_way = wrong_way_trajectory(steps=6, drift_m=0.1)
    wrong_way_preds = PredictionSet((wrong_way,), np.array([1.0]), scene.ego)
    write_predictions([wrong_way_preds], out / "wrong_way.json")
    print(f"✅ {args.kind} scene with {len(scene.lanes)} lanes, {len(batch)} samples (seed {config.seed})")
    print(f"📂 {out / 'scene.json'}\n📂 {out / 'predictions.json'}\n📂 {out / 'wrong_way.json'}")
    return EXIT_OK


def cmd_baseline(config: RunConfig, args: argparse.Namespace, settings: AppSettings, workers: int) -> int:
    """Predict every sample with a physics baseline from its agent state."""
    samples = load_samples(config.preds)
    results = []
    for i, sample in enumerate(samples):
        gt = sample.ground_truth()
        if sample.state is not None:
            state = sample.state.to_domain()
        elif gt is not None:
            state = AgentState.from_trajectory(gt)
        else:
            raise InputFormatError(str(config.preds), f"sample {i} has neither state nor gt")
        ego = sample.ego.to_domain()
        horizon = gt.num_segments if gt is not None else settings.horizon_steps
        if args.model == "all":
            preds = baseline_prediction_set(state, ego, horizon, sample.dt)
        else:
            preds = single_model_prediction_set(args.model, state, ego, horizon, sample.dt, gt)
        results.append(PredictionSample.from_domain(preds, gt, state))

    out = config.out or Path("outputs")
    out.mkdir(parents=True, exist_ok=True)
    write_samples(results, out / f"baseline_{args.model}.json")
    print(f"✅ {len(results)} samples predicted with '{args.model}'")
    print(f"📂 {out / f'baseline_{args.model}.json'}")
    return EXIT_OK


COMMANDS = {
    "rasterize": cmd_rasterize,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "refine": cmd_refine,
    "synth": cmd_synth,
    "baseline": cmd_baseline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes."""
    load_dotenv()
    settings = AppSettings.load()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or settings.log_level).upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    print_banner()

    try:
        config = run_config(args, settings)
    except ValidationError as e:
        print(f"❌ {e.errors()[0]['msg']}")
        return EXIT_INPUT_ERROR

    workers = args.workers if args.workers is not None else settings.workers
    try:
        return COMMANDS[config.command](config, args, settings, workers)
    except (OffYawError, ValidationError) as e:
        print(f"❌ {e}")
        return EXIT_INPUT_ERROR
    except OSError as e:
        print(f"❌ I/O error: {e}")
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
