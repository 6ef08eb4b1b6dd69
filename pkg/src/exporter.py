"""
Exporter Module - PGM, JSON, CSV & Markdown output.
File names are fixed and JSON keys sorted so reruns produce identical bytes.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.geometry import Trajectory
from src.heading_raster import HeadingRaster
from src.metrics import PredictionSet
from src.scene import Scene
from models.files import PredictionSample, RasterSidecar, SceneFile
from models.report import EvalReport, GradCheckReport


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_json(data, output_path: PathLike) -> None:
    """
    Write JSON with sorted keys and two-space indentation.

    Args:
        data: JSON-serializable value
        output_path: Path where the file will be saved
    """
    with open(output_path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(data, indent=2, sort_keys=True))
        f.write("\n")


def write_raster(raster: HeadingRaster, output_path: PathLike) -> Path:
    """
    Write the raster as a binary PGM plus a sidecar JSON with its geometry.

    Returns:
        Path of the sidecar file
    """
    path = Path(output_path)
    spec = raster.spec
    header = f"P5\n{spec.width} {spec.height}\n255\n".encode("ascii")
    with open(path, 'wb') as f:
        f.write(header)
        f.write(raster.cells.tobytes(order="C"))
    sidecar = path.with_suffix(".json")
    write_json(RasterSidecar.from_spec(spec).model_dump(mode="json"), sidecar)
    logger.info("Raster written to %s (%dx%d)", path, spec.width, spec.height)
    return sidecar


def write_scene(scene: Scene, output_path: PathLike) -> None:
    """
    Save a scene in the same JSON layout load_scene reads.

    Args:
        scene: Lanes, regions and ego pose to store
        output_path: Path where the JSON file will be saved
    """
    write_json(SceneFile.from_domain(scene).model_dump(mode="json"), output_path)


def write_samples(samples: Sequence[PredictionSample], output_path: PathLike) -> None:
    """Prediction file records; unset optional fields are left out."""
    write_json([s.model_dump(mode="json", exclude_none=True) for s in samples], output_path)


def write_predictions(preds: Sequence[PredictionSet], output_path: PathLike,
                      gts: Optional[Sequence[Optional[Trajectory]]] = None) -> None:
    """
    Save prediction sets, each with its ground truth when one is given.

    Args:
        preds: One PredictionSet per sample
        output_path: Path where the JSON file will be saved
        gts: Optional ground truth aligned with preds
    """
    gts = gts if gts is not None else [None] * len(preds)
    write_samples([PredictionSample.from_domain(p, g) for p, g in zip(preds, gts)], output_path)


def report_frame(report: EvalReport) -> pd.DataFrame:
    """One row per sample followed by an aggregate row."""
    rows: List[Dict] = []
    for sample in report.samples:
        row = {"sample": str(sample.sample_index)}
        row.update({key: sample.values[key] for key in report.metric_keys})
        row.update({
            "intersection_midpoints": sample.intersection_midpoints,
            "off_map_midpoints": sample.off_map_midpoints,
            "stationary_segments": sample.stationary_segments,
        })
        rows.append(row)
    aggregate = {"sample": "aggregate"}
    aggregate.update(report.aggregate)
    aggregate.update({
        "intersection_midpoints": report.total_intersection_midpoints,
        "off_map_midpoints": report.total_off_map_midpoints,
        "stationary_segments": report.total_stationary_segments,
    })
    rows.append(aggregate)
    columns = ["sample"] + report.metric_keys + ["intersection_midpoints", "off_map_midpoints", "stationary_segments"]
    return pd.DataFrame(rows, columns=columns)


def write_report(report: EvalReport, output_folder: PathLike) -> Tuple[Path, Path, Path]:
    """
    Export an evaluation report as JSON, CSV and a Markdown summary.

    Returns:
        Tuple of (json_path, csv_path, markdown_path)
    """
    output_dir = Path(output_folder)
    output_dir.mkdir(parents=True, exist_ok=True)
    json_path = output_dir / "report.json"
    csv_path = output_dir / "report.csv"
    md_path = output_dir / "summary.md"

    with open(json_path, 'w', encoding='utf-8') as f:
        f.write(report.to_json())
        f.write("\n")
    report_frame(report).to_csv(csv_path, index=False, encoding='utf-8')
    generate_summary(report, md_path)
    return json_path, csv_path, md_path


def generate_summary(report: EvalReport, output_path: PathLike) -> None:
    """Markdown table of the aggregate row with the masking counts underneath."""
    keys = [k for k in report.metric_keys if k not in ("off_yaw_sum", "raw_yaw_sum")]
    md_content = "# Evaluation Summary\n\n"
    md_content += f"- **Samples:** {len(report.samples)}\n"
    if report.excluded_samples:
        md_content += f"- **Excluded samples:** {len(report.excluded_samples)}\n"
    md_content += f"- **Threshold alpha:** {report.config.get('alpha')} deg\n\n"
    md_content += "| " + " | ".join(keys) + " |\n"
    md_content += "|" + "---|" * len(keys) + "\n"
    md_content += "| " + " | ".join(f"{report.aggregate[k]:.4f}" for k in keys) + " |\n\n"
    md_content += "Off-yaw values are in radians.\n\n"
    md_content += "## Masked midpoints\n\n"
    md_content += f"- **Intersection:** {report.total_intersection_midpoints}\n"
    md_content += f"- **Off map:** {report.total_off_map_midpoints}\n"
    md_content += f"- **Stationary segments:** {report.total_stationary_segments}\n"
    with open(output_path, 'w', encoding='utf-8') as f:
        f.write(md_content)


def write_alpha_sweep(rates: Dict[float, float], output_path: PathLike) -> None:
    """Columns: alpha_deg, off_yaw_rate."""
    df = pd.DataFrame({"alpha_deg": list(rates.keys()), "off_yaw_rate": list(rates.values())})
    df.to_csv(output_path, index=False, encoding='utf-8')


def write_loss_trace(traces: Dict[int, Iterable], output_path: PathLike) -> None:
    """Columns: sample, step, total, yaw, anchor."""
    df = pd.DataFrame(
        [{"sample": sample, "step": r.step, "total": r.total, "yaw": r.yaw, "anchor": r.anchor}
         for sample, trace in traces.items() for r in trace],
        columns=["sample", "step", "total", "yaw", "anchor"],
    )
    df.to_csv(output_path, index=False, encoding='utf-8')


def write_gradcheck(report: GradCheckReport, output_path: PathLike) -> None:
    """Full gradient-check report, one entry per coordinate."""
    write_json(report.to_dict(), output_path)
