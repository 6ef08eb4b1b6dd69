"""
Ingestor Module - Reading scenes, predictions, ground truth and rasters.
JSON inputs are validated through the file models; every failure becomes an InputFormatError.
"""

import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Tuple, Union

import numpy as np
from pydantic import TypeAdapter, ValidationError

from src.errors import InputFormatError
from src.geometry import Trajectory
from src.heading_raster import HeadingRaster
from src.scene import Scene
from models.files import GroundTruthRecord, PredictionSample, RasterSidecar, SceneFile


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_SAMPLES = TypeAdapter(List[PredictionSample])
_GROUND_TRUTH = TypeAdapter(List[GroundTruthRecord])


def read_json(filepath: PathLike) -> Any:
    """
    Parse a JSON file.

    Raises:
        InputFormatError: with line and column for syntax errors
        OSError: if the file cannot be read
    """
    path = Path(filepath)
    with open(path, 'r', encoding='utf-8') as file:
        text = file.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputFormatError(str(path), e.msg, e.lineno, e.colno) from e


def _validated(path: PathLike, build):
    try:
        return build()
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise InputFormatError(str(path), f"{where}: {first['msg']} ({e.error_count()} error(s))") from e
    except InputFormatError:
        raise
    except ValueError as e:
        raise InputFormatError(str(path), str(e)) from e


def load_scene(filepath: PathLike) -> Scene:
    """
    Load and validate a scene JSON file.

    Args:
        filepath: Path to the scene file

    Returns:
        Scene with lanes, regions and ego pose

    Raises:
        InputFormatError: if the file is not valid JSON or fails validation
    """
    data = read_json(filepath)
    scene = _validated(filepath, lambda: SceneFile.model_validate(data).to_domain())
    logger.info("Loaded scene %s with %d lanes and %d regions", filepath, len(scene.lanes), len(scene.regions))
    return scene


def load_samples(filepath: PathLike) -> List[PredictionSample]:
    """Raw sample records of a predictions file (a JSON array)."""
    data = read_json(filepath)
    return _validated(filepath, lambda: _SAMPLES.validate_python(data))


def load_predictions(filepath: PathLike) -> List[Tuple[Any, Optional[Trajectory]]]:
    """
    Predictions file as (PredictionSet, ground truth or None) pairs.

    Raises:
        InputFormatError: if a sample is malformed or has no modes
    """
    samples = load_samples(filepath)

    def build():
        out = []
        for i, sample in enumerate(samples):
            if not sample.modes:
                raise ValueError(f"sample {i} has no modes")
            out.append((sample.predictions(), sample.ground_truth()))
        return out

    return _validated(filepath, build)


def load_ground_truth(filepath: PathLike) -> List[Trajectory]:
    """Standalone ground-truth file: a list of trajectories aligned with a prediction file."""
    data = read_json(filepath)
    return _validated(filepath, lambda: [record.to_domain() for record in _GROUND_TRUTH.validate_python(data)])


def sidecar_path(pgm_path: PathLike) -> Path:
    return Path(pgm_path).with_suffix(".json")


def read_pgm(filepath: PathLike) -> Tuple[int, int, np.ndarray]:
    """
    Read a binary (P5) 8-bit PGM.

    Returns:
        Tuple of (width, height, uint8 array of shape (height, width))

    Raises:
        InputFormatError: if the header or payload is malformed
    """
    path = str(filepath)
    data = Path(filepath).read_bytes()
    tokens: List[bytes] = []
    pos = 0
    # magic, width, height, maxval; comments run to end of line
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise InputFormatError(path, "truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InputFormatError(path, f"expected P5 magic, got {tokens[0]!r}")
    try:
        width, height, max_value = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise InputFormatError(path, f"bad PGM header: {e}") from e
    if max_value != 255:
        raise InputFormatError(path, f"only 8-bit PGM is supported, maxval is {max_value}")
    payload = data[pos + 1:]
    if len(payload) != width * height:
        raise InputFormatError(path, f"expected {width * height} bytes of pixels, got {len(payload)}")
    return width, height, np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def load_raster(filepath: PathLike) -> HeadingRaster:
    """
    Read a heading raster from its PGM and sidecar JSON.

    Raises:
        InputFormatError: if the files disagree or are malformed
    """
    width, height, cells = read_pgm(filepath)
    side = sidecar_path(filepath)
    sidecar = _validated(side, lambda: RasterSidecar.model_validate(read_json(side)))
    if (sidecar.width, sidecar.height) != (width, height):
        raise InputFormatError(str(side), f"sidecar says {sidecar.width}x{sidecar.height}, PGM is {width}x{height}")
    return _validated(side, lambda: HeadingRaster(spec=sidecar.to_spec(), cells=cells))
