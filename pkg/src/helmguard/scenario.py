"""Scenario corpus format: one JSON file per scene plus referenced assets.

A scenario bundles everything one alert needs: the camera calibration, the
water mask (with polarity and threshold), the navigation pose at alert time,
sampling knobs, and the optional evaluation extras (hazard annotation, rater
data, ground-truth policy text). Relative paths resolve against the scenario
file's directory; loading validates everything up front and names the first
violated invariant.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .candidates import SamplingParams
from .evaluate import HazardAnnotation, RaterData, RatingsError, load_ratings_csv, load_ratings_json
from .frames import CalibrationError, CameraModel, NavPose, WorldPoint
from .overlay import water_backdrop
from .water import WaterGrid, apply_bottom_band, clearance_map, load_mask

DEFAULT_BOTTOM_BAND_ROWS = 8

ANOMALY_LABELS = ("nominal", "fire", "flag", "mob", "sign", "other")


class ScenarioError(ValueError):
    """Raised with the first violated invariant while loading a scenario."""


@dataclass(frozen=True)
class Scenario:
    scene_id: str
    camera: CameraModel
    water_mask: np.ndarray
    bottom_band_rows: int
    pose: NavPose
    sampling: SamplingParams
    anomaly_label: str
    image: Optional[np.ndarray] = None
    hazard: Optional[HazardAnnotation] = None
    ratings: Optional[RaterData] = None
    policy_text: Optional[str] = None
    source_path: str = ""

    def water_grid(self) -> WaterGrid:
        banded = apply_bottom_band(self.water_mask, self.bottom_band_rows)
        return clearance_map(banded)

    def base_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        return water_backdrop(apply_bottom_band(self.water_mask, self.bottom_band_rows))


def _resolve(base_dir: str, path: str) -> str:
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(full):
        raise ScenarioError(f"referenced file does not exist: {full}")
    return full


def load_scenario(path) -> Scenario:
    """Load and validate one scenario file."""
    path = str(path)
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file does not exist: {path}")
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"malformed scenario JSON in {path}: {e}") from e
    try:
        scene_id = str(raw["scene_id"])
        mask_spec = raw["mask"]
        camera_spec = raw["camera"]
        pose_spec = raw["nav_pose"]
    except KeyError as e:
        raise ScenarioError(f"scenario missing required key {e}") from e

    if isinstance(camera_spec, str):
        try:
            camera = CameraModel.load(_resolve(base_dir, camera_spec))
        except CalibrationError as e:
            raise ScenarioError(f"invalid camera calibration: {e}") from e
    else:
        try:
            camera = CameraModel.from_dict(camera_spec)
        except CalibrationError as e:
            raise ScenarioError(f"invalid camera calibration: {e}") from e

    mask_path = _resolve(base_dir, mask_spec["path"])
    water = load_mask(
        mask_path,
        water_is_white=bool(mask_spec.get("water_is_white", True)),
        threshold=int(mask_spec.get("threshold", 128)),
    )
    if water.shape != (camera.height, camera.width):
        raise ScenarioError(
            f"mask dimensions {water.shape[1]}x{water.shape[0]} do not match camera "
            f"{camera.width}x{camera.height}"
        )

    band = int(raw.get("bottom_band_rows", DEFAULT_BOTTOM_BAND_ROWS))
    if not 0 <= band <= camera.height:
        raise ScenarioError(f"bottom_band_rows {band} outside 0..{camera.height}")

    try:
        pose = NavPose.from_dict(pose_spec)
    except (KeyError, CalibrationError, ValueError) as e:
        raise ScenarioError(f"invalid nav pose: {e}") from e

    try:
        sampling = SamplingParams.from_dict(raw.get("sampling", {}))
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"invalid sampling params: {e}") from e

    image = None
    if raw.get("image"):
        img_path = _resolve(base_dir, raw["image"])
        with Image.open(img_path) as img:
            image = np.asarray(img.convert("RGB"))
        if image.shape[:2] != (camera.height, camera.width):
            raise ScenarioError(
                f"image dimensions {image.shape[1]}x{image.shape[0]} do not match camera "
                f"{camera.width}x{camera.height}"
            )

    hazard = None
    if raw.get("hazard") is not None:
        h = raw["hazard"]
        try:
            hazard = HazardAnnotation(
                point=WorldPoint(float(h["north"]), float(h["east"]), 0.0), scene_id=scene_id
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"invalid hazard annotation: {e}") from e

    ratings = None
    if raw.get("ratings"):
        ratings_path = _resolve(base_dir, raw["ratings"])
        try:
            if ratings_path.endswith(".csv"):
                by_scene = load_ratings_csv(ratings_path, k_max=sampling.K)
                if scene_id not in by_scene:
                    raise ScenarioError(
                        f"ratings file {ratings_path} has no rows for scene {scene_id}"
                    )
                ratings = by_scene[scene_id]
            else:
                ratings = load_ratings_json(ratings_path)
        except RatingsError as e:
            raise ScenarioError(f"invalid ratings data: {e}") from e

    label = str(raw.get("anomaly_label", "other"))

    return Scenario(
        scene_id=scene_id,
        camera=camera,
        water_mask=water,
        bottom_band_rows=band,
        pose=pose,
        sampling=sampling,
        anomaly_label=label,
        image=image,
        hazard=hazard,
        ratings=ratings,
        policy_text=raw.get("policy_text"),
        source_path=path,
    )


def load_corpus(dir_path) -> list:
    """All *.json scenario files in a directory, sorted by filename."""
    dir_path = str(dir_path)
    if not os.path.isdir(dir_path):
        raise ScenarioError(f"corpus directory does not exist: {dir_path}")
    names = sorted(n for n in os.listdir(dir_path) if n.endswith(".json"))
    scenarios = []
    for name in names:
        # Sidecar files (calibration, ratings) are not scenarios.
        full = os.path.join(dir_path, name)
        with open(full, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError:
                continue
        if isinstance(raw, dict) and "scene_id" in raw and "mask" in raw:
            scenarios.append(load_scenario(full))
    if not scenarios:
        raise ScenarioError(f"no scenario files found in {dir_path}")
    return scenarios
