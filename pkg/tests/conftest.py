import json
import math

import numpy as np
import pytest

from helmguard.frames import CameraModel
from helmguard.water import save_mask

# Small camera keeps candidate generation fast in fixtures.
FIX_W, FIX_H = 160, 120

SAMPLING = {
    "r_min": 6.0,
    "r_max": 30.0,
    "phi_max": math.radians(45.0),
    "n_raw": 150,
    "n_samples_per_line": 12,
    "d_min": 6.0,
    "K": 5,
    "rng_seed": 0,
}


def fixture_camera() -> CameraModel:
    return CameraModel.forward_looking(fx=120.0, fy=120.0, width=FIX_W, height=FIX_H,
                                       mount=(2.0, 0.0, -2.0))


def make_mask(kind: str) -> np.ndarray:
    water = np.ones((FIX_H, FIX_W), dtype=bool)
    if kind == "open":
        return water
    if kind == "right-wall":
        water[:, 120:] = False
        return water
    if kind == "left-wall":
        water[:, :40] = False
        return water
    if kind == "blocked":
        return np.zeros((FIX_H, FIX_W), dtype=bool)
    raise ValueError(kind)


def ratings_rows(scene_id: str, accept_ids, best_table) -> list:
    """11 raters; best_table maps id -> vote count (must sum to 11)."""
    rows = []
    best_sequence = []
    for cid, count in best_table.items():
        best_sequence.extend([cid] * count)
    assert len(best_sequence) == 11
    accepted = ";".join(str(i) for i in accept_ids)
    for i, best in enumerate(best_sequence):
        rows.append(f"{scene_id},r{i},{accepted},{best}")
    return rows


def write_corpus(root, scenes=("alpha", "bravo"), with_hazard=True, with_ratings=True,
                 seed_offset=0):
    """Builds a self-contained scenario corpus directory; returns its path."""
    root.mkdir(parents=True, exist_ok=True)
    camera = fixture_camera()
    camera.save(root / "camera.json")
    mask_kinds = {"alpha": "open", "bravo": "right-wall", "charlie": "left-wall",
                  "delta": "open"}
    ratings_lines = ["scene_id,rater_id,accepted,best"]
    for i, scene in enumerate(scenes):
        kind = mask_kinds.get(scene, "open")
        save_mask(root / f"{scene}-mask.png", make_mask(kind))
        spec = {
            "scene_id": scene,
            "mask": {"path": f"{scene}-mask.png", "water_is_white": True},
            "camera": "camera.json",
            "nav_pose": {"north": 0.0, "east": 0.0, "yaw": 0.0, "timestamp": 0.0},
            "sampling": dict(SAMPLING, rng_seed=seed_offset + i),
            "anomaly_label": "fire" if with_hazard else "other",
            "policy_text": f"Hazard ahead in scene {scene}; keep clear and stand off.",
        }
        if with_hazard:
            spec["hazard"] = {"north": 12.0, "east": 2.0}
        if with_ratings:
            spec["ratings"] = "ratings.csv"
            ratings_lines.extend(
                ratings_rows(scene, accept_ids=(1, 2, 3), best_table={1: 7, 2: 3, 3: 1})
            )
        (root / f"{scene}.json").write_text(json.dumps(spec, indent=1, sort_keys=True))
    if with_ratings:
        (root / "ratings.csv").write_text("\n".join(ratings_lines) + "\n")
    return root


@pytest.fixture
def corpus_dir(tmp_path):
    return write_corpus(tmp_path / "corpus")


def decision_json(choice, see="hazard ahead", imp="people at risk", act="hold position"):
    return json.dumps({"see": see, "implications": imp, "action": act,
                       "choice_id": choice, "confidence": 0.8})


def judge_json(h=1.0, i=0.75, a=0.5):
    return json.dumps({"hazard_score": h, "implication_score": i, "action_score": a,
                       "notes": "ok"})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in getattr(rep, "nodeid", ""):
                rows.append((rep.nodeid.split("::")[-1], status))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(rows):
            label = "PASS" if status == "passed" else "FAIL"
            terminalreporter.write_line(f"[{label}] {name}")
