"""Sampling, gating, thinning, and world-anchoring of straight motion primitives.

Pipeline order is fixed: sample endpoints in a forward annulus, discretize
each primitive from the bow anchor, project to pixels, gate against the
water/clearance grid, thin the survivors by farthest-point selection on
endpoint pixels, index the result 1..K in selection order, and freeze the
polylines in the world frame at the alert pose. ID 0 (station-keeping) is
implicit and never stored; an empty set is a legal outcome that the selector
treats as "no feasible candidates".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .frames import (
    BodyPoint,
    CameraModel,
    NavPose,
    PixelPoint,
    WorldPoint,
    body_to_world,
    project_body_to_pixel,
)
from .water import WaterGrid

# Defaults for quantities the gating design leaves open; they are echoed into
# every serialized candidate set so downstream artifacts carry their origin.
DEFAULT_ANCHOR = BodyPoint(4.0, 0.0, 0.0)
DEFAULT_D_MIN_PX = 40.0
DEFAULT_K = 15


@dataclass(frozen=True)
class SamplingParams:
    """Knobs for candidate generation.

    The annulus (r_min..r_max, |bearing| <= phi_max) is centered on the body
    origin; primitives run from the bow anchor to each sampled endpoint.
    d_min and K follow the deployed configuration (40 px, 15); the remaining
    numeric defaults are desk-scale choices recorded in every output.
    """

    anchor: BodyPoint = DEFAULT_ANCHOR
    r_min: float = 8.0
    r_max: float = 40.0
    phi_max: float = math.radians(60.0)
    n_raw: int = 600
    n_samples_per_line: int = 24
    d_min: float = DEFAULT_D_MIN_PX
    K: int = DEFAULT_K
    delta_px: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if not 0 < self.phi_max <= math.pi / 2:
            raise ValueError("need 0 < phi_max <= pi/2")
        if self.n_samples_per_line < 2:
            raise ValueError("need at least 2 samples per line")
        if self.K < 1:
            raise ValueError("need K >= 1")
        if self.d_min < 0:
            raise ValueError("need d_min >= 0")
        if self.n_raw < 0:
            raise ValueError("need n_raw >= 0")
        if self.delta_px < 0:
            raise ValueError("need delta_px >= 0")

    def to_dict(self) -> dict:
        return {
            "anchor": [self.anchor.x, self.anchor.y, self.anchor.z],
            "r_min": self.r_min,
            "r_max": self.r_max,
            "phi_max": self.phi_max,
            "n_raw": self.n_raw,
            "n_samples_per_line": self.n_samples_per_line,
            "d_min": self.d_min,
            "K": self.K,
            "delta_px": self.delta_px,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingParams":
        d = dict(d)
        anchor = d.pop("anchor", None)
        params = cls(**d) if anchor is None else cls(anchor=BodyPoint(*anchor), **d)
        return params


@dataclass(frozen=True)
class GateResult:
    retained: bool
    k0: Optional[int] = None
    endpoint_pixel: Optional[PixelPoint] = None
    pixels: tuple = ()
    min_clearance: float = math.inf


@dataclass(frozen=True)
class Candidate:
    """One retained, indexed motion primitive in body, pixel, and world coordinates."""

    id: int
    endpoint_body: BodyPoint
    samples_body: tuple
    samples_pixel: tuple
    first_visible_index: int
    endpoint_pixel: PixelPoint
    min_clearance: float
    polyline_world: tuple = ()

    @property
    def bearing(self) -> float:
        return self.endpoint_body.bearing


@dataclass(frozen=True)
class CandidateSet:
    """Gated, thinned candidates frozen in the world frame at alert time."""

    candidates: tuple
    t_alert: float
    anchor_pose: NavPose
    params: SamplingParams

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def k(self) -> int:
        return len(self.candidates)

    def by_id(self, cid: int) -> Candidate:
        for c in self.candidates:
            if c.id == cid:
                return c
        raise KeyError(f"no candidate with id {cid}")

    @property
    def label_positions(self) -> dict:
        return {c.id: (c.endpoint_pixel.u, c.endpoint_pixel.v) for c in self.candidates}

    def to_dict(self) -> dict:
        return {
            "t_alert": self.t_alert,
            "anchor_pose": self.anchor_pose.to_dict(),
            "params": self.params.to_dict(),
            "candidates": [
                {
                    "id": c.id,
                    "endpoint_body": [c.endpoint_body.x, c.endpoint_body.y, c.endpoint_body.z],
                    "samples_body": [[p.x, p.y, p.z] for p in c.samples_body],
                    "samples_pixel": [None if p is None else [p.u, p.v] for p in c.samples_pixel],
                    "first_visible_index": c.first_visible_index,
                    "endpoint_pixel": [c.endpoint_pixel.u, c.endpoint_pixel.v],
                    "min_clearance": c.min_clearance,
                    "polyline_world": [[w.north, w.east, w.down] for w in c.polyline_world],
                }
                for c in self.candidates
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        cands = []
        for c in d["candidates"]:
            cands.append(
                Candidate(
                    id=int(c["id"]),
                    endpoint_body=BodyPoint(*c["endpoint_body"]),
                    samples_body=tuple(BodyPoint(*p) for p in c["samples_body"]),
                    samples_pixel=tuple(
                        None if p is None else PixelPoint(*p) for p in c["samples_pixel"]
                    ),
                    first_visible_index=int(c["first_visible_index"]),
                    endpoint_pixel=PixelPoint(*c["endpoint_pixel"]),
                    min_clearance=float(c["min_clearance"]),
                    polyline_world=tuple(WorldPoint(*w) for w in c["polyline_world"]),
                )
            )
        return cls(
            candidates=tuple(cands),
            t_alert=float(d["t_alert"]),
            anchor_pose=NavPose.from_dict(d["anchor_pose"]),
            params=SamplingParams.from_dict(d["params"]),
        )

    @classmethod
    def from_json(cls, s: str) -> "CandidateSet":
        return cls.from_dict(json.loads(s))


def sample_endpoints(params: SamplingParams) -> list:
    """Draw n_raw endpoints uniformly in (radius, bearing) over the annulus."""
    rng = np.random.default_rng(params.rng_seed)
    r = rng.uniform(params.r_min, params.r_max, params.n_raw)
    phi = rng.uniform(-params.phi_max, params.phi_max, params.n_raw)
    return [BodyPoint(float(ri * math.cos(pi)), float(ri * math.sin(pi)), 0.0) for ri, pi in zip(r, phi)]


def discretize_line(anchor: BodyPoint, endpoint: BodyPoint, n: int) -> tuple:
    """n evenly spaced samples from anchor to endpoint, both included."""
    ts = np.linspace(0.0, 1.0, n)
    a = anchor.as_array()
    e = endpoint.as_array()
    return tuple(BodyPoint(*((1.0 - t) * a + t * e)) for t in ts)


def gate_primitive(
    camera: CameraModel, grid: WaterGrid, line: Sequence[BodyPoint], d_min: float
) -> GateResult:
    """Project a primitive and test the water/clearance gate on visible samples.

    Retained iff a first visible sample exists, the endpoint projects into the
    image, and every visible sample from the first visible index onward lands
    on water with clearance >= d_min at its nearest-integer pixel.
    """
    if len(line) < 2:
        raise ValueError("primitive needs at least 2 samples")
    pixels = tuple(project_body_to_pixel(camera, p) for p in line)
    k0 = next((i for i, px in enumerate(pixels) if px is not None), None)
    if k0 is None or pixels[-1] is None:
        return GateResult(retained=False, pixels=pixels)
    min_clear = math.inf
    for px in pixels[k0:]:
        if px is None:
            continue
        u, v = px.rounded()
        if not grid.water[v, u]:
            return GateResult(retained=False, pixels=pixels)
        c = float(grid.clearance[v, u])
        if c < d_min:
            return GateResult(retained=False, pixels=pixels)
        min_clear = min(min_clear, c)
    return GateResult(
        retained=True, k0=k0, endpoint_pixel=pixels[-1], pixels=pixels, min_clearance=min_clear
    )


def farthest_point_thin(endpoint_pixels: Sequence[PixelPoint], K: int, delta_px: float = 0.0) -> list:
    """Greedy farthest-point selection on endpoint pixels; returns indices in pick order.

    With n <= K and no separation constraint the input order is kept. Otherwise
    the most isolated point seeds the selection, each step adds the point
    farthest from the selected set, and selection stops early once the best
    remaining separation falls below delta_px (when delta_px > 0). Argmax ties
    break to the lowest index.
    """
    n = len(endpoint_pixels)
    if n == 0:
        raise ValueError("endpoint_pixels must be non-empty")
    if K < 1:
        raise ValueError("need K >= 1")
    if n <= K and delta_px == 0.0:
        return list(range(n))
    pts = np.array([[p.u, p.v] for p in endpoint_pixels], dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    if n == 1:
        return [0]
    seed = int(np.argmax(d2.min(axis=1)))
    selected = [seed]
    m = d2[:, seed].copy()
    m[seed] = -np.inf
    while len(selected) < K and len(selected) < n:
        i_star = int(np.argmax(m))
        if delta_px > 0.0 and m[i_star] < delta_px * delta_px:
            break
        selected.append(i_star)
        m = np.minimum(m, d2[:, i_star])
        m[i_star] = -np.inf
    return selected


def generate_candidates(
    grid: WaterGrid,
    camera: CameraModel,
    pose_at_alert: NavPose,
    params: SamplingParams,
) -> CandidateSet:
    """Run the full candidate pipeline for one scene at the alert pose."""
    survivors = []
    for endpoint in sample_endpoints(params):
        line = discretize_line(params.anchor, endpoint, params.n_samples_per_line)
        gate = gate_primitive(camera, grid, line, params.d_min)
        if gate.retained:
            survivors.append((endpoint, line, gate))
    if not survivors:
        return CandidateSet(candidates=(), t_alert=pose_at_alert.timestamp,
                            anchor_pose=pose_at_alert, params=params)
    order = farthest_point_thin([g.endpoint_pixel for _, _, g in survivors], params.K, params.delta_px)
    candidates = []
    for cid, idx in enumerate(order, start=1):
        endpoint, line, gate = survivors[idx]
        candidates.append(
            Candidate(
                id=cid,
                endpoint_body=endpoint,
                samples_body=line,
                samples_pixel=gate.pixels,
                first_visible_index=gate.k0,
                endpoint_pixel=gate.endpoint_pixel,
                min_clearance=gate.min_clearance,
                polyline_world=tuple(body_to_world(pose_at_alert, p) for p in line),
            )
        )
    return CandidateSet(
        candidates=tuple(candidates),
        t_alert=pose_at_alert.timestamp,
        anchor_pose=pose_at_alert,
        params=params,
    )
