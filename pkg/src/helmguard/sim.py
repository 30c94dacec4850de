"""Planar vessel simulation: LOS following, override blending, and the ramp schedule.

The vessel model is a reduced planar kinematics stand-in: first-order surge
and yaw responses with unit gains and no sway coupling, integrated exactly
within each tick (exponential updates), so constant-input trajectories match
the continuous closed form at tick boundaries. The authority blend and the
ramp schedule are the load-bearing parts; they are dynamics-agnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from .frames import WorldPoint

ALPHA_SNAP = 1e-12


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi); in-range values pass through unchanged."""
    if -math.pi <= a < math.pi:
        return a
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class ControlInput:
    """Normalized force/moment triple (surge, sway, yaw), one unit per axis."""

    surge: float = 0.0
    sway: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for v in (self.surge, self.sway, self.yaw):
            if not math.isfinite(v):
                raise ValueError("control components must be finite")

    @property
    def max_norm(self) -> float:
        return max(abs(self.surge), abs(self.sway), abs(self.yaw))

    def clamped(self) -> "ControlInput":
        c = lambda v: min(1.0, max(-1.0, v))
        return ControlInput(c(self.surge), c(self.sway), c(self.yaw))


ZERO_INPUT = ControlInput()


@dataclass(frozen=True)
class FollowerConfig:
    acceptance_radius: float = 7.5
    lookahead: float = 10.0
    u_anom: float = 0.514

    def __post_init__(self):
        if self.acceptance_radius <= 0 or self.lookahead <= 0:
            raise ValueError("acceptance radius and lookahead must be positive")
        if self.u_anom < 0:
            raise ValueError("u_anom must be >= 0")


@dataclass(frozen=True)
class VesselModel:
    """Reduced model constants: steady-state gains and time constants.

    surge_gain is m/s of steady speed per unit surge command; yaw_gain is
    rad/s of steady turn rate per unit yaw command. Sway commands carry no
    kinematic effect in this model. The optional constant current displaces
    the hull regardless of commands (useful for station-keeping tests).
    """

    surge_gain: float = 1.0
    surge_tau: float = 1.0
    yaw_gain: float = 1.0
    yaw_tau: float = 1.0
    current_north: float = 0.0
    current_east: float = 0.0


DEFAULT_MODEL = VesselModel()


@dataclass(frozen=True)
class SimState:
    north: float = 0.0
    east: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    yaw_rate: float = 0.0
    alpha: float = 0.0
    t: float = 0.0
    t_c: float = -math.inf

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def position(self) -> WorldPoint:
        return WorldPoint(self.north, self.east, 0.0)

    @property
    def mode(self) -> str:
        if self.alpha == 0.0:
            return "autonomy"
        if self.alpha == 1.0:
            return "manual"
        return "shared"


def blend_override(tau_m: ControlInput, tau_h: ControlInput, alpha: float) -> ControlInput:
    """Authority blend: (1 - a) * machine + (0.5 + 0.5 a) * human, componentwise.

    The human coefficient never drops below 0.5, and full override (a = 1)
    zeroes the machine term entirely.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    wm = 1.0 - alpha
    wh = 0.5 + 0.5 * alpha
    return ControlInput(
        wm * tau_m.surge + wh * tau_h.surge,
        wm * tau_m.sway + wh * tau_h.sway,
        wm * tau_m.yaw + wh * tau_h.yaw,
    )


def update_alpha(state: SimState, tau_h: ControlInput, T: float, tau_h_min: float,
                 dt: float) -> SimState:
    """Advance the override ramp by one tick.

    While any joystick axis exceeds the threshold (max-norm), alpha ramps up
    at 1/T and the crossing time resets to now, so holding the stick keeps
    full override. After release, alpha holds until T has elapsed since the
    last crossing, then ramps down at 1/T. Values snap to the exact 0/1
    endpoints so the mode labels stay crisp.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    alpha = state.alpha
    t_c = state.t_c
    if tau_h.max_norm > tau_h_min:
        alpha = alpha + dt / T
        t_c = state.t
    elif state.t - state.t_c >= T:
        alpha = alpha - dt / T
    # else: hands off but within T of the last crossing -> hold.
    alpha = min(1.0, max(0.0, alpha))
    if alpha < ALPHA_SNAP:
        alpha = 0.0
    elif alpha > 1.0 - ALPHA_SNAP:
        alpha = 1.0
    return replace(state, alpha=alpha, t_c=t_c)


def step(state: SimState, tau_d: ControlInput, dt: float,
         model: VesselModel = DEFAULT_MODEL) -> SimState:
    """One tick of the reduced planar model (exact first-order integration).

    Translation uses the heading at the start of the tick; surge and yaw-rate
    follow their first-order responses exactly, so a constant command from
    rest reproduces the continuous closed form at every tick boundary.
    """
    if not 0.0 < dt <= 0.5:
        raise ValueError("dt must lie in (0, 0.5]")
    u_ss = model.surge_gain * tau_d.surge
    a = math.exp(-dt / model.surge_tau)
    new_speed = u_ss + (state.speed - u_ss) * a
    distance = u_ss * dt + (state.speed - u_ss) * model.surge_tau * (1.0 - a)
    r_ss = model.yaw_gain * tau_d.yaw
    b = math.exp(-dt / model.yaw_tau)
    new_rate = r_ss + (state.yaw_rate - r_ss) * b
    dpsi = r_ss * dt + (state.yaw_rate - r_ss) * model.yaw_tau * (1.0 - b)
    return replace(
        state,
        north=state.north + distance * math.cos(state.heading) + model.current_north * dt,
        east=state.east + distance * math.sin(state.heading) + model.current_east * dt,
        heading=wrap_angle(state.heading + dpsi),
        speed=new_speed,
        yaw_rate=new_rate,
        t=state.t + dt,
    )


@dataclass(frozen=True)
class LosResult:
    desired_course: float
    done: bool
    active_index: int


def los_guidance(path: Sequence[WorldPoint], state: SimState, cfg: FollowerConfig,
                 active_index: int = 1) -> LosResult:
    """Lookahead LOS: course = segment bearing - atan(cross_track / lookahead).

    The active waypoint advances once the vessel is inside the acceptance
    radius; done when inside the radius of the final point. A single-point
    path steers straight at that point. Zero-length segments are skipped.
    """
    if len(path) == 0:
        raise ValueError("path must contain at least one point")
    pn, pe = state.north, state.east
    if len(path) == 1:
        wp = path[0]
        dist = math.hypot(wp.north - pn, wp.east - pe)
        course = math.atan2(wp.east - pe, wp.north - pn) if dist > 1e-9 else state.heading
        return LosResult(desired_course=course, done=dist <= cfg.acceptance_radius,
                         active_index=0)
    idx = max(1, active_index)
    while idx < len(path):
        prev, cur = path[idx - 1], path[idx]
        seg_len = math.hypot(cur.north - prev.north, cur.east - prev.east)
        if seg_len < 1e-9:
            idx += 1
            continue
        if math.hypot(cur.north - pn, cur.east - pe) <= cfg.acceptance_radius:
            idx += 1
            continue
        break
    if idx >= len(path):
        # All waypoints captured; keep the bearing of the final segment.
        prev, cur = path[-2], path[-1]
        bearing = math.atan2(cur.east - prev.east, cur.north - prev.north)
        return LosResult(desired_course=bearing, done=True, active_index=len(path) - 1)
    prev, cur = path[idx - 1], path[idx]
    tn, te = cur.north - prev.north, cur.east - prev.east
    seg_len = math.hypot(tn, te)
    tn, te = tn / seg_len, te / seg_len
    bearing = math.atan2(te, tn)
    # Signed cross-track: positive when the vessel sits starboard of the path.
    e_ct = tn * (pe - prev.east) - te * (pn - prev.north)
    course = wrap_angle(bearing - math.atan(e_ct / cfg.lookahead))
    done = math.hypot(path[-1].north - pn, path[-1].east - pe) <= cfg.acceptance_radius
    return LosResult(desired_course=course, done=done, active_index=idx)


STATION_HOLD_RADIUS = 0.5


def autonomy_command(state: SimState, path: Sequence[WorldPoint], cfg: FollowerConfig,
                     active_index: int, station: bool,
                     model: VesselModel = DEFAULT_MODEL) -> tuple:
    """Machine command for the current tick: LOS tracking or station hold.

    Returns (ControlInput, LosResult or None). Station-keeping pushes back
    toward the hold point only when displaced beyond a small deadband.
    """
    if station:
        wp = path[0]
        dist = math.hypot(wp.north - state.north, wp.east - state.east)
        if dist <= STATION_HOLD_RADIUS:
            surge = -min(1.0, max(-1.0, state.speed / model.surge_gain))
            if abs(state.speed) < 1e-6:
                surge = 0.0
            return ControlInput(surge=surge), None
        course = math.atan2(wp.east - state.east, wp.north - state.north)
        yaw_cmd = min(1.0, max(-1.0, wrap_angle(course - state.heading)))
        u_d = min(cfg.u_anom, 0.5 * dist)
        surge_cmd = min(1.0, max(-1.0, u_d / model.surge_gain + (u_d - state.speed)))
        return ControlInput(surge=surge_cmd, yaw=yaw_cmd), None
    guidance = los_guidance(path, state, cfg, active_index)
    if guidance.done:
        surge = -min(1.0, max(-1.0, state.speed / model.surge_gain))
        if abs(state.speed) < 1e-6:
            surge = 0.0
        return ControlInput(surge=surge), guidance
    heading_err = wrap_angle(guidance.desired_course - state.heading)
    yaw_cmd = min(1.0, max(-1.0, heading_err))
    u_d = cfg.u_anom
    surge_cmd = min(1.0, max(-1.0, u_d / model.surge_gain + (u_d - state.speed)))
    return ControlInput(surge=surge_cmd, yaw=yaw_cmd), guidance


@dataclass
class EpisodeLog:
    """Per-tick records of one fallback episode."""

    records: list = field(default_factory=list)

    def append(self, state: SimState, active_waypoint: int, events: list) -> None:
        self.records.append(
            {
                "t": round(state.t, 9),
                "north": state.north,
                "east": state.east,
                "heading": state.heading,
                "speed": state.speed,
                "alpha": state.alpha,
                "mode": state.mode,
                "active_waypoint": active_waypoint,
                "events": list(events),
            }
        )

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records) + "\n"

    @property
    def events(self) -> list:
        out = []
        for r in self.records:
            out.extend(r["events"])
        return out


def run_episode(
    path_world: Sequence[WorldPoint],
    action_choice: int,
    joystick: Optional[Callable[[float], ControlInput]] = None,
    cfg: FollowerConfig = FollowerConfig(),
    model: VesselModel = DEFAULT_MODEL,
    start: Optional[SimState] = None,
    dt: float = 0.05,
    max_duration: float = 120.0,
    ramp_T: float = 3.0,
    tau_h_min: float = 0.05,
    alert_clear_at: Optional[float] = None,
) -> EpisodeLog:
    """Execute one fallback action until follower-done, full override, or clear.

    Action 0 holds a single station point at the starting pose; any other
    action tracks its world polyline at the anomaly speed. path_world must be
    the already-anchored polyline for the chosen action (ignored for 0).
    The joystick script maps time to a ControlInput and feeds the blend at
    every tick regardless of phase.
    """
    if action_choice < 0:
        raise ValueError("unknown action id")
    state = start if start is not None else SimState()
    station = action_choice == 0
    if station:
        path = [WorldPoint(state.north, state.east, 0.0)]
    else:
        if not path_world:
            raise ValueError("unknown action id: no polyline for the chosen candidate")
        path = list(path_world)
    log_ = EpisodeLog()
    active = 1
    prev_mode = state.mode
    log_.append(state, active_waypoint=0 if station else active, events=["episode_start"])
    while state.t < max_duration:
        events = []
        tau_h = joystick(state.t) if joystick is not None else ZERO_INPUT
        tau_h = tau_h.clamped()
        state = update_alpha(state, tau_h, ramp_T, tau_h_min, dt)
        tau_m, guidance = autonomy_command(state, path, cfg, active, station, model)
        if guidance is not None:
            active = max(active, guidance.active_index)
        tau_d = blend_override(tau_m, tau_h, state.alpha)
        state = step(state, tau_d, dt, model)
        if state.mode != prev_mode:
            events.append(f"mode_change:{prev_mode}->{state.mode}")
            prev_mode = state.mode
        done = guidance.done if guidance is not None else False
        cleared = alert_clear_at is not None and state.t >= alert_clear_at
        if done:
            events.append("follower_done")
        if state.alpha == 1.0:
            events.append("override_complete")
        if cleared:
            events.append("alert_cleared")
        log_.append(state, active_waypoint=0 if station else active, events=events)
        if done or state.alpha == 1.0 or cleared:
            break
    return log_
