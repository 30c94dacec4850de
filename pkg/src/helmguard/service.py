"""Live session service: tick-loop engine, WebSocket wire protocol, headless client.

One session owns one tick loop. Network handlers only enqueue commands; the
engine drains the queue once per tick, so a given scenario plus a given
command timeline (expressed in ticks) always reproduces the same event log.
The published wire protocol (JSON text frames over a WebSocket):

  server -> client:
    {"type":"state", "tick", "t", "pose":{north,east,heading,speed},
     "alpha", "mode", "phase", "events":[...], "candidates"?, "decision"?}
    {"type":"overlay", "png_base64"}          once per alert
  client -> server:
    {"type":"joystick", "surge", "sway", "yaw"}   axes clamped into [-1, 1]
    {"type":"alert"}                              raise the anomaly alert
    {"type":"clear"}                              clear the alert

Unknown message types are ignored with a warning event. Joystick authority is
lease-based: the first client to send a joystick frame holds the lease until
it stays silent for the lease timeout; other clients' joystick frames are
rejected with a warning while the lease is held.
"""

from __future__ import annotations

import asyncio
import base64
import json
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .backends import TextBackend
from .candidates import generate_candidates
from .frames import NavPose
from .overlay import png_bytes, render_overlay
from .selector import Decision, build_prompt, select_fb1
from .sim import (
    ControlInput,
    DEFAULT_MODEL,
    FollowerConfig,
    SimState,
    VesselModel,
    ZERO_INPUT,
    autonomy_command,
    blend_override,
    step,
    update_alpha,
)

PHASES = ("nominal", "alerted", "selecting", "executing", "overridden", "cleared")


def canonical_json(obj) -> str:
    """Sorted-key compact JSON with JS-style numbers (1.0 renders as 1).

    Both protocol ends serialize client frames this way, so recorded frame
    streams compare byte-for-byte across implementations.
    """

    def norm(value):
        if isinstance(value, float) and value == int(value) and abs(value) < 1e15:
            return int(value)
        if isinstance(value, dict):
            return {k: norm(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [norm(v) for v in value]
        return value

    return json.dumps(norm(obj), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SelectorConfig:
    backend: TextBackend
    variant: str = "conservative"
    timeout_s: float = 60.0
    seed: Optional[int] = None
    out_of_range_to_zero: bool = False


@dataclass(frozen=True)
class AutoMonitor:
    """Optional anomaly-monitor wiring: score the scene and raise the alert.

    Off by default; the demonstrated protocol raises alerts manually. When
    enabled, the scene image is scored every period and an alert command is
    injected the first time the score exceeds the calibrated threshold.
    """

    cache: object
    tau: float
    describer: TextBackend
    embedder: object
    period_s: float = 5.0


class SessionEngine:
    """Deterministic tick-driven session state machine.

    The engine is transport-agnostic: submit() enqueues commands from any
    thread, tick() advances the world one step and publishes a state frame to
    all listeners. With synchronous selection (the default) the whole session
    is a pure function of the scenario and the command timeline.
    """

    def __init__(
        self,
        scenario,
        follower_cfg: FollowerConfig = FollowerConfig(),
        selector_cfg: Optional[SelectorConfig] = None,
        model: VesselModel = DEFAULT_MODEL,
        dt: float = 0.05,
        ramp_T: float = 3.0,
        tau_h_min: float = 0.05,
        lease_timeout_s: float = 2.0,
        selector_async: bool = False,
        auto_monitor: Optional[AutoMonitor] = None,
    ):
        self.scenario = scenario
        self.follower_cfg = follower_cfg
        self.selector_cfg = selector_cfg
        self.model = model
        self.dt = dt
        self.ramp_T = ramp_T
        self.tau_h_min = tau_h_min
        self.lease_timeout_ticks = max(1, int(round(lease_timeout_s / dt)))
        self.selector_async = selector_async

        pose = scenario.pose
        self.state = SimState(north=pose.position.north, east=pose.position.east,
                              heading=pose.yaw)
        self.phase = "nominal"
        self.tick_no = 0
        self.grid = scenario.water_grid()
        self.candidate_set = None
        self.decision: Optional[Decision] = None
        self.exec_path = []
        self.exec_station = True
        self.active_waypoint = 1
        self._overlay_png: Optional[bytes] = None
        self._selector_future = None
        self._selector_pool = None
        self._alert_selected = False
        self._follower_done_logged = False
        self.auto_monitor = auto_monitor
        self._monitor_period_ticks = (
            max(1, int(round(auto_monitor.period_s / dt))) if auto_monitor else 0
        )

        self.tau_h = ZERO_INPUT
        self.lease_holder: Optional[str] = None
        self.lease_last_seen = 0

        self._queue = deque()
        self._lock = threading.Lock()
        self._listeners: list = []
        self._log: list = []

    # -- transport side -----------------------------------------------------

    def submit(self, client_id: str, message: dict) -> None:
        with self._lock:
            self._queue.append((client_id, message))

    def pending_commands(self) -> int:
        with self._lock:
            return len(self._queue)

    def add_listener(self, fn: Callable[[dict], None]) -> None:
        with self._lock:
            self._listeners.append(fn)

    def remove_listener(self, fn: Callable[[dict], None]) -> None:
        with self._lock:
            if fn in self._listeners:
                self._listeners.remove(fn)

    def event_log(self) -> list:
        with self._lock:
            return list(self._log)

    # -- engine internals ----------------------------------------------------

    def _set_phase(self, new_phase: str, events: list) -> None:
        if new_phase != self.phase:
            events.append({"event": "phase_change", "from": self.phase, "to": new_phase})
            self.phase = new_phase

    def _frozen_pose(self) -> NavPose:
        return NavPose.from_position_yaw(self.state.north, self.state.east,
                                         self.state.heading, timestamp=self.state.t)

    def _start_selection(self, events: list, extra_frames: list) -> None:
        pose = self._frozen_pose()
        self.candidate_set = generate_candidates(self.grid, self.scenario.camera, pose,
                                                 self.scenario.sampling)
        events.append({"event": "candidates_generated", "count": len(self.candidate_set)})
        overlay = render_overlay(self.scenario.base_image(), self.candidate_set)
        self._overlay_png = png_bytes(overlay)
        extra_frames.append({
            "type": "overlay",
            "png_base64": base64.b64encode(self._overlay_png).decode("ascii"),
        })
        self._set_phase("selecting", events)
        self._alert_selected = True
        events.append({"event": "selector_invoked", "k": len(self.candidate_set)})
        if self.selector_async:
            from concurrent.futures import ThreadPoolExecutor

            self._selector_pool = ThreadPoolExecutor(max_workers=1)
            self._selector_future = self._selector_pool.submit(self._run_selector)
        else:
            self._finish_selection(self._run_selector(), events)

    def _run_selector(self) -> Decision:
        cfg = self.selector_cfg
        k = len(self.candidate_set)
        notifications: list = []
        if cfg is None:
            decision = Decision(parse_status="defaulted")
            notifications.append({"type": "roc_notify", "reason": "no_selector_configured"})
        else:
            prompt = build_prompt(cfg.variant, k)
            decision = select_fb1(
                cfg.backend, self._overlay_png, k, prompt, timeout=cfg.timeout_s,
                seed=cfg.seed, notify=notifications.append,
                out_of_range_to_zero=cfg.out_of_range_to_zero,
            )
        decision_notifications = notifications
        self._pending_notifications = decision_notifications
        return decision

    def _finish_selection(self, decision: Decision, events: list) -> None:
        self.decision = decision
        for note in getattr(self, "_pending_notifications", []):
            events.append({"event": "roc_notify", **{k: v for k, v in note.items() if k != "type"}})
        self._pending_notifications = []
        events.append({
            "event": "decision",
            "choice_id": decision.choice_id,
            "parse_status": decision.parse_status,
            "see": decision.see,
            "implications": decision.implications,
            "action": decision.action,
            "confidence": decision.confidence,
        })
        if decision.choice_id >= 1:
            cand = self.candidate_set.by_id(decision.choice_id)
            self.exec_path = list(cand.polyline_world)
            self.exec_station = False
        else:
            pose = self.candidate_set.anchor_pose
            self.exec_path = [pose.position]
            self.exec_station = True
        self.active_waypoint = 1
        self._set_phase("executing", events)

    def _process_command(self, client_id: str, message: dict, events: list,
                         extra_frames: list) -> None:
        mtype = message.get("type")
        if mtype == "alert":
            if self.phase != "nominal" or self._alert_selected:
                events.append({"event": "warning", "reason": "duplicate_alert",
                               "client": client_id})
                return
            events.append({"event": "alert_raised", "client": client_id})
            self._set_phase("alerted", events)
            self._start_selection(events, extra_frames)
        elif mtype == "clear":
            if self.phase in ("alerted", "selecting", "executing"):
                events.append({"event": "alert_cleared", "client": client_id})
                self._set_phase("cleared", events)
            else:
                events.append({"event": "warning", "reason": "clear_without_alert",
                               "client": client_id})
        elif mtype == "joystick":
            if self.lease_holder is None:
                self.lease_holder = client_id
                self.lease_last_seen = self.tick_no
                events.append({"event": "lease_acquired", "client": client_id})
            if self.lease_holder != client_id:
                events.append({"event": "warning", "reason": "joystick_rejected_no_lease",
                               "client": client_id})
                return
            self.lease_last_seen = self.tick_no
            try:
                self.tau_h = ControlInput(
                    float(message.get("surge", 0.0)),
                    float(message.get("sway", 0.0)),
                    float(message.get("yaw", 0.0)),
                ).clamped()
            except (TypeError, ValueError):
                events.append({"event": "warning", "reason": "malformed_joystick",
                               "client": client_id})
        else:
            events.append({"event": "warning", "reason": "unknown_message_type",
                           "type": str(mtype), "client": client_id})

    def tick(self, n: int = 1) -> None:
        for _ in range(n):
            self._tick_once()

    def _run_auto_monitor(self, events: list, extra_frames: list) -> None:
        from .monitor import anomaly_score, embed_scene
        from .overlay import png_bytes as _png

        mon = self.auto_monitor
        try:
            e_t = embed_scene(mon.describer, mon.embedder, _png(self.scenario.base_image()))
            score = anomaly_score(e_t, mon.cache)
        except Exception as e:  # noqa: BLE001 - a broken monitor never blocks the session
            events.append({"event": "warning", "reason": "monitor_error", "detail": str(e)})
            return
        events.append({"event": "monitor_score", "score": round(score, 6),
                       "tau": mon.tau})
        if score > mon.tau:
            self._process_command("monitor", {"type": "alert"}, events, extra_frames)

    def _tick_once(self) -> None:
        events: list = []
        extra_frames: list = []
        if (self.auto_monitor is not None and self.phase == "nominal"
                and self.tick_no % self._monitor_period_ticks == 0):
            self._run_auto_monitor(events, extra_frames)
        with self._lock:
            commands = list(self._queue)
            self._queue.clear()
        for client_id, message in commands:
            self._process_command(client_id, message, events, extra_frames)

        if self.lease_holder is not None and (
                self.tick_no - self.lease_last_seen) > self.lease_timeout_ticks:
            events.append({"event": "lease_expired", "client": self.lease_holder})
            self.lease_holder = None
            self.tau_h = ZERO_INPUT

        if self._selector_future is not None and self._selector_future.done():
            decision = self._selector_future.result()
            self._selector_future = None
            self._selector_pool.shutdown(wait=False)
            self._selector_pool = None
            self._finish_selection(decision, events)

        prev_mode = self.state.mode
        self.state = update_alpha(self.state, self.tau_h, self.ramp_T, self.tau_h_min, self.dt)
        if self.phase in ("executing",) and not self.exec_station:
            tau_m, guidance = autonomy_command(self.state, self.exec_path, self.follower_cfg,
                                               self.active_waypoint, station=False,
                                               model=self.model)
            if guidance is not None:
                self.active_waypoint = max(self.active_waypoint, guidance.active_index)
                if guidance.done and not self._follower_done_logged:
                    events.append({"event": "follower_done"})
                    self._follower_done_logged = True
        elif self.phase in ("alerted", "selecting", "executing"):
            hold = self.exec_path if self.exec_path else [self.state.position]
            tau_m, _ = autonomy_command(self.state, hold, self.follower_cfg, 1, station=True,
                                        model=self.model)
        else:
            tau_m = ZERO_INPUT
        tau_d = blend_override(tau_m, self.tau_h, self.state.alpha)
        self.state = step(self.state, tau_d, self.dt, self.model)
        if self.state.mode != prev_mode:
            events.append({"event": "mode_change", "from": prev_mode, "to": self.state.mode})
        if self.phase == "executing" and self.state.alpha == 1.0:
            events.append({"event": "override_complete"})
            self._set_phase("overridden", events)

        self.tick_no += 1
        record = {
            "tick": self.tick_no,
            "t": round(self.state.t, 9),
            "north": round(self.state.north, 9),
            "east": round(self.state.east, 9),
            "heading": round(self.state.heading, 9),
            "speed": round(self.state.speed, 9),
            "alpha": round(self.state.alpha, 9),
            "mode": self.state.mode,
            "phase": self.phase,
            "events": events,
        }
        frame = {
            "type": "state",
            "tick": self.tick_no,
            "t": record["t"],
            "pose": {"north": record["north"], "east": record["east"],
                     "heading": record["heading"], "speed": record["speed"]},
            "alpha": record["alpha"],
            "mode": record["mode"],
            "phase": record["phase"],
            "events": events,
        }
        if any(e.get("event") == "candidates_generated" for e in events):
            frame["candidates"] = self._candidates_payload()
        if any(e.get("event") == "decision" for e in events):
            frame["decision"] = next(e for e in events if e.get("event") == "decision")
        with self._lock:
            self._log.append(record)
            listeners = list(self._listeners)
        for fn in listeners:
            fn(frame)
            for extra in extra_frames:
                fn(extra)

    def _candidates_payload(self) -> list:
        payload = []
        for cand in self.candidate_set.candidates:
            payload.append({
                "id": cand.id,
                "endpoint_pixel": [cand.endpoint_pixel.u, cand.endpoint_pixel.v],
                "world": [[w.north, w.east] for w in cand.polyline_world],
            })
        if self.scenario.hazard is not None:
            payload_meta = {
                "id": 0,
                "hazard": [self.scenario.hazard.point.north, self.scenario.hazard.point.east],
            }
            payload.append(payload_meta)
        return payload

    def selector_invocations(self) -> int:
        return sum(
            1
            for record in self.event_log()
            for e in record["events"]
            if e.get("event") == "selector_invoked"
        )

    def sync_frames(self) -> list:
        """Catch-up frames for a client that joins after the alert.

        Late joiners still need the candidate geometry, the decision, and the
        overlay, which are otherwise only broadcast on the tick they happened.
        """
        if self.candidate_set is None:
            return []
        frame = {
            "type": "state",
            "tick": self.tick_no,
            "t": round(self.state.t, 9),
            "pose": {"north": round(self.state.north, 9), "east": round(self.state.east, 9),
                     "heading": round(self.state.heading, 9),
                     "speed": round(self.state.speed, 9)},
            "alpha": round(self.state.alpha, 9),
            "mode": self.state.mode,
            "phase": self.phase,
            "events": [],
            "candidates": self._candidates_payload(),
        }
        if self.decision is not None:
            frame["decision"] = {
                "event": "decision",
                "choice_id": self.decision.choice_id,
                "parse_status": self.decision.parse_status,
                "see": self.decision.see,
                "implications": self.decision.implications,
                "action": self.decision.action,
                "confidence": self.decision.confidence,
            }
        frames = [frame]
        if self._overlay_png is not None:
            frames.append({
                "type": "overlay",
                "png_base64": base64.b64encode(self._overlay_png).decode("ascii"),
            })
        return frames


class SessionRunner:
    """Wall-clock tick driver for live serving."""

    def __init__(self, engine: SessionEngine):
        self.engine = engine
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        dt = self.engine.dt
        next_tick = time.monotonic()
        while not self._stop.is_set():
            self.engine.tick()
            next_tick += dt
            delay = next_tick - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_tick = time.monotonic()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def create_app(engine: SessionEngine, token: Optional[str] = None) -> FastAPI:
    """FastAPI app speaking the session wire protocol."""
    app = FastAPI(title="helmguard-session")
    app.state.engine = engine
    counter = {"n": 0}

    @app.get("/healthz")
    async def healthz():
        return {"tick": engine.tick_no, "phase": engine.phase}

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        if token is not None and websocket.query_params.get("token") != token:
            await websocket.close(code=4401)
            return
        await websocket.accept()
        counter["n"] += 1
        client_id = f"client-{counter['n']}"
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue = asyncio.Queue()

        def on_frame(frame: dict) -> None:
            loop.call_soon_threadsafe(queue.put_nowait, frame)

        engine.add_listener(on_frame)
        for frame in engine.sync_frames():
            await websocket.send_text(json.dumps(frame, sort_keys=True))
        recv_task = asyncio.ensure_future(websocket.receive_text())
        send_task = asyncio.ensure_future(queue.get())
        try:
            while True:
                done, _ = await asyncio.wait({recv_task, send_task},
                                             return_when=asyncio.FIRST_COMPLETED)
                if recv_task in done:
                    text = recv_task.result()
                    try:
                        message = json.loads(text)
                        if not isinstance(message, dict):
                            message = {"type": "malformed"}
                    except json.JSONDecodeError:
                        message = {"type": "malformed"}
                    engine.submit(client_id, message)
                    recv_task = asyncio.ensure_future(websocket.receive_text())
                if send_task in done:
                    frame = send_task.result()
                    await websocket.send_text(json.dumps(frame, sort_keys=True))
                    send_task = asyncio.ensure_future(queue.get())
        except WebSocketDisconnect:
            pass
        finally:
            engine.remove_listener(on_frame)
            recv_task.cancel()
            send_task.cancel()

    return app


def clamp_axis(value: float) -> float:
    return min(1.0, max(-1.0, float(value)))


def encode_client_frame(action: dict) -> str:
    """Canonical outbound encoding shared by every protocol client.

    Joystick axes are clamped before encoding; alert/clear frames carry only
    their type. The canonical JSON form makes recorded frame streams
    comparable across client implementations.
    """
    mtype = action.get("type")
    if mtype == "joystick":
        frame = {
            "type": "joystick",
            "surge": clamp_axis(action.get("surge", 0.0)),
            "sway": clamp_axis(action.get("sway", 0.0)),
            "yaw": clamp_axis(action.get("yaw", 0.0)),
        }
    elif mtype in ("alert", "clear"):
        frame = {"type": mtype}
    else:
        raise ValueError(f"unknown client action type {mtype!r}")
    return canonical_json(frame)


class HeadlessClient:
    """Scripted protocol client used for conformance and golden-log tests.

    A timeline is a list of {"at_tick": int, "action": {...}} entries sorted
    by tick. frames_for_timeline() is the pure encoding half (shared contract
    with any other client implementation); drive() pushes those frames into a
    live engine between ticks.
    """

    @staticmethod
    def frames_for_timeline(timeline: list) -> list:
        return [encode_client_frame(entry["action"]) for entry in timeline]

    @staticmethod
    def drive(engine: SessionEngine, timeline: list, total_ticks: int,
              client_id: str = "headless", send: Optional[Callable[[str], None]] = None) -> list:
        """Advance the engine to each entry's tick, submit, then run out the clock.

        Returns the outbound frame strings. When send is given (a live socket
        writer) frames also go through it; otherwise they go straight into
        the engine queue.
        """
        entries = sorted(timeline, key=lambda e: e["at_tick"])
        sent = []
        for entry in entries:
            while engine.tick_no < entry["at_tick"]:
                engine.tick()
            text = encode_client_frame(entry["action"])
            sent.append(text)
            if send is not None:
                send(text)
            else:
                engine.submit(client_id, json.loads(text))
        while engine.tick_no < total_ticks:
            engine.tick()
        return sent
