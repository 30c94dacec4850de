"""Fallback maneuver selection: prompts, strict parsing, voting, baselines.

Every failure path folds to the safe default (station-keeping, id 0) with an
operator notification; the emitted choice is always in {0..K} no matter what
the backend returns. Single-call selection is the runtime path; the n-call
ensemble with strict-majority voting is the evaluation path.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .backends import NotificationSink, TextBackend
from .candidates import CandidateSet

log = logging.getLogger(__name__)

WORD_LIMIT = 15

PROMPT_VARIANTS = ("conservative", "neutral", "proactive")

_HEADER = (
    "You advise a small autonomous surface vessel from a single forward camera image.\n"
    "The image shows K overlaid candidate trajectories labeled 1..{K} at circular endpoints; "
    "id 0 = KEEP STATION.\n"
)

_FIELD_LINES = (
    '- "see": what matters for safe, COLREG-compliant navigation (<= 15 words).\n'
    '- "implications": why it matters for safety of people and vessel (<= 15 words).\n'
    '- "action": short high-level maneuver (side/clearance/speed/readiness), '
    "no numeric ids (<= 15 words).\n"
)

_SCHEMA_LINE = (
    '{ "see":"<= 15 words>", "implications":"<= 15 words>", "action":"<= 15 words>", '
    '"choice_id": <0..{K}>, "confidence": <0..1> }\n'
    "Do not include any other text."
)

_TEMPLATES = {
    "conservative": (
        _HEADER
        + "\nFrom ONLY what is visible now, be concise and conservative:\n"
        + _FIELD_LINES
        + "If uncertain, prefer 0. Respond with a SINGLE JSON object only:\n"
        + _SCHEMA_LINE
    ),
    "neutral": (
        _HEADER
        + "\nFrom ONLY what is visible now, be concise and safety-first:\n"
        + _FIELD_LINES
        + "Respond with a SINGLE JSON object only:\n"
        + _SCHEMA_LINE
    ),
    "proactive": (
        _HEADER
        + "\nFrom ONLY what is visible now, be concise and safety-first:\n"
        + "Choose a numbered path when any option is clearly water-safe; use 0 only if all "
        + "numbered options appear unsafe or an immediate stop is warranted.\n"
        + "If multiple numbered options are safe, prefer greater separation from "
        + "hazards/keep-out regions, staying within the clear water corridor, modest forward "
        + "progress; if still tied, slight starboard bias.\n"
        + _FIELD_LINES
        + "Respond with a SINGLE JSON object only:\n"
        + _SCHEMA_LINE
    ),
}


@dataclass(frozen=True)
class SelectorPrompt:
    variant: str
    K: int
    text: str


@dataclass(frozen=True)
class Decision:
    """Parsed selector output with its safety status.

    parse_status is "ok" for a conforming response, "clipped" when only the
    choice id had to be clamped into range, and "defaulted" when anything
    about the response forced the station-keeping fallback (defaulted implies
    choice_id == 0). Over-limit free-text fields are preserved and flagged,
    never truncated.
    """

    see: str = ""
    implications: str = ""
    action: str = ""
    choice_id: int = 0
    confidence: float = 0.0
    raw_text: str = ""
    parse_status: str = "defaulted"
    overlong_fields: tuple = ()
    latency_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "see": self.see,
            "implications": self.implications,
            "action": self.action,
            "choice_id": self.choice_id,
            "confidence": self.confidence,
            "raw_text": self.raw_text,
            "parse_status": self.parse_status,
            "overlong_fields": list(self.overlong_fields),
            "latency_s": self.latency_s,
        }


@dataclass(frozen=True)
class VoteRecord:
    """Per-seed decisions, tallies, and the strict-majority winner."""

    decisions: tuple
    tallies: dict
    winner: int
    majority_met: bool


def build_prompt(variant: str, K: int) -> SelectorPrompt:
    """Instantiate a prompt template for K candidates."""
    if variant not in _TEMPLATES:
        raise ValueError(f"unknown prompt variant {variant!r}; expected one of {PROMPT_VARIANTS}")
    if K < 0:
        raise ValueError("K must be >= 0")
    if K == 0:
        log.warning("building prompt with degenerate candidate range 1..0 (K=0)")
    text = _TEMPLATES[variant].replace("{K}", str(K))
    return SelectorPrompt(variant=variant, K=K, text=text)


def _coerce_choice(value) -> Optional[int]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


def parse_decision(raw_text: str, K: int, out_of_range_to_zero: bool = False) -> Decision:
    """Strict parse of the selector schema with clamp-or-default semantics.

    The response must be exactly one JSON object carrying the five schema
    keys. Any parse failure, missing key, wrong type, or non-integer choice
    yields the defaulted station-keeping decision. An out-of-range integer
    choice is clamped into {0..K} (status "clipped") unless
    out_of_range_to_zero maps it to 0 instead.
    """
    raw = raw_text if isinstance(raw_text, str) else ""
    failed = Decision(raw_text=raw, parse_status="defaulted")
    try:
        obj = json.loads(raw.strip())
    except (json.JSONDecodeError, ValueError, TypeError):
        return failed
    if not isinstance(obj, dict):
        return failed
    try:
        see, implications, action = obj["see"], obj["implications"], obj["action"]
        choice_raw, confidence_raw = obj["choice_id"], obj["confidence"]
    except KeyError:
        return failed
    if not all(isinstance(s, str) for s in (see, implications, action)):
        return failed
    choice = _coerce_choice(choice_raw)
    if choice is None:
        return failed
    if isinstance(confidence_raw, bool) or not isinstance(confidence_raw, (int, float)):
        return failed
    confidence = min(1.0, max(0.0, float(confidence_raw)))
    status = "ok"
    if choice < 0 or choice > K:
        if out_of_range_to_zero:
            choice = 0
        else:
            choice = min(max(choice, 0), K)
        status = "clipped"
    overlong = tuple(
        name
        for name, value in (("see", see), ("implications", implications), ("action", action))
        if len(value.split()) > WORD_LIMIT
    )
    return Decision(
        see=see,
        implications=implications,
        action=action,
        choice_id=choice,
        confidence=confidence,
        raw_text=raw,
        parse_status=status,
        overlong_fields=overlong,
    )


def _notify(sink: Optional[NotificationSink], event: dict) -> None:
    if sink is not None:
        sink(event)


def select_fb1(
    backend: TextBackend,
    overlay_png: Optional[bytes],
    K: int,
    prompt: SelectorPrompt,
    timeout: float = 60.0,
    seed: Optional[int] = None,
    notify: Optional[NotificationSink] = None,
    out_of_range_to_zero: bool = False,
) -> Decision:
    """One selector call with safe defaults for every failure mode.

    Timeouts, backend errors, and non-conforming responses all yield the
    defaulted decision plus an operator notification. K = 0 short-circuits to
    station-keeping without touching the backend.
    """
    if K == 0:
        _notify(notify, {"type": "roc_notify", "reason": "no_feasible_candidates", "seed": seed})
        return Decision(parse_status="defaulted")
    t0 = time.perf_counter()
    # Do not wait for a hung worker on shutdown; the timeout already decided
    # the outcome.
    pool = ThreadPoolExecutor(max_workers=1)
    try:
        future = pool.submit(backend.submit, prompt.text, overlay_png, seed, timeout)
        response = future.result(timeout=timeout)
    except Exception as e:  # noqa: BLE001 - every backend failure folds to the safe default
        reason = "selector_timeout" if isinstance(e, (TimeoutError, FutureTimeout)) else "selector_error"
        _notify(notify, {"type": "roc_notify", "reason": reason, "detail": str(e), "seed": seed})
        return Decision(parse_status="defaulted", latency_s=time.perf_counter() - t0)
    finally:
        pool.shutdown(wait=False)
    latency = response.latency_s if response.latency_s is not None else time.perf_counter() - t0
    decision = parse_decision(response.text, K, out_of_range_to_zero=out_of_range_to_zero)
    decision = replace(decision, latency_s=latency)
    if decision.parse_status == "defaulted":
        _notify(notify, {"type": "roc_notify", "reason": "invalid_response", "seed": seed})
    return decision


def aggregate_votes(choices: Sequence[int], K: int) -> tuple:
    """Tallies and strict-majority winner over per-seed choices (ties pick 0)."""
    tallies = {k: 0 for k in range(K + 1)}
    for c in choices:
        tallies[c] = tallies.get(c, 0) + 1
    n = len(choices)
    top = max(tallies.values()) if tallies else 0
    if top > n // 2:
        winner = min(k for k, v in tallies.items() if v == top)
        return winner, tallies, True
    return 0, tallies, False


def select_fbn(
    backend: TextBackend,
    overlay_png: Optional[bytes],
    K: int,
    prompt: SelectorPrompt,
    n: int,
    seeds: Sequence[int],
    timeout: float = 60.0,
    notify: Optional[NotificationSink] = None,
    out_of_range_to_zero: bool = False,
    max_workers: Optional[int] = None,
) -> VoteRecord:
    """n independent calls with distinct seeds, aggregated by strict majority."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(seeds) != n or len(set(seeds)) != n:
        raise ValueError("seeds must be n distinct values")
    workers = max_workers or n
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                select_fb1, backend, overlay_png, K, prompt, timeout, seed, notify,
                out_of_range_to_zero,
            )
            for seed in seeds
        ]
        decisions = tuple(f.result() for f in futures)
    winner, tallies, majority_met = aggregate_votes([d.choice_id for d in decisions], K)
    return VoteRecord(decisions=decisions, tallies=tallies, winner=winner, majority_met=majority_met)


BASELINE_POLICIES = ("keep-station", "keep-course", "keep-starboard", "forward", "clearance")


def baseline_select(policy: str, cset: CandidateSet) -> int:
    """Geometry-only selection over the gated set; empty sets map to 0.

    keep-course minimizes |bearing|, keep-starboard maximizes bearing
    (starboard positive), forward maximizes endpoint x, clearance maximizes
    the minimum pixel clearance along visible samples. Ties break to the
    smaller id.
    """
    if policy not in BASELINE_POLICIES:
        raise ValueError(f"unknown baseline policy {policy!r}")
    if policy == "keep-station" or len(cset) == 0:
        return 0
    scores = {
        "keep-course": lambda c: -abs(c.bearing),
        "keep-starboard": lambda c: c.bearing,
        "forward": lambda c: c.endpoint_body.x,
        "clearance": lambda c: c.min_clearance,
    }[policy]
    best = None
    best_score = -math.inf
    for cand in sorted(cset.candidates, key=lambda c: c.id):
        s = scores(cand)
        if s > best_score:
            best, best_score = cand, s
    return best.id
