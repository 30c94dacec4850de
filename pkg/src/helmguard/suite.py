"""Batch orchestration of the offline experiments over a scenario corpus.

For every scene the suite generates candidates, renders the overlay, runs the
n-seed selector ensemble for each configured model plus the five geometry
baselines, scores alignment against the rater consensus, computes hazard
risk relief where annotated, and optionally judges the free-text reports.
Every selector and judge call lands in an append-only JSONL log keyed by
(model, scene, seed); completed keys are skipped on rerun, so a finished
suite replays to byte-identical reports with zero new backend calls.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .backends import BackendError, TextBackend
from .candidates import generate_candidates
from .evaluate import (
    JudgingError,
    alignment_metrics,
    build_consensus,
    judge_aggregate,
    risk_relief_for_choice,
    wilson_interval,
)
from .overlay import png_bytes, render_overlay
from .report import write_report
from .selector import (
    BASELINE_POLICIES,
    aggregate_votes,
    baseline_select,
    build_prompt,
    select_fb1,
)


@dataclass(frozen=True)
class SuiteConfig:
    out_dir: str
    n_seeds: int = 3
    seed_base: int = 0
    variant: str = "conservative"
    timeout_s: float = 60.0
    horizons: tuple = (10.0, 30.0, 60.0)
    tau_acc: float = 0.6
    out_of_range_to_zero: bool = False
    judge_seed: int = 0

    @property
    def seeds(self) -> list:
        return [self.seed_base + i for i in range(self.n_seeds)]


@dataclass
class PreparedScene:
    scenario: object
    cset: object
    overlay_png: bytes
    k: int


def _read_jsonl(path) -> list:
    if not os.path.exists(path):
        return []
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _append_jsonl(path, record) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def prepare_scene(scenario) -> PreparedScene:
    grid = scenario.water_grid()
    cset = generate_candidates(grid, scenario.camera, scenario.pose, scenario.sampling)
    overlay = render_overlay(scenario.base_image(), cset)
    return PreparedScene(scenario=scenario, cset=cset, overlay_png=png_bytes(overlay),
                         k=len(cset))


def run_offline_suite(scenarios, backends: dict, cfg: SuiteConfig,
                      judge_backend: TextBackend = None) -> dict:
    """Run (or resume) the full offline experiment and write the report files.

    backends maps a model name to its TextBackend. Returns the report dict;
    report.json/report.md, per-table CSVs, and figures land in cfg.out_dir.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    for sub in ("overlays", "candidates", "tables", "figures"):
        os.makedirs(os.path.join(cfg.out_dir, sub), exist_ok=True)
    decisions_path = os.path.join(cfg.out_dir, "decisions.jsonl")
    judgments_path = os.path.join(cfg.out_dir, "judgments.jsonl")

    prepared = {}
    for scenario in scenarios:
        ps = prepare_scene(scenario)
        prepared[scenario.scene_id] = ps
        with open(os.path.join(cfg.out_dir, "overlays", f"{scenario.scene_id}.png"), "wb") as f:
            f.write(ps.overlay_png)
        with open(os.path.join(cfg.out_dir, "candidates", f"{scenario.scene_id}.json"),
                  "w", encoding="utf-8") as f:
            f.write(ps.cset.to_json())

    done = {(r["model"], r["scene_id"], r["seed"]) for r in _read_jsonl(decisions_path)}
    notifications = []
    call_gaps = []
    for scene_id in sorted(prepared):
        ps = prepared[scene_id]
        prompt = build_prompt(cfg.variant, ps.k)
        for model in sorted(backends):
            for seed in cfg.seeds:
                if (model, scene_id, seed) in done:
                    continue
                call_notes = []

                def note(event, m=model, s=scene_id, sink=call_notes):
                    sink.append(event)
                    notifications.append({**event, "model": m, "scene_id": s})

                decision = select_fb1(
                    backends[model], ps.overlay_png, ps.k, prompt,
                    timeout=cfg.timeout_s, seed=seed, notify=note,
                    out_of_range_to_zero=cfg.out_of_range_to_zero,
                )
                # Backend exhaustion (errors, timeouts) leaves an explicit gap
                # instead of a fabricated station-keep vote; the triple stays
                # out of the log so a later rerun retries it. Invalid model
                # output and empty candidate sets are real outcomes and are
                # logged as the safe default.
                failure = next((n["reason"] for n in call_notes
                                if n.get("reason") in ("selector_error", "selector_timeout")),
                               None)
                if failure is not None:
                    call_gaps.append({"model": model, "scene_id": scene_id, "seed": seed,
                                      "reason": failure})
                    continue
                record = {
                    "model": model,
                    "scene_id": scene_id,
                    "seed": seed,
                    "variant": cfg.variant,
                    "k_scene": ps.k,
                    **decision.to_dict(),
                }
                _append_jsonl(decisions_path, record)

    records = _read_jsonl(decisions_path)
    report = build_report(prepared, records, cfg, backends=sorted(backends),
                          call_gaps=call_gaps)

    if judge_backend is not None:
        judged = {(r["model"], r["scene_id"], r["seed"]): r for r in _read_jsonl(judgments_path)}
        for r in records:
            if r["scene_id"] not in prepared:
                continue  # stale log entry from a scene no longer in the corpus
            scenario = prepared[r["scene_id"]].scenario
            if not scenario.policy_text:
                continue
            key = (r["model"], r["scene_id"], r["seed"])
            if key in judged:
                continue
            entry = {"model": r["model"], "scene_id": r["scene_id"], "seed": r["seed"]}
            try:
                scores = judge_aggregate(
                    judge_backend, scenario.policy_text,
                    {"see": r["see"], "implications": r["implications"], "action": r["action"]},
                    seed=cfg.judge_seed,
                )
                entry.update(hazard=scores.hazard, implication=scores.implication,
                             action=scores.action, error=None)
            except JudgingError as e:
                # Off-rubric output is a recorded per-scene error, never a default.
                entry.update(hazard=None, implication=None, action=None, error=str(e))
            except BackendError as e:
                # Judge exhaustion: leave a retryable gap rather than a verdict.
                report["gaps"]["failed_calls"].append(
                    {"model": r["model"], "scene_id": r["scene_id"], "seed": r["seed"],
                     "reason": f"judge_error: {e}"})
                continue
            _append_jsonl(judgments_path, entry)
            judged[key] = entry
        report["awareness"] = _awareness_table(judged, records)
        report["judging_errors"] = sorted(
            (
                {"scene_id": e["scene_id"], "model": e["model"], "seed": e["seed"],
                 "error": e["error"]}
                for e in judged.values() if e.get("error")
            ),
            key=lambda e: (e["model"], e["scene_id"], e["seed"]),
        )

    write_report(report, cfg.out_dir)
    report["notifications"] = notifications
    return report


def _mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs) if xs else 0.0


def _awareness_table(judged: dict, records: list) -> list:
    from .evaluate import JudgeScores, awareness

    latency = {}
    for r in records:
        latency[(r["model"], r["scene_id"], r["seed"])] = r["latency_s"]
    by_model = {}
    for key, entry in judged.items():
        if entry.get("error"):
            continue
        by_model.setdefault(entry["model"], []).append(
            (JudgeScores(entry["hazard"], entry["implication"], entry["action"]),
             latency.get(key, 0.0))
        )
    table = []
    for model in sorted(by_model):
        rows = by_model[model]
        table.append({
            "model": model,
            "n_calls": len(rows),
            "awareness_mean": _mean(awareness(s) for s, _ in rows),
            "hazard_mean": _mean(s.hazard for s, _ in rows),
            "implication_mean": _mean(s.implication for s, _ in rows),
            "action_mean": _mean(s.action for s, _ in rows),
            "mean_latency_s": _mean(lat for _, lat in rows),
        })
    table.sort(key=lambda row: row["awareness_mean"])
    return table


def build_report(prepared: dict, records: list, cfg: SuiteConfig, backends: list,
                 call_gaps: list = ()) -> dict:
    """Aggregate the decision log into alignment, risk-relief, and scene tables.

    (model, scene) pairs without a complete seed set are excluded from the
    aggregates and reported as gaps, so a partially-run suite stays honest.
    """
    by_model_scene = {}
    latencies = {}
    seed_set = set(cfg.seeds)
    for r in records:
        if r["seed"] in seed_set:
            by_model_scene.setdefault((r["model"], r["scene_id"]), []).append(r)
            latencies.setdefault(r["model"], []).append(r["latency_s"])

    consensus = {}
    for scene_id, ps in prepared.items():
        if ps.scenario.ratings is not None:
            consensus[scene_id] = build_consensus(ps.scenario.ratings, tau_acc=cfg.tau_acc)

    scenes = {}
    baseline_choices = {policy: {} for policy in BASELINE_POLICIES}
    for scene_id in sorted(prepared):
        ps = prepared[scene_id]
        for policy in BASELINE_POLICIES:
            baseline_choices[policy][scene_id] = baseline_select(policy, ps.cset)
        scenes[scene_id] = {
            "k": ps.k,
            "anomaly_label": ps.scenario.anomaly_label,
            "has_ratings": ps.scenario.ratings is not None,
            "has_hazard": ps.scenario.hazard is not None,
            "consensus": None if scene_id not in consensus else {
                "accept": sorted(consensus[scene_id].accept),
                "best": sorted(consensus[scene_id].best),
                "theta": consensus[scene_id].theta,
                "votes": {str(k): v for k, v in sorted(consensus[scene_id].votes.items())},
            },
            "baseline_choices": {p: baseline_choices[p][scene_id] for p in BASELINE_POLICIES},
            "model_choices": {},
        }

    model_choices = {}
    incomplete = []
    for model in backends:
        choices = {}
        for scene_id, ps in sorted(prepared.items()):
            calls = sorted(by_model_scene.get((model, scene_id), []), key=lambda r: r["seed"])
            if len(calls) < cfg.n_seeds:
                if calls:
                    incomplete.append({"model": model, "scene_id": scene_id,
                                       "recorded_calls": len(calls),
                                       "expected_calls": cfg.n_seeds})
                continue
            votes = [r["choice_id"] for r in calls]
            winner, tallies, met = aggregate_votes(votes, K=calls[0]["k_scene"])
            choices[scene_id] = winner
            scenes[scene_id]["model_choices"][model] = {
                "winner": winner,
                "votes": votes,
                "majority_met": met,
            }
        model_choices[model] = choices

    alignment = []
    methods = [(f"fb{cfg.n_seeds}:{m}", model_choices[m], _mean(latencies.get(m, [])))
               for m in backends]
    methods += [(policy, baseline_choices[policy], 0.0) for policy in BASELINE_POLICIES]
    for method, choices, mean_latency in methods:
        res = alignment_metrics(choices, consensus)
        if res.n_scenes == 0:
            continue
        alignment.append({
            "method": method,
            "n_scenes": res.n_scenes,
            "accept_at_1": res.accept_at_1,
            "accept_ci": list(wilson_interval(res.accept_successes, res.n_scenes)),
            "best_at_1": res.best_at_1,
            "best_ci": list(wilson_interval(res.best_successes, res.n_scenes)),
            "mean_latency_s": mean_latency,
            "excluded_scenes": list(res.excluded_scenes),
        })
    alignment.sort(key=lambda row: (row["accept_at_1"], row["best_at_1"], row["method"]))

    hazard_scenes = [sid for sid in sorted(prepared) if prepared[sid].scenario.hazard is not None]
    risk = []
    if hazard_scenes:
        risk_methods = [(f"fb{cfg.n_seeds}:{m}", model_choices[m]) for m in backends]
        risk_methods += [(policy, baseline_choices[policy]) for policy in BASELINE_POLICIES]
        for method, choices in risk_methods:
            per_h = {}
            usable = [sid for sid in hazard_scenes if sid in choices]
            if not usable:
                continue
            for horizon in cfg.horizons:
                deltas = []
                for sid in usable:
                    ps = prepared[sid]
                    deltas.append(risk_relief_for_choice(
                        ps.cset, choices[sid], ps.scenario.hazard, horizon))
                per_h[f"{horizon:g}"] = {
                    "mean": _mean(deltas), "min": min(deltas), "max": max(deltas),
                }
            risk.append({"method": method, "n_scenes": len(usable), "horizons": per_h})

    defaulted = sum(1 for r in records if r["parse_status"] == "defaulted")
    gaps = {
        "failed_calls": sorted(
            ({"model": g["model"], "scene_id": g["scene_id"], "seed": g["seed"],
              "reason": g["reason"]} for g in call_gaps),
            key=lambda g: (g["model"], g["scene_id"], g["seed"]),
        ),
        "incomplete_model_scenes": sorted(
            incomplete, key=lambda g: (g["model"], g["scene_id"])),
    }
    return {
        "suite": {
            "n_seeds": cfg.n_seeds,
            "seeds": cfg.seeds,
            "variant": cfg.variant,
            "horizons": list(cfg.horizons),
            "tau_acc": cfg.tau_acc,
            "models": list(backends),
            "baselines": list(BASELINE_POLICIES),
            "scene_count": len(prepared),
        },
        "scenes": scenes,
        "alignment": alignment,
        "risk_relief": risk,
        "awareness": [],
        "judging_errors": [],
        "gaps": gaps,
        "decision_log": {
            "records": len(records),
            "defaulted": defaulted,
        },
    }
