"""Command-line entry points.

Subcommands: calibrate-monitor, score, gen-candidates, eval-offline,
serve-session, report. Configuration comes from one JSON or TOML file;
backend credentials come from environment variables named in that file.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from .backends import (
    HashingEmbedder,
    HttpChatBackend,
    HttpEmbedder,
    ReplayBackend,
    ReplayEmbedder,
    ScriptedBackend,
    TextBackend,
)
from .monitor import (
    DEFAULT_ALPHA,
    EmbeddingCache,
    anomaly_score,
    calibrate_threshold,
    classify,
    describe_scene,
)
from .scenario import load_corpus, load_scenario
from .suite import SuiteConfig, run_offline_suite


def load_config(path) -> dict:
    path = str(path)
    with open(path, "rb") as f:
        if path.endswith(".toml"):
            try:
                import tomllib  # Python 3.11+
            except ModuleNotFoundError:
                import tomli as tomllib
            return tomllib.load(f)
        return json.load(f)


def backend_from_spec(spec: dict) -> TextBackend:
    kind = spec.get("type", "http")
    if kind == "scripted":
        return ScriptedBackend(spec["text"], name=spec.get("name", "scripted"),
                               latency_s=float(spec.get("latency_s", 0.0)))
    if kind == "replay":
        return ReplayBackend.load(spec["records"], name=spec.get("name", "replay"))
    if kind == "http":
        return HttpChatBackend(
            model=spec["model"],
            base_url=spec.get("base_url", "https://api.openai.com/v1"),
            api_key_env=spec.get("api_key_env", "HELMGUARD_API_KEY"),
            name=spec.get("name"),
        )
    raise click.ClickException(f"unknown backend type {kind!r}")


def embedder_from_spec(spec: dict):
    kind = spec.get("type", "hashing")
    if kind == "hashing":
        return HashingEmbedder(dim=int(spec.get("dim", 64)))
    if kind == "replay":
        return ReplayEmbedder.load(spec["records"])
    if kind == "http":
        return HttpEmbedder(
            model=spec["model"],
            base_url=spec.get("base_url", "https://api.openai.com/v1"),
            api_key_env=spec.get("api_key_env", "HELMGUARD_API_KEY"),
        )
    raise click.ClickException(f"unknown embedder type {kind!r}")


@click.group()
def main():
    """Fallback maneuver stack for small autonomous surface vessels."""


@main.command("calibrate-monitor")
@click.option("--images", "images_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of nominal frames to describe and embed.")
@click.option("--sentences", type=click.Path(exists=True), default=None,
              help="JSONL of {id, sentence} records to embed.")
@click.option("--vectors", type=click.Path(exists=True), default=None,
              help="JSONL of {id, vector} records (already embedded).")
@click.option("--out", required=True, type=click.Path(), help="Cache file to write.")
@click.option("--alpha", default=DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Config naming describer/embedder backends (default: mocks).")
def calibrate_monitor(images_dir, sentences, vectors, out, alpha, config_path):
    """Build the nominal embedding cache and calibrate its threshold."""
    provided = [x for x in (images_dir, sentences, vectors) if x is not None]
    if len(provided) != 1:
        raise click.ClickException("provide exactly one of --images, --sentences, --vectors")
    cfg = load_config(config_path) if config_path else {}
    if images_dir is not None:
        exts = (".png", ".pgm", ".jpg", ".jpeg")
        names = sorted(n for n in os.listdir(images_dir) if n.lower().endswith(exts))
        if not names:
            raise click.ClickException(f"no image files in {images_dir}")
        describer = backend_from_spec(cfg.get("describer", {"type": "http",
                                                            "model": "gpt-4o"}))
        embedder = embedder_from_spec(cfg.get("embedder", {}))
        ids, rows_mat = [], []
        for name in names:
            with open(os.path.join(images_dir, name), "rb") as f:
                sentence = describe_scene(describer, f.read())
            ids.append(name)
            rows_mat.append(embedder.embed(sentence))
        mat = np.array(rows_mat, dtype=float)
    else:
        rows = []
        path = sentences or vectors
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        if not rows:
            raise click.ClickException("no records in input file")
        ids = [str(r.get("id", i)) for i, r in enumerate(rows)]
        if vectors is not None:
            mat = np.array([r["vector"] for r in rows], dtype=float)
        else:
            embedder = embedder_from_spec(cfg.get("embedder", {}))
            mat = np.array([embedder.embed(r["sentence"]) for r in rows], dtype=float)
    cache = EmbeddingCache(vectors=mat, source_ids=tuple(ids))
    tau = calibrate_threshold(cache, alpha=alpha)
    cache.save(out)
    sidecar = out + ".json"
    with open(sidecar, "r", encoding="utf-8") as f:
        meta = json.load(f)
    meta.update(alpha=alpha, tau=tau)
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    click.echo(f"cache: {cache.n} vectors (d={cache.dim}); tau={tau:.6f} at alpha={alpha}")


@main.command("score")
@click.option("--cache", "cache_path", required=True, type=click.Path(exists=True))
@click.option("--vector", default=None, help="JSON array literal of the query embedding.")
@click.option("--sentence", default=None, help="Sentence to embed with the configured embedder.")
@click.option("--image", "image_path", type=click.Path(exists=True), default=None,
              help="Image to describe and embed with the configured backends.")
@click.option("--tau", default=None, type=float,
              help="Override the calibrated threshold from the cache sidecar.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def score(cache_path, vector, sentence, image_path, tau, config_path):
    """Score one observation against the nominal cache and classify it."""
    provided = [x for x in (vector, sentence, image_path) if x is not None]
    if len(provided) != 1:
        raise click.ClickException("provide exactly one of --vector, --sentence, --image")
    cache = EmbeddingCache.load(cache_path)
    if tau is None:
        try:
            with open(cache_path + ".json", "r", encoding="utf-8") as f:
                tau = float(json.load(f)["tau"])
        except (FileNotFoundError, KeyError) as e:
            raise click.ClickException("no calibrated tau in sidecar; pass --tau") from e
    cfg = load_config(config_path) if config_path else {}
    if vector is not None:
        e_t = np.array(json.loads(vector), dtype=float)
    elif sentence is not None:
        e_t = embedder_from_spec(cfg.get("embedder", {})).embed(sentence)
    else:
        describer = backend_from_spec(cfg.get("describer", {"type": "http", "model": "gpt-4o"}))
        with open(image_path, "rb") as f:
            png = f.read()
        text = describe_scene(describer, png)
        click.echo(f"description: {text}")
        e_t = embedder_from_spec(cfg.get("embedder", {})).embed(text)
    s = anomaly_score(e_t, cache)
    verdict = classify(e_t, cache, tau)
    click.echo(f"score={s:.6f} tau={tau:.6f} verdict={verdict}")
    sys.exit(0 if verdict == "nominal" else 2)


@main.command("gen-candidates")
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def gen_candidates(scenario_path, out):
    """Generate, gate, and overlay candidates for one scenario."""
    from .suite import prepare_scene

    scenario = load_scenario(scenario_path)
    ps = prepare_scene(scenario)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"{scenario.scene_id}-candidates.json"), "w",
              encoding="utf-8") as f:
        f.write(ps.cset.to_json())
    with open(os.path.join(out, f"{scenario.scene_id}-overlay.png"), "wb") as f:
        f.write(ps.overlay_png)
    click.echo(f"{scenario.scene_id}: {ps.k} candidates (station-keeping is id 0)")


@main.command("eval-offline")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Config with models{}, optional judge{}, n_seeds, variant, timeout_s.")
def eval_offline(corpus_dir, out, config_path):
    """Run the full offline evaluation suite over a scenario corpus."""
    cfg = load_config(config_path)
    models = cfg.get("models", {})
    if not models:
        raise click.ClickException("config has no models")
    backends = {name: backend_from_spec(spec) for name, spec in models.items()}
    judge = backend_from_spec(cfg["judge"]) if cfg.get("judge") else None
    suite_cfg = SuiteConfig(
        out_dir=out,
        n_seeds=int(cfg.get("n_seeds", 3)),
        seed_base=int(cfg.get("seed_base", 0)),
        variant=cfg.get("variant", "conservative"),
        timeout_s=float(cfg.get("timeout_s", 60.0)),
        horizons=tuple(cfg.get("horizons", (10.0, 30.0, 60.0))),
        tau_acc=float(cfg.get("tau_acc", 0.6)),
        out_of_range_to_zero=bool(cfg.get("out_of_range_to_zero", False)),
    )
    scenarios = load_corpus(corpus_dir)
    report = run_offline_suite(scenarios, backends, suite_cfg, judge_backend=judge)
    click.echo(f"{report['suite']['scene_count']} scenes; "
               f"{report['decision_log']['records']} decision records; "
               f"report in {out}")


@main.command("report")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(exists=True),
              help="Suite output directory with decisions.jsonl.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def report_cmd(corpus_dir, out, config_path):
    """Rebuild report files (tables, markdown, figures) from existing logs."""
    cfg = load_config(config_path) if config_path else {}
    models = sorted(cfg.get("models", {}))
    from .report import write_report
    from .suite import build_report, prepare_scene, _read_jsonl

    scenarios = load_corpus(corpus_dir)
    prepared = {s.scene_id: prepare_scene(s) for s in scenarios}
    records = _read_jsonl(os.path.join(out, "decisions.jsonl"))
    if not models:
        models = sorted({r["model"] for r in records})
    suite_cfg = SuiteConfig(out_dir=out, n_seeds=int(cfg.get("n_seeds", 3)))
    rep = build_report(prepared, records, suite_cfg, backends=models)
    write_report(rep, out)
    click.echo(f"report rebuilt from {len(records)} decision records")


@main.command("serve-session")
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Config with selector{} backend spec and engine knobs.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8777, show_default=True, type=int)
@click.option("--token", default=None, help="Static token clients must present.")
@click.option("--tick-hz", default=20.0, show_default=True, type=float)
@click.option("--auto-alert", is_flag=True, default=False,
              help="Wire the anomaly monitor to raise the alert (default: manual alert).")
def serve_session(scenario_path, config_path, host, port, token, tick_hz, auto_alert):
    """Serve one live session over the WebSocket protocol."""
    import uvicorn

    from .service import AutoMonitor, SelectorConfig, SessionEngine, SessionRunner, create_app

    cfg = load_config(config_path) if config_path else {}
    selector_spec = cfg.get("selector")
    selector = None
    if selector_spec:
        selector = SelectorConfig(
            backend=backend_from_spec(selector_spec),
            variant=selector_spec.get("variant", "conservative"),
            timeout_s=float(selector_spec.get("timeout_s", 60.0)),
            out_of_range_to_zero=bool(selector_spec.get("out_of_range_to_zero", False)),
        )
    auto_monitor = None
    if auto_alert:
        mon = cfg.get("monitor")
        if not mon:
            raise click.ClickException("--auto-alert needs a monitor{} section in the config")
        cache = EmbeddingCache.load(mon["cache"])
        try:
            with open(mon["cache"] + ".json", "r", encoding="utf-8") as f:
                tau = float(json.load(f)["tau"])
        except (FileNotFoundError, KeyError) as e:
            raise click.ClickException("monitor cache sidecar has no calibrated tau") from e
        auto_monitor = AutoMonitor(
            cache=cache,
            tau=float(mon.get("tau", tau)),
            describer=backend_from_spec(mon.get("describer", {"type": "http",
                                                              "model": "gpt-4o"})),
            embedder=embedder_from_spec(mon.get("embedder", {})),
            period_s=float(mon.get("period_s", 5.0)),
        )
    scenario = load_scenario(scenario_path)
    engine = SessionEngine(
        scenario,
        selector_cfg=selector,
        dt=1.0 / tick_hz,
        selector_async=True,
        auto_monitor=auto_monitor,
    )
    token = token or os.environ.get("HELMGUARD_TOKEN") or None
    app = create_app(engine, token=token)
    runner = SessionRunner(engine)
    runner.start()
    click.echo(f"serving session for {scenario.scene_id} on ws://{host}:{port}/ws")
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        runner.stop()


if __name__ == "__main__":
    main()
