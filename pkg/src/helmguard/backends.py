"""Pluggable model backends: hosted HTTP, deterministic scripted, and replay.

A text backend turns (prompt, overlay image, seed) into raw text. The
scripted and replay implementations keep every test and offline rerun off
the network; the HTTP adapter targets OpenAI-style chat endpoints. Replay
records are keyed by a hash of the full request so identical pipelines hit
identical records.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import requests


class BackendError(RuntimeError):
    """A backend call failed (network, missing record, injected fault)."""


@dataclass(frozen=True)
class BackendResponse:
    text: str
    # None means the caller should measure wall time (hosted backends).
    latency_s: Optional[float] = None


def request_key(prompt: str, image_png: Optional[bytes], seed: Optional[int]) -> str:
    h = hashlib.sha256()
    h.update(prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(image_png or b"")
    h.update(b"\x00")
    h.update(str(seed).encode("utf-8"))
    return h.hexdigest()


class TextBackend:
    """Interface: submit a prompt (+ optional PNG overlay, seed) and get raw text."""

    name = "backend"

    def submit(self, prompt: str, image_png: Optional[bytes], seed: Optional[int],
               timeout: float) -> BackendResponse:
        raise NotImplementedError


class ScriptedBackend(TextBackend):
    """Deterministic in-process backend for tests and demos.

    responder is either a fixed string or a callable (prompt, image_png, seed)
    -> str; it may raise to inject faults. delay_s sleeps before responding so
    timeout paths can be exercised for real.
    """

    def __init__(self, responder, name: str = "scripted", latency_s: float = 0.0,
                 delay_s: float = 0.0):
        self.responder = responder
        self.name = name
        self.latency_s = latency_s
        self.delay_s = delay_s
        self.calls = 0
        self._lock = threading.Lock()

    def submit(self, prompt, image_png, seed, timeout):
        with self._lock:
            self.calls += 1
        if self.delay_s:
            time.sleep(self.delay_s)
        text = self.responder(prompt, image_png, seed) if callable(self.responder) else self.responder
        return BackendResponse(text=str(text), latency_s=self.latency_s)


class ReplayBackend(TextBackend):
    """Serves recorded responses; a missing record is a hard error."""

    def __init__(self, records: dict, name: str = "replay"):
        self.records = dict(records)
        self.name = name
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path, name: str = "replay") -> "ReplayBackend":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f), name=name)

    def submit(self, prompt, image_png, seed, timeout):
        with self._lock:
            self.calls += 1
        key = request_key(prompt, image_png, seed)
        try:
            rec = self.records[key]
        except KeyError:
            raise BackendError(f"no recorded response for request {key[:12]}…") from None
        return BackendResponse(text=rec["text"], latency_s=float(rec.get("latency_s", 0.0)))


class RecordingBackend(TextBackend):
    """Wraps another backend and captures its responses for later replay."""

    def __init__(self, inner: TextBackend, path):
        self.inner = inner
        self.path = path
        self.name = inner.name
        self.records: dict = {}
        self._lock = threading.Lock()
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                self.records = json.load(f)

    def submit(self, prompt, image_png, seed, timeout):
        t0 = time.perf_counter()
        resp = self.inner.submit(prompt, image_png, seed, timeout)
        latency = resp.latency_s if resp.latency_s is not None else time.perf_counter() - t0
        key = request_key(prompt, image_png, seed)
        with self._lock:
            self.records[key] = {"text": resp.text, "latency_s": latency}
        return BackendResponse(text=resp.text, latency_s=latency)

    def flush(self) -> None:
        with self._lock:
            with open(self.path, "w", encoding="utf-8") as f:
                json.dump(self.records, f, indent=1, sort_keys=True)


class HttpChatBackend(TextBackend):
    """OpenAI-style chat-completions adapter.

    The seed is forwarded when the service supports request-level randomness
    control; services that ignore it still see a distinct per-call nonce
    header so repeated calls are distinguishable in provider logs.
    """

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1",
                 api_key_env: str = "HELMGUARD_API_KEY", name: Optional[str] = None):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.name = name or model

    def _payload(self, prompt: str, image_png: Optional[bytes], seed: Optional[int]) -> dict:
        content: list = [{"type": "text", "text": prompt}]
        if image_png is not None:
            import base64

            b64 = base64.b64encode(image_png).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
            )
        payload = {"model": self.model, "messages": [{"role": "user", "content": content}]}
        if seed is not None:
            payload["seed"] = int(seed)
        return payload

    def submit(self, prompt, image_png, seed, timeout):
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise BackendError(f"missing API key in ${self.api_key_env}")
        headers = {"Authorization": f"Bearer {key}"}
        if seed is not None:
            headers["X-Request-Nonce"] = str(seed)
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=self._payload(prompt, image_png, seed),
                headers=headers,
                timeout=timeout,
            )
            resp.raise_for_status()
            body = resp.json()
            return BackendResponse(text=body["choices"][0]["message"]["content"])
        except requests.RequestException as e:
            raise BackendError(f"http backend failed: {e}") from e
        except (KeyError, IndexError, ValueError) as e:
            raise BackendError(f"malformed http response: {e}") from e


class EmbeddingBackend:
    """Interface: map a sentence to a fixed-dimension embedding vector."""

    name = "embedder"

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashingEmbedder(EmbeddingBackend):
    """Deterministic mock embedder: text hash seeds a Gaussian vector."""

    def __init__(self, dim: int = 64, name: str = "hashing-embedder"):
        self.dim = dim
        self.name = name

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim)


class ReplayEmbedder(EmbeddingBackend):
    def __init__(self, records: dict, name: str = "replay-embedder"):
        self.records = {k: np.asarray(v, dtype=float) for k, v in records.items()}
        self.name = name

    @classmethod
    def load(cls, path) -> "ReplayEmbedder":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.records[text]
        except KeyError:
            raise BackendError(f"no recorded embedding for {text!r}") from None


class HttpEmbedder(EmbeddingBackend):
    """OpenAI-style embeddings adapter."""

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1",
                 api_key_env: str = "HELMGUARD_API_KEY", timeout: float = 30.0):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.name = model

    def embed(self, text: str) -> np.ndarray:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise BackendError(f"missing API key in ${self.api_key_env}")
        try:
            resp = requests.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
        except requests.RequestException as e:
            raise BackendError(f"http embedder failed: {e}") from e
        except (KeyError, IndexError, ValueError) as e:
            raise BackendError(f"malformed embedding response: {e}") from e


# Events emitted toward the operator are plain dicts pushed into a sink; the
# sink must tolerate concurrent calls (FB-n workers emit in parallel).
NotificationSink = Callable[[dict], None]
