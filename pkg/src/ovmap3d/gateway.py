"""Uniform access to text-embedding and chat (LLM/VLM) services.

Three interchangeable modes back the same interface:

* ``HttpGateway`` speaks a chat-completions-style HTTP protocol, resolving
  image file references to base64 data URLs at send time;
* ``MockGateway`` returns hash-seeded deterministic unit embeddings and
  scripted chat replies, so the whole test suite runs offline;
* ``ReplayGateway`` serves previously recorded request/response pairs
  byte-for-byte, making any recorded run bit-reproducible.

``RecordingGateway`` wraps another gateway and appends every exchange to a
length-prefixed replay log.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, GatewayError, TransportError


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str = "http://127.0.0.1:8080/v1"
    model: str = "local-model"
    embed_model: str = "local-embed"
    timeout_s: float = 30.0
    max_retries: int = 2
    auth_env: str = "OVMAP3D_API_TOKEN"
    embed_dim: int = 64
    max_inflight: int = 4

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("retries must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")


@dataclass(frozen=True)
class Message:
    """One chat turn; images are file references resolved only when sent."""

    role: str
    text: str
    images: tuple = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "images", tuple(self.images))

    def to_dict(self):
        return {"role": self.role, "text": self.text, "images": list(self.images)}


@dataclass
class ChatExchange:
    messages: list
    reply: str
    latency_ms: float


def request_key(messages) -> str:
    body = json.dumps([m.to_dict() for m in messages], sort_keys=True)
    return hashlib.sha256(body.encode()).hexdigest()


class LanguageGateway:
    """Caching base: subclasses implement ``_embed`` and ``_chat``.

    Safe to share across workers: responses are cached by request hash and
    a semaphore caps concurrent in-flight requests at ``max_inflight``.
    """

    def __init__(self, max_inflight: int = 4):
        self._embed_cache: dict[str, np.ndarray] = {}
        self._chat_cache: dict[str, str] = {}
        self._cache_lock = threading.Lock()
        self._inflight = threading.Semaphore(max_inflight)
        self.history: list[ChatExchange] = []

    def embed_text(self, prompt: str) -> np.ndarray:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        with self._cache_lock:
            cached = self._embed_cache.get(prompt)
        if cached is not None:
            return cached
        with self._inflight:
            vec = np.asarray(self._embed(prompt), dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm <= 0:
            raise GatewayError("embedding service returned a zero vector")
        vec = vec / norm
        with self._cache_lock:
            return self._embed_cache.setdefault(prompt, vec)

    def chat(self, messages) -> str:
        messages = [
            m if isinstance(m, Message) else Message(**m) for m in messages
        ]
        key = request_key(messages)
        with self._cache_lock:
            if key in self._chat_cache:
                return self._chat_cache[key]
        with self._inflight:
            t0 = time.perf_counter()
            reply = self._chat(messages)
            latency = (time.perf_counter() - t0) * 1000.0
        with self._cache_lock:
            if key not in self._chat_cache:
                self._chat_cache[key] = reply
                self.history.append(ChatExchange(messages, reply, latency))
            return self._chat_cache[key]

    def _embed(self, prompt: str) -> np.ndarray:
        raise NotImplementedError

    def _chat(self, messages) -> str:
        raise NotImplementedError


def seeded_unit_vector(seed: int, prompt: str, dim: int) -> np.ndarray:
    """Deterministic unit vector from (seed, prompt); stable across runs."""
    digest = hashlib.sha256(f"{seed}:{prompt}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class MockGateway(LanguageGateway):
    """Offline gateway: deterministic embeddings plus scripted replies.

    ``chat_handler(messages) -> str`` takes precedence; otherwise ``script``
    is scanned as (substring, reply) pairs against the last message text.
    """

    def __init__(self, dim=64, seed=0, chat_handler=None, script=()):
        super().__init__()
        self.dim = dim
        self.seed = seed
        self.chat_handler = chat_handler
        self.script = list(script)

    def _embed(self, prompt: str) -> np.ndarray:
        return seeded_unit_vector(self.seed, prompt, self.dim)

    def _chat(self, messages) -> str:
        if self.chat_handler is not None:
            return self.chat_handler(messages)
        text = messages[-1].text
        for pattern, reply in self.script:
            if pattern in text:
                return reply
        raise GatewayError("no scripted reply matches the prompt")


class HttpGateway(LanguageGateway):
    """Chat-completions-style HTTP client with bounded retries."""

    def __init__(self, config: GatewayConfig):
        super().__init__(max_inflight=config.max_inflight)
        self.config = config

    def _headers(self):
        import os

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        import requests

        url = self.config.endpoint.rstrip("/") + path
        last = None
        for _ in range(self.config.max_retries + 1):
            try:
                resp = requests.post(
                    url,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout_s,
                )
                resp.raise_for_status()
                return resp.json()
            except Exception as exc:  # noqa: BLE001 - collapse to transport
                last = exc
        raise TransportError(f"POST {url} failed after retries: {last}")

    def _embed(self, prompt: str) -> np.ndarray:
        data = self._post(
            "/embeddings",
            {"model": self.config.embed_model, "input": prompt},
        )
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embedding response: {exc}") from exc
        if vec.shape[0] != self.config.embed_dim:
            raise DimMismatch(
                f"server dim {vec.shape[0]} != configured {self.config.embed_dim}"
            )
        return vec

    def _chat(self, messages) -> str:
        body = {
            "model": self.config.model,
            "messages": [self._wire_message(m) for m in messages],
        }
        data = self._post("/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {exc}") from exc

    @staticmethod
    def _wire_message(message: Message) -> dict:
        if not message.images:
            return {"role": message.role, "content": message.text}
        content = [{"type": "text", "text": message.text}]
        for ref in message.images:
            content.append(
                {"type": "image_url", "image_url": {"url": _image_data_url(ref)}}
            )
        return {"role": message.role, "content": content}


def _image_data_url(path: str) -> str:
    suffix = str(path).rsplit(".", 1)[-1].lower()
    mime = {
        "png": "image/png",
        "jpg": "image/jpeg",
        "jpeg": "image/jpeg",
        "ppm": "image/x-portable-pixmap",
        "pgm": "image/x-portable-graymap",
    }.get(suffix, "application/octet-stream")
    with open(path, "rb") as f:
        data = base64.b64encode(f.read()).decode()
    return f"data:{mime};base64,{data}"


# --- replay log ---------------------------------------------------------

def _write_record(fh, record: dict):
    data = json.dumps(record, sort_keys=True).encode()
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def read_replay_log(path):
    records = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise GatewayError(f"truncated replay log {path}")
            (length,) = struct.unpack("<I", head)
            data = fh.read(length)
            if len(data) != length:
                raise GatewayError(f"truncated replay log {path}")
            records.append(json.loads(data))
    return records


class RecordingGateway(LanguageGateway):
    """Delegates to an inner gateway and logs every exchange."""

    def __init__(self, inner: LanguageGateway, log_path):
        super().__init__()
        self.inner = inner
        self.log_path = log_path

    def _append(self, record):
        with open(self.log_path, "ab") as fh:
            _write_record(fh, record)

    def _embed(self, prompt: str) -> np.ndarray:
        vec = self.inner.embed_text(prompt)
        self._append({"kind": "embed", "prompt": prompt, "reply": vec.tolist()})
        return vec

    def _chat(self, messages) -> str:
        reply = self.inner.chat(messages)
        self._append(
            {
                "kind": "chat",
                "key": request_key(messages),
                "request": [m.to_dict() for m in messages],
                "reply": reply,
            }
        )
        return reply


class ReplayGateway(LanguageGateway):
    """Serves logged replies; unknown requests are an error."""

    def __init__(self, log_path):
        super().__init__()
        self._embeds = {}
        self._chats = {}
        for rec in read_replay_log(log_path):
            if rec["kind"] == "embed":
                self._embeds[rec["prompt"]] = np.asarray(rec["reply"])
            else:
                self._chats[rec["key"]] = rec["reply"]

    def _embed(self, prompt: str) -> np.ndarray:
        if prompt not in self._embeds:
            raise GatewayError(f"prompt not in replay log: {prompt!r}")
        return self._embeds[prompt]

    def _chat(self, messages) -> str:
        key = request_key(messages)
        if key not in self._chats:
            raise GatewayError("chat request not in replay log")
        return self._chats[key]
