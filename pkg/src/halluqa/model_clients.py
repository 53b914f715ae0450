"""Clients for the detection / VQA / chat / caption services.

All four speak JSON-over-HTTP (schemas in docs/protocols.md) and share a
record/replay fixture layer keyed by a stable digest of the canonical request
body, so the whole pipeline runs offline and deterministically. Binary fields
are hashed in the canonical form and base64-encoded on the wire, which keeps
fixtures small and digests independent of transport encoding.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

MODES = ("live", "record", "replay")

ENV_URL = {
    "detect": "HALLU_DETECT_URL",
    "vqa": "HALLU_VQA_URL",
    "chat": "HALLU_CHAT_URL",
    "caption": "HALLU_CAPTION_URL",
}
ENV_TOKEN = {
    "detect": "HALLU_DETECT_TOKEN",
    "vqa": "HALLU_VQA_TOKEN",
    "chat": "HALLU_CHAT_TOKEN",
    "caption": "HALLU_CAPTION_TOKEN",
}

RETRYABLE_KINDS = ("connect", "timeout")


class ClientError(Exception):
    """Service call failed; `kind` is one of config/connect/timeout/status/schema."""

    def __init__(self, kind: str, message: str, status: int | None = None,
                 digest: str | None = None):
        self.kind = kind
        self.status = status
        self.digest = digest
        super().__init__(f"{kind}: {message}")


class ReplayMiss(ClientError):
    """Replay mode found no transcript for the request digest."""

    def __init__(self, service: str, digest: str):
        super().__init__("replay_miss", f"no {service} transcript for digest {digest}",
                         digest=digest)
        self.service = service


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_digest(canonical_request: dict) -> str:
    return hashlib.sha256(canonical_json(canonical_request).encode("utf-8")).hexdigest()


def _bytes_ref(data: bytes) -> dict:
    return {"sha256": hashlib.sha256(data).hexdigest()}


def _bytes_wire(data: bytes) -> dict:
    return {"b64": base64.b64encode(data).decode("ascii")}


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: tuple[float, float, float, float]


@dataclass
class ClientConfig:
    mode: str = "replay"
    detect_url: str | None = None
    vqa_url: str | None = None
    chat_url: str | None = None
    caption_url: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3  # total attempts on connect/timeout/5xx
    backoff_s: float = 0.5
    max_in_flight: int = 4
    fixtures_dir: Path | None = None

    def url_for(self, service: str) -> str | None:
        explicit = getattr(self, f"{service}_url")
        return explicit or os.environ.get(ENV_URL[service])


class HttpTransport:
    """Thin POST wrapper; swap it out in tests to count or forbid network use."""

    def post(self, url: str, body: dict, headers: dict, timeout_s: float):
        import requests

        try:
            resp = requests.post(url, json=body, headers=headers, timeout=timeout_s)
        except requests.exceptions.Timeout as e:
            raise ClientError("timeout", str(e)) from None
        except requests.exceptions.RequestException as e:
            raise ClientError("connect", str(e)) from None
        try:
            payload = resp.json()
        except ValueError:
            payload = None
        return resp.status_code, payload


class FixtureStore:
    """Transcript files under fixtures/{service}/{digest}.json.

    Reads are lock-free; writes are serialized and atomic. In replay mode a
    missing key is an error, never a live call.
    """

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)
        self._write_lock = threading.Lock()

    def path(self, service: str, digest: str) -> Path:
        return self.directory / service / f"{digest}.json"

    def get(self, service: str, digest: str) -> dict | None:
        p = self.path(service, digest)
        if not p.exists():
            return None
        doc = json.loads(p.read_text(encoding="utf-8"))
        return doc["response"]

    def put(self, service: str, digest: str, canonical_request: dict, response: dict):
        doc = {
            "schema_version": 1,
            "service": service,
            "digest": digest,
            "request": canonical_request,
            "response": response,
        }
        p = self.path(service, digest)
        with self._write_lock:
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(".tmp")
            tmp.write_text(canonical_json(doc) + "\n", encoding="utf-8")
            tmp.replace(p)


class _ServiceClient:
    service: str = ""

    def __init__(self, cfg: ClientConfig, transport=None, sleep=time.sleep):
        if cfg.mode not in MODES:
            raise ClientError("config", f"unknown mode {cfg.mode!r}")
        self.cfg = cfg
        self.mode = cfg.mode
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(cfg.max_in_flight)
        self.transport = transport or HttpTransport()
        self.url = cfg.url_for(self.service)
        self.token = os.environ.get(ENV_TOKEN[self.service])
        if self.mode in ("live", "record"):
            if not self.url:
                raise ClientError(
                    "config",
                    f"{self.service}: {self.mode} mode needs an endpoint "
                    f"(config or {ENV_URL[self.service]})",
                )
            if not self.token:
                raise ClientError(
                    "config",
                    f"{self.service}: {self.mode} mode needs credentials in "
                    f"{ENV_TOKEN[self.service]}",
                )
        if self.mode in ("record", "replay"):
            if cfg.fixtures_dir is None:
                raise ClientError("config", f"{self.service}: {self.mode} mode needs fixtures_dir")
            self.fixtures = FixtureStore(cfg.fixtures_dir)
        else:
            self.fixtures = None

    def _validate(self, body) -> dict:
        raise NotImplementedError

    def _call(self, canonical: dict, wire: dict) -> dict:
        digest = request_digest(canonical)
        if self.mode == "replay":
            response = self.fixtures.get(self.service, digest)
            if response is None:
                raise ReplayMiss(self.service, digest)
            return self._validate(response)

        headers = {"Authorization": f"Bearer {self.token}"}
        last: ClientError | None = None
        for attempt in range(self.cfg.max_retries):
            if attempt:
                self._sleep(self.cfg.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._sem:
                    status, payload = self.transport.post(
                        self.url, wire, headers, self.cfg.timeout_s
                    )
            except ClientError as e:
                if e.kind in RETRYABLE_KINDS:
                    last = e
                    continue
                raise
            if status >= 500:
                last = ClientError("status", f"{self.service} returned {status}", status=status)
                continue
            if status >= 400:
                raise ClientError("status", f"{self.service} returned {status}", status=status)
            if payload is None:
                raise ClientError("schema", f"{self.service}: response is not JSON",
                                  digest=digest)
            validated = self._validate(payload)
            if self.mode == "record":
                self.fixtures.put(self.service, digest, canonical, payload)
            return validated
        raise last  # retries exhausted

    def _schema_error(self, detail: str, payload) -> ClientError:
        payload_digest = hashlib.sha256(
            canonical_json(payload).encode("utf-8")
        ).hexdigest()
        return ClientError("schema", f"{self.service}: {detail}", digest=payload_digest)


class DetectClient(_ServiceClient):
    service = "detect"

    def detect(self, image_bytes: bytes, vocabulary: list[str]) -> list[Detection]:
        canonical = {
            "service": "detect",
            "image": _bytes_ref(image_bytes),
            "vocabulary": sorted(vocabulary),
        }
        wire = {"image": _bytes_wire(image_bytes), "vocabulary": sorted(vocabulary)}
        body = self._call(canonical, wire)
        return [
            Detection(d["label"], float(d["confidence"]), tuple(d["box"]))
            for d in body["detections"]
        ]

    def _validate(self, body) -> dict:
        if not isinstance(body, dict) or not isinstance(body.get("detections"), list):
            raise self._schema_error("missing detections list", body)
        for d in body["detections"]:
            if not isinstance(d, dict) or not isinstance(d.get("label"), str):
                raise self._schema_error("detection without label", body)
            conf = d.get("confidence")
            if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
                raise self._schema_error(f"confidence {conf!r} outside [0,1]", body)
            box = d.get("box")
            if (not isinstance(box, list) or len(box) != 4
                    or not all(isinstance(v, (int, float)) for v in box)):
                raise self._schema_error("box must be [x,y,w,h]", body)
        return body


class VqaClient(_ServiceClient):
    service = "vqa"

    def ask(self, image_bytes: bytes, regions: list[list[float]], question: str) -> str:
        canonical = {
            "service": "vqa",
            "image": _bytes_ref(image_bytes),
            "regions": [[float(v) for v in r] for r in regions],
            "question": question,
        }
        wire = {
            "image": _bytes_wire(image_bytes),
            "regions": canonical["regions"],
            "question": question,
        }
        return self._call(canonical, wire)["answer"]

    def _validate(self, body) -> dict:
        if not isinstance(body, dict) or not isinstance(body.get("answer"), str):
            raise self._schema_error("missing answer string", body)
        if not body["answer"].strip():
            raise self._schema_error("answer must be non-empty (use 'unknown')", body)
        return body


class ChatClient(_ServiceClient):
    service = "chat"

    def chat(self, system: str, messages: list[dict]) -> str:
        for m in messages:
            if m.get("role") not in ("system", "user", "assistant"):
                raise ClientError("config", f"bad message role {m.get('role')!r}")
        canonical = {
            "service": "chat",
            "system": system,
            "messages": [{"role": m["role"], "text": m["text"]} for m in messages],
            "temperature": 0,
        }
        wire = dict(canonical)
        del wire["service"]
        return self._call(canonical, wire)["text"]

    def _validate(self, body) -> dict:
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise self._schema_error("missing text string", body)
        return body


class CaptionClient(_ServiceClient):
    service = "caption"

    def caption(self, image_bytes: bytes) -> str:
        canonical = {"service": "caption", "image": _bytes_ref(image_bytes)}
        wire = {"image": _bytes_wire(image_bytes)}
        return self._call(canonical, wire)["text"]

    def _validate(self, body) -> dict:
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise self._schema_error("missing text string", body)
        return body
