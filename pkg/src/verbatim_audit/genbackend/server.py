"""Minimal HTTP server exposing a simulated backend over the wire protocol.

Loopback plumbing for tests and local runs; real models are served by the
adapter service, which implements the same endpoints.
"""

from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from verbatim_audit import PROTOCOL_HEADER, PROTOCOL_VERSION
from verbatim_audit.errors import UnknownCaptionError
from verbatim_audit.genbackend.simulation import SimulatedBackend, SimulationWorld
from verbatim_audit.imaging import save_image
from verbatim_audit.retrieval import CaptionRecord


class _Handler(BaseHTTPRequestHandler):
    backend: SimulatedBackend
    text_to_id: dict[str, int]

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header(PROTOCOL_HEADER, PROTOCOL_VERSION)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj: dict) -> None:
        self._send(status, json.dumps(obj).encode("utf-8"))

    def _read_json(self) -> dict | None:
        try:
            length = int(self.headers.get("Content-Length", "0"))
            return json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError):
            return None

    def do_GET(self):
        if self.path != "/health":
            self._send_json(400, {"error": f"unknown path {self.path}"})
            return
        caps = self.backend.capabilities
        self._send_json(
            200,
            {
                "status": "ok",
                "model": caps.model,
                "sigma_max": caps.sigma_max,
                "default_timesteps": caps.default_timesteps,
                "supports_timesteps": caps.supports_timesteps,
                "max_resolution": caps.max_resolution,
            },
        )

    def do_POST(self):
        body = self._read_json()
        if body is None:
            self._send_json(400, {"error": "malformed JSON body"})
            return
        if self.path == "/generate":
            self._generate(body)
        elif self.path == "/dcs":
            self._dcs(body)
        else:
            self._send_json(400, {"error": f"unknown path {self.path}"})

    def _lookup(self, body: dict) -> CaptionRecord | None:
        text = body.get("caption")
        if not isinstance(text, str) or text not in self.text_to_id:
            return None
        cid = self.text_to_id[text]
        return CaptionRecord(id=cid, text=text)

    def _generate(self, body: dict) -> None:
        caption = self._lookup(body)
        if caption is None:
            self._send_json(400, {"error": "unknown or missing caption"})
            return
        try:
            seed = int(body["seed"])
            timesteps = int(body.get("timesteps", self.backend.capabilities.default_timesteps))
            width = int(body.get("width", self.backend.capabilities.max_resolution))
            height = int(body.get("height", self.backend.capabilities.max_resolution))
        except (KeyError, TypeError, ValueError):
            self._send_json(400, {"error": "seed/timesteps/width/height malformed"})
            return
        res = self.backend.capabilities.max_resolution
        if width != res or height != res:
            self._send_json(422, {"error": f"only {res}x{res} supported"})
            return
        if timesteps < 1:
            self._send_json(422, {"error": "timesteps must be >= 1"})
            return
        try:
            img = self.backend.generate(caption, seed, timesteps)
        except UnknownCaptionError:
            self._send_json(400, {"error": "unknown caption"})
            return
        buf = io.BytesIO()
        save_image(img, buf)
        self._send(200, buf.getvalue(), content_type="image/png")

    def _dcs(self, body: dict) -> None:
        caption = self._lookup(body)
        if caption is None:
            self._send_json(400, {"error": "unknown or missing caption"})
            return
        try:
            noise_seed = int(body["noise_seed"])
            sigma = float(body["sigma"])
        except (KeyError, TypeError, ValueError):
            self._send_json(400, {"error": "noise_seed/sigma malformed"})
            return
        if sigma <= 0:
            self._send_json(400, {"error": "sigma must be > 0"})
            return
        value = self.backend.dcs(caption, noise_seed, sigma)
        self._send_json(200, {"dcs": value})


class SimBackendServer:
    """Threaded loopback server; bind to port 0 for an ephemeral port."""

    def __init__(self, world: SimulationWorld, host: str = "127.0.0.1", port: int = 0):
        backend = world.backend()
        text_to_id: dict[str, int] = {}
        for rec in world.captions():
            text_to_id.setdefault(rec.text, rec.id)

        handler = type("BoundHandler", (_Handler,), {"backend": backend, "text_to_id": text_to_id})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "SimBackendServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "SimBackendServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
