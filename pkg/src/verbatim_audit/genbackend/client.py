"""HTTP client for remote generation backends.

Protocol (JSON bodies, version header "X-VA-Proto: 1"):
  GET  /health    -> {"status","model","sigma_max","default_timesteps","supports_timesteps"}
  POST /generate  {"caption","seed","timesteps","width","height"} -> image/png
  POST /dcs       {"caption","noise_seed","sigma"} -> {"dcs": f64}

Generation is deterministic per seed, so transport failures are retried (at
most twice); protocol-level errors (4xx/5xx) never are.
"""

from __future__ import annotations

import io
import threading

import numpy as np
import requests
from PIL import Image as PILImage

from verbatim_audit import PROTOCOL_HEADER, PROTOCOL_VERSION
from verbatim_audit.errors import BackendBusyError, ProtocolError, TransportError
from verbatim_audit.genbackend.contracts import BackendCapabilities
from verbatim_audit.imaging import Image
from verbatim_audit.retrieval import CaptionRecord

MAX_RETRIES = 2

_HEALTH_SCHEMA = {
    "status": str,
    "model": str,
    "sigma_max": (int, float),
    "default_timesteps": int,
    "supports_timesteps": bool,
}


class RemoteBackend:
    """GeneratorContract + dcs() over the wire protocol."""

    def __init__(self, base_url: str, timeout_s: float = 30.0, max_retries: int = MAX_RETRIES):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self._local = threading.local()  # one Session per worker thread
        self.capabilities = self._probe_health()

    # -- protocol plumbing ---------------------------------------------------

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            session.headers[PROTOCOL_HEADER] = PROTOCOL_VERSION
            self._local.session = session
        return session

    def _request(self, method: str, path: str, **kwargs) -> requests.Response:
        url = self.base_url + path
        last_exc: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._session().request(method, url, timeout=self.timeout_s, **kwargs)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            self._check_version(resp)
            if resp.status_code == 503:
                raise BackendBusyError(f"{url} busy")
            if resp.status_code != 200:
                raise ProtocolError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            return resp
        raise TransportError(f"{url} unreachable after {self.max_retries + 1} attempts: {last_exc}")

    @staticmethod
    def _check_version(resp: requests.Response) -> None:
        got = resp.headers.get(PROTOCOL_HEADER)
        if got != PROTOCOL_VERSION:
            raise ProtocolError(f"protocol version mismatch: server sent {got!r}, expected {PROTOCOL_VERSION!r}")

    def _probe_health(self) -> BackendCapabilities:
        body = self._request("GET", "/health").json()
        for key, types in _HEALTH_SCHEMA.items():
            if key not in body or not isinstance(body[key], types):
                raise ProtocolError(f"/health missing or mistyped field {key!r}: {body}")
        if body["status"] != "ok":
            raise ProtocolError(f"backend unhealthy: {body}")
        return BackendCapabilities(
            model=body["model"],
            max_resolution=int(body.get("max_resolution", 0)) or 10_000,
            supports_timesteps=body["supports_timesteps"],
            default_timesteps=body["default_timesteps"],
            sigma_max=float(body["sigma_max"]),
        )

    # -- operations ------------------------------------------------------------

    def generate(
        self,
        caption: CaptionRecord,
        seed: int,
        timesteps: int | None = None,
        width: int | None = None,
        height: int | None = None,
    ) -> Image:
        if timesteps is None:
            timesteps = self.capabilities.default_timesteps
        side = min(self.capabilities.max_resolution, 512)
        payload = {
            "caption": caption.text,
            "seed": seed,
            "timesteps": timesteps,
            "width": width or side,
            "height": height or side,
        }
        resp = self._request("POST", "/generate", json=payload)
        if resp.headers.get("Content-Type", "").split(";")[0] != "image/png":
            raise ProtocolError(f"/generate returned {resp.headers.get('Content-Type')!r}, expected image/png")
        try:
            with PILImage.open(io.BytesIO(resp.content)) as pil:
                if pil.mode == "L":
                    arr = np.asarray(pil, dtype=np.float64)[:, :, np.newaxis]
                elif pil.mode == "RGB":
                    arr = np.asarray(pil, dtype=np.float64)
                else:
                    raise ProtocolError(f"/generate returned PNG mode {pil.mode!r}")
        except ProtocolError:
            raise
        except Exception as exc:
            raise ProtocolError(f"/generate returned a malformed image: {exc}") from exc
        return Image(arr / 255.0)

    def dcs(self, caption: CaptionRecord, noise_seed: int, sigma: float) -> float:
        payload = {"caption": caption.text, "noise_seed": noise_seed, "sigma": sigma}
        body = self._request("POST", "/dcs", json=payload).json()
        if "dcs" not in body or not isinstance(body["dcs"], (int, float)):
            raise ProtocolError(f"/dcs returned malformed body: {body}")
        return float(body["dcs"])


def remote_generate(
    client: RemoteBackend, caption: CaptionRecord, seed: int, timesteps: int | None = None
) -> Image:
    return client.generate(caption, seed, timesteps)
