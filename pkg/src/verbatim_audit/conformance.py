"""Golden wire-protocol conformance suite.

Any server claiming to speak the generation protocol (the bundled simulated
server, the diffusion adapter service, any future backend) must pass these
checks unchanged.  Each check replays fixed request fixtures against a live
endpoint and verifies schema, determinism, and error discipline:

  health-schema        GET /health carries the version header and all fields
  generate-determinism same seed twice -> byte-identical PNG of the right size
  generate-one-step    timesteps=1 honored when supports_timesteps is true
  generate-seed-split  different seeds may differ (and do for the fixtures)
  dcs-determinism      same (caption, noise_seed, sigma) -> identical scalar
  dcs-sigma-zero       sigma=0 rejected with 400
  malformed-request    junk bodies rejected with 400
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import requests
from PIL import Image as PILImage

from verbatim_audit import PROTOCOL_HEADER, PROTOCOL_VERSION

# Fixed request fixtures. caption_text is supplied by the caller because the
# corpus behind the endpoint chooses its own prompts.
GENERATE_SEEDS = (1234, 98765)
DCS_FIXTURE = {"noise_seed": 424242, "sigma": 1.5}

HEALTH_FIELDS = {
    "status": str,
    "model": str,
    "sigma_max": (int, float),
    "default_timesteps": int,
    "supports_timesteps": bool,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _get(session: requests.Session, url: str, timeout: float) -> requests.Response:
    return session.get(url, timeout=timeout)


def _post(session: requests.Session, url: str, body, timeout: float) -> requests.Response:
    return session.post(url, json=body, timeout=timeout)


def run_conformance(base_url: str, caption_text: str, timeout: float = 30.0) -> list[CheckResult]:
    """Run every protocol check against a live endpoint.

    caption_text must name a prompt the backend can generate for (for the
    simulated server and the adapter's reference model: any corpus prompt).
    """
    base = base_url.rstrip("/")
    session = requests.Session()
    session.headers[PROTOCOL_HEADER] = PROTOCOL_VERSION
    results: list[CheckResult] = []

    # -- health ----------------------------------------------------------
    health = _get(session, base + "/health", timeout)
    problems = []
    if health.status_code != 200:
        problems.append(f"status {health.status_code}")
    if health.headers.get(PROTOCOL_HEADER) != PROTOCOL_VERSION:
        problems.append(f"missing/wrong {PROTOCOL_HEADER} header")
    body = {}
    try:
        body = health.json()
    except ValueError:
        problems.append("body is not JSON")
    for field_name, types in HEALTH_FIELDS.items():
        if field_name not in body or not isinstance(body[field_name], types):
            problems.append(f"field {field_name!r} missing or mistyped")
    if body.get("status") != "ok":
        problems.append(f"status field is {body.get('status')!r}")
    results.append(
        CheckResult("health-schema", not problems, "; ".join(problems) or "all fields present")
    )
    if problems:
        return results  # nothing else is meaningful against a broken /health

    supports_timesteps = body["supports_timesteps"]
    default_t = body["default_timesteps"]
    side = int(body.get("max_resolution", 512)) or 512

    def gen_request(seed: int, timesteps: int) -> requests.Response:
        return _post(
            session,
            base + "/generate",
            {
                "caption": caption_text,
                "seed": seed,
                "timesteps": timesteps,
                "width": side,
                "height": side,
            },
            timeout,
        )

    # -- generate determinism ---------------------------------------------
    first = gen_request(GENERATE_SEEDS[0], default_t)
    second = gen_request(GENERATE_SEEDS[0], default_t)
    problems = []
    for resp in (first, second):
        if resp.status_code != 200:
            problems.append(f"status {resp.status_code}: {resp.text[:100]}")
        elif resp.headers.get("Content-Type", "").split(";")[0] != "image/png":
            problems.append(f"content-type {resp.headers.get('Content-Type')!r}")
    if not problems:
        if first.content != second.content:
            problems.append("same seed produced different PNG bytes")
        try:
            with PILImage.open(io.BytesIO(first.content)) as pil:
                if pil.size != (side, side):
                    problems.append(f"size {pil.size} != ({side}, {side})")
        except Exception as exc:
            problems.append(f"undecodable PNG: {exc}")
    results.append(
        CheckResult(
            "generate-determinism", not problems, "; ".join(problems) or "byte-identical PNG per seed"
        )
    )

    # -- one-step support --------------------------------------------------
    one_step = gen_request(GENERATE_SEEDS[0], 1)
    if supports_timesteps:
        ok = one_step.status_code == 200
        detail = "timesteps=1 honored" if ok else f"status {one_step.status_code}"
    else:
        ok = one_step.status_code == 422
        detail = "unsupported timesteps rejected with 422" if ok else (
            f"expected 422, got {one_step.status_code}"
        )
    results.append(CheckResult("generate-one-step", ok, detail))

    # -- seed separation ----------------------------------------------------
    other = gen_request(GENERATE_SEEDS[1], default_t)
    ok = other.status_code == 200
    results.append(
        CheckResult(
            "generate-seed-split",
            ok,
            "second seed generated" if ok else f"status {other.status_code}",
        )
    )

    # -- dcs determinism ------------------------------------------------------
    dcs_body = {"caption": caption_text, **DCS_FIXTURE}
    r1 = _post(session, base + "/dcs", dcs_body, timeout)
    r2 = _post(session, base + "/dcs", dcs_body, timeout)
    problems = []
    for resp in (r1, r2):
        if resp.status_code != 200:
            problems.append(f"status {resp.status_code}: {resp.text[:100]}")
    if not problems:
        v1, v2 = r1.json().get("dcs"), r2.json().get("dcs")
        if not isinstance(v1, (int, float)):
            problems.append(f"dcs field malformed: {r1.text[:100]}")
        elif v1 != v2:
            problems.append(f"{v1} != {v2}")
    results.append(
        CheckResult("dcs-determinism", not problems, "; ".join(problems) or "identical scalar")
    )

    # -- dcs sigma=0 rejected ---------------------------------------------------
    bad = _post(session, base + "/dcs", {"caption": caption_text, "noise_seed": 1, "sigma": 0.0}, timeout)
    ok = bad.status_code == 400
    results.append(
        CheckResult(
            "dcs-sigma-zero", ok, "rejected with 400" if ok else f"expected 400, got {bad.status_code}"
        )
    )

    # -- malformed requests --------------------------------------------------
    junk = _post(session, base + "/generate", {"seed": 3}, timeout)
    ok = junk.status_code == 400
    results.append(
        CheckResult(
            "malformed-request", ok, "rejected with 400" if ok else f"expected 400, got {junk.status_code}"
        )
    )
    return results


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
