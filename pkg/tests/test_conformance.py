"""The golden protocol suite must pass against the bundled simulated server."""

from verbatim_audit.conformance import all_passed, run_conformance
from verbatim_audit.genbackend.server import SimBackendServer


def test_sim_server_passes_golden_suite(small_world):
    caption_text = small_world.caption_text(small_world.exact_ids[0])
    with SimBackendServer(small_world) as server:
        results = run_conformance(server.url, caption_text, timeout=10)
    for r in results:
        print(r.line())
    assert all_passed(results), [r.line() for r in results if not r.passed]
    assert {r.name for r in results} == {
        "health-schema",
        "generate-determinism",
        "generate-one-step",
        "generate-seed-split",
        "dcs-determinism",
        "dcs-sigma-zero",
        "malformed-request",
    }


def test_conformance_reports_failures_against_broken_server(small_world, monkeypatch):
    # A server that drops the version header must fail health-schema.
    from verbatim_audit.genbackend import server as server_mod

    class NoHeaderHandler(server_mod._Handler):
        def _send(self, status, body, content_type="application/json"):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    monkeypatch.setattr(server_mod, "_Handler", NoHeaderHandler)
    caption_text = small_world.caption_text(small_world.exact_ids[0])
    with server_mod.SimBackendServer(small_world) as server:
        results = run_conformance(server.url, caption_text, timeout=10)
    assert not all_passed(results)
    assert results[0].name == "health-schema" and not results[0].passed
