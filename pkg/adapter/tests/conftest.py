import socket
import threading
import time

import pytest
import uvicorn

from va_adapter.config import AdapterConfig
from va_adapter.server import create_app


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    from verbatim_audit.genbackend.simulation import SimulationConfig, SimulationWorld

    out = tmp_path_factory.mktemp("corpus")
    world = SimulationWorld(
        SimulationConfig(
            corpus_size=120, exact_fraction=0.05, template_fraction=0.04, noise_seed=9
        )
    )
    world.write(out)
    return out


@pytest.fixture(scope="session")
def adapter_cfg(corpus_dir):
    return AdapterConfig(model=f"sim:{corpus_dir}", max_concurrent=2, queue_depth=4)


class ServerThread:
    def __init__(self, app):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            self.port = probe.getsockname()[1]
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("adapter server failed to start")
            time.sleep(0.02)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture(scope="session")
def live_adapter(adapter_cfg):
    app = create_app(adapter_cfg)
    with ServerThread(app) as server:
        yield {"url": server.url, "app": app}
