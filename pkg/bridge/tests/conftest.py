from __future__ import annotations

import json
import threading
import time
from pathlib import Path

import pytest
import uvicorn

from modelbridge.app import BridgeConfig, create_app


@pytest.fixture
def linear_artifact(tmp_path) -> Path:
    path = tmp_path / "model.json"
    path.write_text(
        json.dumps(
            {
                "kind": "token-logistic",
                "version": 1,
                "vocabulary": {"strcpy": 2.5, "gets": 3.0, "strncpy": -1.5, "snprintf": -2.0},
                "bias": -0.25,
            }
        ),
        encoding="utf-8",
    )
    return path


class RunningServer:
    def __init__(self, server: uvicorn.Server, thread: threading.Thread, port: int) -> None:
        self._server = server
        self._thread = thread
        self.port = port
        self.base_url = f"http://127.0.0.1:{port}"

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5)


def start_server(config: BridgeConfig) -> RunningServer:
    app = create_app(config)
    server = uvicorn.Server(
        uvicorn.Config(app, host=config.host, port=config.port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("bridge server did not start in time")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    return RunningServer(server, thread, port)


@pytest.fixture
def live_bridge(linear_artifact):
    running = start_server(BridgeConfig(model_ref=str(linear_artifact), port=0))
    yield running
    running.stop()
