"""Shared server plumbing for tests that need a live HTTP endpoint."""

import contextlib
import socket
import subprocess
import sys
import threading
import time

import httpx
import uvicorn

from banditserve.server import create_app


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@contextlib.contextmanager
def uvicorn_in_thread(service):
    """Serve over real TCP from a daemon thread; yields the base URL."""
    config = uvicorn.Config(create_app(service), host="127.0.0.1", port=0,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("embedded server failed to start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)


def wait_http_ready(url: str, headers=None, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    while True:
        try:
            if httpx.get(url, headers=headers, timeout=2.0).status_code < 500:
                return
        except httpx.HTTPError:
            pass
        if time.monotonic() > deadline:
            raise RuntimeError(f"server at {url} never became ready")
        time.sleep(0.05)


def spawn_server(data_dir, port: int, admin_token: str = "tok",
                 seed: int = 11) -> subprocess.Popen:
    """Run the real CLI server in a child process against a data directory."""
    cmd = [sys.executable, "-m", "banditserve.cli", "serve",
           "--host", "127.0.0.1", "--port", str(port),
           "--data-dir", str(data_dir), "--admin-token", admin_token,
           "--seed", str(seed)]
    proc = subprocess.Popen(cmd, stdout=subprocess.DEVNULL,
                            stderr=subprocess.DEVNULL)
    wait_http_ready(f"http://127.0.0.1:{port}/management/exp",
                    headers={"X-Admin-Token": admin_token})
    return proc
