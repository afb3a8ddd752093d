"""A real uvicorn server on an ephemeral port, for end-to-end tests."""

import threading
import time

import requests
import uvicorn

from soilatlas.config import Config
from soilatlas.httpapi import app_from_config

ADMIN = ("root", "root-pw-1")
DEVICE = ("device", "device-pw-1")


class LiveServer:
    """Runs the platform app in a background thread until stopped."""

    def __init__(self, data_dir: str, auth_secret: str = "live-test-secret"):
        self.config = Config(
            data_dir=str(data_dir),
            auth_secret=auth_secret,
            bootstrap_admin_user=ADMIN[0],
            bootstrap_admin_password=ADMIN[1],
        )
        app = app_from_config(self.config)
        self._server = uvicorn.Server(uvicorn.Config(
            app, host="127.0.0.1", port=0, log_level="warning", access_log=False,
        ))
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.url = ""

    def start(self) -> "LiveServer":
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start within 10s")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    # ------------------------------------------------------------- helpers

    def login(self, username: str, password: str) -> str:
        r = requests.post(
            f"{self.url}/auth/login",
            json={"username": username, "password": password},
            timeout=10,
        )
        r.raise_for_status()
        return r.json()["token"]

    def admin_token(self) -> str:
        return self.login(*ADMIN)

    def create_device_account(self) -> str:
        """Registered + approved account for device uploads; returns its token."""
        requests.post(
            f"{self.url}/auth/register",
            json={"username": DEVICE[0], "password": DEVICE[1]},
            timeout=10,
        )
        admin = self.admin_token()
        r = requests.post(
            f"{self.url}/admin/approve/{DEVICE[0]}",
            headers={"Authorization": f"Bearer {admin}"},
            timeout=10,
        )
        r.raise_for_status()
        return self.login(*DEVICE)

    def drone_count(self) -> int:
        token = self.login(*DEVICE)
        r = requests.get(
            f"{self.url}/api/drone",
            params={"limit": 1},
            headers={"Authorization": f"Bearer {token}"},
            timeout=10,
        )
        r.raise_for_status()
        return r.json()["total"]

    def drone_ids(self) -> list[str]:
        token = self.login(*DEVICE)
        r = requests.get(
            f"{self.url}/api/drone",
            params={"limit": 10000},
            headers={"Authorization": f"Bearer {token}"},
            timeout=10,
        )
        r.raise_for_status()
        return [s["id"] for s in r.json()["items"]]
