"""Self-hosted fabric: one agent plus K compute servers on this machine.

``mode="process"`` launches real daemons (``python -m gravfarm agent|server``)
so a server can be killed with SIGKILL; ``mode="thread"`` runs everything in
this process, which starts faster and is enough for protocol tests.
"""

from __future__ import annotations

import os
import signal
import subprocess
import sys
import threading
import time
from pathlib import Path

from ..errors import GravfarmError
from .agent import AgentThread
from .client import query_servers
from .registry import HEARTBEAT_INTERVAL, MAX_ATTEMPTS
from .server import ComputeServer

_SRC = str(Path(__file__).resolve().parents[2])


class LocalFabric:
    def __init__(self, servers: int = 4, capacity: int = 1, mode: str = "process",
                 heartbeat_interval: float = HEARTBEAT_INTERVAL, max_attempts: int = MAX_ATTEMPTS,
                 fail_after: dict[int, int] | None = None, start_timeout: float = 60.0):
        if servers < 1:
            raise ValueError("need at least one server")
        if mode not in ("process", "thread"):
            raise ValueError(f"unknown fabric mode {mode!r}")
        self.n_servers = servers
        self.capacity = capacity
        self.mode = mode
        self.heartbeat_interval = heartbeat_interval
        self.max_attempts = max_attempts
        self.fail_after = fail_after or {}
        self.start_timeout = start_timeout
        self.address = None
        self._agent_proc = None
        self._agent_thread = None
        self.server_procs: list[subprocess.Popen] = []
        self.servers: list[ComputeServer] = []
        self._server_threads: list[threading.Thread] = []

    def __enter__(self) -> "LocalFabric":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def slots(self) -> int:
        return self.n_servers * self.capacity

    def _env(self):
        env = dict(os.environ)
        env["PYTHONPATH"] = _SRC + os.pathsep + env.get("PYTHONPATH", "")
        return env

    def start(self) -> "LocalFabric":
        try:
            if self.mode == "process":
                self._start_processes()
            else:
                self._start_threads()
            self.wait_for_servers(self.n_servers)
        except BaseException:
            self.stop()
            raise
        return self

    def _start_processes(self) -> None:
        cmd = [sys.executable, "-m", "gravfarm", "agent", "--listen", "127.0.0.1:0",
               "--heartbeat", str(self.heartbeat_interval), "--max-attempts", str(self.max_attempts)]
        self._agent_proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True, env=self._env())
        line = self._agent_proc.stdout.readline()
        if "listening on" not in line:
            raise GravfarmError(f"agent failed to start: {line!r}")
        self.address = line.rsplit(None, 1)[-1]
        for i in range(self.n_servers):
            cmd = [sys.executable, "-m", "gravfarm", "server", "--agent", self.address,
                   "--capacity", str(self.capacity), "--heartbeat", str(self.heartbeat_interval)]
            if i in self.fail_after:
                cmd += ["--fail-after", str(self.fail_after[i])]
            self.server_procs.append(subprocess.Popen(cmd, env=self._env()))

    def _start_threads(self) -> None:
        self._agent_thread = AgentThread(heartbeat_interval=self.heartbeat_interval,
                                         max_attempts=self.max_attempts).start()
        self.address = self._agent_thread.address
        for i in range(self.n_servers):
            s = ComputeServer(self.address, self.capacity, heartbeat_interval=self.heartbeat_interval,
                              fail_after=self.fail_after.get(i), exit_on_fail=False)
            s.connect()
            th = threading.Thread(target=s.serve, daemon=True, name=f"gravfarm-server-{i}")
            th.start()
            self.servers.append(s)
            self._server_threads.append(th)

    def wait_for_servers(self, n: int) -> list[dict]:
        deadline = time.monotonic() + self.start_timeout
        while True:
            alive = [r for r in query_servers(self.address) if r["alive"]]
            if len(alive) >= n:
                return alive
            if time.monotonic() > deadline:
                raise GravfarmError(f"only {len(alive)} of {n} servers registered")
            for p in self.server_procs:
                if p.poll() is not None:
                    raise GravfarmError(f"server process exited with {p.returncode}")
            time.sleep(0.05)

    def kill_server(self, i: int) -> None:
        """SIGKILL server ``i`` (process mode) or drop its connection (thread mode)."""
        if self.mode == "process":
            self.server_procs[i].send_signal(signal.SIGKILL)
            self.server_procs[i].wait(10)
        else:
            self.servers[i].stop()

    def pids(self) -> list[int]:
        procs = ([self._agent_proc] if self._agent_proc else []) + self.server_procs
        return [p.pid for p in procs]

    def stop(self) -> None:
        # agent first, so servers going away is not reported as failures
        procs = ([self._agent_proc] if self._agent_proc else []) + self.server_procs
        for p in procs:
            if p.poll() is None:
                p.terminate()
        for p in procs:
            try:
                p.wait(10)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait(10)
            if p.stdout:
                p.stdout.close()
        if self._agent_thread is not None:
            self._agent_thread.stop()
            self._agent_thread = None
        for s in self.servers:
            s.stop()
        for th in self._server_threads:
            th.join(5)

    def processes_left(self) -> int:
        return sum(1 for p in self.server_procs if p.poll() is None) + (
            1 if self._agent_proc is not None and self._agent_proc.poll() is None else 0)
