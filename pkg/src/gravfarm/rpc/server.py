"""Compute server daemon offering ``ComputeForces``.

Connects to the agent, registers its slot count, then evaluates assigned
tasks on a pool of ``capacity`` threads (the force kernel releases the GIL)
and sends a heartbeat every interval.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
from concurrent.futures import ThreadPoolExecutor

from ..errors import GravfarmError, MalformedTask, ProtocolError
from . import payloads as pl
from .protocol import MsgType, parse_address, recv_message, send_message
from .registry import HEARTBEAT_INTERVAL

log = logging.getLogger("gravfarm.server")


def _warm_kernels() -> None:
    # load the compiled force kernel before taking work
    import numpy as np
    from ..forces import accelerations_from_lists
    for dtype in (np.uint16, np.uint32, np.int32):
        accelerations_from_lists(np.zeros((1, 3)), np.array([0, 1]), np.zeros(1, dtype=dtype),
                                 np.ones(1), np.ones((1, 3)), 0.0, 1.0)


class ComputeServer:
    """``fail_after`` injects a crash once that many tasks have been received:
    the process exits abruptly, or with ``exit_on_fail=False`` (in-process
    servers) the connection is dropped and in-flight results are discarded."""

    def __init__(self, agent: str, capacity: int = 1, listen: str | None = None,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL, fail_after: int | None = None,
                 exit_on_fail: bool = True):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.agent = agent
        self.capacity = capacity
        self.listen = listen
        self.heartbeat_interval = heartbeat_interval
        self.fail_after = fail_after
        self.exit_on_fail = exit_on_fail
        self.server_id = None
        self.tasks_done = 0
        self._received = 0
        self._sock = None
        self._send_lock = threading.Lock()
        self._stop = threading.Event()
        self._pool = None

    def connect(self) -> int:
        _warm_kernels()
        self._sock = socket.create_connection(parse_address(self.agent))
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        address = self.listen or "%s:%d" % self._sock.getsockname()[:2]
        send_message(self._sock, MsgType.REGISTER, pl.encode_register(self.capacity, address))
        t, payload = recv_message(self._sock)
        if t != MsgType.REGISTER_ACK:
            _, body = pl.split_id(payload)
            raise GravfarmError(f"registration refused: {pl.decode_error(body)[2]}")
        self.server_id, _ = pl.split_id(payload)
        return self.server_id

    def _send(self, msg_type, payload=b"") -> None:
        with self._send_lock:
            send_message(self._sock, msg_type, payload)

    def _heartbeat(self) -> None:
        while not self._stop.wait(self.heartbeat_interval):
            try:
                self._send(MsgType.HEARTBEAT)
            except OSError:
                return

    def _work(self, tid: int, body) -> None:
        try:
            acc = pl.server_compute_forces(pl.Task.decode(body))
            reply = (MsgType.TASK_RESULT, pl.with_id(tid, pl.encode_result(acc)))
        except MalformedTask as e:
            reply = (MsgType.TASK_ERROR, pl.with_id(tid, pl.encode_error(pl.ERR_MALFORMED, 0, str(e))))
        except GravfarmError as e:
            reply = (MsgType.TASK_ERROR, pl.with_id(tid, pl.encode_error(pl.ERR_COMPUTE, 0, str(e))))
        if self._stop.is_set():
            return
        try:
            self._send(*reply)
            self.tasks_done += 1
        except OSError:
            pass

    def serve(self) -> None:
        """Receive loop; returns when the agent connection closes or :meth:`stop` runs."""
        if self._sock is None:
            self.connect()
        self._pool = ThreadPoolExecutor(self.capacity, thread_name_prefix="gravfarm-slot")
        beat = threading.Thread(target=self._heartbeat, daemon=True)
        beat.start()
        try:
            while not self._stop.is_set():
                t, payload = recv_message(self._sock)
                if t != MsgType.TASK_ASSIGN:
                    continue
                self._received += 1
                if self.fail_after is not None and self._received > self.fail_after:
                    log.warning("fault injection: crashing on task %d", self._received)
                    if self.exit_on_fail:
                        os._exit(17)
                    self.stop()
                    break
                tid, body = pl.split_id(payload)
                self._pool.submit(self._work, tid, body)
        except (EOFError, ProtocolError, OSError):
            pass
        finally:
            self._stop.set()
            self._pool.shutdown(wait=False, cancel_futures=True)
            self._close()

    def _close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()

    def stop(self) -> None:
        """Drop the agent connection as a crash would; in-flight results are lost."""
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


def run_server(agent: str, capacity: int = 1, listen: str | None = None, **kw) -> None:
    server = ComputeServer(agent, capacity, listen, **kw)
    sid = server.connect()
    log.info("server %d registered with %s", sid, agent)
    server.serve()
