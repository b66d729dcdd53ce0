"""GridRPC-style client: initialize, handle_default, call_async, wait_all,
handle_destruct, finalize.

A session is one agent connection with a reader thread collecting replies.
Session wall time is split into three contiguous spans: init (initialize up
to the first call), compute (first call to the last wait_all return) and
finalize (from there to the end of finalize).
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from ..errors import (GravfarmError, LifecycleViolation, NoServersAvailable, ProtocolError,
                      TaskPermanentlyFailed)
from . import payloads as pl
from .protocol import MsgType, parse_address, recv_message, send_message, send_parts

FUNCTIONS = ("ComputeForces",)

_OPEN, _CLOSED = "open", "closed"


@dataclass
class SessionTimes:
    init: float = 0.0
    compute: float = 0.0
    finalize: float = 0.0
    total: float = 0.0


class Session:
    def __init__(self, agent_addr: str):
        self.agent = agent_addr
        self.state = _OPEN
        self.times = SessionTimes()
        self._t0 = time.perf_counter()
        self._t_first_call = None
        self._t_last_wait = None
        self._sock = socket.create_connection(parse_address(agent_addr))
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_message(self._sock, MsgType.SESSION_OPEN, b"")
        t, payload = recv_message(self._sock)
        if t != MsgType.SESSION_OPEN:
            raise ProtocolError(f"expected SESSION_OPEN reply, got {t.name}")
        self.session_id, self.servers, self.slots = pl.decode_session(payload)
        self._send_lock = threading.Lock()
        self._cond = threading.Condition()
        self._next_request = 0
        self._outstanding: set[int] = set()
        self._results: dict[int, object] = {}
        self._closed_reply = threading.Event()
        self._lost = None
        self.handles: list[FunctionHandle] = []
        self._reader = threading.Thread(target=self._read_loop, daemon=True, name="gravfarm-client")
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                t, payload = recv_message(self._sock)
                if t == MsgType.SESSION_CLOSE:
                    self._closed_reply.set()
                    return
                if t not in (MsgType.TASK_RESULT, MsgType.TASK_ERROR):
                    continue
                rid, body = pl.split_id(payload)
                if t == MsgType.TASK_RESULT:
                    value = pl.decode_result(body)
                else:
                    code, attempts, msg = pl.decode_error(body)
                    if code == pl.ERR_NO_SERVERS:
                        value = NoServersAvailable(msg)
                    else:
                        value = TaskPermanentlyFailed(rid, attempts, msg)
                with self._cond:
                    self._outstanding.discard(rid)
                    self._results[rid] = value
                    self._cond.notify_all()
        except (EOFError, ProtocolError, OSError) as e:
            with self._cond:
                self._lost = e
                for rid in self._outstanding:
                    self._results[rid] = GravfarmError(f"agent connection lost: {e}")
                self._outstanding.clear()
                self._cond.notify_all()
            self._closed_reply.set()

    def _submit(self, parts: list) -> int:
        with self._cond:
            if self._lost is not None:
                raise GravfarmError(f"agent connection lost: {self._lost}")
            rid = self._next_request
            self._next_request += 1
            self._outstanding.add(rid)
        with self._send_lock:
            send_parts(self._sock, MsgType.TASK_SUBMIT, [pl.with_id(rid)] + parts)
        return rid


@dataclass
class FunctionHandle:
    name: str
    agent: str
    session: Session
    valid: bool = True

    @property
    def session_id(self) -> int:
        return self.session.session_id


def _check_open(session: Session) -> None:
    if not isinstance(session, Session) or session.state != _OPEN:
        raise LifecycleViolation("session is not initialized or already finalized")


def initialize(agent_addr: str) -> Session:
    """Open a session with the agent at ``HOST:PORT``."""
    return Session(agent_addr)


def handle_default(session: Session, name: str = "ComputeForces") -> FunctionHandle:
    _check_open(session)
    if name not in FUNCTIONS:
        raise LookupError(f"no server function {name!r}")
    h = FunctionHandle(name, session.agent, session)
    session.handles.append(h)
    return h


def call_async(handle: FunctionHandle, body_chunk, lists=None, params=None) -> int:
    """Enqueue one ComputeForces call; returns its request id without waiting.

    Pass either a :class:`~gravfarm.rpc.payloads.Task` or the chunk's bodies with
    their interaction lists and the force parameters.
    """
    if not isinstance(handle, FunctionHandle) or not handle.valid:
        raise LifecycleViolation("call_async on a destroyed or missing handle")
    session = handle.session
    _check_open(session)
    if session._t_first_call is None:
        session._t_first_call = time.perf_counter()
    task = body_chunk if isinstance(body_chunk, pl.Task) else pl.Task.from_lists(body_chunk, lists, params)
    return session._submit(task.encode_parts())


def wait_all(session: Session) -> dict[int, object]:
    """Block until every outstanding request finishes.

    Returns ``{request_id: accelerations}`` for the requests finished since the
    previous wait; failed requests map to their exception instead.
    """
    _check_open(session)
    with session._cond:
        while session._outstanding:
            session._cond.wait()
        out = session._results
        session._results = {}
    if session._t_first_call is not None:
        session._t_last_wait = time.perf_counter()
    return out


def handle_destruct(handle: FunctionHandle) -> None:
    if not isinstance(handle, FunctionHandle) or not handle.valid:
        raise LifecycleViolation("handle already destroyed")
    _check_open(handle.session)
    handle.valid = False


def finalize(session: Session) -> SessionTimes:
    """Close the session and return its init/compute/finalize split."""
    _check_open(session)
    with session._cond:
        if session._outstanding:
            raise LifecycleViolation("finalize with outstanding requests; call wait_all first")
    try:
        with session._send_lock:
            send_message(session._sock, MsgType.SESSION_CLOSE)
        session._closed_reply.wait(10)
    except OSError:
        pass
    session._sock.close()
    session._reader.join(5)
    session.state = _CLOSED
    for h in session.handles:
        h.valid = False
    t_end = time.perf_counter()
    t0 = session._t0
    if session._t_first_call is None:
        split_a = split_b = t_end
    else:
        split_a = session._t_first_call
        split_b = session._t_last_wait or split_a
    tm = session.times
    tm.total = t_end - t0
    if session._t_first_call is None:
        tm.init, tm.compute, tm.finalize = tm.total, 0.0, 0.0
    else:
        tm.init = split_a - t0
        tm.compute = split_b - split_a
        tm.finalize = t_end - split_b
    return tm


def query_registry(agent_addr: str, timeout: float = 5.0) -> tuple[list[dict], dict]:
    """The agent's server records and task counters."""
    with socket.create_connection(parse_address(agent_addr), timeout=timeout) as s:
        send_message(s, MsgType.SERVER_LIST)
        t, payload = recv_message(s)
    if t != MsgType.SERVER_LIST:
        raise ProtocolError(f"expected SERVER_LIST reply, got {t.name}")
    return pl.decode_server_list(payload)


def query_servers(agent_addr: str, timeout: float = 5.0) -> list[dict]:
    return query_registry(agent_addr, timeout)[0]


def merge_results(results: dict[int, object]) -> dict[int, np.ndarray]:
    """Raise the first failure in a wait_all result, else return it unchanged."""
    for rid in sorted(results):
        if isinstance(results[rid], BaseException):
            raise results[rid]
    return results
