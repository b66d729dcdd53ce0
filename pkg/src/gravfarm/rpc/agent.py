"""The agent daemon: server registry, scheduling and task relay.

Servers connect and send REGISTER; every other connection is a client. Client
tasks arrive as TASK_SUBMIT, are queued, assigned to servers as TASK_ASSIGN
and the server's TASK_RESULT or TASK_ERROR is relayed back to the client.
A server whose connection drops or whose heartbeats stop is marked failed and
its tasks requeue on the remaining servers.
"""

from __future__ import annotations

import asyncio
import logging
import threading

from ..errors import DuplicateAddress, NoServersAvailable, ProtocolError
from . import payloads as pl
from .protocol import HEADER, MAGIC, VERSION, MsgType, parse_address, read_message, write_message
from .registry import HEARTBEAT_INTERVAL, MAX_ATTEMPTS, MISSED_HEARTBEATS, Registry, Scheduler

log = logging.getLogger("gravfarm.agent")


class Agent:
    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL,
                 missed: int = MISSED_HEARTBEATS, max_attempts: int = MAX_ATTEMPTS):
        self.host = host
        self.port = port
        self.registry = Registry(heartbeat_interval=heartbeat_interval, missed=missed)
        self.scheduler = Scheduler(self.registry, max_attempts)
        self._servers: dict[int, asyncio.StreamWriter] = {}
        self._sessions: dict[int, asyncio.StreamWriter] = {}
        self._next_session = 0
        self._tcp = None
        self._watchdog = None
        self._handlers: set[asyncio.Task] = set()
        self._closing = False

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self) -> None:
        self._tcp = await asyncio.start_server(self._on_connect, self.host, self.port)
        self.port = self._tcp.sockets[0].getsockname()[1]
        self._watchdog = asyncio.ensure_future(self._watch_heartbeats())
        log.info("agent listening on %s", self.address)

    async def serve_forever(self) -> None:
        if self._tcp is None:
            await self.start()
        async with self._tcp:
            await self._tcp.serve_forever()

    async def close(self) -> None:
        self._closing = True
        if self._watchdog is not None:
            self._watchdog.cancel()
        if self._tcp is not None:
            self._tcp.close()
        for w in list(self._servers.values()) + list(self._sessions.values()):
            w.close()
        for task in list(self._handlers):
            task.cancel()
        await asyncio.gather(*self._handlers, return_exceptions=True)
        if self._tcp is not None:
            await self._tcp.wait_closed()

    def stats(self) -> dict:
        sch = self.scheduler
        return dict(submitted=sch.submitted, completed=sch.completed, pending=sch.pending,
                    inflight=sch.inflight, permanently_failed=sch.permanently_failed,
                    cancelled=sch.cancelled)

    # connections

    async def _on_connect(self, reader, writer) -> None:
        task = asyncio.current_task()
        self._handlers.add(task)
        try:
            try:
                t, payload = await read_message(reader)
            except (EOFError, ProtocolError, ConnectionError):
                writer.close()
                return
            if t == MsgType.REGISTER:
                await self._serve_server(reader, writer, payload)
            else:
                await self._serve_client(reader, writer, t, payload)
        finally:
            self._handlers.discard(task)

    async def _serve_server(self, reader, writer, payload) -> None:
        try:
            capacity, address = pl.decode_register(payload)
            if not address:
                host, port = writer.get_extra_info("peername")[:2]
                address = f"{host}:{port}"
            sid = self.registry.register(address, capacity)
        except (ProtocolError, DuplicateAddress, ValueError) as e:
            log.warning("rejected registration: %s", e)
            write_message(writer, MsgType.TASK_ERROR, pl.with_id(0, pl.encode_error(pl.ERR_MALFORMED, 0, str(e))))
            writer.close()
            return
        self._servers[sid] = writer
        write_message(writer, MsgType.REGISTER_ACK, pl.with_id(sid))
        log.info("server %d registered at %s with %d slots", sid, address, capacity)
        self._pump()
        try:
            while True:
                t, payload = await read_message(reader)
                self.registry.heartbeat(sid)
                if t == MsgType.TASK_RESULT:
                    tid, body = pl.split_id(payload)
                    rec = self.scheduler.complete(tid, sid)
                    if rec is not None:
                        self._to_client(rec.owner, MsgType.TASK_RESULT, body)
                elif t == MsgType.TASK_ERROR:
                    tid, body = pl.split_id(payload)
                    _, _, msg = pl.decode_error(body)
                    rec = self.scheduler.fail(tid, msg)
                    if rec is not None:
                        self._to_client(rec.owner, MsgType.TASK_ERROR,
                                        pl.encode_error(pl.ERR_COMPUTE, rec.attempts, msg))
                self._pump()
        except (EOFError, ProtocolError, ConnectionError, OSError):
            pass
        finally:
            self._server_lost(sid)
            writer.close()

    async def _serve_client(self, reader, writer, t, payload) -> None:
        session = None
        try:
            while True:
                if t == MsgType.SESSION_OPEN:
                    session = self._next_session
                    self._next_session += 1
                    self._sessions[session] = writer
                    alive = self.registry.alive()
                    write_message(writer, MsgType.SESSION_OPEN,
                                  pl.encode_session(session, len(alive), self.registry.total_slots()))
                elif t == MsgType.SERVER_LIST:
                    write_message(writer, MsgType.SERVER_LIST,
                                  pl.encode_server_list(list(self.registry.records.values()),
                                                        self.stats()))
                elif t == MsgType.TASK_SUBMIT and session is not None:
                    rid, body = pl.split_id(payload)
                    self.scheduler.submit((session, rid), body)
                    self._pump()
                elif t == MsgType.SESSION_CLOSE:
                    write_message(writer, MsgType.SESSION_CLOSE)
                    await writer.drain()
                    break
                await writer.drain()
                t, payload = await read_message(reader)
        except (EOFError, ProtocolError, ConnectionError, OSError):
            pass
        finally:
            if session is not None:
                self._sessions.pop(session, None)
                self.scheduler.cancel_owner(lambda owner: owner[0] == session)
                self.scheduler.forget_finished()
            writer.close()

    # scheduling

    def _pump(self) -> None:
        try:
            assigned = self.scheduler.dispatch()
        except NoServersAvailable:
            assigned = []
            for rec in self.scheduler.fail_all_pending("no servers available"):
                self._to_client(rec.owner, MsgType.TASK_ERROR,
                                pl.encode_error(pl.ERR_NO_SERVERS, rec.attempts, "no servers available"))
        for tid, sid in assigned:
            rec = self.scheduler.tasks[tid]
            w = self._servers[sid]
            body = rec.payload
            w.write(HEADER.pack(MAGIC, VERSION, MsgType.TASK_ASSIGN, 8 + len(body)) + pl.with_id(tid))
            w.write(body)

    def _to_client(self, owner, msg_type, body) -> None:
        session, rid = owner
        w = self._sessions.get(session)
        if w is not None and not w.is_closing():
            write_message(w, msg_type, pl.with_id(rid, bytes(body)))

    def _server_lost(self, sid: int) -> None:
        self._servers.pop(sid, None)
        if self._closing or not self.registry.records[sid].alive:
            return
        log.warning("server %d failed", sid)
        for rec in self.scheduler.server_failed(sid):
            self._to_client(rec.owner, MsgType.TASK_ERROR,
                            pl.encode_error(pl.ERR_TASK_FAILED, rec.attempts, rec.reason))
        self._pump()

    async def _watch_heartbeats(self) -> None:
        while True:
            await asyncio.sleep(self.registry.heartbeat_interval)
            for sid in self.registry.expired():
                w = self._servers.get(sid)
                self._server_lost(sid)
                if w is not None:
                    w.close()


def run_agent(listen: str, ready=None, **kw) -> None:
    """Blocking entry point; prints the bound address once listening."""
    host, port = parse_address(listen)

    async def main():
        agent = Agent(host, port, **kw)
        await agent.start()
        if ready is not None:
            ready(agent.address)
        await agent.serve_forever()

    asyncio.run(main())


class AgentThread:
    """An agent running on its own event loop in a daemon thread."""

    def __init__(self, host="127.0.0.1", port=0, **kw):
        self.agent = Agent(host, port, **kw)
        self._loop = asyncio.new_event_loop()
        self._ready = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="gravfarm-agent")

    def _run(self):
        asyncio.set_event_loop(self._loop)
        self._loop.run_until_complete(self.agent.start())
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.agent.close())
        self._loop.close()

    def start(self) -> "AgentThread":
        self._thread.start()
        self._ready.wait(10)
        return self

    @property
    def address(self) -> str:
        return self.agent.address

    def stop(self) -> None:
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(10)
