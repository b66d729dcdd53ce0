"""Payload schemas carried inside protocol frames (all little-endian).

Task traffic is enveloped by a u64 id: the client's request id on
TASK_SUBMIT and on replies to the client, the agent's task id between agent
and server. The task body after the id is

    eps, g_const, dt            3 x f64
    n_bodies, n_points          2 x u32
    n_entries                   u64
    index_width                 u8 (2 or 4)
    bodies                      n_bodies x 64 B (id u64, mass, pos[3], vel[3])
    points                      n_points x 32 B (mass, pos[3])
    offsets                     (n_bodies + 1) x u64
    index                       n_entries x u16 or u32

``index[offsets[i]:offsets[i + 1]]`` lists the point rows body ``i`` sums
over. Only points some list references are shipped, in order of first use,
and the index narrows to u16 whenever the point table allows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..bodies import BodySet
from ..errors import MalformedTask, ProtocolError
from ..forces import accelerations_from_lists
from ..orb import BODY_DTYPE

POINT_DTYPE = np.dtype([("mass", "<f8"), ("pos", "<f8", 3)])
_ID = struct.Struct("<Q")
_TASK_HEAD = struct.Struct("<dddIIQB")
_U32 = struct.Struct("<I")
_SESSION = struct.Struct("<QII")
_RECORD = struct.Struct("<QIIQBH")

# TASK_ERROR codes
ERR_TASK_FAILED = 1
ERR_NO_SERVERS = 2
ERR_COMPUTE = 3
ERR_MALFORMED = 4
_ERR = struct.Struct("<BI")


def with_id(ident: int, body: bytes = b"") -> bytes:
    return _ID.pack(ident) + body


def split_id(payload: bytes) -> tuple[int, memoryview]:
    if len(payload) < _ID.size:
        raise ProtocolError("payload too short for its id envelope")
    return _ID.unpack_from(payload)[0], memoryview(payload)[_ID.size:]


@dataclass
class Task:
    """One ComputeForces call: target bodies, their lists and force parameters."""

    bodies: BodySet
    offsets: np.ndarray
    index: np.ndarray
    point_mass: np.ndarray
    point_pos: np.ndarray
    eps: float
    g_const: float
    dt: float = 0.0

    def __len__(self) -> int:
        return len(self.bodies)

    @classmethod
    def from_lists(cls, bodies: BodySet, lists, params) -> "Task":
        """Task for ``bodies`` (aligned with ``lists`` targets) over a compacted point table."""
        if len(bodies) != len(lists):
            raise ValueError(f"{len(bodies)} bodies but {len(lists)} lists")
        pm, pp = lists.tree.points()
        lo, hi = lists.offsets[0], lists.offsets[-1]
        index, used = _compact(lists.index[lo:hi], pm.shape[0])
        if used.shape[0] <= 1 << 16:
            index = index.astype(np.uint16)
        return cls(bodies, lists.offsets - lo, index, pm[used], pp[used],
                   params.eps, params.g_const, params.dt)

    def encode_parts(self) -> list:
        """The encoded task as a list of buffers, for scatter-gather sends."""
        b = np.empty(len(self.bodies), dtype=BODY_DTYPE)
        b["id"] = self.bodies.ids
        b["mass"] = self.bodies.mass
        b["pos"] = self.bodies.pos
        b["vel"] = self.bodies.vel
        p = np.empty(self.point_mass.shape[0], dtype=POINT_DTYPE)
        p["mass"] = self.point_mass
        p["pos"] = self.point_pos
        width = 2 if self.index.dtype.itemsize == 2 else 4
        index = np.ascontiguousarray(self.index, dtype="<u2" if width == 2 else "<u4")
        head = _TASK_HEAD.pack(self.eps, self.g_const, self.dt, b.shape[0], p.shape[0],
                               int(index.shape[0]), width)
        return [head, b.data.cast("B"), p.data.cast("B"),
                np.asarray(self.offsets, dtype="<u8").data.cast("B"), index.data.cast("B")]

    def encode(self) -> bytes:
        return b"".join(self.encode_parts())

    @classmethod
    def decode(cls, data) -> "Task":
        data = memoryview(data)
        if len(data) < _TASK_HEAD.size:
            raise MalformedTask("task shorter than its header")
        eps, g, dt, nb, npnt, ne, width = _TASK_HEAD.unpack_from(data)
        if width not in (2, 4):
            raise MalformedTask(f"index width {width}")
        sizes = (nb * BODY_DTYPE.itemsize, npnt * POINT_DTYPE.itemsize, (nb + 1) * 8, ne * width)
        if len(data) != _TASK_HEAD.size + sum(sizes):
            raise MalformedTask(f"task body is {len(data)} bytes, header implies "
                                f"{_TASK_HEAD.size + sum(sizes)}")
        at = _TASK_HEAD.size
        parts = []
        for size in sizes:
            parts.append(data[at:at + size])
            at += size
        b = np.frombuffer(parts[0], dtype=BODY_DTYPE)
        p = np.frombuffer(parts[1], dtype=POINT_DTYPE)
        offsets = np.frombuffer(parts[2], dtype="<u8").astype(np.int64)
        index = np.frombuffer(parts[3], dtype="<u2" if width == 2 else "<u4")
        if offsets[0] != 0 or offsets[-1] != ne or np.any(np.diff(offsets) < 0):
            raise MalformedTask("list offsets are not a valid CSR run")
        if ne and int(index.max()) >= npnt:
            raise MalformedTask("list entry points past the point table")
        if not (np.isfinite(eps) and eps >= 0):
            raise MalformedTask(f"bad softening {eps}")
        if nb and not np.all(b["mass"] > 0):
            raise MalformedTask("non-positive body mass")
        bodies = BodySet(b["id"].astype(np.int64), b["mass"], b["pos"], b["vel"], np.zeros((nb, 3)))
        return cls(bodies, offsets, index, np.ascontiguousarray(p["mass"]),
                   np.ascontiguousarray(p["pos"]), eps, g, dt)


@njit(cache=True, nogil=True)
def _compact(index, n_points):
    """Renumber the points ``index`` touches by first use; returns (new index, used rows)."""
    remap = np.full(n_points, -1, dtype=np.int64)
    used = np.empty(min(index.shape[0], n_points), dtype=np.int64)
    out = np.empty(index.shape[0], dtype=np.uint32)
    k = 0
    for e in range(index.shape[0]):
        j = index[e]
        r = remap[j]
        if r < 0:
            r = k
            remap[j] = k
            used[k] = j
            k += 1
        out[e] = r
    return out, used[:k]


def server_compute_forces(task: Task) -> np.ndarray:
    """Accelerations for each body of ``task``; the same kernel as local evaluation."""
    return accelerations_from_lists(task.bodies.pos, task.offsets, task.index,
                                    task.point_mass, task.point_pos, task.eps, task.g_const)


def encode_result(acc: np.ndarray) -> bytes:
    acc = np.ascontiguousarray(acc, dtype="<f8").reshape(-1, 3)
    return _U32.pack(acc.shape[0]) + acc.tobytes()


def decode_result(data) -> np.ndarray:
    data = memoryview(data)
    if len(data) < 4:
        raise ProtocolError("result shorter than its count")
    n = _U32.unpack_from(data)[0]
    if len(data) != 4 + 24 * n:
        raise ProtocolError(f"result for {n} bodies has {len(data)} bytes")
    return np.frombuffer(data[4:], dtype="<f8").reshape(n, 3).copy()


def encode_error(code: int, attempts: int, message: str) -> bytes:
    return _ERR.pack(code, attempts) + message.encode()


def decode_error(data) -> tuple[int, int, str]:
    data = bytes(data)
    if len(data) < _ERR.size:
        raise ProtocolError("error payload too short")
    code, attempts = _ERR.unpack_from(data)
    return code, attempts, data[_ERR.size:].decode(errors="replace")


def encode_register(capacity: int, address: str) -> bytes:
    return _U32.pack(capacity) + address.encode()


def decode_register(data) -> tuple[int, str]:
    data = bytes(data)
    if len(data) < 4:
        raise ProtocolError("register payload too short")
    return _U32.unpack_from(data)[0], data[4:].decode()


def encode_session(session_id: int, servers: int, slots: int) -> bytes:
    return _SESSION.pack(session_id, servers, slots)


def decode_session(data) -> tuple[int, int, int]:
    if len(data) != _SESSION.size:
        raise ProtocolError("bad session payload")
    return _SESSION.unpack(bytes(data))


STAT_FIELDS = ("submitted", "completed", "pending", "inflight", "permanently_failed", "cancelled")
_STATS = struct.Struct("<6Q")


def encode_server_list(records, stats=None) -> bytes:
    """Registry records followed by the scheduler's task counters."""
    out = [_U32.pack(len(records))]
    for r in records:
        addr = r.address.encode()
        out.append(_RECORD.pack(r.server_id, r.capacity, r.inflight, r.completed, int(r.alive), len(addr)))
        out.append(addr)
    stats = stats or {}
    out.append(_STATS.pack(*(int(stats.get(k, 0)) for k in STAT_FIELDS)))
    return b"".join(out)


def decode_server_list(data) -> tuple[list[dict], dict]:
    data = bytes(data)
    (n,) = _U32.unpack_from(data)
    at = 4
    out = []
    for _ in range(n):
        sid, cap, inflight, done, alive, k = _RECORD.unpack_from(data, at)
        at += _RECORD.size
        out.append(dict(server_id=sid, capacity=cap, inflight=inflight, completed=done,
                        alive=bool(alive), address=data[at:at + k].decode()))
        at += k
    if at + _STATS.size != len(data):
        raise ProtocolError("bad server list length")
    stats = dict(zip(STAT_FIELDS, _STATS.unpack_from(data, at)))
    return out, stats
