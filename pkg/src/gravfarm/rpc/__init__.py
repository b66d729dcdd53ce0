"""Agent, compute servers and the client API over a framed binary protocol."""

from .client import (call_async, finalize, handle_default, handle_destruct, initialize,
                     query_servers, wait_all)
from .fabric import LocalFabric
from .payloads import Task, server_compute_forces
from .protocol import MsgType, decode_message, encode_message
from .registry import Registry, Scheduler, ServerRecord

__all__ = ["call_async", "finalize", "handle_default", "handle_destruct", "initialize",
           "query_servers", "wait_all", "LocalFabric", "Task", "server_compute_forces",
           "MsgType", "decode_message", "encode_message", "Registry", "Scheduler", "ServerRecord"]
