"""Loopback TCP transport.

Every node listens on its own 127.0.0.1 port; node addresses resolve to ports
through a local registry, which stands in for multicast name resolution.
Each directed link is one TCP connection that opens with a hello line naming
the sender, followed by newline-delimited frames. One reader coroutine per
connection hands whole frames to the owning node on the event loop thread.

``time_scale`` shrinks all timers so scenarios written in protocol seconds
run quickly on the wall clock.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
from collections import deque
from pathlib import Path
from typing import Callable

from .errors import UnknownNode
from .scenario import RunResult, Scenario, build_nodes, collect_results
from .transport import Node, Transcript, TranscriptRecord

log = logging.getLogger(__name__)


class SocketNetwork:
    def __init__(self, host: str = "127.0.0.1", time_scale: float = 1.0):
        self.host = host
        self.time_scale = time_scale
        self.nodes: dict[str, Node] = {}
        self.ports: dict[str, int] = {}
        self.transcript = Transcript()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._t0 = 0.0
        self._seq = itertools.count()
        self._queues: dict[tuple[str, str], asyncio.Queue] = {}
        self._pending: dict[tuple[str, str], deque] = {}
        self._tasks: list[asyncio.Task] = []
        self._servers: list[asyncio.base_events.Server] = []
        self._writers: list[asyncio.StreamWriter] = []

    @property
    def now(self) -> float:
        return (self._loop.time() - self._t0) / self.time_scale

    def register(self, node: Node) -> None:
        self.nodes[node.address] = node
        node.attach(self)

    async def open(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._t0 = self._loop.time()
        for address, node in self.nodes.items():
            server = await asyncio.start_server(
                lambda r, w, node=node: self._serve(node, r, w), self.host, 0
            )
            self.ports[address] = server.sockets[0].getsockname()[1]
            self._servers.append(server)

    def start(self) -> None:
        for node in list(self.nodes.values()):
            node.start()

    def send(self, src: str, dst: str, frame: bytes) -> None:
        if dst not in self.nodes:
            raise UnknownNode(dst)
        link = (src, dst)
        if link not in self._queues:
            self._queues[link] = asyncio.Queue()
            self._pending[link] = deque()
            self._tasks.append(self._loop.create_task(self._write(src, dst, self._queues[link])))
        self._pending[link].append((next(self._seq), self.now, frame))
        self._queues[link].put_nowait(frame)

    def broadcast(self, src: str, frame: bytes) -> None:
        for address in list(self.nodes):
            if address != src:
                self.send(src, address, frame)

    def call_later(self, address: str, delay: float, fn: Callable[[], None]) -> asyncio.TimerHandle:
        return self._loop.call_later(delay * self.time_scale, fn)

    async def _write(self, src: str, dst: str, queue: asyncio.Queue) -> None:
        _, writer = await asyncio.open_connection(self.host, self.ports[dst])
        self._writers.append(writer)
        writer.write(src.encode() + b"\n")
        while True:
            frame = await queue.get()
            writer.write(frame)
            await writer.drain()

    async def _serve(self, node: Node, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._writers.append(writer)
        hello = await reader.readline()
        src = hello.rstrip(b"\n").decode()
        link = (src, node.address)
        while True:
            frame = await reader.readline()
            if not frame:
                break
            seq, sent_at, _ = self._pending[link].popleft()
            self.transcript.append(
                TranscriptRecord(seq, sent_at, self.now, src, node.address, "delivered", frame)
            )
            try:
                node.on_frame(src, frame)
            except Exception:
                log.exception("%s failed handling a frame from %s", node.address, src)

    async def close(self) -> Transcript:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        for writer in self._writers:
            writer.close()
        for server in self._servers:
            server.close()
            await server.wait_closed()
        for link, pending in sorted(self._pending.items()):
            while pending:
                seq, sent_at, frame = pending.popleft()
                self.transcript.append(TranscriptRecord(seq, sent_at, self.now, link[0], link[1], "in_flight", frame))
        return self.transcript


def run_socket(
    scenario: Scenario, log_dir: str | Path | None = None, deadline: float = 30.0, time_scale: float = 1.0
) -> RunResult:
    """Run a fault-free scenario over loopback TCP until every request is
    answered or ``deadline`` wall-clock seconds pass."""
    if scenario.faults:
        raise ValueError("the socket transport runs fault-free scenarios only")

    async def main() -> RunResult:
        net = SocketNetwork(time_scale=time_scale)
        gateway, sources, consumers = build_nodes(scenario, log_dir)
        for node in (gateway, *sources.values(), *consumers.values()):
            net.register(node)
        await net.open()
        net.start()
        loop = asyncio.get_running_loop()
        stop = loop.time() + deadline
        while loop.time() < stop and not all(c.all_answered() for c in consumers.values()):
            await asyncio.sleep(0.005)
        await asyncio.sleep(scenario.params.settle * time_scale)
        end = net.now
        transcript = await net.close()
        transcript.records.sort(key=lambda r: (r.time, r.seq))
        return RunResult(
            collect_results(gateway, consumers),
            transcript,
            {sid: node.tlog for sid, node in sources.items()},
            gateway,
            sources,
            consumers,
            end,
        )

    return asyncio.run(main())
