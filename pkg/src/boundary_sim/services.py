"""Kernel service bodies.

Full-path I/O walks every layer of the dispatch chain; shortcuts call the
transport directly and skip both the chain and the entry/exit work.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from . import errors
from .core import CostEvent
from .memsim import PAGE_SIZE, VmaKind, acquire_mm, kernel_mode_stack_use
from .sched import Advance, WaitQueue, block_on, clone_task, wake_all, wake_one

if TYPE_CHECKING:
    from .core import BoundaryConfig, TaskControlBlock
    from .kernel import Node

DEFAULT_CHAIN = ("syscall_stub", "vfs", "file_ops", "socket_glue", "protocol")
RX_CAPACITY = 64 * 1024
POLL_INCREMENT = 10
FIRST_FD = 3


class Direction(enum.Enum):
    Read = "read"
    Write = "write"
    SendTo = "sendto"
    RecvFrom = "recvfrom"

    @property
    def inbound(self) -> bool:
        return self in (Direction.Read, Direction.RecvFrom)


@dataclass(frozen=True)
class DispatchChain:
    layers: tuple[str, ...] = DEFAULT_CHAIN

    def traverse(self, node: "Node", depth: int | None = None) -> None:
        n = len(self.layers) if depth is None else depth
        node.record(CostEvent.DispatchLayer, n)


class FdTable:
    """Dense descriptor table; 0-2 are reserved, freed numbers are reused."""

    def __init__(self):
        self._files: dict[int, object] = {}

    def install(self, obj: object) -> int:
        fd = FIRST_FD
        while fd in self._files:
            fd += 1
        self._files[fd] = obj
        return fd

    def get(self, fd: int) -> object:
        try:
            return self._files[fd]
        except KeyError:
            raise errors.BadFd(f"fd {fd} is not open") from None

    def remove(self, fd: int) -> object:
        obj = self.get(fd)
        del self._files[fd]
        return obj

    def __contains__(self, fd: int) -> bool:
        return fd in self._files

    def fds(self) -> list[int]:
        return sorted(self._files)


@dataclass(eq=False)
class Segment:
    data: bytes
    deliver_at: int
    fin: bool = False
    dropped: bool = False


@dataclass(eq=False)
class StreamSocket:
    sock_id: int
    node: "Node"
    capacity: int = RX_CAPACITY
    nodelay: bool = True
    peer: "StreamSocket | None" = None
    rx: bytearray = field(default_factory=bytearray)
    eof: bool = False
    closed: bool = False
    inflight: deque = field(default_factory=deque)
    inflight_bytes: int = 0
    sent: int = 0
    received: int = 0
    consumed: int = 0
    segments: int = 0

    def __post_init__(self) -> None:
        self.rx_waitq = WaitQueue(f"sock{self.sock_id}:rx")
        self.tx_waitq = WaitQueue(f"sock{self.sock_id}:tx")
        self.poll_waitqs: list[WaitQueue] = []

    @property
    def readable(self) -> bool:
        return bool(self.rx) or self.eof

    def send_space(self) -> int:
        peer = self.peer
        return max(0, peer.capacity - len(peer.rx) - self.inflight_bytes)

    def transmit(self, data: bytes, *, fin: bool = False) -> None:
        sim = self.node.sim
        now = sim.time()
        last = self.inflight[-1] if self.inflight else None
        if (not self.nodelay and not fin and last is not None and not last.fin
                and not last.dropped):
            last.data += data
        else:
            seg = Segment(bytes(data), now + sim.delivery_delay, fin=fin)
            self.inflight.append(seg)
            self.segments += 1
            sim.at(seg.deliver_at, self._deliver, seg)
        self.inflight_bytes += len(data)
        self.sent += len(data)

    def _deliver(self, seg: Segment) -> None:
        if seg.dropped:
            return
        assert self.inflight and self.inflight[0] is seg, "segments arrive in order"
        self.inflight.popleft()
        self.inflight_bytes -= len(seg.data)
        peer = self.peer
        peer.rx.extend(seg.data)
        peer.received += len(seg.data)
        if seg.fin:
            peer.eof = True
        peer.node.packet_interrupt(peer)
        wake_one(peer.rx_waitq)
        for wq in list(peer.poll_waitqs):
            wake_all(wq)

    def discard_inflight(self) -> int:
        """Drop undelivered segments (benchmark harness drain)."""
        n = 0
        while self.inflight:
            seg = self.inflight.popleft()
            seg.dropped = True
            n += len(seg.data)
        self.inflight_bytes = 0
        return n

    def inject_rx(self, data: bytes) -> None:
        """Place bytes in the receive buffer without charging anything."""
        self.rx.extend(data)
        self.received += len(data)


def _socket(task: "TaskControlBlock", fd: int) -> StreamSocket:
    obj = task.fds.get(fd)
    if not isinstance(obj, StreamSocket):
        raise errors.BadFd(f"fd {fd} is not a stream socket")
    return obj


def _read(task: "TaskControlBlock", sock: StreamSocket, n: int, *, polling: bool) -> Iterator:
    node = task.node
    while not sock.rx:
        if sock.eof or n == 0:
            return b""
        if task.pending_signals:
            raise errors.Interrupted(f"task {task.task_id} read")
        if polling:
            yield Advance(POLL_INCREMENT)
        else:
            yield from block_on(task, sock.rx_waitq)
    data = bytes(sock.rx[:n])
    del sock.rx[:n]
    sock.consumed += len(data)
    node.record(CostEvent.CopyByte, len(data))
    if sock.peer is not None:
        wake_one(sock.peer.tx_waitq)
    return data


def _write(task: "TaskControlBlock", sock: StreamSocket, data: bytes, *, polling: bool) -> Iterator:
    node = task.node
    if sock.closed or sock.peer is None or sock.peer.closed:
        raise errors.PeerClosed(f"socket {sock.sock_id}")
    if not data:
        return 0
    while sock.send_space() == 0:
        if task.pending_signals:
            raise errors.Interrupted(f"task {task.task_id} write")
        if polling:
            yield Advance(POLL_INCREMENT)
        else:
            yield from block_on(task, sock.tx_waitq)
        if sock.peer.closed:
            raise errors.PeerClosed(f"socket {sock.sock_id}")
    chunk = bytes(data[:sock.send_space()])
    node.record(CostEvent.CopyByte, len(chunk))
    sock.transmit(chunk)
    return len(chunk)


def sys_io(task: "TaskControlBlock", config: "BoundaryConfig", fd: int,
           direction: Direction, payload) -> Iterator:
    """read/write/sendto/recvfrom through the full dispatch chain.

    ``payload`` is a byte count for inbound calls and the bytes to send
    for outbound ones.  Returns the data read or the count written.
    """
    sock = _socket(task, fd)
    node = task.node
    node.chain.traverse(node)
    polling = task.kernel_execution
    if direction.inbound:
        if payload < 0:
            raise ValueError("length must be non-negative")
        return (yield from _read(task, sock, payload, polling=polling))
    return (yield from _write(task, sock, payload, polling=polling))


def _shortcut_socket(task: "TaskControlBlock", fd: int, config: "BoundaryConfig") -> StreamSocket:
    if not task.is_linked(config):
        raise errors.ShortcutOnTrapProcess(f"task {task.task_id}")
    return _socket(task, fd)


def shortcut_send(task: "TaskControlBlock", fd: int, data: bytes, config: "BoundaryConfig") -> Iterator:
    """Hand bytes straight to the transport: no chain, no entry/exit."""
    sock = _shortcut_socket(task, fd, config)
    return (yield from _write(task, sock, data, polling=task.kernel_execution))


def shortcut_recv(task: "TaskControlBlock", fd: int, n: int, config: "BoundaryConfig") -> Iterator:
    """Pull bytes straight from the transport; polls under run-to-completion."""
    sock = _shortcut_socket(task, fd, config)
    return (yield from _read(task, sock, n, polling=task.kernel_execution))


def socket_pair_over_loopback(task_a: "TaskControlBlock", task_b: "TaskControlBlock", *,
                              nodelay: bool = True, capacity: int = RX_CAPACITY) -> tuple[int, int]:
    """Connect two tasks (possibly on different nodes); returns their fds."""
    sim = task_a.node.sim
    a = StreamSocket(sim.next_socket_id(), task_a.node, capacity, nodelay)
    b = StreamSocket(sim.next_socket_id(), task_b.node, capacity, nodelay)
    a.peer, b.peer = b, a
    return task_a.fds.install(a), task_b.fds.install(b)


# -- service table ------------------------------------------------------------

class ServiceId(enum.Enum):
    GETPPID = "getppid"
    READ = "read"
    WRITE = "write"
    SENDTO = "sendto"
    RECVFROM = "recvfrom"
    POLL = "poll"
    CLOSE = "close"
    MMAP = "mmap"
    CLONE = "clone"
    TIMER_WAIT = "timer_wait"


def svc_getppid(task, config):
    # the handler itself: one hop through the syscall table
    task.node.chain.traverse(task.node, 1)
    return task.parent_id
    yield  # pragma: no cover


def _io(direction: Direction):
    def body(task, config, fd, payload):
        return (yield from sys_io(task, config, fd, direction, payload))
    body.__name__ = f"svc_{direction.value}"
    return body


def svc_poll(task, config, fds):
    node = task.node
    node.chain.traverse(node, 1)
    socks = [(fd, _socket(task, fd)) for fd in fds]
    while True:
        ready = [fd for fd, s in socks if s.readable]
        if ready:
            return ready
        if task.pending_signals:
            raise errors.Interrupted(f"task {task.task_id} poll")
        if task.kernel_execution:
            yield Advance(POLL_INCREMENT)
            continue
        wq = WaitQueue(f"poll:{task.task_id}")
        for _, s in socks:
            s.poll_waitqs.append(wq)
        try:
            yield from block_on(task, wq)
        finally:
            for _, s in socks:
                s.poll_waitqs.remove(wq)


def svc_close(task, config, fd):
    task.node.chain.traverse(task.node, 1)
    obj = task.fds.remove(fd)
    if isinstance(obj, StreamSocket) and not obj.closed:
        obj.closed = True
        if obj.peer is not None and not obj.peer.closed:
            obj.transmit(b"", fin=True)
        wake_all(obj.rx_waitq)
    return 0
    yield  # pragma: no cover


def svc_mmap(task, config, length, kind=VmaKind.Mmap, pinned=False, stack_use=0):
    """Map a region; ``stack_use`` is kernel stack consumed while locked."""
    node = task.node
    node.chain.traverse(node, 1)
    lock = task.mm.mm_lock
    yield from acquire_mm(task, lock)
    try:
        vma = task.mm.map_region(length, kind, pinned)
        yield from kernel_mode_stack_use(task, stack_use, config)
    finally:
        if lock.owner is task:
            lock.release(task)
    return vma.start * PAGE_SIZE


def svc_clone(task, config, entry, flags, args=None):
    task.node.chain.traverse(task.node, 1)
    child = clone_task(task, flags, entry, config, args=args)
    task.node.start(child)
    return child.task_id
    yield  # pragma: no cover


def svc_timer_wait(task, config):
    task.node.chain.traverse(task.node, 1)
    yield from block_on(task, task.node.timer_wq)
    return 0


SERVICE_TABLE = {
    ServiceId.GETPPID: svc_getppid,
    ServiceId.READ: _io(Direction.Read),
    ServiceId.WRITE: _io(Direction.Write),
    ServiceId.SENDTO: _io(Direction.SendTo),
    ServiceId.RECVFROM: _io(Direction.RecvFrom),
    ServiceId.POLL: svc_poll,
    ServiceId.CLOSE: svc_close,
    ServiceId.MMAP: svc_mmap,
    ServiceId.CLONE: svc_clone,
    ServiceId.TIMER_WAIT: svc_timer_wait,
}
