"""Deterministic cooperative scheduling.

Task bodies are generators.  They hand control back to their node by
yielding one of the instructions below; plain ``yield`` (``None``) just
lets other nodes catch up in virtual time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from . import errors
from .core import CloneFlag, PathKind, TaskState

if TYPE_CHECKING:
    from .core import BoundaryConfig, TaskControlBlock
    from .kernel import Node

IDLE = 0


@dataclass(frozen=True)
class Block:
    wq: "WaitQueue"


@dataclass(frozen=True)
class Advance:
    """Burn ``cycles`` of virtual time without touching the ledger."""

    cycles: int


class _Marker:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name


Yield = _Marker("Yield")
Preempt = _Marker("Preempt")


class WaitQueue:
    def __init__(self, name: str):
        self.name = name
        self.waiters: deque["TaskControlBlock"] = deque()

    def __len__(self) -> int:
        return len(self.waiters)

    def __repr__(self) -> str:
        return f"<WaitQueue {self.name} {[t.task_id for t in self.waiters]}>"


@dataclass
class RunQueue:
    ready: deque[int] = field(default_factory=deque)
    current: int = IDLE

    def __contains__(self, task_id: int) -> bool:
        return task_id == self.current or task_id in self.ready


def schedule(node: "Node", *, slept: bool = False, involuntary: bool = False) -> int:
    """Round-robin pick of the next task on ``node``.

    ``slept`` means the outgoing task blocked voluntarily, which costs a
    SchedSleep.  Returns the new current task id (0 is the idle task).
    """
    rq = node.rq
    prev = rq.current
    if slept:
        node.record_sched_sleep()
    nxt = rq.ready.popleft() if rq.ready else IDLE
    rq.current = nxt
    if nxt != IDLE:
        node.tasks[nxt].state = TaskState.Running
    node.sim.log_switch(node, prev, nxt, involuntary)
    return nxt


def yield_cpu(node: "Node", task: "TaskControlBlock", *, involuntary: bool = False) -> int:
    task.state = TaskState.Ready
    node.rq.ready.append(task.task_id)
    return schedule(node, involuntary=involuntary)


def block_on(task: "TaskControlBlock", wq: WaitQueue) -> Iterator:
    """Park ``task`` on ``wq`` until someone wakes it."""
    task.state = TaskState.Blocked
    wq.waiters.append(task)
    task.node.sim.log_block(task, wq)
    yield Block(wq)


def wake_one(wq: WaitQueue) -> "TaskControlBlock | None":
    """Wake the FIFO head of ``wq``; an empty queue is a no-op."""
    while wq.waiters:
        task = wq.waiters.popleft()
        if task.state is TaskState.Blocked:
            task.node.wake(task)
            return task
    return None


def wake_all(wq: WaitQueue) -> int:
    n = 0
    while wake_one(wq) is not None:
        n += 1
    return n


def set_kernel_execution(task: "TaskControlBlock", on: bool, config: "BoundaryConfig") -> None:
    """Toggle run-to-completion for a linked task."""
    if not task.is_linked(config):
        raise errors.KernelExecOnTrapProcess(f"task {task.task_id}")
    task.kernel_execution = bool(on)


def deliver_signal(task: "TaskControlBlock", sig: int) -> None:
    """Queue ``sig``; it is acted on at the next non-bypassed exit check."""
    task.pending_signals.append(sig)
    if task.state is TaskState.Blocked:
        for wq in task.node.wait_queues_of(task):
            try:
                wq.waiters.remove(task)
            except ValueError:
                pass
        task.node.wake(task)


def clone_task(parent: "TaskControlBlock", flags: CloneFlag, entry, config: "BoundaryConfig",
               *, args=None) -> "TaskControlBlock":
    """Create a thread of ``parent``.

    Under CLONE_UKL the child's start state is read from wherever the
    parent's entry frame lives: the kernel stack when the config switches
    stacks, the user stack under nss/nss_ps.  Without the flag a linked
    parent's state is looked up on the kernel stack only, which is wrong
    when no switch happened.
    """
    node = parent.node
    frame = parent.frames[-1] if parent.frames else None
    if frame is None or frame.bypassed:
        raise errors.BadThreadState("clone outside of a kernel entry")
    if parent.path_kind is PathKind.LinkedApp and CloneFlag.UKL in flags:
        source = frame.on_stack
    else:
        source = parent.kernel_stack
    child = node.new_task(
        parent.path_kind, entry, parent=parent,
        share_mm=CloneFlag.VM in flags, share_files=CloneFlag.FILES in flags,
        clone_flags=flags, args=list(args or parent.cmdline),
    )
    child.initial_state_source = source.kind.value if source is not None else None
    if source is not None and frame in source.slots:
        child.regs.pc = frame.return_target
        child.regs.flags = frame.saved_flags
    else:
        child.regs.pc = None
    return child
