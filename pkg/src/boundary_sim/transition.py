"""Application <-> kernel transitions.

Entry and exit are charged per path:

=================  =======================================  =============================
path               entry                                    exit
=================  =======================================  =============================
trap process       ModeSwitchEnter, EntryChecks, StackSwitch  ExitChecks, ModeSwitchExit, StackSwitch
linked             EntryChecks, StackSwitch                 ExitChecks, StackSwitch
linked, nss        EntryChecks                              ExitChecks
bypassed syscall   (nothing)                                (nothing)
=================  =======================================  =============================

Faults and interrupts return either with one atomic ``iret`` or, with
``ret`` enabled, through a five-step protocol that keeps interrupts
masked until the saved flags are popped on the application stack.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterator

from . import errors
from .core import IF_FLAG, CostEvent, ExecMode
from .sched import Preempt

if TYPE_CHECKING:
    from .core import BoundaryConfig, TaskControlBlock
    from .memsim import Stack

_frame_ids = itertools.count(1)


class Cause(enum.Enum):
    Syscall = "syscall"
    Fault = "fault"
    Interrupt = "interrupt"


@dataclass(eq=False)
class Frame:
    return_target: int | None
    saved_flags: int
    saved_stack: "Stack | None"
    entered_via: Cause
    prev_mode: ExecMode = ExecMode.Application
    on_stack: "Stack | None" = None
    bypassed: bool = False
    kernel_context: bool = False
    consumed: bool = False
    frame_id: int = field(default_factory=lambda: next(_frame_ids))

    def __repr__(self) -> str:
        return f"<Frame {self.entered_via.value} ret={self.return_target}>"


class ReturnProtocolStep(enum.IntEnum):
    CopyRetAddrToUserStack = 0
    CopyFlagsToUserStack = 1
    SwitchToUserStack = 2
    PopFlags = 3
    PlainReturn = 4


# Interrupts may be taken once the step has executed (flags restored).
GATE_OPEN_AFTER = (False, False, False, True, True)


def kernel_enter(task: "TaskControlBlock", cause: Cause, config: "BoundaryConfig", *,
                 handler_stack: "Stack | None" = None, count_switch: bool = True,
                 kernel_context: bool = False) -> Frame:
    """Enter the kernel and return the frame that the matching exit consumes.

    ``kernel_context`` marks an event landing on a thread that already
    runs as kernel code (run-to-completion): no entry/exit work is done.
    """
    if cause is Cause.Syscall and task.mode is ExecMode.Kernel:
        raise errors.ReentrantEnter(f"task {task.task_id} is already in the kernel")
    node = task.node
    regs = task.regs
    linked = task.is_linked(config)
    frame = Frame(regs.pc, regs.flags, regs.sp, cause, prev_mode=task.mode,
                  kernel_context=kernel_context)
    if cause is Cause.Syscall and linked and config.byp and task.byp_remaining > 0:
        task.byp_remaining -= 1
        frame.bypassed = True
        task.mode = ExecMode.Kernel
        task.frames.append(frame)
        node.sim.log_bypass(task)
        return frame
    from_app = task.mode is ExecMode.Application and not kernel_context
    if from_app:
        if not linked:
            node.record(CostEvent.ModeSwitchEnter)
        node.record(CostEvent.EntryChecks)
    if handler_stack is not None:
        target = handler_stack
    elif from_app and (not linked or config.switches_stack):
        target = task.kernel_stack
    else:
        target = regs.sp
    if target is not regs.sp and count_switch:
        node.record(CostEvent.StackSwitch)
    target.slots.append(frame)
    frame.on_stack = target
    regs.sp = target
    if cause is not Cause.Syscall:
        regs.flags &= ~IF_FLAG
    task.mode = ExecMode.Kernel
    task.frames.append(frame)
    return frame


def _check_frame(task: "TaskControlBlock", frame: Frame) -> None:
    if frame.consumed:
        raise errors.FrameReuse(f"frame {frame.frame_id} already consumed")
    if task.mode is not ExecMode.Kernel:
        raise AssertionError(f"task {task.task_id} leaving the kernel from {task.mode}")


def _consume(task: "TaskControlBlock", frame: Frame) -> None:
    frame.consumed = True
    if task.frames and task.frames[-1] is frame:
        task.frames.pop()
    else:
        task.frames.remove(frame)


def _deliver_signals(task: "TaskControlBlock") -> None:
    while task.pending_signals:
        sig = task.pending_signals.pop(0)
        task.delivered_signals.append(sig)
        task.node.sim.log_signal(task, sig)


def _restore(task: "TaskControlBlock", frame: Frame, *, count_switch: bool = True) -> None:
    stack = frame.on_stack
    if stack is not None:
        stack.slots.remove(frame)
    regs = task.regs
    if count_switch and stack is not frame.saved_stack:
        task.node.record(CostEvent.StackSwitch)
    regs.sp = frame.saved_stack
    regs.flags = frame.saved_flags
    regs.pc = frame.return_target
    task.mode = frame.prev_mode
    _consume(task, frame)


def kernel_exit(task: "TaskControlBlock", frame: Frame, config: "BoundaryConfig") -> Iterator:
    """Leave the kernel after a syscall (generator: may reschedule)."""
    _check_frame(task, frame)
    if frame.bypassed:
        task.mode = frame.prev_mode
        _consume(task, frame)
        return
    node = task.node
    node.record(CostEvent.ExitChecks)
    if task.need_resched and not task.kernel_execution:
        task.need_resched = False
        node.sim.log_resched(task)
        yield Preempt
    _deliver_signals(task)
    if not task.is_linked(config):
        node.record(CostEvent.ModeSwitchExit)
    _restore(task, frame)


def finish_event(task: "TaskControlBlock", frame: Frame, config: "BoundaryConfig") -> None:
    """Exit work for a fault or interrupt, then the configured return.

    A pending reschedule is latched in ``preempt_pending`` and honored by
    the node before the task runs again.
    """
    _check_frame(task, frame)
    if frame.prev_mode is ExecMode.Application and not frame.kernel_context:
        node = task.node
        node.record(CostEvent.ExitChecks)
        if task.need_resched and not task.kernel_execution:
            task.need_resched = False
            task.preempt_pending = True
            node.sim.log_resched(task)
        _deliver_signals(task)
        if not task.is_linked(config):
            node.record(CostEvent.ModeSwitchExit)
    return_from_event(task, frame, config)


@dataclass
class ReturnInFlight:
    task: "TaskControlBlock"
    frame: Frame
    site: int
    step: int = -1
    releasing: bool = False
    queued: list[Any] = field(default_factory=list)
    trace: list[tuple[int, str]] = field(default_factory=list)


def return_from_event(task: "TaskControlBlock", frame: Frame, config: "BoundaryConfig") -> None:
    if frame.entered_via is Cause.Syscall:
        raise AssertionError("syscall frames leave through kernel_exit")
    _check_frame(task, frame)
    node = task.node
    use_ret = (config.ret and task.is_linked(config)
               and frame.prev_mode is ExecMode.Application and not frame.kernel_context)
    if not use_ret:
        node.record(CostEvent.IretReturn)
        _restore(task, frame, count_switch=False)
        return
    _ret_protocol(task, frame)


def _ret_protocol(task: "TaskControlBlock", frame: Frame) -> None:
    node = task.node
    regs = task.regs
    site = node.ret_sites
    node.ret_sites += 1
    proto = ReturnInFlight(task, frame, site)
    node.returns_in_flight.append(proto)
    target = frame.saved_stack
    gates = (True,) * 5 if node.unsafe_return_gates else GATE_OPEN_AFTER
    try:
        for step in ReturnProtocolStep:
            proto.step = step
            armed = node.armed_injections.pop((site, int(step)), None)
            if armed is not None:
                inject_interrupt_at(node, step, armed)
            if step > 0 and gates[step - 1]:
                _drain(node, proto, "before", step)
            if step is ReturnProtocolStep.CopyRetAddrToUserStack:
                target.slots.append(("ret", frame.return_target))
                proto.releasing = True
            elif step is ReturnProtocolStep.CopyFlagsToUserStack:
                target.slots.append(("flags", frame.saved_flags))
            elif step is ReturnProtocolStep.SwitchToUserStack:
                frame.on_stack.slots.remove(frame)
                if frame.on_stack is not target:
                    node.record(CostEvent.StackSwitch)
                regs.sp = target
                task.mode = frame.prev_mode
                proto.releasing = False
            elif step is ReturnProtocolStep.PopFlags:
                kind, flags = target.slots.pop()
                if kind != "flags":
                    raise errors.HalfSwitchedStack(f"expected saved flags, found {kind}")
                regs.flags = flags
            else:
                kind, pc = target.slots.pop()
                if kind != "ret":
                    raise errors.HalfSwitchedStack(f"expected return address, found {kind}")
                regs.pc = pc
                node.record(CostEvent.RetReturn)
            proto.trace.append((int(step), regs.sp.name if regs.sp else "-"))
            if gates[step] and step is not ReturnProtocolStep.PlainReturn:
                _drain(node, proto, "after", step)
        _consume(task, frame)
    finally:
        node.returns_in_flight.remove(proto)
    if proto.queued:
        _drain(node, proto, "after", ReturnProtocolStep.PlainReturn)


def _drain(node, proto: ReturnInFlight, when: str, step: ReturnProtocolStep) -> None:
    while proto.queued:
        payload = proto.queued.pop(0)
        task = proto.task
        if proto.releasing and task.regs.sp is proto.frame.on_stack:
            raise errors.HalfSwitchedStack(
                f"interrupt {payload!r} taken {when} {step.name} on a stack being released")
        proto.trace.append((-1, f"irq:{payload}@{task.regs.sp.name}"))
        node.take_interrupt(task, payload)


def inject_interrupt_at(node, step: ReturnProtocolStep | int, payload: Any) -> None:
    """Queue an interrupt against the innermost in-flight ``ret`` return.

    It is delivered at the first point the step gates permit, never
    earlier.
    """
    if not node.returns_in_flight:
        raise errors.NoReturnInFlight("no ret-protocol return is in progress")
    proto = node.returns_in_flight[-1]
    proto.queued.append(payload)
    node.sim.log_injection(proto.task, int(step), payload)


def set_bypass(task: "TaskControlBlock", n: int) -> None:
    """Skip entry/exit work for the next ``n`` syscalls of this thread."""
    from .core import PathKind

    if task.path_kind is not PathKind.LinkedApp:
        raise errors.BypassOnTrapProcess(f"task {task.task_id}")
    if n < 0:
        raise ValueError("bypass count must be non-negative")
    task.byp_remaining = n


def invoke_service(task: "TaskControlBlock", service_id, args: tuple, config: "BoundaryConfig") -> Iterator:
    """Full syscall: enter, run the service body, exit.

    Service errors travel back through the exit path unchanged.
    """
    from .services import SERVICE_TABLE

    if task.mode is not ExecMode.Application:
        raise errors.ReentrantEnter(f"task {task.task_id} is already in the kernel")
    body = SERVICE_TABLE[service_id]
    task.regs.pc = (task.regs.pc or 0) + 1
    frame = kernel_enter(task, Cause.Syscall, config)
    try:
        result = yield from body(task, config, *args)
    except errors.SimError:
        yield from kernel_exit(task, frame, config)
        raise
    yield from kernel_exit(task, frame, config)
    return result
