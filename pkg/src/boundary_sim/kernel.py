"""Discrete-event engine: simulator, kernel nodes and the task-side API.

Each :class:`Node` is one simulated kernel instance with its own clock,
run queue and linked application.  Nodes talk only through loopback
sockets, whose deliveries are events on the shared heap.  A node's clock
advances by the weight of every event it records, so accounted cycles and
virtual time move together; ``Advance`` adds time without cost (compute
and poll spinning), and wakeups add latency rather than CPU time.
"""

from __future__ import annotations

import heapq
import inspect
import itertools
import random
from typing import Any, Callable, Iterator

from . import errors, transition
from .core import (
    BoundaryConfig, CloneFlag, CostEvent, CostLedger, ExecMode, PathKind, TaskControlBlock,
    TaskState, Weights, load_weights, parse_cmdline,
)
from .memsim import (
    FAULT_STACK_SIZE, AddressSpace, KernelRange, StackKind, VmaKind, new_pinned_stack,
    touch_page,
)
from .sched import (
    IDLE, Advance, Block, Preempt, RunQueue, WaitQueue, Yield, schedule, set_kernel_execution,
    wake_all, yield_cpu,
)
from .services import DispatchChain, FdTable, ServiceId, shortcut_recv, shortcut_send
from .transition import Cause

DEFAULT_NODE = "n0"
DEFAULT_TASK_CAP = 1024


class Node:
    """One kernel instance."""

    def __init__(self, sim: "Simulator", name: str):
        self.sim = sim
        self.name = name
        self.clock = 0
        self.ledger = CostLedger(sim.weights)
        self.rq = RunQueue()
        self.tasks: dict[int, TaskControlBlock] = {}
        self.linked_app: TaskControlBlock | None = None
        self.kernel_range = KernelRange()
        self.fault_stack = new_pinned_stack(self.kernel_range, f"{name}:pf_stack",
                                            StackKind.FaultDedicated, FAULT_STACK_SIZE)
        self.double_fault_stack = new_pinned_stack(self.kernel_range, f"{name}:df_stack",
                                                   StackKind.DoubleFaultDedicated, FAULT_STACK_SIZE)
        self.chain = DispatchChain()
        self.timer_wq = WaitQueue(f"{name}:timer")
        self.stack_vma_fast_path = True
        self.unsafe_return_gates = False
        self.armed_injections: dict[tuple[int, int], Any] = {}
        self.ret_sites = 0
        self.returns_in_flight: list = []
        self.interrupts = 0
        self._gens: dict[int, Iterator] = {}
        self._resume: dict[int, Any] = {}
        self._step_pending = False

    def __repr__(self) -> str:
        return f"<Node {self.name} t={self.clock}>"

    # -- accounting -------------------------------------------------------

    def record(self, event: CostEvent, n: int = 1) -> None:
        if n == 0:
            return
        self.sim.ledger.record(event, n)
        self.ledger.record(event, n)
        if event is not CostEvent.SchedWakeup:
            self.clock = max(self.clock, self.sim.now) + self.ledger.weights[event] * n

    def record_sched_sleep(self) -> None:
        self.record(CostEvent.SchedSleep)

    @property
    def current(self) -> TaskControlBlock | None:
        return self.tasks.get(self.rq.current)

    # -- task lifecycle ---------------------------------------------------

    def new_task(self, path_kind: PathKind, entry, *, parent: TaskControlBlock | None = None,
                 share_mm: bool = False, share_files: bool = False,
                 clone_flags: CloneFlag = CloneFlag.NONE, args=None,
                 daemon: bool = False) -> TaskControlBlock:
        sim = self.sim
        if sim.live_task_count() >= sim.task_cap:
            raise errors.TooManyTasks(f"cap of {sim.task_cap} tasks reached")
        tid = next(sim._task_ids)
        mm = parent.mm if share_mm and parent is not None else AddressSpace(self.kernel_range, f"mm{tid}")
        fds = parent.fds if share_files and parent is not None else FdTable()
        task = TaskControlBlock(
            task_id=tid, path_kind=path_kind, node=self, mm=mm, fds=fds, entry=entry,
            clone_flags=clone_flags, cmdline=list(args or []),
            parent_id=parent.task_id if parent is not None else 0, daemon=daemon,
        )
        config = sim.config
        pinned_user = task.is_linked(config) and config.nss_ps
        task.user_stack = mm.new_user_stack(f"ustack{tid}", pinned=pinned_user)
        task.kernel_stack = new_pinned_stack(self.kernel_range, f"kstack{tid}", StackKind.KernelPinned)
        task.regs.sp = task.user_stack
        if path_kind is PathKind.LinkedApp:
            task.saved_stack_vma = task.user_stack.vma
        self.tasks[tid] = task
        sim.tasks[tid] = task
        return task

    def start(self, task: TaskControlBlock) -> TaskControlBlock:
        result = task.entry(TaskApi(task)) if task.entry is not None else None
        if not inspect.isgenerator(result):
            result = _returns(result)
        self._gens[task.task_id] = result
        task.state = TaskState.Ready
        self.rq.ready.append(task.task_id)
        self.sim._live += 0 if task.daemon else 1
        self.kick()
        return task

    def wait_queues_of(self, task: TaskControlBlock) -> list[WaitQueue]:
        return [task.blocked_on] if task.blocked_on is not None else []

    def wake(self, task: TaskControlBlock) -> None:
        """Make a blocked task runnable after the wakeup latency."""
        self.record(CostEvent.SchedWakeup)
        task.state = TaskState.Ready
        task.blocked_on = None
        sim = self.sim
        at = max(sim.time(), self.clock) + self.ledger.weights[CostEvent.SchedWakeup]
        sim.at(at, self._make_ready, task)

    def _make_ready(self, task: TaskControlBlock) -> None:
        if task.state is not TaskState.Ready or task.task_id in self.rq:
            return
        self.rq.ready.append(task.task_id)
        cur = self.current
        if cur is not None:
            cur.need_resched = True
        self.kick()

    # -- interrupts -------------------------------------------------------

    def take_interrupt(self, task: TaskControlBlock | None, payload: Any = None) -> None:
        """Run an interrupt on ``task`` (None: the idle task)."""
        self.interrupts += 1
        config = self.sim.config
        if task is None or task.state is not TaskState.Running:
            self.record(CostEvent.IretReturn)
            return
        in_kernel = task.mode is ExecMode.Kernel or task.kernel_execution
        frame = transition.kernel_enter(task, Cause.Interrupt, config, kernel_context=in_kernel)
        transition.finish_event(task, frame, config)

    def packet_interrupt(self, sock) -> None:
        if self.sim.net_interrupts:
            self.take_interrupt(self.current, sock.sock_id)

    def start_timer(self, rng: random.Random, lo: int, hi: int) -> None:
        """Periodic wakeups of ``timer_wq`` at seeded intervals."""
        def fire():
            wake_all(self.timer_wq)
            self.sim.at(self.sim.now + rng.randint(lo, hi), fire)
        self.sim.at(self.sim.now + rng.randint(lo, hi), fire)

    # -- stepping ---------------------------------------------------------

    def kick(self) -> None:
        if self._step_pending:
            return
        self._step_pending = True
        self.sim.at(max(self.clock, self.sim.now), self._step)

    def _step(self) -> None:
        self._step_pending = False
        sim = self.sim
        if self.clock > sim.now:
            self.kick()
            return
        self.clock = sim.now
        rq = self.rq
        sim.current_node = self
        try:
            if rq.current == IDLE:
                if not rq.ready:
                    return
                schedule(self)
            task = self.tasks[rq.current]
            if task.preempt_pending:
                task.preempt_pending = False
                if not task.kernel_execution:
                    yield_cpu(self, task, involuntary=True)
                    return
            self._advance(task)
        finally:
            sim.current_node = None
            if rq.current != IDLE or rq.ready:
                self.kick()

    def _advance(self, task: TaskControlBlock) -> None:
        gen = self._gens[task.task_id]
        try:
            instr = gen.send(self._resume.pop(task.task_id, None))
        except StopIteration as stop:
            self._finish(task, stop.value, None)
            return
        except errors.SimError as exc:
            self._finish(task, None, exc)
            return
        if instr is None:
            return
        if isinstance(instr, Advance):
            self.clock += instr.cycles
        elif isinstance(instr, Block):
            if task.state is TaskState.Blocked:
                schedule(self, slept=True)
        elif instr is Yield:
            yield_cpu(self, task)
        elif instr is Preempt:
            yield_cpu(self, task, involuntary=True)
        else:
            raise TypeError(f"task {task.task_id} yielded {instr!r}")

    def _finish(self, task: TaskControlBlock, value: Any, exc: Exception | None) -> None:
        task.state = TaskState.Terminated
        task.exit_value = value
        task.error = exc
        del self._gens[task.task_id]
        if not task.daemon:
            self.sim._live -= 1
        if exc is not None:
            self.sim.failures.append((task, exc))
        self.rq.current = IDLE
        schedule(self)


def _returns(value):
    return value
    yield  # pragma: no cover


class Simulator:
    """Shared event heap plus the nodes it drives.

    Deterministic: there is no wall-clock input and all randomness comes
    from ``seed``.
    """

    def __init__(self, config: BoundaryConfig, weights: Weights | None = None, *, seed: int = 0,
                 trace: bool = False, net_interrupts: bool = True,
                 task_cap: int = DEFAULT_TASK_CAP):
        self.config = config
        self.weights = weights if weights is not None else load_weights()
        self.ledger = CostLedger(self.weights)
        self.delivery_delay = self.weights.delivery_delay
        self.seed = seed
        self.rng = random.Random(seed)
        self.net_interrupts = net_interrupts
        self.task_cap = task_cap
        self.now = 0
        self.current_node: Node | None = None
        self.nodes: dict[str, Node] = {}
        self.tasks: dict[int, TaskControlBlock] = {}
        self.failures: list[tuple[TaskControlBlock, Exception]] = []
        self.trace: list[tuple] | None = [] if trace else None
        self.switches = 0
        self.involuntary_rtc_switches = 0
        self.events_run = 0
        self._events: list = []
        self._seq = itertools.count()
        self._task_ids = itertools.count(1)
        self._sock_ids = itertools.count(1)
        self._live = 0
        self.add_node(DEFAULT_NODE)

    # -- structure --------------------------------------------------------

    def add_node(self, name: str) -> Node:
        if name in self.nodes:
            raise ValueError(f"node {name!r} exists")
        node = Node(self, name)
        self.nodes[name] = node
        return node

    def node(self, name: str = DEFAULT_NODE) -> Node:
        if name not in self.nodes:
            return self.add_node(name)
        return self.nodes[name]

    def next_socket_id(self) -> int:
        return next(self._sock_ids)

    def live_task_count(self) -> int:
        return sum(1 for t in self.tasks.values() if t.state is not TaskState.Terminated)

    def launch_linked_app(self, entry, kernel_cmdline: str = "", *, node: str = DEFAULT_NODE,
                          start: bool = True) -> TaskControlBlock:
        """Start the application linked into ``node``'s kernel.

        There is no binary to load: the task begins at ``entry`` with the
        arguments found after ``--`` on the kernel command line, and the
        launch itself charges nothing.
        """
        target = self.node(node)
        if target.linked_app is not None:
            raise errors.SecondLinkedApp(
                f"node {node} already runs task {target.linked_app.task_id}")
        args = parse_cmdline(kernel_cmdline)
        task = target.new_task(PathKind.LinkedApp, entry, args=args)
        target.linked_app = task
        if start:
            target.start(task)
        return task

    def spawn_process(self, entry, args=(), *, node: str = DEFAULT_NODE, daemon: bool = False,
                      start: bool = True) -> TaskControlBlock:
        """Start an ordinary process; it always takes the trap path."""
        target = self.node(node)
        task = target.new_task(PathKind.TrapProcess, entry, args=list(args), daemon=daemon)
        if start:
            target.start(task)
        return task

    # -- time and events --------------------------------------------------

    def time(self) -> int:
        return self.current_node.clock if self.current_node is not None else self.now

    def at(self, when: int, fn: Callable, *args) -> None:
        heapq.heappush(self._events, (when, next(self._seq), fn, args))

    def run(self, *, max_events: int | None = None, raise_errors: bool = True) -> int:
        """Process events until every non-daemon task has ended.

        Returns the time of the last event processed.  Stops early (leaving
        tasks blocked) when the heap drains, e.g. on deadlock.
        """
        budget = max_events
        while self._events and self._live > 0:
            when, _, fn, args = heapq.heappop(self._events)
            self.now = max(self.now, when)
            fn(*args)
            self.events_run += 1
            if self.failures and raise_errors:
                raise self.failures[0][1]
            if budget is not None:
                budget -= 1
                if budget <= 0:
                    break
        return self.now

    def makespan(self) -> int:
        return max(node.clock for node in self.nodes.values())

    def call(self, task: TaskControlBlock, gen: Iterator) -> Any:
        """Drive one task-side generator to completion right now.

        Used by microbenchmarks and tests.  Blocking is an error here.
        """
        node = task.node
        prev = self.current_node
        self.current_node = node
        task.state = TaskState.Running
        try:
            value = None
            while True:
                try:
                    instr = gen.send(value)
                except StopIteration as stop:
                    return stop.value
                value = None
                if isinstance(instr, Advance):
                    node.clock += instr.cycles
                elif isinstance(instr, Block):
                    instr.wq.waiters.remove(task)
                    task.state = TaskState.Running
                    task.blocked_on = None
                    raise errors.WouldBlock(f"task {task.task_id} would block on {instr.wq.name}")
        finally:
            self.current_node = prev

    # -- trace hooks ------------------------------------------------------

    def _log(self, *entry) -> None:
        if self.trace is not None:
            self.trace.append(entry)

    def log_switch(self, node: Node, prev: int, nxt: int, involuntary: bool) -> None:
        self.switches += 1
        if involuntary:
            prev_task = self.tasks.get(prev)
            if prev_task is not None and prev_task.kernel_execution:
                self.involuntary_rtc_switches += 1
        self._log("switch", node.name, node.clock, prev, nxt, involuntary)

    def log_block(self, task: TaskControlBlock, wq: WaitQueue) -> None:
        task.blocked_on = wq
        self._log("block", task.node.name, task.node.clock, task.task_id, wq.name)

    def log_bypass(self, task: TaskControlBlock) -> None:
        self._log("bypass", task.task_id, task.byp_remaining)

    def log_resched(self, task: TaskControlBlock) -> None:
        self._log("resched", task.task_id)

    def log_signal(self, task: TaskControlBlock, sig: int) -> None:
        self._log("signal", task.task_id, sig)

    def log_fault(self, task, addr, vector, handler_kind, fast) -> None:
        self._log("fault", task.task_id, addr, vector.value,
                  handler_kind.value if handler_kind else None, fast)

    def log_injection(self, task, step, payload) -> None:
        self._log("inject", task.task_id, step, repr(payload))


class TaskApi:
    """What a task body sees.  Kernel calls are generators: ``yield from``."""

    def __init__(self, task: TaskControlBlock):
        self.task = task

    @property
    def node(self) -> Node:
        return self.task.node

    @property
    def config(self) -> BoundaryConfig:
        return self.task.node.sim.config

    @property
    def argv(self) -> list[str]:
        return list(self.task.cmdline)

    @property
    def now(self) -> int:
        return self.task.node.clock

    @property
    def task_id(self) -> int:
        return self.task.task_id

    def _svc(self, sid: ServiceId, *args):
        return transition.invoke_service(self.task, sid, args, self.config)

    # syscalls
    def getppid(self):
        return self._svc(ServiceId.GETPPID)

    def read(self, fd: int, n: int):
        return self._svc(ServiceId.READ, fd, n)

    def write(self, fd: int, data: bytes):
        return self._svc(ServiceId.WRITE, fd, bytes(data))

    def recvfrom(self, fd: int, n: int):
        return self._svc(ServiceId.RECVFROM, fd, n)

    def sendto(self, fd: int, data: bytes):
        return self._svc(ServiceId.SENDTO, fd, bytes(data))

    def poll(self, fds):
        return self._svc(ServiceId.POLL, list(fds))

    def close(self, fd: int):
        return self._svc(ServiceId.CLOSE, fd)

    def mmap(self, length: int, kind: VmaKind = VmaKind.Mmap, pinned: bool = False,
             stack_use: int = 0):
        return self._svc(ServiceId.MMAP, length, kind, pinned, stack_use)

    def clone(self, entry, flags: CloneFlag, args=None):
        return self._svc(ServiceId.CLONE, entry, flags, args)

    def timer_wait(self):
        return self._svc(ServiceId.TIMER_WAIT)

    def write_all(self, fd: int, data: bytes, *, shortcut: bool = False):
        data = bytes(data)
        while data:
            if shortcut:
                n = yield from shortcut_send(self.task, fd, data, self.config)
            else:
                n = yield from self.write(fd, data)
            data = data[n:]

    # deep shortcuts
    def shortcut_send(self, fd: int, data: bytes):
        return shortcut_send(self.task, fd, bytes(data), self.config)

    def shortcut_recv(self, fd: int, n: int):
        return shortcut_recv(self.task, fd, n, self.config)

    # memory
    def touch(self, addr: int):
        return touch_page(self.task, addr, self.config)

    def store(self, addr: int, value: int):
        yield from touch_page(self.task, addr, self.config)
        self.task.mm.words[addr] = value

    def load(self, addr: int):
        yield from touch_page(self.task, addr, self.config)
        return self.task.mm.words.get(addr, 0)

    def push_stack(self, nbytes: int):
        """Grow the current user stack by ``nbytes``, touching each new page."""
        stack = self.task.user_stack
        new_sp = stack.sp - nbytes
        addr = stack.sp
        outcomes = []
        while addr > new_sp:
            addr = max(addr - 4096, new_sp)
            outcomes.append((yield from touch_page(self.task, addr, self.config)))
        stack.sp = new_sp
        return outcomes

    # thread controls
    def set_bypass(self, n: int) -> None:
        transition.set_bypass(self.task, n)

    def set_kernel_execution(self, on: bool) -> None:
        set_kernel_execution(self.task, on, self.config)

    # time
    def compute(self, cycles: int):
        yield Advance(cycles)

    def pause(self):
        yield None

    def yield_(self):
        yield Yield
