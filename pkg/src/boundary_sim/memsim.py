"""Simulated address space, stacks and page-fault handling.

The layout keeps the usual split: demand-paged user regions below
``USER_TOP``, a pinned kernel range from ``KERNEL_BASE`` up.  Three fault
stack policies are modeled:

* default -- the handler runs on the kernel stack (or, without a stack
  switch, on whatever stack was current);
* ``pf_df`` -- a fault on the current stack cannot push its frame, so it
  escalates to a double fault whose handler owns a dedicated pinned
  stack and branches to the page-fault handler;
* ``pf_ss`` -- every page fault is vectored onto a dedicated stack.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from . import errors
from .core import CostEvent, ExecMode
from .sched import WaitQueue, block_on, wake_one
from . import transition
from .transition import Cause

if TYPE_CHECKING:
    from .core import BoundaryConfig, TaskControlBlock

PAGE_SIZE = 4096
KiB = 1024
MiB = 1024 * KiB

USER_STACK_SIZE = 8 * MiB
KERNEL_STACK_SIZE = 16 * KiB
NSS_PINNED_STACK_SIZE = 1 * MiB
FAULT_STACK_SIZE = 16 * KiB
KERNEL_BUDGET = 64 * MiB
GUARD_GAP_PAGES = 1

USER_TOP = 0x7FFF_FFFF_F000
KERNEL_BASE = 0xFFFF_8000_0000_0000
HEAP_BASE = 0x0060_0000
MMAP_TOP = USER_TOP - 16 * 1024 * MiB


def page_of(addr: int) -> int:
    return addr // PAGE_SIZE


def pages_for(length: int) -> int:
    return -(-length // PAGE_SIZE)


class VmaKind(enum.Enum):
    Stack = "stack"
    Mmap = "mmap"
    Heap = "heap"


class PageState(enum.Enum):
    Absent = "absent"
    Populated = "populated"


class StackKind(enum.Enum):
    UserDemandPaged = "user_demand_paged"
    KernelPinned = "kernel_pinned"
    NssPinnedUser = "nss_pinned_user"
    FaultDedicated = "fault_dedicated"
    DoubleFaultDedicated = "double_fault_dedicated"


@dataclass(eq=False)
class Vma:
    start: int  # first page
    end: int  # one past the last page
    kind: VmaKind
    pinned: bool = False
    max_pages: int = 0  # growth limit for stacks

    @property
    def pages(self) -> int:
        return self.end - self.start

    def __contains__(self, page: int) -> bool:
        return self.start <= page < self.end

    def can_grow_to(self, page: int) -> bool:
        return (self.kind is VmaKind.Stack and not self.pinned
                and page == self.start - GUARD_GAP_PAGES
                and self.pages < self.max_pages)

    def covers_or_grows(self, page: int) -> bool:
        return page in self or self.can_grow_to(page)

    def __repr__(self) -> str:
        return f"<Vma {self.kind.value} [{self.start:#x},{self.end:#x}){' pinned' if self.pinned else ''}>"


@dataclass(eq=False)
class Stack:
    name: str
    kind: StackKind
    size: int
    top: int
    vma: Vma | None = None
    slots: list = field(default_factory=list)
    sp: int = 0

    def __post_init__(self) -> None:
        if not self.sp:
            self.sp = self.top - 64

    @property
    def pinned(self) -> bool:
        return self.kind is not StackKind.UserDemandPaged

    @property
    def low_watermark(self) -> int:
        if self.vma is not None and not self.pinned:
            return self.vma.start * PAGE_SIZE
        return self.top - self.size

    def usable(self) -> bool:
        return self.pinned

    def __repr__(self) -> str:
        return f"<Stack {self.name} {self.kind.value} depth={len(self.slots)}>"


class KernelRange:
    """Bump allocator over the pinned kernel range with a byte budget."""

    def __init__(self, budget: int = KERNEL_BUDGET):
        self.budget = budget
        self.used = 0
        self._cursor = KERNEL_BASE

    def alloc(self, nbytes: int, what: str = "") -> int:
        nbytes = pages_for(nbytes) * PAGE_SIZE
        if self.used + nbytes > self.budget:
            raise errors.AddressSpaceExhausted(
                f"kernel range budget {self.budget} bytes exceeded allocating {what or nbytes}")
        start = self._cursor
        self._cursor += nbytes
        self.used += nbytes
        return start


class MmLock:
    """Non-recursive lock guarding an address space's VMA set."""

    def __init__(self, name: str):
        self.owner: "TaskControlBlock | None" = None
        self.waitq = WaitQueue(f"mm_lock:{name}")
        self.acquisitions = 0
        self.releases = 0

    def release(self, task: "TaskControlBlock") -> None:
        if self.owner is not task:
            raise errors.LockOwnership(
                f"task {task.task_id} released a lock owned by "
                f"{self.owner.task_id if self.owner else None}")
        self.releases += 1
        self.owner = None
        nxt = wake_one(self.waitq)
        if nxt is not None:
            self.owner = nxt
            self.acquisitions += 1
            nxt.waiting_lock = None


def acquire_mm(task: "TaskControlBlock", lock: MmLock, *, recursion_error: bool = True) -> Iterator:
    """Take ``lock``, sleeping while someone else holds it.

    A self-held lock raises MmLockHeld, unless ``recursion_error`` is off:
    then the task waits on itself, which is exactly the fault-handler
    deadlock the stack-VMA fast path avoids.
    """
    if lock.owner is None:
        lock.owner = task
        lock.acquisitions += 1
        return
    if lock.owner is task and recursion_error:
        raise errors.MmLockHeld(f"task {task.task_id} already holds {lock.waitq.name}")
    task.waiting_lock = lock
    # release() hands the lock over and clears waiting_lock; a task
    # waiting on itself is never handed anything
    while task.waiting_lock is lock:
        yield from block_on(task, lock.waitq)


class AddressSpace:
    def __init__(self, kernel_range: KernelRange, name: str = "mm"):
        self.name = name
        self.kernel_range = kernel_range
        self.vmas: list[Vma] = []
        self.page_map: dict[int, PageState] = {}
        self.mm_lock = MmLock(name)
        self.words: dict[int, int] = {}
        self._stack_cursor = page_of(USER_TOP)
        self._mmap_cursor = page_of(MMAP_TOP)
        self._heap_cursor = page_of(HEAP_BASE)

    @property
    def user_vmas(self) -> list[Vma]:
        return [v for v in self.vmas if v.start < page_of(KERNEL_BASE)]

    def state(self, page: int) -> PageState:
        if page >= page_of(KERNEL_BASE):
            return PageState.Populated
        return self.page_map.get(page, PageState.Absent)

    def populated(self, page: int) -> bool:
        return self.state(page) is PageState.Populated

    def find_vma(self, page: int) -> Vma | None:
        for vma in self.vmas:
            if page in vma:
                return vma
        return None

    def fault_target(self, page: int) -> Vma:
        """VMA that legitimately covers ``page`` (possibly by growing)."""
        vma = self.find_vma(page)
        if vma is not None:
            return vma
        for vma in self.vmas:
            if vma.can_grow_to(page):
                return vma
        raise errors.SegFault(f"address {page * PAGE_SIZE:#x} is not mapped")

    def populate(self, page: int, vma: Vma) -> None:
        if vma.can_grow_to(page):
            vma.start = page
        if page not in vma:
            raise errors.SegFault(f"page {page:#x} outside {vma}")
        self.page_map[page] = PageState.Populated

    def _insert(self, vma: Vma) -> Vma:
        for other in self.vmas:
            if vma.start < other.end and other.start < vma.end:
                raise AssertionError(f"{vma} overlaps {other}")
        self.vmas.append(vma)
        self.vmas.sort(key=lambda v: v.start)
        return vma

    def map_region(self, length: int, kind: VmaKind, pinned: bool = False) -> Vma:
        """Create a VMA; callers hold ``mm_lock``."""
        if length <= 0:
            raise ValueError("length must be positive")
        npages = pages_for(length)
        if pinned:
            start = page_of(self.kernel_range.alloc(npages * PAGE_SIZE, f"pinned {kind.value}"))
        elif kind is VmaKind.Heap:
            start = self._heap_cursor
            self._heap_cursor += npages
        else:
            self._mmap_cursor -= npages
            start = self._mmap_cursor
        if not pinned and self._heap_cursor > self._mmap_cursor:
            raise errors.AddressSpaceExhausted("user range exhausted")
        return self._insert(Vma(start, start + npages, kind, pinned=pinned))

    def new_user_stack(self, name: str, *, pinned: bool = False) -> Stack:
        if pinned:
            base = self.kernel_range.alloc(NSS_PINNED_STACK_SIZE, f"pinned stack {name}")
            vma = self._insert(Vma(page_of(base), page_of(base + NSS_PINNED_STACK_SIZE),
                                   VmaKind.Stack, pinned=True))
            return Stack(name, StackKind.NssPinnedUser, NSS_PINNED_STACK_SIZE,
                         base + NSS_PINNED_STACK_SIZE, vma)
        top = self._stack_cursor
        max_pages = USER_STACK_SIZE // PAGE_SIZE
        self._stack_cursor -= max_pages + GUARD_GAP_PAGES + 1
        vma = self._insert(Vma(top - 1, top, VmaKind.Stack, max_pages=max_pages))
        self.page_map[top - 1] = PageState.Populated
        return Stack(name, StackKind.UserDemandPaged, USER_STACK_SIZE, top * PAGE_SIZE, vma)

    def snapshot(self) -> tuple:
        """Layout-independent view used by equivalence checks."""
        return (tuple(sorted(self.words.items())),)


def new_pinned_stack(kernel_range: KernelRange, name: str, kind: StackKind,
                     size: int = KERNEL_STACK_SIZE) -> Stack:
    base = kernel_range.alloc(size, name)
    return Stack(name, kind, size, base + size)


def mmap_region(space: AddressSpace, task: "TaskControlBlock", length: int, kind: VmaKind,
                pinned: bool = False) -> Vma:
    """Map a region under ``mm_lock`` (synchronous; the lock must be free)."""
    lock = space.mm_lock
    if lock.owner is task:
        raise errors.MmLockHeld(f"task {task.task_id} already holds {lock.waitq.name}")
    if lock.owner is not None:
        raise errors.MmLockHeld(f"{lock.waitq.name} held by task {lock.owner.task_id}")
    lock.owner = task
    lock.acquisitions += 1
    try:
        return space.map_region(length, kind, pinned)
    finally:
        lock.release(task)


@dataclass(frozen=True)
class FaultOutcome:
    faulted: bool
    vector: CostEvent | None = None
    handler_stack: StackKind | None = None
    fast_path: bool = False


NO_FAULT = FaultOutcome(False)


def touch_page(task: "TaskControlBlock", addr: int, config: "BoundaryConfig") -> Iterator:
    """Access ``addr``; run the configured fault path if the page is absent.

    Generator (the slow path may sleep on ``mm_lock``); returns a
    :class:`FaultOutcome`.
    """
    space = task.mm
    page = page_of(addr)
    if space.populated(page):
        return NO_FAULT
    vma = space.fault_target(page)
    node = task.node
    cur = task.regs.sp
    on_current_stack = (cur is not None and not cur.pinned and cur.vma is not None
                        and cur.vma is vma)
    linked = task.is_linked(config)
    dedicated = None
    vector = CostEvent.PageFaultVector
    count_switch = True
    if linked and config.pf_ss:
        dedicated = node.fault_stack
    elif linked and not config.switches_stack and on_current_stack:
        # the frame push itself faults: nothing left to push onto
        if not config.pf_df:
            raise errors.KernelPanic("stack fault with no stack to vector onto")
        dedicated = node.double_fault_stack
        if not dedicated.usable():
            raise errors.TripleFault("double-fault stack is not resident")
        vector = CostEvent.DoubleFaultVector
        count_switch = False
    frame = transition.kernel_enter(task, Cause.Fault, config,
                                    handler_stack=dedicated, count_switch=count_switch)
    node.record(vector)
    handler_kind = frame.on_stack.kind if frame.on_stack is not None else None
    if vma.kind is VmaKind.Stack and not vma.pinned:
        cur_stack = vma_stack_of(task, vma)
        if cur_stack is not None:
            cur_stack.sp = min(cur_stack.sp, addr)
    fast = yield from handle_page_fault(task, addr, config)
    transition.finish_event(task, frame, config)
    node.sim.log_fault(task, addr, vector, handler_kind, fast)
    return FaultOutcome(True, vector, handler_kind, fast)


def vma_stack_of(task: "TaskControlBlock", vma: Vma) -> Stack | None:
    if task.user_stack is not None and task.user_stack.vma is vma:
        return task.user_stack
    return None


def handle_page_fault(task: "TaskControlBlock", addr: int, config: "BoundaryConfig") -> Iterator:
    """Populate the faulting page.  Returns True if the lock-free stack path ran."""
    space = task.mm
    page = page_of(addr)
    saved = task.saved_stack_vma
    if task.node.stack_vma_fast_path and saved is not None and saved.covers_or_grows(page):
        space.populate(page, saved)
        return True
    yield from acquire_mm(task, space.mm_lock, recursion_error=False)
    try:
        vma = space.fault_target(page)
        space.populate(page, vma)
    finally:
        space.mm_lock.release(task)
    return False


@dataclass(frozen=True)
class DeadlockReport:
    cycle: tuple[int, ...]


def deadlock_monitor(*spaces: AddressSpace) -> DeadlockReport | None:
    """Look for a cycle in the wait-for graph over the given mm locks."""
    waits_for: dict[int, int] = {}
    for space in spaces:
        lock = space.mm_lock
        if lock.owner is None:
            continue
        for waiter in lock.waitq.waiters:
            waits_for[waiter.task_id] = lock.owner.task_id
    for start in sorted(waits_for):
        path: list[int] = []
        seen: set[int] = set()
        cur = start
        while cur in waits_for and cur not in seen:
            seen.add(cur)
            path.append(cur)
            cur = waits_for[cur]
        if cur in seen:
            return DeadlockReport(tuple(path[path.index(cur):]))
    return None


def kernel_mode_stack_use(task: "TaskControlBlock", nbytes: int, config: "BoundaryConfig") -> Iterator:
    """Kernel code consuming ``nbytes`` of whatever stack it runs on.

    Only a demand-paged stack (the user stack under nss) can fault here.
    """
    stack = task.regs.sp
    if stack is None or stack.pinned or nbytes <= 0:
        return
    if task.mode is not ExecMode.Kernel:
        raise AssertionError("kernel stack use outside kernel mode")
    saved_sp = stack.sp
    target = saved_sp - nbytes
    addr = saved_sp - PAGE_SIZE
    while addr >= target:
        yield from touch_page(task, addr, config)
        addr -= PAGE_SIZE
    yield from touch_page(task, target, config)
    stack.sp = saved_sp
