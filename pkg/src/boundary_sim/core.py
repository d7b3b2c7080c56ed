"""Tasks, boundary configurations and the cost ledger.

A :class:`BoundaryConfig` picks one point between an ordinary process
(``Trap``) and an application linked into the kernel (``LinkedBase`` plus
optional flags).  Every boundary action charges a :class:`CostEvent` to a
:class:`CostLedger`; accounted cycles are ``sum(count * weight)``.
"""

from __future__ import annotations

import enum
import shlex
from collections import Counter
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Iterable, Iterator, Mapping

from . import errors

if TYPE_CHECKING:
    from .kernel import Node
    from .memsim import AddressSpace, Stack, Vma
    from .services import FdTable


class ExecMode(enum.Enum):
    Application = "application"
    Kernel = "kernel"


class PathKind(enum.Enum):
    TrapProcess = "trap_process"
    LinkedApp = "linked_app"


class Baseline(enum.Enum):
    Trap = "trap"
    LinkedBase = "linked"


class CloneFlag(enum.Flag):
    NONE = 0
    VM = enum.auto()
    FILES = enum.auto()
    THREAD = enum.auto()
    UKL = enum.auto()


CLONE_UKL = CloneFlag.UKL
CLONE_THREAD_FLAGS = CloneFlag.VM | CloneFlag.FILES | CloneFlag.THREAD


class CostEvent(enum.Enum):
    ModeSwitchEnter = "ModeSwitchEnter"
    ModeSwitchExit = "ModeSwitchExit"
    IretReturn = "IretReturn"
    RetReturn = "RetReturn"
    StackSwitch = "StackSwitch"
    EntryChecks = "EntryChecks"
    ExitChecks = "ExitChecks"
    DispatchLayer = "DispatchLayer"
    CopyByte = "CopyByte"
    PageFaultVector = "PageFaultVector"
    DoubleFaultVector = "DoubleFaultVector"
    SchedWakeup = "SchedWakeup"
    SchedSleep = "SchedSleep"


# Table 1 order; also the canonical order of config labels.
FLAG_NAMES = ("byp", "nss", "nss_ps", "ret", "pf_df", "pf_ss")


@dataclass(frozen=True)
class BoundaryConfig:
    baseline: Baseline = Baseline.Trap
    byp: bool = False
    nss: bool = False
    nss_ps: bool = False
    ret: bool = False
    pf_df: bool = False
    pf_ss: bool = False

    def __post_init__(self) -> None:
        _validate(self)

    @classmethod
    def _unchecked(cls, **kw: Any) -> "BoundaryConfig":
        # test hook: builds a config that skips validation
        obj = object.__new__(cls)
        defaults = {f.name: f.default for f in fields(cls)}
        defaults.update(kw)
        for name, value in defaults.items():
            object.__setattr__(obj, name, value)
        return obj

    @property
    def linked(self) -> bool:
        return self.baseline is Baseline.LinkedBase

    @property
    def switches_stack(self) -> bool:
        """True when kernel entry moves onto the pinned kernel stack."""
        return not (self.nss or self.nss_ps)

    def flags(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in FLAG_NAMES}

    @property
    def label(self) -> str:
        if not self.linked:
            return "trap"
        on = [name for name in FLAG_NAMES if getattr(self, name)]
        return ",".join(on) if on else "base"

    def __str__(self) -> str:
        return self.label


def _validate(cfg: BoundaryConfig) -> None:
    if cfg.nss and cfg.nss_ps:
        raise errors.ConflictingFlags("nss and nss_ps are mutually exclusive")
    if cfg.pf_df and cfg.pf_ss:
        raise errors.ConflictingFlags("pf_df and pf_ss are mutually exclusive")
    if not cfg.linked:
        on = [n for n in FLAG_NAMES if getattr(cfg, n)]
        if on:
            raise errors.FlagsRequireLinked(
                f"{','.join(on)} require baseline=linked")
    if (cfg.nss or cfg.nss_ps) and not (cfg.pf_df or cfg.pf_ss):
        raise errors.MissingFaultPolicy(
            "nss/nss_ps need a fault stack policy (pf_df or pf_ss)")


def make_config(baseline: Baseline | str | None = None, **flags: bool) -> BoundaryConfig:
    """Build a validated config from named booleans.

    ``baseline`` defaults to ``LinkedBase`` when any flag is set and to
    ``Trap`` otherwise.  Conflicts raise; nothing is normalized away.
    """
    unknown = set(flags) - set(FLAG_NAMES)
    if unknown:
        raise errors.UnknownFlag(", ".join(sorted(unknown)))
    if isinstance(baseline, str):
        try:
            baseline = Baseline(baseline)
        except ValueError:
            raise errors.UnknownFlag(f"baseline {baseline!r}") from None
    if baseline is None:
        baseline = Baseline.LinkedBase if any(flags.values()) else Baseline.Trap
    return BoundaryConfig(baseline=baseline, **{k: bool(v) for k, v in flags.items()})


TRAP = BoundaryConfig()
BASE = BoundaryConfig(baseline=Baseline.LinkedBase)


def all_valid_configs() -> list[BoundaryConfig]:
    """Every valid point of the configuration space (29 of them)."""
    out = [TRAP]
    for byp in (False, True):
        for ret in (False, True):
            for stack in ("switch", "nss", "nss_ps"):
                for pf in ("none", "pf_df", "pf_ss"):
                    kw = dict(byp=byp, ret=ret)
                    if stack != "switch":
                        kw[stack] = True
                    if pf != "none":
                        kw[pf] = True
                    try:
                        out.append(make_config(Baseline.LinkedBase, **kw))
                    except errors.MissingFaultPolicy:
                        continue
    return out


# -- cost ledger ------------------------------------------------------------

WEIGHTS_FILE = "weights.txt"
PARAM_KEYS = {"NetDeliveryDelay": 200}


@dataclass
class Weights:
    events: dict[CostEvent, int]
    params: dict[str, int] = field(default_factory=lambda: dict(PARAM_KEYS))

    def __getitem__(self, ev: CostEvent) -> int:
        return self.events[ev]

    @property
    def delivery_delay(self) -> int:
        return self.params["NetDeliveryDelay"]

    def dumps(self) -> str:
        lines = [f"{ev.value}={self.events[ev]}" for ev in CostEvent]
        lines += [f"{k}={v}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"


def parse_weights(text: str, source: str = "<string>") -> Weights:
    """Parse ``key=value`` lines.  Unknown or repeated keys are rejected."""
    events: dict[CostEvent, int] = {}
    params: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep:
            raise errors.WeightFileError(f"{where}: expected key=value")
        try:
            number = int(value)
        except ValueError:
            raise errors.WeightFileError(f"{where}: {value!r} is not an integer") from None
        if number < 0:
            raise errors.WeightFileError(f"{where}: negative weight")
        if key in PARAM_KEYS:
            if key in params:
                raise errors.WeightFileError(f"{where}: duplicate key {key}")
            params[key] = number
            continue
        try:
            ev = CostEvent(key)
        except ValueError:
            raise errors.WeightFileError(f"{where}: unknown key {key!r}") from None
        if ev in events:
            raise errors.WeightFileError(f"{where}: duplicate key {key}")
        events[ev] = number
    missing = [ev.value for ev in CostEvent if ev not in events]
    if missing:
        raise errors.WeightFileError(f"{source}: missing {', '.join(missing)}")
    return Weights(events, {**PARAM_KEYS, **params})


def default_weights_text() -> str:
    return resources.files(__package__).joinpath("data", WEIGHTS_FILE).read_text()


def load_weights(path: str | Path | None = None) -> Weights:
    if path is None:
        return parse_weights(default_weights_text(), WEIGHTS_FILE)
    path = Path(path)
    return parse_weights(path.read_text(), str(path))


class CostLedger:
    """Monotone event counters plus the weight table that prices them."""

    def __init__(self, weights: Weights | Mapping[CostEvent, int] | None = None):
        if weights is None:
            weights = load_weights()
        if isinstance(weights, Weights):
            weights = weights.events
        self.weights: dict[CostEvent, int] = dict(weights)
        self.counts: Counter[CostEvent] = Counter()

    def record(self, event: CostEvent, n: int = 1) -> None:
        if n < 0:
            raise ValueError("event counts only grow")
        self.counts[event] += n

    def snapshot(self) -> Counter[CostEvent]:
        return Counter(self.counts)

    def delta(self, since: Counter[CostEvent]) -> Counter[CostEvent]:
        return Counter({e: c - since[e] for e, c in self.counts.items() if c - since[e]})

    def cycles(self) -> int:
        return ledger_cycles(self)

    def price(self, counts: Mapping[CostEvent, int]) -> int:
        return sum(n * self.weights[e] for e, n in counts.items())


def ledger_cycles(ledger: CostLedger) -> int:
    return sum(n * ledger.weights[e] for e, n in ledger.counts.items())


# -- tasks ------------------------------------------------------------------

IF_FLAG = 0x200  # interrupt-enable bit of the flags word
USER_FLAGS = IF_FLAG | 0x2


@dataclass
class Regs:
    pc: int | None = 0
    flags: int = USER_FLAGS
    sp: "Stack | None" = None

    @property
    def interrupts_enabled(self) -> bool:
        return bool(self.flags & IF_FLAG)

    def snapshot(self) -> tuple:
        return (self.pc, self.flags, self.sp.name if self.sp else None)


class TaskState(enum.Enum):
    Ready = "ready"
    Running = "running"
    Blocked = "blocked"
    Terminated = "terminated"


AppEntry = Callable[..., Iterator[Any]]


@dataclass(eq=False)
class TaskControlBlock:
    task_id: int
    path_kind: PathKind
    node: "Node"
    mm: "AddressSpace"
    fds: "FdTable"
    entry: AppEntry | None = None
    mode: ExecMode = ExecMode.Application
    byp_remaining: int = 0
    kernel_execution: bool = False
    user_stack: "Stack | None" = None
    kernel_stack: "Stack | None" = None
    saved_stack_vma: "Vma | None" = None
    need_resched: bool = False
    pending_signals: list[int] = field(default_factory=list)
    clone_flags: CloneFlag = CloneFlag.NONE
    cmdline: list[str] = field(default_factory=list)
    parent_id: int = 0
    regs: Regs = field(default_factory=Regs)
    state: TaskState = TaskState.Ready
    delivered_signals: list[int] = field(default_factory=list)
    preempt_pending: bool = False
    daemon: bool = False
    exit_value: Any = None
    initial_state_source: str | None = None
    frames: list = field(default_factory=list)
    waiting_lock: Any = None
    blocked_on: Any = None
    error: Exception | None = None

    @property
    def name(self) -> str:
        return f"{self.path_kind.value}:{self.task_id}"

    def is_linked(self, config: BoundaryConfig) -> bool:
        """Whether this task crosses the boundary on the linked path."""
        return self.path_kind is PathKind.LinkedApp and config.linked

    def __repr__(self) -> str:
        return f"<Task {self.task_id} {self.path_kind.value} {self.mode.value} {self.state.value}>"


CMDLINE_DELIMITER = "--"


def parse_cmdline(kernel_cmdline: str) -> list[str]:
    """Return the application arguments after the first ``--`` token."""
    try:
        tokens = shlex.split(kernel_cmdline)
    except ValueError as exc:
        raise errors.BadCmdline(str(exc)) from None
    if CMDLINE_DELIMITER not in tokens:
        return []
    return tokens[tokens.index(CMDLINE_DELIMITER) + 1:]

