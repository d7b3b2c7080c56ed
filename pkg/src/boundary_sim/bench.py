"""Benchmark families: syscall micro, page faults, KV server, message ring.

Every run builds a fresh :class:`Simulator`, so results depend only on
(profile, parameters, seed, weights).  Latencies are accounted cycles.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterable

from . import errors
from .core import TRAP, Baseline, BoundaryConfig, FLAG_NAMES, Weights, make_config
from .kernel import Simulator, TaskApi
from .memsim import PAGE_SIZE, VmaKind, deadlock_monitor
from .services import socket_pair_over_loopback
from .stats import SampleSet, StatsSummary, improvement, summarize
from .transition import ReturnProtocolStep

MICRO_OPS = ("getppid", "read", "write", "sendto", "recvfrom")
PAYLOADS = (1, 64, 512, 4096, 8192)
DEFAULT_ITERS = 10_000
PF_NPAGES = (64, 256, 1024)
KV_CLIENTS = 30
KV_REQUESTS = 1000
KV_SET_GET = (1, 10)
KV_KEYS = 64
KV_SERVER_WORK = 400
RING_ROWS = (100, 1000, 10000)
RING_MSG_RANGE = (8, 24)
RING_ROW_WORK = 1000
BYPASS_ALL = 1 << 40
EXTRA_FLAGS = ("shortcut", "rtc")


# -- profiles -----------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """A boundary config plus the application-side modifications."""

    config: BoundaryConfig = TRAP
    shortcut: bool = False
    run_to_completion: bool = False

    def __post_init__(self) -> None:
        if (self.shortcut or self.run_to_completion) and not self.config.linked:
            raise errors.FlagsRequireLinked("shortcut and rtc require baseline=linked")

    @property
    def label(self) -> str:
        extras = [name for name, on in (("shortcut", self.shortcut),
                                        ("rtc", self.run_to_completion)) if on]
        base = self.config.label
        if not extras:
            return base
        return ",".join(([] if base == "base" else [base]) + extras)

    def __str__(self) -> str:
        return self.label


def parse_profile(text: str, baseline: str | Baseline | None = None) -> Profile:
    """Parse a comma list such as ``ret,byp,shortcut``.

    ``trap`` and ``base``/``linked`` name the baselines; every other token
    is a boundary flag or one of ``shortcut``/``rtc``.
    """
    tokens = [t.strip().lower() for t in text.split(",") if t.strip()]
    flags: dict[str, bool] = {}
    extras = set()
    for tok in tokens:
        if tok == "trap":
            baseline = _merge_baseline(baseline, Baseline.Trap)
        elif tok in ("base", "linked"):
            baseline = _merge_baseline(baseline, Baseline.LinkedBase)
        elif tok in EXTRA_FLAGS:
            extras.add(tok)
        elif tok in FLAG_NAMES:
            flags[tok] = True
        else:
            raise errors.UnknownFlag(tok)
    if isinstance(baseline, str):
        baseline = Baseline(baseline)
    if baseline is None and extras:
        baseline = Baseline.LinkedBase
    config = make_config(baseline, **flags)
    return Profile(config, "shortcut" in extras, "rtc" in extras)


def _merge_baseline(current, new: Baseline) -> Baseline:
    if isinstance(current, str):
        current = Baseline(current)
    if current is not None and current is not new:
        raise errors.ConflictingFlags("trap and linked baselines both given")
    return new


def as_profile(p: Profile | BoundaryConfig | str) -> Profile:
    if isinstance(p, Profile):
        return p
    if isinstance(p, BoundaryConfig):
        return Profile(p)
    return parse_profile(p)


KV_PROFILES = ("trap", "base", "ret,byp", "ret,byp,shortcut")
RING_PROFILES = ("trap", "ret,byp,shortcut,rtc")


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode())
    return h.hexdigest()


# -- microbenchmarks ----------------------------------------------------------

def run_micro(profile, op: str, payload: int = 1, iters: int = DEFAULT_ITERS, *,
              weights: Weights | None = None, seed: int = 0) -> SampleSet:
    """Per-call cost of one syscall, measured ``iters`` times.

    The harness keeps I/O from ever blocking: reads find ``payload`` bytes
    already buffered and writes are drained after each call.
    """
    profile = as_profile(profile)
    if op not in MICRO_OPS:
        raise ValueError(f"unknown op {op!r}")
    if op != "getppid" and payload <= 0:
        raise ValueError("I/O payload must be at least one byte")
    if iters < 1:
        raise ValueError("iters must be positive")
    sim = Simulator(profile.config, weights, seed=seed)
    app = sim.launch_linked_app(None, "micro --", start=False)
    api = TaskApi(app)
    if profile.config.byp:
        api.set_bypass(iters)
    rng = random.Random(seed)
    fd = sock = None
    if op != "getppid":
        peer = sim.spawn_process(None, start=False)
        fd, _ = socket_pair_over_loopback(app, peer)
        sock = app.fds.get(fd)
    shortcut = profile.shortcut and op != "getppid"
    values: list[int] = []
    outputs = hashlib.sha256()
    ledger = sim.ledger
    for _ in range(iters):
        data = rng.randbytes(payload) if op != "getppid" else b""
        if op in ("read", "recvfrom"):
            sock.inject_rx(data)
        before = ledger.cycles()
        if op == "getppid":
            result = sim.call(app, api.getppid())
        elif shortcut and op in ("read", "recvfrom"):
            result = sim.call(app, api.shortcut_recv(fd, payload))
        elif shortcut:
            result = sim.call(app, api.shortcut_send(fd, data))
        else:
            call = getattr(api, op)
            result = sim.call(app, call(fd, payload if op in ("read", "recvfrom") else data))
        values.append(ledger.cycles() - before)
        if sock is not None and op in ("write", "sendto"):
            sock.discard_inflight()
        outputs.update(repr(result).encode())
    return SampleSet(values, profile.label, f"micro:{op}:{payload}",
                     {"output_hash": outputs.hexdigest()})


# -- page faults --------------------------------------------------------------

def run_pagefault_bench(profile, npages: int, region: str | VmaKind = "stack", *,
                        weights: Weights | None = None, seed: int = 0) -> SampleSet:
    """Touch ``npages`` fresh pages of a stack or mmap region; one sample per touch.

    A pinned (nss_ps) stack is resident from the start, so its touches
    cost nothing; every other first touch must fault.
    """
    profile = as_profile(profile)
    if npages < 1:
        raise ValueError("npages must be at least 1")
    region = VmaKind(region.lower()) if isinstance(region, str) else region
    if region not in (VmaKind.Stack, VmaKind.Mmap):
        raise ValueError(f"unsupported region {region}")
    sim = Simulator(profile.config, weights, seed=seed)
    app = sim.launch_linked_app(None, "pf --", start=False)
    api = TaskApi(app)
    ledger = sim.ledger
    prefaulted = False
    if region is VmaKind.Stack:
        stack = app.user_stack
        prefaulted = stack.pinned
        addrs = [stack.sp - (i + 1) * PAGE_SIZE for i in range(npages)]
    else:
        base = sim.call(app, api.mmap(npages * PAGE_SIZE))
        addrs = [base + i * PAGE_SIZE for i in range(npages)]
    values = []
    for i, addr in enumerate(addrs):
        before = ledger.cycles()
        if region is VmaKind.Stack:
            outcomes = sim.call(app, api.push_stack(PAGE_SIZE))
            faulted = all(o.faulted for o in outcomes)
            sim.call(app, api.store(addr, i))
        else:
            faulted = sim.call(app, api.touch(addr)).faulted
            sim.call(app, api.store(addr, i))
        if faulted == prefaulted:
            raise AssertionError(f"page {addr:#x}: unexpected residency")
        values.append(ledger.cycles() - before)
    readback = [sim.call(app, api.load(addr)) for addr in addrs]
    return SampleSet(values, profile.label, f"pf:{region.value}:{npages}",
                     {"output_hash": _digest(readback)})


# -- KV server ----------------------------------------------------------------

@dataclass
class KvReport:
    profile: str
    throughput: float  # requests per megacycle
    stats: StatsSummary
    samples: SampleSet
    state_hash: str
    output_hash: str
    makespan: int


def _kv_handle(store: dict, line: bytes) -> bytes:
    parts = line.split(b" ", 2)
    if parts[0] == b"S" and len(parts) == 3:
        store[parts[1]] = parts[2]
        return b"OK\n"
    if parts[0] == b"G" and len(parts) == 2:
        value = store.get(parts[1])
        return b"NF\n" if value is None else b"V " + value + b"\n"
    return b"ERR\n"


def kv_server(api: TaskApi, *, shortcut: bool = False, byp: bool = False):
    """Line-oriented KV server polling all connections it was born with."""
    if byp:
        api.set_bypass(BYPASS_ALL)
    store: dict[bytes, bytes] = {}
    pending = {fd: b"" for fd in api.task.fds.fds()}
    while pending:
        ready = yield from api.poll(sorted(pending))
        for fd in ready:
            if shortcut:
                data = yield from api.shortcut_recv(fd, 4096)
            else:
                data = yield from api.read(fd, 4096)
            if not data:
                yield from api.close(fd)
                del pending[fd]
                continue
            buf = pending[fd] + data
            while b"\n" in buf:
                line, _, buf = buf.partition(b"\n")
                reply = _kv_handle(store, line)
                yield from api.compute(KV_SERVER_WORK)
                yield from api.write_all(fd, reply, shortcut=shortcut)
            pending[fd] = buf
    return store


def kv_client(api: TaskApi, *, fd: int, cid: int, requests: int, seed: int,
              set_get: tuple[int, int] = KV_SET_GET):
    rng = random.Random(f"{seed}:{cid}")
    sets, gets = set_get
    latencies, replies = [], []
    for i in range(requests):
        key = f"c{cid}:k{rng.randrange(KV_KEYS)}"
        if rng.randrange(sets + gets) < sets:
            msg = f"S {key} v{cid}.{i}.{rng.randrange(1 << 30)}\n".encode()
        else:
            msg = f"G {key}\n".encode()
        t0 = api.now
        yield from api.write_all(fd, msg)
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = yield from api.read(fd, 4096)
            if not chunk:
                raise errors.PeerClosed(f"client {cid}")
            buf += chunk
        latencies.append(api.now - t0)
        replies.append(buf)
    yield from api.close(fd)
    return latencies, replies, api.now


def run_kv_bench(profile, clients: int = KV_CLIENTS, requests_per_client: int = KV_REQUESTS,
                 set_get_ratio: tuple[int, int] = KV_SET_GET, *, weights: Weights | None = None,
                 seed: int = 0) -> KvReport:
    """Closed-loop clients on their own nodes against the linked KV server."""
    profile = as_profile(profile)
    if clients < 1:
        raise ValueError("clients must be at least 1")
    sim = Simulator(profile.config, weights, seed=seed)
    byp = profile.config.byp
    server = sim.launch_linked_app(
        lambda api: kv_server(api, shortcut=profile.shortcut, byp=byp),
        "kv -- --port 6379", node="srv", start=False)
    procs = []
    for cid in range(clients):
        proc = sim.spawn_process(None, ["--id", str(cid)], node=f"c{cid}", start=False)
        _, cfd = socket_pair_over_loopback(server, proc)
        proc.entry = (lambda api, fd=cfd, cid=cid: kv_client(
            api, fd=fd, cid=cid, requests=requests_per_client, seed=seed, set_get=set_get_ratio))
        procs.append(proc)
    server.node.start(server)
    for proc in procs:
        proc.node.start(proc)
    sim.run()
    latencies, outputs, end = [], [], 0
    for proc in procs:
        lat, replies, finished = proc.exit_value
        latencies.extend(lat)
        outputs.append(replies)
        end = max(end, finished)
    store = server.exit_value
    samples = SampleSet(latencies, profile.label, f"kv:{clients}x{requests_per_client}")
    total = clients * requests_per_client
    return KvReport(
        profile=profile.label,
        throughput=total / (end / 1e6),
        stats=summarize(samples),
        samples=samples,
        state_hash=_digest(sorted(store.items())),
        output_hash=_digest(outputs),
        makespan=end,
    )


@dataclass
class LoadSweep:
    profile: str
    sla_cycles: int
    points: list[tuple[int, float, int]]  # (clients, throughput, p99)
    max_load: int  # most clients whose p99 met the SLA (0 if none)
    max_throughput: float


def kv_load_sweep(profile, loads: Iterable[int] = (1, 2, 4, 8, 16, 32),
                  requests_per_client: int = 200, sla_cycles: int = 500_000, *,
                  weights: Weights | None = None, seed: int = 0) -> LoadSweep:
    """Raise the client count until p99 breaks the SLA."""
    profile = as_profile(profile)
    points, best, best_tp = [], 0, 0.0
    for n in loads:
        rep = run_kv_bench(profile, n, requests_per_client, weights=weights, seed=seed)
        points.append((n, rep.throughput, rep.stats.p99))
        if rep.stats.p99 <= sla_cycles:
            best, best_tp = max(best, n), max(best_tp, rep.throughput)
    return LoadSweep(profile.label, sla_cycles, points, best, best_tp)


# -- ring ---------------------------------------------------------------------

@dataclass
class RingReport:
    profile: str
    rows: int
    total_cycles: int
    stats: StatsSummary
    samples: SampleSet
    output_hash: str


def _ring_message(rng: random.Random, lo: int, hi: int) -> bytes:
    size = rng.randint(lo, hi)
    return bytes([size]) + rng.randbytes(size - 1)


def ring_party(api: TaskApi, *, send_fd: int, recv_fd: int, messages: list[bytes],
               shortcut: bool, rtc: bool, byp: bool):
    """One party: per row send a share to the next node, wait for the previous one."""
    if byp:
        api.set_bypass(BYPASS_ALL)
    if rtc:
        api.set_kernel_execution(True)
    acc = 0
    rounds = []
    buf = b""
    for msg in messages:
        t0 = api.now
        if shortcut:
            yield from api.write_all(send_fd, msg, shortcut=True)
        else:
            yield from api.write_all(send_fd, msg)
        while not buf or len(buf) < buf[0]:
            if shortcut:
                chunk = yield from api.shortcut_recv(recv_fd, 64)
            else:
                chunk = yield from api.read(recv_fd, 64)
            if not chunk:
                raise errors.PeerClosed("ring neighbour went away")
            buf += chunk
        got, buf = buf[:buf[0]], buf[buf[0]:]
        acc = (acc * 1_000_003 + int.from_bytes(hashlib.sha256(got).digest()[:8], "big")) % (1 << 61)
        yield from api.compute(RING_ROW_WORK)
        rounds.append(api.now - t0)
    return acc, rounds, api.now


def noise_daemon(api: TaskApi, rng: random.Random):
    """Background process: bursts of work whenever the node timer fires."""
    while True:
        yield from api.timer_wait()
        for _ in range(rng.randint(1, 4)):
            yield from api.compute(rng.randint(2_000, 30_000))
            yield from api.getppid()


def run_ring_bench(profile, rows: int = 1000, message_size: tuple[int, int] = RING_MSG_RANGE, *,
                   weights: Weights | None = None, seed: int = 0, noise: bool = True,
                   parties: int = 3) -> RingReport:
    """Three parties exchange one ring of messages per row."""
    profile = as_profile(profile)
    if rows < 1:
        raise ValueError("rows must be at least 1")
    if isinstance(message_size, int):
        message_size = (message_size, message_size)
    lo, hi = message_size
    if not 2 <= lo <= hi <= 255:
        raise ValueError("message sizes must lie in [2, 255]")
    sim = Simulator(profile.config, weights, seed=seed)
    rng = random.Random(f"ring:{seed}")
    schedule = [[_ring_message(rng, lo, hi) for _ in range(rows)] for _ in range(parties)]
    tasks = []
    for i in range(parties):
        tasks.append(sim.launch_linked_app(None, f"ring -- --party {i}", node=f"r{i}", start=False))
    recv_fds = [None] * parties
    send_fds = [None] * parties
    for i in range(parties):
        j = (i + 1) % parties
        send_fds[i], recv_fds[j] = socket_pair_over_loopback(tasks[i], tasks[j])
    for i, task in enumerate(tasks):
        task.entry = (lambda api, i=i: ring_party(
            api, send_fd=send_fds[i], recv_fd=recv_fds[i], messages=schedule[i],
            shortcut=profile.shortcut, rtc=profile.run_to_completion, byp=profile.config.byp))
        task.node.start(task)
    if noise:
        for i, task in enumerate(tasks):
            nrng = random.Random(f"noise:{seed}:{i}")
            sim.spawn_process(lambda api, r=nrng: noise_daemon(api, r), node=task.node.name,
                              daemon=True)
            task.node.start_timer(random.Random(f"timer:{seed}:{i}"), 40_000, 400_000)
    sim.run()
    results = [t.exit_value for t in tasks]
    rounds = results[0][1]
    total = max(r[2] for r in results)
    samples = SampleSet(rounds, profile.label, f"ring:{rows}")
    return RingReport(profile.label, rows, total, summarize(samples), samples,
                      _digest([r[0] for r in results]))


# -- robustness sweeps --------------------------------------------------------

def canonical_workload(api: TaskApi, *, npages: int = 4, packets: int = 2, spin: int = 40):
    """Stack and mmap faults plus inbound packets; returns what it computed."""
    base = yield from api.mmap(npages * PAGE_SIZE)
    total = 0
    outcomes = yield from api.push_stack(npages * PAGE_SIZE)
    for i in range(npages):
        yield from api.store(base + i * PAGE_SIZE, i * 7 + 1)
        total += yield from api.load(base + i * PAGE_SIZE)
    # spin in application mode so packets interrupt user code
    for _ in range(spin):
        yield from api.compute(1_000)
    fd = api.task.fds.fds()[0]
    got = b""
    for _ in range(packets):
        got += yield from api.read(fd, 64)
    return total, len(outcomes), got


def _canonical_run(config: BoundaryConfig, *, arm=None, unsafe_gates: bool = False, seed: int = 0):
    sim = Simulator(config, seed=seed)
    app = sim.launch_linked_app(canonical_workload, "canon --", start=False)
    peer = sim.spawn_process(None, node="peer", start=False)
    _, pfd = socket_pair_over_loopback(app, peer)

    def sender(api):
        for i in range(2):
            yield from api.compute(5_000)
            yield from api.write_all(pfd, f"pkt{i};".encode())
        return 0

    peer.entry = sender
    node = app.node
    node.unsafe_return_gates = unsafe_gates
    if arm is not None:
        node.armed_injections[arm] = "injected"
    node.start(app)
    peer.node.start(peer)
    sim.run()
    state = (app.exit_value, app.mm.snapshot(), app.regs.pc, app.regs.flags,
             app.regs.sp.name, app.mode.value, len(app.frames))
    return state, node.ret_sites


@dataclass
class SweepOutcome:
    site: int
    step: ReturnProtocolStep
    matched: bool
    error: str | None = None


def atomicity_sweep(config: BoundaryConfig | None = None, *,
                    unsafe_gates: bool = False) -> tuple[int, list[SweepOutcome]]:
    """Inject an interrupt at every (return site, protocol step).

    Returns the number of sites and one outcome per injection.
    """
    if config is None:
        config = make_config(ret=True, nss=True, pf_df=True)
    reference, sites = _canonical_run(config)
    outcomes = []
    for site in range(sites):
        for step in ReturnProtocolStep:
            try:
                state, _ = _canonical_run(config, arm=(site, int(step)), unsafe_gates=unsafe_gates)
                outcomes.append(SweepOutcome(site, step, state == reference))
            except errors.SimError as exc:
                outcomes.append(SweepOutcome(site, step, False, exc.code))
    return sites, outcomes


def deadlock_scenario(fast_path: bool, *, config: BoundaryConfig | None = None):
    """A service holding mm_lock takes a fault on the (stackless) kernel path.

    Returns ``(completed, report)`` where ``report`` comes from the
    wait-for-graph monitor.
    """
    if config is None:
        config = make_config(nss=True, pf_df=True)
    sim = Simulator(config)

    def app(api):
        addr = yield from api.mmap(PAGE_SIZE, stack_use=3 * PAGE_SIZE)
        yield from api.store(addr, 42)
        return (yield from api.load(addr))

    task = sim.launch_linked_app(app, "dl --", start=False)
    task.node.stack_vma_fast_path = fast_path
    task.node.start(task)
    sim.run()
    report = deadlock_monitor(task.mm)
    return task.exit_value == 42, report


FAULT_SOURCES = ("user_stack", "mmap", "kernel_stack_use", "interrupt")


def fault_source_run(config: BoundaryConfig, source: str) -> str:
    """Exercise one fault source; returns ``ok`` or the error code raised."""
    sim = Simulator(config)

    def app(api):
        if source == "user_stack":
            yield from api.push_stack(3 * PAGE_SIZE)
        elif source == "mmap":
            base = yield from api.mmap(2 * PAGE_SIZE)
            yield from api.store(base + PAGE_SIZE, 1)
        elif source == "kernel_stack_use":
            yield from api.mmap(PAGE_SIZE, stack_use=2 * PAGE_SIZE)
        elif source == "interrupt":
            api.node.take_interrupt(api.task, "timer")
            yield from api.push_stack(PAGE_SIZE)
        else:
            raise ValueError(source)
        return 0

    try:
        task = sim.launch_linked_app(app, "faults --")
        sim.run()
    except errors.SimError as exc:
        return exc.code
    return "ok" if task.exit_value == 0 else "incomplete"


def compare(baseline: SampleSet, other: SampleSet) -> dict:
    b, o = summarize(baseline), summarize(other)
    return {
        "workload": other.workload_label,
        "baseline": baseline.config_label,
        "config": other.config_label,
        "baseline_mean": b.mean,
        "mean": o.mean,
        "improvement_pct": 100.0 * improvement(b.mean, o.mean),
    }


__all__ = [
    "Profile", "parse_profile", "run_micro", "run_pagefault_bench", "run_kv_bench",
    "kv_load_sweep", "run_ring_bench", "atomicity_sweep", "deadlock_scenario",
    "fault_source_run", "compare", "improvement", "summarize",
]
