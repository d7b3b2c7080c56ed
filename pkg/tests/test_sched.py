import pytest

from boundary_sim import BASE, TRAP, Simulator, TaskApi, make_config
from boundary_sim import errors
from boundary_sim.core import CLONE_THREAD_FLAGS, CLONE_UKL, CostEvent, TaskState
from boundary_sim.sched import (
    IDLE, WaitQueue, block_on, deliver_signal, schedule, wake_one, yield_cpu,
)
from boundary_sim.services import socket_pair_over_loopback


def test_round_robin_example():
    sim = Simulator(TRAP)
    node = sim.node()
    t1, t2, t3 = (sim.spawn_process(None, start=False) for _ in range(3))
    node.rq.current = t1.task_id
    node.rq.ready.extend([t2.task_id, t3.task_id])
    assert yield_cpu(node, t1) == t2.task_id
    assert list(node.rq.ready) == [t3.task_id, t1.task_id]
    assert node.rq.current not in node.rq.ready


def test_idle_when_nothing_ready():
    sim = Simulator(TRAP)
    assert schedule(sim.node()) == IDLE


def test_block_then_wake_records_one_wakeup():
    sim = Simulator(TRAP)
    task = sim.spawn_process(None, start=False)
    wq = WaitQueue("w")
    gen = block_on(task, wq)
    next(gen)
    assert task.state is TaskState.Blocked
    assert wake_one(wq) is task
    assert sim.ledger.counts[CostEvent.SchedWakeup] == 1
    assert wake_one(wq) is None
    assert sim.ledger.counts[CostEvent.SchedWakeup] == 1


def test_fifo_wake_order():
    sim = Simulator(TRAP)
    a, b = sim.spawn_process(None, start=False), sim.spawn_process(None, start=False)
    wq = WaitQueue("w")
    for t in (a, b):
        next(block_on(t, wq))
    assert wake_one(wq) is a
    assert wake_one(wq) is b


def _ping(config, *, trace=False, net_interrupts=True):
    sim = Simulator(config, trace=trace, net_interrupts=net_interrupts)
    out = {}

    def reader(api):
        t0 = api.now
        data = yield from api.read(fd, 16)
        out["latency"] = api.now - t0
        return data

    def writer(api):
        yield from api.compute(3_000)
        out["sent_at"] = api.now
        yield from api.write(pfd, b"ping")

    app = sim.launch_linked_app(reader, "", start=False)
    peer = sim.spawn_process(writer, node="peer", start=False)
    fd, pfd = socket_pair_over_loopback(app, peer)
    app.node.start(app)
    peer.node.start(peer)
    sim.run()
    return sim, app, out


def test_receive_latency_includes_wakeup():
    sim, app, out = _ping(BASE, net_interrupts=False)
    assert app.exit_value == b"ping"
    w = sim.weights
    assert app.node.ledger.counts[CostEvent.SchedWakeup] == 1
    assert app.node.ledger.counts[CostEvent.SchedSleep] == 1
    assert out["latency"] >= w[CostEvent.SchedWakeup] + w.delivery_delay


def test_schedule_trace_is_reproducible():
    first = _ping(make_config(ret=True), trace=True)[0].trace
    second = _ping(make_config(ret=True), trace=True)[0].trace
    assert first == second and first


def test_every_wakeup_pairs_with_a_block():
    sim, app, _ = _ping(TRAP, trace=True)
    blocks = [e for e in sim.trace if e[0] == "block"]
    assert sim.ledger.counts[CostEvent.SchedWakeup] == len(blocks)


def test_kernel_execution_on_trap_process():
    sim = Simulator(make_config(ret=True))
    proc = sim.spawn_process(None, start=False)
    with pytest.raises(errors.KernelExecOnTrapProcess):
        TaskApi(proc).set_kernel_execution(True)


def test_kernel_execution_under_trap_config():
    sim = Simulator(TRAP)
    app = sim.launch_linked_app(None, "", start=False)
    with pytest.raises(errors.KernelExecOnTrapProcess):
        TaskApi(app).set_kernel_execution(True)


def _contended(rtc_on: bool, toggle_off_after: int | None = None):
    sim = Simulator(make_config(ret=True), trace=True)
    order = []

    def hog(api):
        if rtc_on:
            api.set_kernel_execution(True)
        for i in range(6):
            if toggle_off_after is not None and i == toggle_off_after:
                api.set_kernel_execution(False)
            yield from api.getppid()
            order.append(("hog", i))

    def other(api):
        order.append(("other", 0))
        return 0
        yield

    hog_task = sim.launch_linked_app(hog, "")
    sim.spawn_process(other)
    hog_task.need_resched = True
    sim.run()
    return sim, order


def test_run_to_completion_is_never_preempted():
    sim, order = _contended(True)
    assert order[-1] == ("other", 0)
    assert sim.involuntary_rtc_switches == 0
    assert not any(e[0] == "switch" and e[5] for e in sim.trace)


def test_normal_mode_preempts_at_exit():
    sim, order = _contended(False)
    assert order.index(("other", 0)) < len(order) - 1
    assert any(e[0] == "switch" and e[5] for e in sim.trace)


def test_turning_rtc_off_restores_preemption():
    sim, order = _contended(True, toggle_off_after=3)
    assert order.index(("other", 0)) == 3
    assert sim.involuntary_rtc_switches == 0


# -- clone ---------------------------------------------------------------------

def _clone(config, flags):
    sim = Simulator(config)

    def child(api):
        return sum(range(10))
        yield

    def parent(api):
        tid = yield from api.clone(child, flags)
        return tid

    app = sim.launch_linked_app(parent, "")
    sim.run()
    return sim, app, sim.tasks[app.exit_value]


def test_clone_under_base_reads_kernel_stack():
    _, app, child = _clone(BASE, CLONE_THREAD_FLAGS | CLONE_UKL)
    assert child.initial_state_source == "kernel_pinned"
    assert child.regs.pc == app.regs.pc
    assert child.mm is app.mm and child.fds is app.fds
    assert child.parent_id == app.task_id
    assert child.user_stack is not app.user_stack
    assert child.saved_stack_vma is child.user_stack.vma


def test_clone_under_nss_reads_user_stack():
    _, app, child = _clone(make_config(nss=True, pf_df=True), CLONE_THREAD_FLAGS | CLONE_UKL)
    assert child.initial_state_source == "user_demand_paged"
    assert child.regs.pc == app.regs.pc


def test_clone_without_flag_under_nss_loses_state():
    _, _, child = _clone(make_config(nss=True, pf_df=True), CLONE_THREAD_FLAGS)
    assert child.initial_state_source == "kernel_pinned"
    assert child.regs.pc is None


def test_clone_child_matches_fresh_spawn():
    _, _, child = _clone(BASE, CLONE_THREAD_FLAGS | CLONE_UKL)
    sim = Simulator(BASE)

    def fresh(api):
        return sum(range(10))
        yield

    proc = sim.spawn_process(fresh)
    sim.run()
    assert child.exit_value == proc.exit_value == 45


def test_clone_respects_cap():
    sim = Simulator(BASE, task_cap=1)

    def parent(api):
        yield from api.clone(None, CLONE_THREAD_FLAGS | CLONE_UKL)

    sim.launch_linked_app(parent, "")
    with pytest.raises(errors.TooManyTasks):
        sim.run()


def test_clone_needs_a_kernel_frame(linked):
    from boundary_sim.sched import clone_task
    sim, task, api = linked(BASE)
    with pytest.raises(errors.BadThreadState):
        clone_task(task, CLONE_UKL, None, BASE)


# -- signals ---------------------------------------------------------------

def test_signal_wakes_blocked_reader():
    sim = Simulator(BASE)
    result = {}

    def reader(api):
        try:
            yield from api.read(fd, 4)
        except errors.Interrupted:
            result["eintr"] = True
        return api.task.delivered_signals

    app = sim.launch_linked_app(reader, "", start=False)
    peer = sim.spawn_process(None, start=False)
    fd, _ = socket_pair_over_loopback(app, peer)
    app.node.start(app)
    sim.run(max_events=3)
    assert app.state is TaskState.Blocked
    deliver_signal(app, 9)
    sim.run()
    assert result == {"eintr": True}
    assert app.exit_value == [9]
