from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from boundary_sim import BASE, TRAP, ExecMode, Simulator, TaskApi, all_valid_configs, make_config
from boundary_sim import errors
from boundary_sim.core import CostEvent, IF_FLAG
from boundary_sim.memsim import PAGE_SIZE
from boundary_sim.sched import Preempt, deliver_signal
from boundary_sim.transition import (
    GATE_OPEN_AFTER, Cause, ReturnProtocolStep, inject_interrupt_at, kernel_enter, kernel_exit,
    set_bypass,
)

import oracles

CONFIGS = all_valid_configs()


def counts(sim):
    return Counter({e.value: n for e, n in sim.ledger.counts.items() if n})


def delta(sim, before):
    return Counter({e.value: n for e, n in sim.ledger.delta(before).items()})


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.label)
def test_getppid_events_per_config(linked, cfg):
    sim, task, api = linked(cfg)
    assert sim.call(task, api.getppid()) == 0
    assert counts(sim) == oracles.syscall_events(not cfg.linked, cfg.flags(), layers=1)
    assert task.mode is ExecMode.Application and not task.frames


def test_frozen_getppid_costs(linked):
    expected = {"trap": 2130, "base": 2030, "byp": 350}
    for label, cfg in [("trap", TRAP), ("base", BASE), ("byp", make_config(byp=True))]:
        sim, task, api = linked(cfg)
        if cfg.byp:
            api.set_bypass(1)
        sim.call(task, api.getppid())
        assert sim.ledger.cycles() == expected[label]


def test_bypass_window_counts_down(linked):
    sim, task, api = linked(make_config(byp=True))
    api.set_bypass(3)
    for left in (2, 1, 0):
        before = sim.ledger.snapshot()
        sim.call(task, api.getppid())
        assert task.byp_remaining == left
        assert delta(sim, before) == oracles.syscall_events(False, bypassed=True, layers=1)
    before = sim.ledger.snapshot()
    sim.call(task, api.getppid())
    assert task.byp_remaining == 0
    assert delta(sim, before) == oracles.syscall_events(False, make_config(byp=True).flags(), layers=1)


def test_bypass_count_ignored_without_flag(linked):
    sim, task, api = linked(BASE)
    api.set_bypass(5)
    sim.call(task, api.getppid())
    assert task.byp_remaining == 5
    assert counts(sim)["EntryChecks"] == 1


def test_bypass_rejects_negative(linked):
    _, task, _ = linked(make_config(byp=True))
    with pytest.raises(ValueError):
        set_bypass(task, -1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.just("call"), st.integers(0, 4)), max_size=30))
def test_bypass_never_underflows(ops):
    sim = Simulator(make_config(byp=True, ret=True))
    task = sim.launch_linked_app(None, "", start=False)
    api = TaskApi(task)
    expected = Counter()
    for op in ops:
        if op == "call":
            was = task.byp_remaining
            sim.call(task, api.getppid())
            assert task.byp_remaining == max(0, was - 1)
            expected += oracles.syscall_events(False, sim.config.flags(), bypassed=was > 0, layers=1)
        else:
            api.set_bypass(op)
        assert task.byp_remaining >= 0
    assert counts(sim) == +expected


def test_reentrant_syscall_rejected(linked):
    sim, task, api = linked(BASE)
    kernel_enter(task, Cause.Syscall, BASE)
    with pytest.raises(errors.ReentrantEnter):
        kernel_enter(task, Cause.Syscall, BASE)


def test_frame_consumed_once(linked):
    sim, task, api = linked(BASE)
    frame = kernel_enter(task, Cause.Syscall, BASE)
    sim.call(task, kernel_exit(task, frame, BASE))
    task.mode = ExecMode.Kernel
    with pytest.raises(errors.FrameReuse):
        sim.call(task, kernel_exit(task, frame, BASE))


def test_syscall_restores_registers(linked):
    sim, task, api = linked(make_config(ret=True, nss=True, pf_ss=True))
    sim.call(task, api.getppid())
    assert task.regs.sp is task.user_stack
    assert task.regs.flags & IF_FLAG
    assert task.regs.pc == 1


def test_service_error_still_exits(connected):
    sim, task, api, fd, *_ = connected(BASE)
    with pytest.raises(errors.BadFd):
        sim.call(task, api.read(99, 1))
    assert task.mode is ExecMode.Application
    assert not task.frames
    assert counts(sim)["ExitChecks"] == 1


# -- rescheduling and signals at the exit check -------------------------------

def test_need_resched_preempts_at_exit(linked):
    sim, task, api = linked(BASE)
    task.need_resched = True
    gen = api.getppid()
    assert next(gen) is Preempt
    assert not task.need_resched


def test_run_to_completion_skips_preemption(linked):
    sim, task, api = linked(BASE)
    api.set_kernel_execution(True)
    task.need_resched = True
    gen = api.getppid()
    with pytest.raises(StopIteration):
        next(gen)
    assert task.need_resched


def test_signal_waits_for_bypass_window_to_end(linked):
    sim, task, api = linked(make_config(byp=True))
    api.set_bypass(2)
    deliver_signal(task, 10)
    sim.call(task, api.getppid())
    sim.call(task, api.getppid())
    assert task.delivered_signals == []
    sim.call(task, api.getppid())
    assert task.delivered_signals == [10]


def test_signals_fifo(linked):
    sim, task, api = linked(TRAP)
    deliver_signal(task, 2)
    deliver_signal(task, 15)
    sim.call(task, api.getppid())
    assert task.delivered_signals == [2, 15]
    assert task.pending_signals == []


# -- faults and interrupts ----------------------------------------------------

def _stack_fault(sim, task, api):
    before = sim.ledger.snapshot()
    outcomes = sim.call(task, api.push_stack(PAGE_SIZE))
    assert [o.faulted for o in outcomes] == [True]
    return delta(sim, before)


@pytest.mark.parametrize("cfg", [c for c in CONFIGS if not c.nss_ps], ids=lambda c: c.label)
def test_stack_fault_events(linked, cfg):
    sim, task, api = linked(cfg)
    assert _stack_fault(sim, task, api) == oracles.fault_events(
        not cfg.linked, cfg.flags(), on_current_stack=True)


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.label)
def test_mmap_fault_events(linked, cfg):
    sim, task, api = linked(cfg)
    base = sim.call(task, api.mmap(2 * PAGE_SIZE))
    before = sim.ledger.snapshot()
    assert sim.call(task, api.touch(base)).faulted
    assert delta(sim, before) == oracles.fault_events(
        not cfg.linked, cfg.flags(), on_current_stack=False)
    assert task.mode is ExecMode.Application and task.regs.sp is task.user_stack


def test_frozen_fault_costs(linked):
    # per-fault cycles; the page-fault criteria are built on these
    expected = {
        ("trap", "stack"): 2290, ("nss,pf_df", "stack"): 2180, ("nss,pf_ss", "stack"): 2190,
        ("nss,ret,pf_df", "stack"): 1940, ("nss,pf_df", "mmap"): 2150,
        ("nss,pf_ss", "mmap"): 2190, ("nss,ret,pf_df", "mmap"): 1870, ("trap", "mmap"): 2290,
    }
    from boundary_sim.bench import parse_profile
    for (label, region), cycles in expected.items():
        cfg = parse_profile(label).config
        sim, task, api = linked(cfg)
        if region == "stack":
            d = _stack_fault(sim, task, api)
        else:
            base = sim.call(task, api.mmap(PAGE_SIZE))
            before = sim.ledger.snapshot()
            sim.call(task, api.touch(base))
            d = delta(sim, before)
        assert oracles.price(d) == cycles, (label, region)


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.label)
def test_interrupt_events(linked, cfg):
    sim, task, api = linked(cfg)
    task.state = task.state.Running
    task.node.take_interrupt(task, "tick")
    assert counts(sim) == oracles.interrupt_events(not cfg.linked, cfg.flags())
    assert task.regs.flags & IF_FLAG


def test_interrupt_in_kernel_context(linked):
    sim, task, api = linked(make_config(ret=True))
    api.set_kernel_execution(True)
    task.state = task.state.Running
    task.node.take_interrupt(task, "tick")
    assert counts(sim) == oracles.interrupt_events(False, kernel_context=True)


def test_interrupt_on_idle_node():
    sim = Simulator(BASE)
    sim.node().take_interrupt(None, "nic")
    assert counts(sim) == Counter(IretReturn=1)


# -- the staged return --------------------------------------------------------

def test_gates_open_only_after_flags_pop():
    assert GATE_OPEN_AFTER == (False, False, False, True, True)
    assert [s.name for s in ReturnProtocolStep] == [
        "CopyRetAddrToUserStack", "CopyFlagsToUserStack", "SwitchToUserStack",
        "PopFlags", "PlainReturn"]


def _ret_fault(sim, task, api, arm=None):
    node = task.node
    if arm is not None:
        node.armed_injections[arm] = "irq"
    base = sim.call(task, api.mmap(PAGE_SIZE))
    sim.call(task, api.touch(base))
    return sim


@pytest.mark.parametrize("step", list(ReturnProtocolStep))
def test_injected_interrupt_waits_for_open_gate(linked, step):
    sim, task, api = linked(make_config(ret=True, nss=True, pf_df=True))
    sim.trace = []
    task.state = task.state.Running
    _ret_fault(sim, task, api, arm=(0, int(step)))
    injected = [e for e in sim.trace if e[0] == "inject"]
    assert injected == [("inject", task.task_id, int(step), "'irq'")]
    assert counts(sim)["RetReturn"] == 2  # the fault and the nested interrupt
    assert task.mode is ExecMode.Application and not task.frames
    assert task.user_stack.slots == []


def test_ret_trace_orders_steps(linked):
    sim, task, api = linked(make_config(ret=True))
    task.state = task.state.Running
    from boundary_sim import transition
    seen = []
    original = transition._drain

    def spy(node, proto, when, step):
        seen.append((when, int(step), list(proto.queued)))
        return original(node, proto, when, step)

    transition._drain = spy
    try:
        task.node.armed_injections[(0, 0)] = "x"
        _ret_fault(sim, task, api)
    finally:
        transition._drain = original
    # drains are only attempted where a gate is open, and the queued
    # interrupt is first taken after PopFlags
    first_delivery = next(i for i, s in enumerate(seen) if s[2])
    assert seen[first_delivery][:2] == ("after", int(ReturnProtocolStep.PopFlags))


@pytest.mark.parametrize("step", [0, 1, 2])
def test_unsafe_gates_expose_half_switched_stack(linked, step):
    sim, task, api = linked(make_config(ret=True))
    task.state = task.state.Running
    task.node.unsafe_return_gates = True
    with pytest.raises(errors.HalfSwitchedStack):
        _ret_fault(sim, task, api, arm=(0, step))


def test_inject_without_return_in_flight():
    sim = Simulator(make_config(ret=True))
    with pytest.raises(errors.NoReturnInFlight):
        inject_interrupt_at(sim.node(), ReturnProtocolStep.PopFlags, "x")


def test_iret_path_restores_atomically(linked):
    sim, task, api = linked(BASE)
    base = sim.call(task, api.mmap(PAGE_SIZE))
    before = sim.ledger.snapshot()
    sim.call(task, api.touch(base))
    d = delta(sim, before)
    assert d["IretReturn"] == 1 and d.get("RetReturn", 0) == 0
    assert task.regs.sp is task.user_stack and task.regs.flags & IF_FLAG
