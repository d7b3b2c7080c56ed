"""
Robustness checks
=================

Three properties that keep the fast paths honest: a staged ``ret`` is
safe to interrupt at any step, a stack-less fault under ``mm_lock``
needs the stack fast path, and no config can reach a triple fault.
"""

from collections import Counter

from boundary_sim import all_valid_configs
from boundary_sim.bench import FAULT_SOURCES, atomicity_sweep, deadlock_scenario, fault_source_run

sites, outcomes = atomicity_sweep()
print(f"{sites} return sites x 5 steps: {sum(o.matched for o in outcomes)} runs matched")

# Letting interrupts in before the flags are restored shows why the
# gate matters.
_, unsafe = atomicity_sweep(unsafe_gates=True)
print("with the gate removed:", Counter(o.error or "matched" for o in unsafe))

# %%
print("fast path off:", deadlock_scenario(False))
print("fast path on: ", deadlock_scenario(True))

# %%
tally = Counter(fault_source_run(cfg, src) for cfg in all_valid_configs() for src in FAULT_SOURCES)
print("fault sweep over every config:", dict(tally))
