"""
Syscall cost across boundary configurations
===========================================

getppid does almost no work, so its cost is the boundary itself.
Moving from a trapping process to a linked call saves only the mode
switch; bypassing the entry/exit bookkeeping removes most of the rest.
"""

from boundary_sim import all_valid_configs
from boundary_sim.bench import run_micro
from boundary_sim.stats import improvement, summarize

trap = summarize(run_micro("trap", "getppid", iters=1000)).mean
print(f"{'config':<22}{'cycles':>8}{'saving':>9}")
for cfg in all_valid_configs():
    mean = summarize(run_micro(cfg, "getppid", iters=1000)).mean
    print(f"{cfg.label:<22}{mean:>8.0f}{improvement(trap, mean):>9.1%}")

# %%
# Costs are pure functions of the weight table, so reweighting one event
# moves every config that records it.
from boundary_sim.core import default_weights_text, parse_weights

heavy = parse_weights(default_weights_text().replace("EntryChecks=800", "EntryChecks=2000"))
for label in ("trap", "base", "byp"):
    print(label, summarize(run_micro(label, "getppid", iters=10, weights=heavy)).mean)
