"""
Page-fault handling paths
=========================

Without a stack switch on entry, a fault on the stack in use cannot be
serviced on that stack. The two escapes are routing it through the
double fault vector or giving the fault its own stack. Returning with a
plain ``ret`` instead of ``iret`` shaves off more on top.
"""

from boundary_sim.bench import run_pagefault_bench
from boundary_sim.stats import improvement, summarize

labels = ("trap", "base", "nss,pf_df", "nss,pf_ss", "nss,ret,pf_df", "nss_ps,ret,pf_ss")
for region in ("stack", "mmap"):
    trap = summarize(run_pagefault_bench("trap", 64, region)).mean
    print(f"-- {region} region, 64 fresh pages")
    for label in labels:
        mean = summarize(run_pagefault_bench(label, 64, region)).mean
        print(f"   {label:<18}{mean:>7.0f} cycles/fault  {improvement(trap, mean):>6.1%}")

# %%
# Pinned stacks (nss_ps) are populated up front, so the stack column
# reads zero for that config: nothing faults.
