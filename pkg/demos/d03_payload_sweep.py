"""
Payload size against bypass savings
===================================

Copy cost grows with the payload while the boundary cost stays fixed,
so the relative saving of bypass shrinks as messages get larger.
"""

from pathlib import Path

from boundary_sim.bench import PAYLOADS, run_micro
from boundary_sim.report import plot_payload_lines
from boundary_sim.stats import improvement, summarize

series = {}
for label in ("trap", "base", "byp"):
    series[label] = [(n, summarize(run_micro(label, "read", n, iters=200)).mean)
                     for n in PAYLOADS]

for (n, t), (_, b) in zip(series["trap"], series["byp"]):
    print(f"{n:>5} B: trap {t:>7.0f}  byp {b:>7.0f}  saving {improvement(t, b):.1%}")

out = plot_payload_lines(series, Path("demo_output") / "payload_sweep.svg")
print("plot:", out)
