"""Spike variations on the LQ jump benchmark: graph-avoiding vs naive.

Both spikes perturb the control on [t_bar, t_bar + eps).  The graph-avoiding
spike keeps the jump-graph control, so the state moves by O(eps^(1/2)) in
L^2; the naive spike also changes the jump amplitude and the compensator,
which costs a full order.  Prints the fourth moments of sup|X^eps - X| and
the fitted slopes.

    python3 demos/order_contrast.py [n_paths]
"""
import sys

from jumpsmp import (LinearFeedback, SpikeSpec, fit_order, get_benchmark, naive_spike_control, sample_batch,
                     solve_forward, spike_control)
from jumpsmp.variation import base_solution

import numpy as np

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
inst = get_benchmark("lq_jump")
T = inst.horizon
batch = sample_batch(7, inst.mark_space, T, 512, n_paths)
base, u = base_solution(inst.problem, LinearFeedback(1.0, jump_gain=0.5), batch)

eps = T * 2.0 ** -np.arange(3, 9)
m = {"graph-avoiding": [], "naive": []}
for e in eps:
    spec = SpikeSpec(0.25 * T, e, 1.0)
    for label, make in (("graph-avoiding", spike_control), ("naive", naive_spike_control)):
        x = solve_forward(inst.problem, make(u, spec, batch, base), batch).post
        m[label].append(np.mean(np.max(np.abs(x - base.post), axis=1) ** 4))

print(f"{'eps':>10s} {'graph-avoiding':>16s} {'naive':>12s}")
for i, e in enumerate(eps):
    print(f"{e:10.5f} {m['graph-avoiding'][i]:16.4e} {m['naive'][i]:12.4e}")
for label, vals in m.items():
    print(f"slope {label}: {fit_order(eps, vals).slope:.2f}")
