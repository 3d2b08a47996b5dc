"""Maximum-principle scan on the LQ jump benchmark.

Compares the stored reference feedback with the stationary Riccati gains,
then evaluates the variational inequality at the reference and at a 25%
detuned gain.  Only the statistical part of the tolerance is used here;
``jumpsmp run --kind mp-check`` adds the mesh and gain-uncertainty allowances,
which absorb the tiny negative minima left at the reference.

    python3 demos/lq_maximum_principle.py [n_paths]
"""
import sys

import numpy as np

from jumpsmp import get_benchmark, mp_deficiency, sample_batch, solve_adjoint_closed_form
from jumpsmp.variation import base_solution

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
inst = get_benchmark("lq_jump")
ref = inst.reference_control
print(f"reference gains: k = {ref.gain:.4f}, k_jump = {ref.jump_gain:.4f}")
print(f"reference cost:  {inst.reference_cost:.5f} +- {inst.reference_cost_se:.5f}")

batch = sample_batch(3, inst.mark_space, inst.horizon, 256, n_paths)
v_grid = np.linspace(-50.0, 50.0, 201)
for label, control in (("reference", ref), ("detuned x1.25", ref.scaled(1.25))):
    state, u = base_solution(inst.problem, control, batch)
    adj, second = solve_adjoint_closed_form(inst.problem, control, batch, state, u)
    rep = mp_deficiency(inst.problem, state, u, adj, second, v_grid, batch, stride=4)
    print(f"{label:14s} min lhs = {rep.global_min:+.3e}  violations = {rep.violation_fraction:.3f}")
