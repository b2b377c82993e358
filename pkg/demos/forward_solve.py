"""Forward solves on the square and how the discrete solutions converge.

Run with ``python demos/forward_solve.py``.
"""
import numpy as np

from kvdot import fem
from kvdot.experiment import exact_data, synthesize_truth
from kvdot.mesh import build_mesh

spec = fem.ProblemSpec()

# the piecewise-constant coefficients used throughout the experiments
mesh = build_mesh(16)
truth = synthesize_truth(mesh)
print(f"tau=16: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, h={mesh.h:.4f}")
print("q takes values", np.unique(truth.q), "and a takes", np.unique(truth.a))

# the Neumann datum j on Gamma and the trace g of the Neumann solution
j, g = exact_data(mesh, truth, spec)
print(f"||j||_Gamma = {fem.boundary_l2_norm(mesh, j):.4f}")
print(f"||g||_Gamma = {fem.boundary_l2_norm(mesh, g):.4f}")

# the Neumann and mixed problems agree when fed consistent data
u_n = fem.solve_neumann(mesh, truth.q, truth.a, spec, j)
u_m = fem.solve_mixed(mesh, truth.q, truth.a, spec, g)
print(f"max |u_N - u_M| with consistent data: {np.abs(u_n - u_m).max():.2e}")

# self-convergence: compare each level with the next one on the coarse nodes
previous = None
for tau in (8, 16, 32, 64):
    m = build_mesh(tau)
    t = synthesize_truth(m)
    jj, _ = exact_data(m, t, spec)
    u = fem.solve_neumann(m, t.q, t.a, spec, jj)
    if previous is not None:
        coarse = u.reshape(tau + 1, tau + 1)[::2, ::2].ravel()
        print(f"tau={tau:3d}: max nodal change from tau={tau // 2} is {np.abs(coarse - previous).max():.3e}")
    previous = u
