"""Compare the analytic gradient of the regularized objective with central differences.

Run with ``python demos/gradient_check.py``.
"""
import numpy as np

from kvdot import fem
from kvdot.experiment import NoiseModel, permutation_measurements, synthesize_truth
from kvdot.mesh import build_mesh
from kvdot.objective import CoefficientPair, Objective, RegConfig

rng = np.random.default_rng(0)
mesh = build_mesh(8)
spec = fem.ProblemSpec()
truth = synthesize_truth(mesh)
meas = permutation_measurements(mesh, truth, spec, "single", NoiseModel("example1", 0))
obj = Objective(mesh, spec, meas, RegConfig.for_mesh(mesh))

pair = CoefficientPair(rng.uniform(1, 4, mesh.n_nodes), rng.uniform(2, 6, mesh.n_nodes))
ev = obj.evaluate(pair)
gq, ga = obj.gradient(ev)
print(f"J={ev.J:.5e}  R={ev.R:.5e}  Upsilon={ev.value:.5e}")

# one random direction, shrinking steps: the error should fall like t^2
dq, da = rng.standard_normal(mesh.n_nodes), rng.standard_normal(mesh.n_nodes)
exact = gq @ dq + ga @ da
for t in (1e-1, 1e-2, 1e-3, 1e-4):
    plus = obj.evaluate(CoefficientPair(pair.q + t * dq, pair.a + t * da)).value
    minus = obj.evaluate(CoefficientPair(pair.q - t * dq, pair.a - t * da)).value
    fd = (plus - minus) / (2 * t)
    print(f"t={t:.0e}  directional derivative {exact:+.10e}  fd {fd:+.10e}  rel err {abs(fd - exact) / abs(exact):.2e}")
