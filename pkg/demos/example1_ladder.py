"""Reconstruct (q, a) from one noisy Cauchy pair on a ladder of meshes.

Each level starts from the prolongated result of the previous one. The table
printed at the end is the same one written by ``kvdot experiment``.
Run with ``python demos/example1_ladder.py`` (about half a minute).
"""
import logging

from kvdot.experiment import ExperimentConfig, run_ladder

logging.basicConfig(level=logging.WARNING)

config = ExperimentConfig(tau_levels=(4, 8, 16, 32), theta="example1", seed=0)


def report(result):
    s = result.state
    print(f"tau={result.mesh.tau:3d} finished after {s.iteration} iterations ({s.status}), Upsilon={s.value:.4e}")


results = run_ladder(config, on_level=report)

print()
print(f"{'tau':>4} {'delta':>10} {'E_qa':>8} {'E_N':>8} {'E_M':>8} {'E_D':>8}")
for r in results:
    e = r.report
    print(f"{e.tau:4d} {e.delta:10.3e} {e.E_qa:8.4f} {e.E_N:8.4f} {e.E_M:8.4f} {e.E_D:8.4f}")
