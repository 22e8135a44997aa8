"""
Joint distributions and the eight CHSH inequalities
===================================================

A table of four pairwise distributions comes from one joint distribution
of (A_x, A_x', B_y, B_y') exactly when all eight CHSH inequalities hold.
The LP check and the inequality check are compared on random tables.
"""
import numpy as np

from bellsim import jp, models

examples = {
    "all +1": [1, 1, 1, 1],
    "PR box": [1, 1, 1, -1],
    "quantum": list(models.quantum_table()),
    "zero": [0, 0, 0, 0],
}
for name, E in examples.items():
    s = jp.PairwiseSystem.from_correlations(E)
    r = jp.jp_feasible(s)
    print(f"{name:8s} {r.status:18s} max Fine value {max(float(v) for v in jp.fine_inequalities(s)):+.4f}")

# mix a feasible table with the PR box and watch the status flip
rng = np.random.default_rng(0)
base = jp.JointWitness(rng.dirichlet(np.ones(16))).project().as_float()
pr = jp.PairwiseSystem.from_correlations([1, 1, 1, -1]).as_float()
for t in np.linspace(0, 0.6, 7):
    s = jp.PairwiseSystem((1 - t) * base + t * pr)
    r = jp.jp_feasible(s)
    print(f"t = {t:.1f}: {r.status:12s} max Fine value {max(float(v) for v in jp.fine_inequalities(s)):+.4f}")
