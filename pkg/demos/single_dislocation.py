"""Minimise the elastic energy of one edge dislocation and compare with the cell problem.

For each Burgers vector size the script builds the model body between r = |v|
and R = 1, relaxes the identity chart and prints the minimised energy next to
the quadratic cell value on the same annulus (delta = |v|).

    python demos/single_dislocation.py
"""
import numpy as np

from disloclab.cell import solve_cell
from disloclab.density import EnergyDensity, hessian_at_identity
from disloclab.geometry import ModelManifold, model_body
from disloclab.solve import best_rotation, energy, minimize

w = EnergyDensity("isotropic", 1.0, 1.0)
print(f"{'|v|':>8} {'chart':>10} {'minimised':>10} {'cell':>10} {'ratio':>6} {'rigidity':>8}")
for nv in (1e-3, 3e-3, 1e-2):
    body = model_body(ModelManifold((nv, 0.0), 1.0), None, 12)
    scale = nv ** 2 * np.log(1 / nv)
    start = energy(body, body.chart, w).total
    res = minimize(body, w, body.chart)
    cell = solve_cell((1.0, 0.0), nv, hessian_at_identity(w), (12, None)).value_delta
    rig = best_rotation(body, res.positions)
    print(f"{nv:8.0e} {start / scale:10.4f} {res.breakdown.total / scale:10.4f} {cell:10.4f} "
          f"{res.breakdown.total / scale / cell:6.3f} {rig.ratio:8.3f}")
print("energies are divided by |v|^2 log(1/|v|); the closed-form prelog factor is", round(1 / (3 * np.pi), 4))
