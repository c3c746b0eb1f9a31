"""Relaxed self-energy of lattice Burgers vectors on two lattices.

Prints Sigma(v) with its optimal decomposition for a few query vectors and
shows where splitting a long Burgers vector into short ones pays off.

    python demos/self_energy.py
"""
import numpy as np

from disloclab.lattice_selfenergy import DislocationLattice, sigma

iquad = np.eye(2) / (3 * np.pi)
lattices = {"square": [[1.0, 0.0], [0.0, 1.0]], "hexagonal": [[1.0, 0.0], [0.5, np.sqrt(3) / 2]]}
for name, basis in lattices.items():
    lat = DislocationLattice.certified(basis, iquad)
    print(f"{name} lattice, cutoff K = {lat.cutoff_K:.4f}")
    for q in ([1.0, 0.0], [1.0, 1.0], [2.0, 1.0], [0.3, 0.7]):
        r = sigma(lat, iquad, q)
        parts = " + ".join(f"{lam:.3f}*({u[0]:g}, {u[1]:g})" for u, lam in r.decomposition)
        plain = float(np.asarray(q) @ iquad @ np.asarray(q))
        print(f"  Sigma({q[0]:g}, {q[1]:g}) = {r.value:.5f}  (quadratic {plain:.5f})  via {parts}")
