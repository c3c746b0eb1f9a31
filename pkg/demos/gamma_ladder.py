"""Critical-regime energy ladder for a uniform dislocation density.

Runs the recovery / minimiser / lower-bound triple along eps in
{1e-2, 3e-3, 1e-3} with n_eps = log(1/eps) and writes the rows as CSV.

    python demos/gamma_ladder.py [out.csv]
"""
import sys

from disloclab import experiments as ex
from disloclab.density import EnergyDensity

rep = ex.gamma_limit_experiment(ex.RegimeParams((1e-2, 3e-3, 1e-3)), EnergyDensity(), (1.0, 0.0), J="J0")
t = rep["targets"]
print(f"limit energy {t['total']:.4f} = elastic {t['elastic']:.4f} + self {t['self']:.4f}")
cols = ["eps", "n_eps", "lower", "measured", "upper", "E_self", "E_elastic", "gap_measured"]
print(" ".join(f"{c:>12}" for c in cols))
for r in rep["rows"]:
    print(" ".join(f"{r[c]:12.4g}" for c in cols))
if len(sys.argv) > 1:
    ex.write_csv(sys.argv[1], rep["rows"], cols)
