"""Recover a sparse signal from one-bit measurements with the four classic
solvers.

A K-sparse source is measured as r = sign(phi x - b).  With zero thresholds
(rfpi, biht) only the signal's direction is recoverable; with random
thresholds (grfpi, gbiht) the amplitude survives too.  This script builds
one instance of each setting and prints how the recovery error falls with
the iterations.
"""

import numpy as np

from onebitcs.numerics import RngStream, gaussian_matrix, gaussian_vector
from onebitcs.signals import SensingModel, SignalSpec, sample_signal
from onebitcs.solvers import SolverConfig, biht_solve, gbiht_solve, grfpi_solve, rfpi_solve

n, m, k, iters = 64, 256, 4, 30
rng = RngStream(2024)

signal = sample_signal(SignalSpec(n, k), rng.child("signal"))
print(f"source: n={n}, {k} nonzeros, norm {np.linalg.norm(signal.values):.3f}")

phi = gaussian_matrix(rng.child("phi"), m, n)
zero_b = SensingModel(phi=phi, thresholds=np.zeros(m))
random_b = SensingModel(phi=phi, thresholds=gaussian_vector(rng.child("b"), m))

runs = [
    ("rfpi   (b=0)", rfpi_solve, zero_b, SolverConfig(0.03, 1.0, iters)),
    ("biht   (b=0)", biht_solve, zero_b, SolverConfig(0.0, 0.02, iters, sparsity=k)),
    ("grfpi  (b~N)", grfpi_solve, random_b, SolverConfig(0.03, 1.0, iters)),
    ("gbiht  (b~N)", gbiht_solve, random_b, SolverConfig(0.0, 0.02, iters, sparsity=k)),
]

print(f"\n{'solver':<14} {'dir MSE @0':>12} {'dir MSE @' + str(iters):>12} "
      f"{'amp MSE @' + str(iters):>12} {'violations':>10}")
for name, solve, model, cfg in runs:
    traj = solve(signal, model, cfg)
    amp, direction, viol = traj.metrics[-1]
    print(f"{name:<14} {traj.metrics[0][1]:>12.5f} {direction:>12.5f} {amp:>12.5f} {viol:>10d}")

print("\nNote how the zero-threshold solvers recover the direction but (being"
      "\nconfined to the unit sphere) cannot match the amplitude, while the"
      "\ngeneralized solvers drive both errors down.")
