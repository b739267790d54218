"""Exact-lag empirical variograms, the input of the NV and NV30 networks.

A 16 x 16 grid has 119 distinct pair distances.  The variogram of a field
rises from the nugget towards the sill; more noise (smaller EDF) flattens
it, a longer range makes it rise more slowly.

Run:  python demos/02_variograms.py
"""

import numpy as np

from covest import CovParams, GridGeometry, lag_table, lambda_for_edf, matern_nu1, simulate, variogram_stack

geom = GridGeometry(16, 16)
lt = lag_table(geom)
print(f"{len(lt)} lags, first distances {np.round(lt.distances[:6], 3).tolist()}, last {lt.distances[-1]:.3f}")
print(f"pairs per lag: min {lt.pair_counts.min()}, max {lt.pair_counts.max()}, total {lt.pair_counts.sum()}")

show = [0, 4, 19, 59, 118]
print("\nmean variogram over 500 fields at selected lags " + str(np.round(lt.distances[show], 2).tolist()))
for theta in (4.0, 16.0):
    for target in (200.0, 40.0):
        lam = lambda_for_edf(theta, target, geom)
        v = variogram_stack(simulate(geom, CovParams(theta, lam), 500, seed=3)).mean(axis=0)
        model = 1.0 - matern_nu1(lt.distances, theta) + lam
        print(
            f"theta={theta:4.1f} EDF={target:5.1f}: empirical {np.round(v[show], 3).tolist()}  "
            f"model {np.round(model[show], 3).tolist()}"
        )

# invariance under the eight flips/rotations of the grid
f = simulate(geom, CovParams(6.0, 0.1), 1, seed=9).values[0]
ref = variogram_stack(f)
same = all(
    variogram_stack(np.ascontiguousarray(np.rot90(f, k)[:, ::s])).tobytes() == ref.tobytes()
    for k in range(4)
    for s in (1, -1)
)
print(f"\nvariogram identical under all 8 dihedral transforms: {same}")
