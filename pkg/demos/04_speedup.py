"""Per-sample cost of NV30 against ML30 grid search over the full grid.

ML30 evaluates the concentrated likelihood at all 40200 (theta, lambda)
configurations; each call factorises the 201 correlation matrices.  NV30
computes 30 variograms and one forward pass.  A second ML30 timing shares
the factorisations across samples; the 201 eigendecompositions are a
small share of the cost next to the 40200-entry likelihood surface.

Run:  python demos/04_speedup.py   (about 1-2 minutes)
"""

from covest import FactorCache, GridGeometry, training_grid
from covest.evaluate import benchmark, make_test_set, ml_estimator, nn_estimator
from covest.grids import test_grid
from covest.train import TrainConfig, train

geom = GridGeometry(16, 16)
search = training_grid(geom)
# timing does not depend on how well the network is trained
store, _ = train(TrainConfig("NV30", grid=training_grid(geom, 11, 5), epochs=1, fields_per_config=1))
samples = make_test_set(test_grid(geom, 20, seed=1), 1, replicates_per_field=30, seed=2).fields

res = benchmark(
    {
        "ML30": ml_estimator(search),
        "ML30 (shared factors)": ml_estimator(search, cache=FactorCache(geom)),
        "NV30": nn_estimator(store),
    },
    samples,
    warmup=1,
    repetitions=1,
    per_sample=True,
)
for r in res.values():
    print(f"{r.method:22s} {r.per_sample * 1e3:9.2f} ms per sample")
nv = res["NV30"].per_sample
print(f"speedup ML30 / NV30: {res['ML30'].per_sample / nv:.0f}x; with shared factors: {res['ML30 (shared factors)'].per_sample / nv:.0f}x")
