"""Train a variogram network (NV) on a reduced grid and compare it with ML.

The full-scale setup (201 x 200 grid, 300 epochs) takes hours on a CPU;
this demo uses a 67 x 30 grid and 50 epochs, then evaluates NV and
grid-search ML on 200 test fields from the standard test box.

Run:  python demos/03_train_and_compare.py   (about 3-5 minutes)
"""

import time

from covest import FactorCache, GridGeometry, scaling_stats, training_grid
from covest.evaluate import evaluate, make_test_set, ml_estimator, nn_estimator
from covest.grids import test_grid
from covest.train import TrainConfig, train

geom = GridGeometry(16, 16)
grid = training_grid(geom, 67, 30)
print(f"training grid: {len(grid)} configurations, 3 fields each per epoch")



def progress(epoch, mae):
    if epoch % 10 == 0:
        print(f"  epoch {epoch}: MAE {mae:.3f}")


t0 = time.perf_counter()
store, report = train(TrainConfig("NV", grid=grid, epochs=50, seed=0), progress=progress)
print(f"trained {store.total_parameters} weights in {time.perf_counter() - t0:.0f} s")

tests = make_test_set(test_grid(geom, 200, seed=5), fields_per_config=1, seed=7)
search = training_grid(geom)  # the full 40200-entry grid for ML
summaries, raw = evaluate(
    {"NV": nn_estimator(store), "ML": ml_estimator(search, cache=FactorCache(geom))}, tests, scaling_stats(grid)
)
print(f"\n{'method':6s} {'scaled MAE':>10s}   theta bias (lower/upper)   log-lambda bias (lower/upper)")
for name, s in summaries.items():
    th = [s.get("theta", r).bias for r in ("lower", "upper")]
    ll = [s.get("loglambda", r).bias for r in ("lower", "upper")]
    print(f"{name:6s} {s.scaled_mae:10.3f}   {th[0]:+6.2f} / {th[1]:+6.2f}            {ll[0]:+6.2f} / {ll[1]:+6.2f}")
