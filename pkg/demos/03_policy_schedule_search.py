"""
## Learning a per-layer policy schedule

Layer 1 scans the whole (prob, mag) grid with small probe forests. After that a
population of cascades grows one layer at a time: the weak half is replaced by
copies of the best, given new policies drawn near the strong half's, trained
and re-ranked.
"""

import numpy as np
from sklearn.datasets import make_classification

from augdf import (CascadeParams, ForestParams, default_grid, from_arrays, neighbour_weights,
                   run_schedule_search, stratified_split)

X, y = make_classification(n_samples=300, n_features=15, n_informative=4, flip_y=0.1, random_state=3)
ds = from_arrays(X, y)
fit, val = stratified_split(ds, 0.3, seed=0)

grid = default_grid()
print("prob axis:", grid.P)
print("mag axis :", np.round(grid.M, 3))
print("schedules for 15 layers: 10 **", grid.log10_schedule_count(15))

# neighbour sampling favours nearby cells, never the seed cell itself
w = neighbour_weights((0, 0), grid)
print("weights near (0,0):\n", np.round(w[:3, :3] / w[0, 1] / 2, 3))

params = CascadeParams((ForestParams(20, "bagged"), ForestParams(20, "extra")), 3, 6)
res = run_schedule_search(fit, val, grid, K=6, k2=8, params=params, seed=0, log=print)
print("trainings:", res.counter)
for k, scores in enumerate(res.history, start=1):
    print(f"layer {k}: population scores {np.round(scores, 3)}")
print("best schedule:", [(round(p.prob, 2), round(p.mag, 2)) for p in res.schedule.policies])
print(res.schedule.to_json(seed=0, score=res.best.score))
