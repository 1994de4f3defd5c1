"""
## Reusing a schedule on a bigger cascade

A schedule found with small forests is applied as-is to a cascade with four
times the trees, next to a control trained without augmentation.
"""

import numpy as np

from augdf import (CascadeParams, ForestParams, accuracy, apply_schedule, default_grid, from_arrays,
                   predict_checkpoint_ensemble, run_schedule_search, stratified_split, vanilla_cascade)

rng = np.random.default_rng(1)
X = rng.normal(size=(300, 10))
s = X[:, 0] + X[:, 1] * X[:, 2] + 0.8 * rng.normal(size=300)
ds = from_arrays(X, np.digitize(s, np.quantile(s, [1 / 3, 2 / 3])))

small = CascadeParams((ForestParams(25, "bagged"), ForestParams(25, "extra")), 3, 5)
big = small.scaled(4)
for seed in range(3):
    train, test = stratified_split(ds, 0.3, seed)
    fit, val = stratified_split(train, 0.25, seed + 100)
    sched = run_schedule_search(fit, val, default_grid(), K=5, k2=8, params=small, seed=seed).schedule
    moved = apply_schedule(sched, train, big, seed)
    control = vanilla_cascade(train, big, seed)
    a = accuracy(predict_checkpoint_ensemble(moved, test.X), test.labels)
    b = accuracy(predict_checkpoint_ensemble(control, test.X), test.labels)
    print(f"seed {seed}: transferred {a:.4f}  control {b:.4f}  delta {a - b:+.4f}")
