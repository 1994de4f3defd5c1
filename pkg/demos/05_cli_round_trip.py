"""
## The command line, end to end

Writes a CSV with its schema, then runs train, search, transfer and eval
through the same entry point the ``augdf`` script uses.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from augdf import from_arrays, save_csv, save_schema
from augdf.cli import main, split_for_seed, RunConfig, load_dataset

work = Path(tempfile.mkdtemp(prefix="augdf_demo_"))
rng = np.random.default_rng(0)
X = np.column_stack([rng.normal(size=200), rng.normal(size=200), rng.integers(0, 3, 200)])
y = (X[:, 0] + (X[:, 2] == 2) + 0.5 * rng.normal(size=200) > 0.5).astype(int)
ds = from_arrays(X, y, categorical=(2,), class_names=("no", "yes"), names=["a", "b", "colour"], label_column="y")
save_csv(ds, work / "data.csv")
save_schema(ds.schema, work / "schema.json")

config = {
    "data": "data.csv", "schema": "schema.json", "mode": "vanilla", "seeds": [0, 1, 2],
    "forests": [{"n_trees": 10, "kind": "bagged"}, {"n_trees": 10, "kind": "extra"}],
    "max_layers": 4, "population": 4, "grid": {"P": [0.1, 0.5, 0.9], "M": [0.3, 1.0, 3.0]},
}
(work / "config.json").write_text(json.dumps(config))
cfg = str(work / "config.json")

main(["ingest-check", "--config", cfg])
main(["train", "--config", cfg, "--out", str(work / "train"), "--verify"])
main(["search", "--config", cfg, "--out", str(work / "search"), "--seed", "0"])
main(["transfer", "--config", cfg, "--schedule", str(work / "search" / "schedule_seed0.json"),
      "--out", str(work / "transfer")])

# evaluate a saved model on the test split of seed 0
c = RunConfig.from_file(cfg)
_, _, test = split_for_seed(load_dataset(c), c, 0)
save_csv(test, work / "test.csv")
main(["eval", "--model", str(work / "train" / "model_seed0.agdm"), "--data", str(work / "test.csv"),
      "--schema", str(work / "schema.json"), "--out", str(work / "eval")])

rep = json.loads((work / "transfer" / "report.json").read_text())
print("transfer deltas:", [round(e["delta"], 4) for e in rep["per_seed"]])
print("outputs in", work)
