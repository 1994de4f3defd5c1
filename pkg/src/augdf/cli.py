"""Command line entry point: ``augdf {ingest-check,train,search,transfer,eval}``.

Every run reads one JSON config (flags override a few fields) and writes into
an output directory guarded by a lock file: model containers, schedule JSON,
prediction CSVs and a ``report.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import derive_seed
from .augment import Policy, dump_mix_records
from .cascade import (CascadeParams, accuracy, load_model, new_model, predict_at_layer,
                      predict_checkpoint_ensemble, predict_layers, predict_proba, save_model,
                      select_output_layer_cv, train_layer)
from .data import load_csv, load_schema, stratified_split
from .errors import AugDFError, ConfigError, ScheduleMismatch, SchemaMismatch
from .forest import ForestParams
from .search import (BEST_ONLY, TOP_HALF, PolicyGrid, default_grid,
                     load_schedule, run_schedule_search, save_schedule)

log = logging.getLogger("augdf")

MODES = ("vanilla", "augdf-fixed-policy", "augdf-search", "transfer")


@dataclass
class RunConfig:
    data: str = ""
    schema: str = ""
    header: bool = True
    missing_policy: str = "impute"
    mode: str = "vanilla"
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    forests: list = field(default_factory=lambda: [
        {"n_trees": 100, "kind": "bagged"}, {"n_trees": 100, "kind": "extra"}])
    k_folds: int = 3
    max_layers: int = 15
    grid: Optional[dict] = None
    population: int = 8
    probe_fraction: float = 0.25
    explore_seed: str = TOP_HALF
    policy: Optional[dict] = None      # augdf-fixed-policy
    tree_factor: float = 1.0           # multiplies every forest's tree count

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.population < 2 or self.population % 2:
            raise ConfigError("population size must be even and >= 2")
        if self.explore_seed not in (TOP_HALF, BEST_ONLY):
            raise ConfigError(f"explore_seed must be {TOP_HALF!r} or {BEST_ONLY!r}")
        for key in ("data", "schema"):
            p = getattr(self, key)
            if p and not Path(p).exists():
                raise ConfigError(f"{key} file {p} does not exist")
        try:
            self.cascade_params()
            self.policy_grid()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, obj, base=None):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        obj = dict(obj)
        for key in ("data", "schema"):
            if obj.get(key) and base is not None and not Path(obj[key]).is_absolute():
                obj[key] = str(Path(base) / obj[key])
        return cls(**obj)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(obj, base=path.parent)

    def cascade_params(self):
        forests = tuple(ForestParams(**f) for f in self.forests)
        return CascadeParams(forests, self.k_folds, self.max_layers).scaled(self.tree_factor)

    def policy_grid(self):
        if self.grid is None:
            return default_grid()
        return PolicyGrid(tuple(self.grid["P"]), tuple(self.grid["M"]))

    def fixed_policy(self):
        if self.policy is None:
            raise ConfigError("augdf-fixed-policy mode needs a 'policy' entry")
        return Policy(float(self.policy["prob"]), float(self.policy["mag"]))


def summarize(values):
    values = [float(v) for v in values]
    return {
        "values": values,
        "mean": float(np.mean(values)),
        "std": float(statistics.stdev(values)) if len(values) > 1 else 0.0,
    }


def confusion_matrix(labels, pred, C):
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


@contextmanager
def locked_dir(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out} is in use (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def load_dataset(cfg):
    if not cfg.data or not cfg.schema:
        raise ConfigError("config needs 'data' and 'schema' paths")
    return load_csv(cfg.data, load_schema(cfg.schema), cfg.missing_policy, header=cfg.header)


def split_for_seed(ds, cfg, seed):
    """(fit, val, test) for one seed; identical for every mode."""
    train, test = stratified_split(ds, cfg.test_fraction, derive_seed(seed, "split", "test"))
    # a class left with one training row stays in the fit part
    fit, val = stratified_split(train, cfg.val_fraction, derive_seed(seed, "split", "val"), keep_singletons=True)
    return fit, val, test


def write_predictions(path, P, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", "pred"] + [f"p{c}" for c in range(P.shape[1])])
        for r, (p, lab) in enumerate(zip(P, labels)):
            w.writerow([r, int(lab), int(np.argmax(p))] + [repr(float(v)) for v in p])


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    labels = np.array([int(r[1]) for r in rows])
    P = np.array([[float(v) for v in r[3:]] for r in rows])
    return P, labels


def write_report(report, out):
    path = Path(out) / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_report(report, out):
    """Re-derive every per-seed accuracy and the summary from the prediction dumps."""
    recomputed = []
    for entry in report["per_seed"]:
        P, labels = read_predictions(Path(out) / entry["predictions"])
        acc = accuracy(P, labels)
        if abs(acc - entry["test_accuracy"]) > 1e-12:
            raise AugDFError(f"seed {entry['seed']}: recorded accuracy {entry['test_accuracy']} != {acc}")
        recomputed.append(acc)
    summ = summarize(recomputed)
    acc = report["test_accuracy"]
    if abs(summ["mean"] - acc["mean"]) > 1e-12 or abs(summ["std"] - acc["std"]) > 1e-12:
        raise AugDFError("summary statistics do not match the per-seed values")
    return True


def _mix_hook(out, seed, enabled):
    if not enabled:
        return None
    path = Path(out) / f"mix_seed{seed}.jsonl"
    path.unlink(missing_ok=True)

    def hook(layer, tag, records):
        if tag == "full":
            dump_mix_records(records, path, layer=layer)
    return hook


def _train_fixed(fit, policies, params, seed, digest, on_mix=None):
    params = replace(params, max_layers=len(policies))
    model = new_model(fit.d, fit.C, params, digest)
    for layer, policy in enumerate(policies, start=1):
        model = train_layer(model, fit, policy, derive_seed(seed, "train", layer, 0), on_mix=on_mix)
    return model


def _finish(report, out, verify):
    per = [e["test_accuracy"] for e in report["per_seed"]]
    report["test_accuracy"] = summarize(per)
    if verify:
        report["verified"] = verify_report(report, out)
    write_report(report, out)
    return report


def cmd_train(cfg, out, verify=False, dump_mix=False):
    """Vanilla or fixed-policy cascades, one per seed."""
    if cfg.mode not in ("vanilla", "augdf-fixed-policy"):
        raise ConfigError(f"train expects mode vanilla or augdf-fixed-policy, got {cfg.mode}")
    ds = load_dataset(cfg)
    params = cfg.cascade_params()
    policy = Policy(0.0, 1.0) if cfg.mode == "vanilla" else cfg.fixed_policy()
    report = {"command": "train", "mode": cfg.mode, "config": asdict(cfg), "per_seed": []}
    with locked_dir(out):
        for seed in cfg.seeds:
            fit, val, test = split_for_seed(ds, cfg, seed)
            t0 = time.perf_counter()
            model = _train_fixed(fit, [policy] * params.max_layers, params, seed, ds.schema.digest(),
                                 _mix_hook(out, seed, dump_mix))
            t_train = time.perf_counter() - t0
            t0 = time.perf_counter()
            per_layer = predict_layers(model, test.X)
            t_inf = time.perf_counter() - t0
            P_ce = np.mean(per_layer, axis=0)
            o = select_output_layer_cv(model, val)
            val_curve = [accuracy(P, val.labels) for P in predict_layers(model, val.X)]
            model_path = Path(out) / f"model_seed{seed}.agdm"
            save_model(model, model_path, extra={"seed": seed, "selected_layer_cv": o})
            pred_path = f"predictions_seed{seed}.csv"
            write_predictions(Path(out) / pred_path, P_ce, test.labels)
            report["per_seed"].append({
                "seed": seed,
                "test_accuracy": accuracy(P_ce, test.labels),
                "ce_accuracy": accuracy(P_ce, test.labels),
                "cv_accuracy": accuracy(per_layer[o - 1], test.labels),
                "cv_selected_layer": o,
                "val_curve": val_curve,
                "test_curve": [accuracy(P, test.labels) for P in per_layer],
                "timings": {"train": t_train, "inference": t_inf},
                "schedule": [asdict(p) for p in model.schedule],
                "model": model_path.name,
                "predictions": pred_path,
            })
            log.info("seed %s: CE %.4f, CV(layer %d) %.4f", seed, report["per_seed"][-1]["ce_accuracy"],
                     o, report["per_seed"][-1]["cv_accuracy"])
        report["cv_accuracy"] = summarize([e["cv_accuracy"] for e in report["per_seed"]])
        return _finish(report, out, verify)


def cmd_search(cfg, out, verify=False, dump_mix=False):
    """Schedule search per seed, with a vanilla cascade trained alongside for cost and accuracy reference."""
    if cfg.mode != "augdf-search":
        raise ConfigError(f"search expects mode augdf-search, got {cfg.mode}")
    ds = load_dataset(cfg)
    params = cfg.cascade_params()
    grid = cfg.policy_grid()
    report = {"command": "search", "mode": cfg.mode, "config": asdict(cfg), "per_seed": []}
    with locked_dir(out):
        for seed in cfg.seeds:
            fit, val, test = split_for_seed(ds, cfg, seed)
            t0 = time.perf_counter()
            vanilla = _train_fixed(fit, [Policy(0.0, 1.0)] * params.max_layers, params, seed, ds.schema.digest())
            t_vanilla = time.perf_counter() - t0
            t0 = time.perf_counter()
            res = run_schedule_search(fit, val, grid, K=params.max_layers, k2=cfg.population, params=params,
                                      seed=seed, explore_seed=cfg.explore_seed, probe_fraction=cfg.probe_fraction,
                                      schema_digest=ds.schema.digest(), log=log.info)
            t_search = time.perf_counter() - t0
            model = res.best.model.strip_training_cache()
            t0 = time.perf_counter()
            per_layer = predict_layers(model, test.X)
            t_inf = time.perf_counter() - t0
            P = np.mean(per_layer, axis=0)
            P_van = predict_checkpoint_ensemble(vanilla, test.X)
            sched_path = Path(out) / f"schedule_seed{seed}.json"
            save_schedule(res.schedule, sched_path, seed=seed, score=res.best.score)
            model_path = Path(out) / f"model_seed{seed}.agdm"
            save_model(model, model_path, extra={"seed": seed})
            pred_path = f"predictions_seed{seed}.csv"
            write_predictions(Path(out) / pred_path, P, test.labels)
            if dump_mix:
                _train_fixed(fit, res.schedule.policies, params, seed, ds.schema.digest(), _mix_hook(out, seed, True))
            van_o = select_output_layer_cv(vanilla, val)
            report["per_seed"].append({
                "seed": seed,
                "test_accuracy": accuracy(P, test.labels),
                "vanilla_ce_accuracy": accuracy(P_van, test.labels),
                "vanilla_cv_accuracy": accuracy(predict_at_layer(vanilla, test.X, van_o), test.labels),
                "val_score": res.best.score,
                "val_curve": [accuracy(Pv, val.labels) for Pv in predict_layers(model, val.X)],
                "test_curve": [accuracy(Pl, test.labels) for Pl in per_layer],
                "population_history": res.history,
                "budget": {"full_layer_trainings": res.counter.full_trainings,
                           "probe_trainings": res.counter.probe_trainings},
                "timings": {"vanilla_train": t_vanilla, "search": t_search, "inference": t_inf,
                            "search_to_vanilla_ratio": t_search / t_vanilla},
                "schedule": [asdict(p) for p in res.schedule.policies],
                "schedule_file": sched_path.name,
                "model": model_path.name,
                "predictions": pred_path,
            })
            e = report["per_seed"][-1]
            log.info("seed %s: AugDF %.4f vs vanilla CE %.4f / CV %.4f", seed, e["test_accuracy"],
                     e["vanilla_ce_accuracy"], e["vanilla_cv_accuracy"])
        report["vanilla_ce_accuracy"] = summarize([e["vanilla_ce_accuracy"] for e in report["per_seed"]])
        report["vanilla_cv_accuracy"] = summarize([e["vanilla_cv_accuracy"] for e in report["per_seed"]])
        return _finish(report, out, verify)


def cmd_transfer(schedule_path, cfg, out, verify=False, override_grid=False, dump_mix=False):
    """Train the config's cascade under a fixed schedule and against a no-augmentation control."""
    schedule, meta = load_schedule(schedule_path)
    if schedule.grid != cfg.policy_grid() and not override_grid:
        raise ScheduleMismatch("schedule grid differs from the config grid (pass --override-grid)")
    ds = load_dataset(cfg)
    params = cfg.cascade_params()
    report = {"command": "transfer", "mode": "transfer", "config": asdict(cfg), "per_seed": [],
              "schedule": [asdict(p) for p in schedule.policies], "schedule_source": str(schedule_path)}
    with locked_dir(out):
        for seed in cfg.seeds:
            fit, val, test = split_for_seed(ds, cfg, seed)
            t0 = time.perf_counter()
            model = _train_fixed(fit, schedule.policies, params, seed, ds.schema.digest(), _mix_hook(out, seed, dump_mix))
            t_train = time.perf_counter() - t0
            control = _train_fixed(fit, [Policy(0.0, 1.0)] * len(schedule), params, seed, ds.schema.digest())
            P = predict_checkpoint_ensemble(model, test.X)
            P_ctl = predict_checkpoint_ensemble(control, test.X)
            model_path = Path(out) / f"model_seed{seed}.agdm"
            save_model(model, model_path, extra={"seed": seed})
            pred_path = f"predictions_seed{seed}.csv"
            write_predictions(Path(out) / pred_path, P, test.labels)
            acc, acc_ctl = accuracy(P, test.labels), accuracy(P_ctl, test.labels)
            report["per_seed"].append({
                "seed": seed, "test_accuracy": acc, "control_accuracy": acc_ctl, "delta": acc - acc_ctl,
                "timings": {"train": t_train}, "model": model_path.name, "predictions": pred_path,
            })
            log.info("seed %s: transfer %.4f vs control %.4f", seed, acc, acc_ctl)
        report["control_accuracy"] = summarize([e["control_accuracy"] for e in report["per_seed"]])
        report["delta"] = summarize([e["delta"] for e in report["per_seed"]])
        return _finish(report, out, verify)


def cmd_eval(model_path, data_path, schema_path, out=None, header=True, missing_policy="impute"):
    model, extra = load_model(model_path)
    schema = load_schema(schema_path)
    if model.schema_digest is not None and model.schema_digest != schema.digest():
        raise SchemaMismatch("model was trained on a different schema; refusing to predict")
    ds = load_csv(data_path, schema, missing_policy, header=header)
    per_layer = predict_layers(model, ds.X)
    P = predict_proba(model, ds.X)
    P_ce = np.mean(per_layer, axis=0)
    pred = np.argmax(P, axis=1)
    report = {
        "command": "eval",
        "model": str(model_path),
        "mode": model.mode,
        "n": ds.n,
        "test_accuracy": accuracy(P, ds.labels),
        "ce_accuracy": accuracy(P_ce, ds.labels),
        "layer_curve": [accuracy(Pl, ds.labels) for Pl in per_layer],
        "confusion_matrix": confusion_matrix(ds.labels, pred, ds.C).tolist(),
        "class_counts": ds.class_counts().tolist(),
        "class_names": list(ds.class_names),
    }
    if out is not None:
        with locked_dir(out):
            write_predictions(Path(out) / "predictions.csv", P, ds.labels)
            write_report(report, out)
    return report


def cmd_ingest_check(cfg):
    ds = load_dataset(cfg)
    return {"n": ds.n, "d": ds.d, "C": ds.C, "class_names": list(ds.class_names),
            "class_counts": ds.class_counts().tolist(), "schema_digest": ds.schema.digest()}


def _add_common(p):
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, action="append", help="seed(s) overriding the config list")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--verify", action="store_true", help="re-derive the report from the dumped predictions")
    p.add_argument("--dump-mix", action="store_true", help="write mixing records as JSON lines")
    p.add_argument("--explore-seed", choices=(TOP_HALF, BEST_ONLY), help="seed set for explore")


def build_parser():
    parser = argparse.ArgumentParser(prog="augdf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest-check", help="load a dataset and print its shape")
    _add_common(p)
    for name in ("train", "search"):
        _add_common(sub.add_parser(name))
    p = sub.add_parser("transfer")
    _add_common(p)
    p.add_argument("--schedule", required=True, help="schedule JSON from a search run")
    p.add_argument("--override-grid", action="store_true")
    p = sub.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--out")
    # accepted for a uniform surface; eval has no randomness or mixing
    p.add_argument("--config")
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--verify", action="store_true")
    p.add_argument("--dump-mix", action="store_true")
    p.add_argument("--explore-seed", choices=(TOP_HALF, BEST_ONLY))
    return parser


def _config(args, mode=None):
    cfg = RunConfig.from_file(args.config)
    updates = {}
    if args.seed:
        updates["seeds"] = list(args.seed)
    if args.explore_seed:
        updates["explore_seed"] = args.explore_seed
    if mode is not None and cfg.mode != mode:
        updates["mode"] = mode
    return replace(cfg, **updates) if updates else cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "ingest-check":
            result = cmd_ingest_check(_config(args))
        elif args.command == "train":
            result = cmd_train(_config(args), args.out, args.verify, args.dump_mix)
        elif args.command == "search":
            result = cmd_search(_config(args, "augdf-search"), args.out, args.verify, args.dump_mix)
        elif args.command == "transfer":
            result = cmd_transfer(args.schedule, _config(args, "transfer"), args.out, args.verify,
                                  args.override_grid, args.dump_mix)
        else:
            result = cmd_eval(args.model, args.data, args.schema, args.out, header=not args.no_header)
    except AugDFError as exc:
        print(f"augdf: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"augdf: I/O error: {exc}", file=sys.stderr)
        return 3
    summary = {k: result[k] for k in ("test_accuracy", "n", "d", "C", "class_counts") if k in result}
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
