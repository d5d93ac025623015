"""``cen`` command line: train, eval, explain, diagnose, experiment.

Exit codes: 0 ok, 2 usage or configuration error, 3 data error, 4 training
divergence. Outputs are written only under ``--out`` and only once the
command has succeeded, so a failed run leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np

from cen import checkpoint
from cen.data import (Schema, SyntheticSpec, discretize_survival, extract_targets, load_csv,
                      PreprocessPlan)
from cen.errors import CenError, DivergedTrainingError, IngestionError, InvalidInputError
from cen.experiments import EXPERIMENTS, run_experiment, write_rows
from cen.model import Batch, CenModel, build_cen, build_mlp_classifier, fano_diagnostic
from cen.numeric import child_seed, make_rng
from cen.training import TrainConfig, evaluate, quantile_indices, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(CenError):
    """Bad flags or configuration."""


class DataError(CenError):
    """Unreadable or inconsistent data."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ModelSpec:
    kind: str = "cen"  # "cen" or "mlp" (MLP classifier on c (+) x)
    family: str = "linear"
    encoder: str = "mlp"
    hidden: tuple = (16,)
    dictionary_size: int | None = 4
    mixing: str = "cen"
    rnn_hidden: int = 16
    dropout: float = 0.0
    dict_scale: float = 0.1
    l1_dict: float = 0.0
    l2_dict: float = 0.0
    learn_omega: bool = False


@dataclass
class SurvivalSpec:
    horizon: float = 156 * 7.0
    width: float = 7.0
    add_intercept: bool = True


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    survival: SurvivalSpec = field(default_factory=SurvivalSpec)
    test_fraction: float = 0.2
    quantiles: tuple = (0.25, 0.5, 0.75)
    time_rule: str = "median"
    seed: int = 0
    # experiment command only
    experiment: dict = field(default_factory=dict)
    n_seeds: int = 3


def _strict(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise UsageError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    bad = sorted(set(raw) - known)
    if bad:
        raise UsageError(f"unknown {where} key(s): {', '.join(bad)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**vals)
    except (TypeError, InvalidInputError) as err:
        raise UsageError(f"invalid {where}: {err}") from err


DATA_KEYS = {"path", "schema", "synthetic"}


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping; unknown keys anywhere raise :class:`UsageError`."""
    raw = dict(raw)
    sub = {}
    for key, cls in (("model", ModelSpec), ("train", TrainConfig), ("survival", SurvivalSpec)):
        if key in raw:
            sub[key] = _strict(cls, raw.pop(key), key)
    data = raw.pop("data", {})
    if not isinstance(data, dict) or set(data) - DATA_KEYS:
        raise UsageError(f"unknown data key(s): {sorted(set(data) - DATA_KEYS)}")
    if "synthetic" in data:
        _strict(SyntheticSpec, data["synthetic"], "data.synthetic")
    cfg = _strict(RunConfig, raw, "config")
    for key, val in sub.items():
        setattr(cfg, key, val)
    cfg.data = data
    if cfg.model.kind not in ("cen", "mlp"):
        raise UsageError("model.kind must be 'cen' or 'mlp'")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise UsageError("test_fraction must lie in (0, 1)")
    if any(not 0.0 < q < 1.0 for q in cfg.quantiles):
        raise UsageError("quantiles must lie in (0, 1)")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    return raw


def _apply_flags(raw: dict, args) -> dict:
    raw = dict(raw)
    data = dict(raw.get("data", {}))
    if getattr(args, "data", None):
        data.pop("synthetic", None)
        data["path"] = args.data
    if getattr(args, "schema", None):
        data["schema"] = args.schema
    if data:
        raw["data"] = data
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "quantiles", None):
        try:
            raw["quantiles"] = [float(q) for q in args.quantiles.split(",")]
        except ValueError as err:
            raise UsageError(f"--quantiles expects comma-separated numbers, got {args.quantiles!r}") from err
    return raw


# ---------------------------------------------------------------------------
# data


@dataclass
class Prepared:
    batch: Batch
    context_names: list
    attribute_names: list
    n_classes: int
    m: int | None
    meta: dict


def _check_paths(cfg: RunConfig):
    data = cfg.data
    if "synthetic" in data:
        return
    if "path" not in data:
        raise UsageError("no data given: set data.path (or --data) or data.synthetic")
    for key in ("path", "schema"):
        if key in data and not os.path.isfile(data[key]):
            raise UsageError(f"{key} {data[key]!r} does not exist")


def _load_schema(path) -> Schema:
    try:
        return Schema.load(path)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read schema {path}: {err}") from err
    except InvalidInputError as err:
        raise UsageError(f"invalid schema: {err}") from err


def _load_table(cfg: RunConfig):
    data = cfg.data
    if "schema" not in data:
        raise UsageError("CSV data needs a schema (data.schema or --schema)")
    schema = _load_schema(data["schema"])
    try:
        ds = load_csv(data["path"], schema)
    except IngestionError as err:
        raise DataError(str(err)) from err
    except OSError as err:
        raise DataError(f"cannot read {data['path']}: {err}") from err
    if not schema.context and not schema.attributes:
        raise UsageError("schema must list context and/or attribute columns")
    return ds, schema


def _targets(ds, schema: Schema, cfg: RunConfig, meta: dict):
    try:
        if cfg.model.family == "linear":
            y, levels = extract_targets(ds, schema.censored_when)
            meta["levels"] = levels
            return y, None, max(2, len(levels)), None
        times, censored = extract_targets(ds, schema.censored_when)
        index, censored, _ = discretize_survival(times, censored, cfg.survival.horizon, cfg.survival.width)
        m = int(np.ceil(cfg.survival.horizon / cfg.survival.width - 1e-9))
        return index, censored, 2, m
    except (IngestionError, InvalidInputError) as err:
        raise DataError(str(err)) from err


def _design(plan: PreprocessPlan, ds, cfg: RunConfig):
    C, X = plan.transform(ds)
    names_x = plan.feature_names(plan.attributes)
    if cfg.model.family == "survival" and cfg.survival.add_intercept:
        X = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        names_x = names_x + ["bias"]
    return C, X, names_x


def prepare_training_data(cfg: RunConfig) -> tuple:
    """Return ``(train Prepared, test Prepared)``; CSV data get a seeded split."""
    data = cfg.data
    if "synthetic" in data:
        spec = SyntheticSpec(**{**data["synthetic"]})
        if cfg.model.family != "linear":
            raise UsageError("synthetic data are classification tasks; use family 'linear'")
        tr = SyntheticSpec(**{**spec.__dict__, "seed": child_seed(spec.seed, 0)}).generate()
        te = SyntheticSpec(**{**spec.__dict__, "seed": child_seed(spec.seed, 1)}).generate()
        cn = [f"c{i}" for i in range(tr.C.shape[1])]
        xn = [f"x{i}" for i in range(tr.X.shape[1])]
        meta = {"synthetic": dict(data["synthetic"])}
        n_cls = 2
        return (Prepared(tr.batch(), cn, xn, n_cls, None, meta),
                Prepared(te.batch(), cn, xn, n_cls, None, meta))
    ds, schema = _load_table(cfg)
    meta = {"schema": {"columns": schema.kinds, "context": schema.context,
                       "attributes": schema.attributes, "censored_when": schema.censored_when}}
    y, censored, n_cls, m = _targets(ds, schema, cfg, meta)
    perm = make_rng(child_seed(cfg.seed, 100)).permutation(ds.n_rows)
    n_test = int(round(cfg.test_fraction * ds.n_rows))
    if n_test < 1 or ds.n_rows - n_test < 2:
        raise DataError(f"{ds.n_rows} rows are too few for a train/test split")
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    try:
        plan = PreprocessPlan.fit(ds, train_idx, schema.context, schema.attributes)
    except InvalidInputError as err:
        raise DataError(str(err)) from err
    C, X, names_x = _design(plan, ds, cfg)
    meta["plan"] = plan.to_dict()
    names_c = plan.feature_names(plan.context)
    if C.shape[1] == 0 and cfg.model.encoder != "constant":
        C = np.zeros((ds.n_rows, 1))
        names_c = ["const"]

    def part(idx):
        b = Batch(C[idx], X[idx], y[idx], None if censored is None else censored[idx])
        return Prepared(b, names_c, names_x, n_cls, m, meta)

    return part(train_idx), part(test_idx)


def prepare_eval_data(cfg: RunConfig, extra: dict) -> Prepared:
    """Load data for a trained checkpoint, reusing its preprocessing plan."""
    data = cfg.data
    if "synthetic" in data or ("path" not in data and "synthetic" in extra.get("meta", {})):
        syn = data.get("synthetic") or extra["meta"]["synthetic"]
        spec = SyntheticSpec(**syn)
        te = SyntheticSpec(**{**spec.__dict__, "seed": child_seed(spec.seed, 1)}).generate()
        return Prepared(te.batch(), extra["context_names"], extra["attribute_names"], 2, None, {})
    if "path" not in data:
        raise UsageError("no data given: pass --data")
    meta = extra.get("meta", {})
    _check_paths(cfg)
    if "schema" in data:
        schema = _load_schema(data["schema"])
    elif "schema" in meta:
        schema = Schema.from_dict(meta["schema"])
    else:
        raise UsageError("CSV data needs a schema (--schema)")
    try:
        ds = load_csv(data["path"], schema)
    except IngestionError as err:
        raise DataError(str(err)) from err
    plan = PreprocessPlan.from_dict(meta["plan"])
    for name in plan.context + plan.attributes:
        if name not in ds.columns:
            raise DataError(f"column {name!r} used by the checkpoint is missing from {data['path']}")
    y, censored, n_cls, m = _targets(ds, schema, cfg, {})
    C, X, names_x = _design(plan, ds, cfg)
    if C.shape[1] == 0 and extra.get("context_names") == ["const"]:
        C = np.zeros((ds.n_rows, 1))
    return Prepared(Batch(C, X, y, censored), extra["context_names"], names_x, n_cls, m, meta)


# ---------------------------------------------------------------------------
# model construction


def build_model(cfg: RunConfig, prep: Prepared):
    ms = cfg.model
    d_c, d_x = prep.batch.C.shape[1], prep.batch.X.shape[1]
    seed = child_seed(cfg.seed, 200)
    if ms.kind == "mlp":
        if ms.family != "linear":
            raise UsageError("the MLP classifier baseline supports the linear family only")
        return build_mlp_classifier(d_c + d_x, ms.hidden, n_classes=prep.n_classes, seed=seed)
    try:
        return build_cen(d_c, d_x, ms.family, n_classes=prep.n_classes, m=prep.m, encoder=ms.encoder,
                         hidden=ms.hidden, dictionary_size=ms.dictionary_size, rnn_hidden=ms.rnn_hidden,
                         dropout=ms.dropout, dict_scale=ms.dict_scale, l1_dict=ms.l1_dict,
                         l2_dict=ms.l2_dict, learn_omega=ms.learn_omega, mixing=ms.mixing, seed=seed)
    except InvalidInputError as err:
        raise UsageError(f"invalid model settings: {err}") from err


# ---------------------------------------------------------------------------
# output helpers


class Staging:
    """Collect outputs in a temporary directory and move them under ``out`` on success."""

    def __init__(self, out: str):
        self.out = out
        self.files = {}

    def path(self, name: str) -> str:
        if not hasattr(self, "_tmp"):
            self._tmp = tempfile.mkdtemp(prefix="cen-")
        p = os.path.join(self._tmp, name)
        self.files[name] = p
        return p

    def commit(self) -> list:
        os.makedirs(self.out, exist_ok=True)
        written = []
        for name, p in self.files.items():
            dest = os.path.join(self.out, name)
            os.replace(p, dest) if _same_fs(p, self.out) else _copy(p, dest)
            written.append(dest)
        self.cleanup()
        return written

    def cleanup(self):
        if hasattr(self, "_tmp"):
            for p in self.files.values():
                if os.path.exists(p):
                    os.remove(p)
            os.rmdir(self._tmp)
            del self._tmp


def _same_fs(a: str, b: str) -> bool:
    try:
        return os.stat(a).st_dev == os.stat(b).st_dev
    except OSError:
        return False


def _copy(src: str, dest: str):
    with open(src, "rb") as fi, open(dest, "wb") as fo:
        fo.write(fi.read())
    os.remove(src)


def _dump_json(obj, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _quantile_idx(cfg: RunConfig, prep: Prepared) -> list | None:
    if prep.m is None:
        return None
    return [int(q) for q in quantile_indices(prep.batch.y, cfg.quantiles)]


def _metrics(model, batch: Batch, q_idx, rule: str) -> dict:
    if isinstance(model, CenModel):
        return evaluate(model, batch, q_idx, rule).to_dict()
    report = evaluate_mlp(model, batch)
    return report


def evaluate_mlp(model, batch: Batch) -> dict:
    from cen.training import MetricsReport, accuracy, auc

    proba = model.predict_proba(batch.C, batch.X)
    rep = MetricsReport(n=len(batch), loss=float(model.objective(batch)),
                        accuracy=accuracy(proba.argmax(axis=1), batch.y))
    if proba.shape[1] == 2 and 0 < np.sum(batch.y == 1) < len(batch):
        rep.auc = auc(proba[:, 1], batch.y == 1)
    return rep.to_dict()


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = parse_config(_apply_flags(load_config(args.config), args))
    _check_paths(cfg)
    cfg.train.seed = child_seed(cfg.seed, 300)
    tr, te = prepare_training_data(cfg)
    model = build_model(cfg, tr)
    result = train(model, tr.batch, cfg.train)
    q_idx = _quantile_idx(cfg, tr)
    metrics = {"schema_version": 1, "best_epoch": result.best_epoch, "stopped_early": result.stopped_early,
               "quantile_indices": q_idx, "train": _metrics(model, tr.batch, q_idx, cfg.time_rule),
               "test": _metrics(model, te.batch, q_idx, cfg.time_rule)}
    extra = {"context_names": tr.context_names, "attribute_names": tr.attribute_names,
             "quantile_indices": q_idx, "meta": tr.meta,
             "run": {"survival": cfg.survival.__dict__, "time_rule": cfg.time_rule, "seed": cfg.seed,
                     "quantiles": list(cfg.quantiles)}}
    out = Staging(args.out)
    try:
        checkpoint.save(model, out.path("checkpoint.json"), extra)
        result.write_history_csv(out.path("history.csv"))
        _dump_json(metrics, out.path("metrics.json"))
        out.commit()
    finally:
        out.cleanup()
    return EXIT_OK


def _load_checkpoint(path):
    if not path:
        raise UsageError("--checkpoint is required")
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint {path!r} does not exist")
    try:
        return checkpoint.load(path)
    except InvalidInputError as err:
        raise UsageError(str(err)) from err


def _eval_config(args, extra: dict) -> RunConfig:
    raw = _apply_flags(load_config(args.config), args)
    run = extra.get("run", {})
    raw.setdefault("survival", run.get("survival", {}))
    raw.setdefault("time_rule", run.get("time_rule", "median"))
    raw.setdefault("quantiles", run.get("quantiles", [0.25, 0.5, 0.75]))
    cfg = parse_config(raw)
    return cfg


def _family_spec(model, cfg: RunConfig):
    family = model.family if isinstance(model, CenModel) else "linear"
    cfg.model.family = family
    return family


def cmd_eval(args) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    cfg = _eval_config(args, extra)
    _family_spec(model, cfg)
    prep = prepare_eval_data(cfg, extra)
    _check_shapes(model, prep)
    q_idx = extra.get("quantile_indices")
    if args.quantiles and prep.m is not None:
        # explicit quantiles are resolved against the evaluated data
        q_idx = [int(q) for q in quantile_indices(prep.batch.y, cfg.quantiles)]
    metrics = {"schema_version": 1, "quantile_indices": q_idx,
               "test": _metrics(model, prep.batch, q_idx, cfg.time_rule)}
    out = Staging(args.out)
    try:
        _dump_json(metrics, out.path("metrics.json"))
        out.commit()
    finally:
        out.cleanup()
    return EXIT_OK


def _check_shapes(model, prep: Prepared):
    d_x = prep.batch.X.shape[1]
    d_c = prep.batch.C.shape[1]
    if isinstance(model, CenModel):
        if d_x != model.d_x:
            raise DataError(f"data give {d_x} attribute columns, checkpoint expects {model.d_x}")
        if model.encoder is not None and d_c != model.context_dim:
            raise DataError(f"data give {d_c} context columns, checkpoint expects {model.context_dim}")
    else:
        want = model.encoder.in_dim
        if d_c + d_x != want:
            raise DataError(f"data give {d_c + d_x} input columns, checkpoint expects {want}")


def _parse_rows(spec: str | None, n: int) -> np.ndarray:
    if not spec:
        return np.arange(n)
    try:
        lo, _, hi = spec.partition(":")
        start = int(lo) if lo else 0
        stop = int(hi) if hi else n
    except ValueError as err:
        raise UsageError(f"--rows expects START:STOP, got {spec!r}") from err
    if not 0 <= start < stop <= n:
        raise UsageError(f"--rows {spec} is outside 0:{n}")
    return np.arange(start, stop)


def explanation_rows(model: CenModel, C: np.ndarray, attribute_names: list, row_ids) -> tuple:
    """Wide explanation table: ``(header, rows)``.

    Linear family: one row per (instance, class) with ``w_<feature>`` columns,
    ``bias`` and the attention weights. Survival family: one row per
    (instance, interval) with one weight per attribute column.
    """
    theta, alpha = model.explain(C)
    N = C.shape[0] if model.encoder is not None else len(row_ids)
    if model.encoder is None:
        theta = np.broadcast_to(model.theta0, (N,) + model.theta_shape)
    K = 0 if alpha is None else alpha.shape[-1]
    a_cols = [f"alpha_{k}" for k in range(K)]
    if model.family == "linear":
        k, d = model.n_classes, model.d_x
        header = ["row", "class"] + [f"w_{n}" for n in attribute_names] + ["bias"] + a_cols
        rows = []
        for i, rid in enumerate(row_ids):
            W = theta[i, :k * d].reshape(k, d)
            b = theta[i, k * d:]
            for c in range(k):
                a = [] if alpha is None else list(alpha[i])
                rows.append([int(rid), c, *W[c], b[c], *a])
        return header, rows
    header = ["row", "interval"] + [n if n == "bias" else f"w_{n}" for n in attribute_names] + a_cols
    rows = []
    for i, rid in enumerate(row_ids):
        for t in range(model.m):
            a = [] if alpha is None else list(alpha[i, t] if alpha.ndim == 3 else alpha[i])
            rows.append([int(rid), t + 1, *theta[i, t], *a])
    return header, rows


def _write_table(path: str, header: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_explain(args) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    if not isinstance(model, CenModel):
        raise UsageError("explain needs a CEN checkpoint; MLP classifiers generate no explanations")
    cfg = _eval_config(args, extra)
    _family_spec(model, cfg)
    prep = prepare_eval_data(cfg, extra)
    _check_shapes(model, prep)
    idx = _parse_rows(args.rows, len(prep.batch))
    C = prep.batch.C[idx]
    header, rows = explanation_rows(model, C, prep.attribute_names, idx)
    out = Staging(args.out)
    try:
        _write_table(out.path("explanations.csv"), header, rows)
        if model.family == "survival":
            curves = model.survival_curves(C, prep.batch.X[idx])
            _write_table(out.path("survival_curves.csv"),
                         ["row"] + [f"S_{t}" for t in range(curves.shape[1])],
                         [[int(r), *c] for r, c in zip(idx, curves)])
        out.commit()
    finally:
        out.cleanup()
    return EXIT_OK


def cmd_diagnose(args) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    if not isinstance(model, CenModel) or model.family != "linear":
        raise UsageError("diagnose needs a linear-family CEN checkpoint")
    cfg = _eval_config(args, extra)
    _family_spec(model, cfg)
    prep = prepare_eval_data(cfg, extra)
    _check_shapes(model, prep)
    try:
        report = fano_diagnostic(model, prep.batch, seed=child_seed(cfg.seed, 400))
    except InvalidInputError as err:
        raise DataError(str(err)) from err
    out = Staging(args.out)
    try:
        _dump_json({"schema_version": 1, **report.to_dict()}, out.path("fano.json"))
        out.commit()
    finally:
        out.cleanup()
    return EXIT_OK


def cmd_experiment(args) -> int:
    raw = _apply_flags(load_config(args.config), args)
    cfg = parse_config(raw)
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; valid names: {', '.join(EXPERIMENTS)}")
    if cfg.n_seeds < 1:
        raise UsageError("n_seeds must be >= 1")
    seeds = [cfg.seed + i for i in range(cfg.n_seeds)]
    try:
        rows = run_experiment(args.name, seeds, cfg.experiment)
    except InvalidInputError as err:
        raise UsageError(str(err)) from err
    out = Staging(args.out)
    try:
        write_rows(rows, out.path(f"{args.name}.csv"))
        out.commit()
    finally:
        out.cleanup()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cen", description="Contextual explanation networks")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if data:
            sp.add_argument("--data", help="CSV data file")
            sp.add_argument("--schema", help="schema JSON for --data")
        return sp

    common(sub.add_parser("train", help="fit a model and write checkpoint, history, metrics")) \
        .add_argument("--quantiles", help="survival quantiles for Acc@q, e.g. 0.25,0.5,0.75")
    ev = common(sub.add_parser("eval", help="score a checkpoint on data"))
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--quantiles", help="resolve Acc@q quantiles on the evaluated data")
    ex = common(sub.add_parser("explain", help="dump generated explanations"))
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--rows", help="row range START:STOP (default: all)")
    ex.set_defaults(quantiles=None)
    dg = common(sub.add_parser("diagnose", help="explanation-contribution diagnostic"))
    dg.add_argument("--checkpoint", required=True)
    dg.set_defaults(quantiles=None)
    xp = common(sub.add_parser("experiment", help="run a named sweep"), data=False)
    xp.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    xp.set_defaults(quantiles=None)
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "explain": cmd_explain,
            "diagnose": cmd_diagnose, "experiment": cmd_experiment}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"cen: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"cen: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except IngestionError as err:
        print(f"cen: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergedTrainingError as err:
        print(f"cen: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except InvalidInputError as err:
        print(f"cen: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
