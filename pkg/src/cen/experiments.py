"""Seeded experiment sweeps on the synthetic generators.

Every sweep is a list of ``(condition, seed)`` tasks; each task returns one or
more result rows (plain dicts) and the collected rows are written as a tidy
CSV, one row per condition x seed (per explained point for ``lime-recovery``).
Tasks run in a process pool whose size is capped by ``CEN_THREADS`` (default
1, meaning sequential in-process execution).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from cen.data import (SUPPORT2_HORIZON_DAYS, SUPPORT2_WIDTH_DAYS, PreprocessPlan, Schema, discretize_survival,
                      extract_targets, gen_blobs, gen_xor_context, load_csv)
from cen.errors import InvalidInputError
from cen.model import Batch, build_cen, build_mlp_classifier, fano_diagnostic
from cen.numeric import child_seed, make_rng
from cen.posthoc import ConsistencyConfig, PerturbationConfig, consistency_experiment, recovery_errors
from cen.training import TrainConfig, accuracy, evaluate, quantile_indices, train

# ---------------------------------------------------------------------------
# settings


@dataclass
class EntropyRegSetup:
    """Class-pure xor-context with an over-complete dictionary.

    With eight atoms the encoder can route each (context, label) pair to its
    own atom, which is the spurious solution the entropy term has to break.
    """

    n_train_per_context: int = 100
    n_test_per_context: int = 250
    offset: float = 0.7
    noise: float = 0.2
    dictionary_size: int = 8
    dict_scale: float = 0.1
    lr: float = 0.02
    epochs: int = 300
    batch_size: int = 64
    weights: tuple = (0.0, 0.1)


@dataclass
class RecoverySetup:
    """Mixed xor-context CEN explained by joint-perturbation logit surrogates."""

    n_train_per_context: int = 100
    n_test_per_context: int = 25
    dictionary_size: int = 2
    lr: float = 0.02
    epochs: int = 200
    batch_size: int = 64
    entropy_weight: float = 0.1
    l2: float = 1e-3
    surrogate: PerturbationConfig = field(default_factory=lambda: PerturbationConfig(
        n_samples=2000, scale_x=0.1, scale_c=0.01, kernel_width=1.0, ridge=0.0, target="logit"))
    modes: tuple = ("joint",)


@dataclass
class DictSizeSetup:
    n_train_per_context: int = 100
    n_test_per_context: int = 250
    sizes: tuple = (1, 2, 4, 8, 16)
    lr: float = 0.02
    epochs: int = 100
    batch_size: int = 64
    entropy_weight: float = 0.1


@dataclass
class SampleEfficiencySetup:
    """Regime blobs; the CEN and an MLP on ``c (+) x`` see the same random subsets.

    The context is the regime indicator alone, so the task is a different
    linear concept per context value.
    """

    n_train_per_regime: int = 500
    n_test_per_regime: int = 500
    fractions: tuple = (0.05, 0.1, 0.25, 0.5, 1.0)
    dictionary_size: int = 4
    mlp_hidden: tuple = (32,)
    lr: float = 0.01
    epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    entropy_weight: float = 0.1
    context: str = "onehot"


NOISE_LEVELS = (8.0, 4.0, 2.0, 1.0, 0.5)
FEATURE_FRACTIONS = (1.0, 0.75, 0.5, 0.25)

# ---------------------------------------------------------------------------
# single runs (also used directly by the acceptance tests)


def train_entropy_reg_model(weight: float, seed: int, setup: EntropyRegSetup | None = None):
    """Train one class-pure xor-context CEN; return ``(model, test_batch)``."""
    s = setup or EntropyRegSetup()
    tr = gen_xor_context(s.n_train_per_context, child_seed(seed, 11), variant="pure",
                         offset=s.offset, noise=s.noise)
    te = gen_xor_context(s.n_test_per_context, child_seed(seed, 12), variant="pure",
                         offset=s.offset, noise=s.noise)
    model = build_cen(tr.C.shape[1], tr.X.shape[1], hidden=(), dictionary_size=s.dictionary_size,
                      dict_scale=s.dict_scale, seed=child_seed(seed, 13))
    train(model, tr.batch(), TrainConfig(lr=s.lr, max_epochs=s.epochs, batch_size=s.batch_size,
                                         entropy_weight=weight, patience=s.epochs,
                                         seed=child_seed(seed, 14)))
    return model, te.batch()


def entropy_reg_run(weight: float, seed: int, setup: EntropyRegSetup | None = None) -> list:
    model, test = train_entropy_reg_model(weight, seed, setup)
    acc = accuracy(model.predict_proba(test.C, test.X).argmax(axis=1), test.y)
    ent = float(model.entropy(test, with_grad=False)[0])
    return [{"entropy_weight": weight, "seed": seed, "test_accuracy": acc, "entropy": ent}]


def fano_run(weight: float, seed: int, setup: EntropyRegSetup | None = None) -> list:
    model, test = train_entropy_reg_model(weight, seed, setup)
    report = fano_diagnostic(model, test, seed=child_seed(seed, 15))
    return [{"entropy_weight": weight, "seed": seed, **report.to_dict()}]


def train_recovery_model(seed: int, setup: RecoverySetup | None = None):
    """Train the mixed xor-context CEN used as the black box; return ``(model, test_batch)``."""
    s = setup or RecoverySetup()
    tr = gen_xor_context(s.n_train_per_context, child_seed(seed, 21), variant="mixed")
    te = gen_xor_context(s.n_test_per_context, child_seed(seed, 22), variant="mixed")
    model = build_cen(tr.C.shape[1], tr.X.shape[1], hidden=(), dictionary_size=s.dictionary_size,
                      seed=child_seed(seed, 23))
    train(model, tr.batch(), TrainConfig(lr=s.lr, max_epochs=s.epochs, batch_size=s.batch_size,
                                         entropy_weight=s.entropy_weight, l2=s.l2, patience=s.epochs,
                                         seed=child_seed(seed, 24)))
    return model, te.batch()


def lime_recovery_run(mode: str, seed: int, setup: RecoverySetup | None = None) -> list:
    s = setup or RecoverySetup()
    model, test = train_recovery_model(seed, s)
    cfg = s.surrogate if mode == "joint" else replace(s.surrogate, scale_c=0.0)
    errs = recovery_errors(model, test.C, test.X, cfg, seed=child_seed(seed, 25))
    return [{"mode": mode, "seed": seed, "point": i, "recovery_error": float(e)} for i, e in enumerate(errs)]


def dict_size_run(k: int, seed: int, setup: DictSizeSetup | None = None) -> list:
    s = setup or DictSizeSetup()
    tr = gen_xor_context(s.n_train_per_context, child_seed(seed, 31), variant="mixed")
    te = gen_xor_context(s.n_test_per_context, child_seed(seed, 32), variant="mixed")
    model = build_cen(tr.C.shape[1], tr.X.shape[1], hidden=(), dictionary_size=k, seed=child_seed(seed, 33))
    res = train(model, tr.batch(), TrainConfig(lr=s.lr, max_epochs=s.epochs, batch_size=s.batch_size,
                                               entropy_weight=s.entropy_weight, patience=s.epochs,
                                               seed=child_seed(seed, 34)))
    best = next((r for r in res.history if r["epoch"] == res.best_epoch), None)
    test = te.batch()
    err = 1.0 - accuracy(model.predict_proba(test.C, test.X).argmax(axis=1), test.y)
    val_err = 1.0 - best["val_acc"] if best else float("nan")
    return [{"dictionary_size": k, "seed": seed, "val_error": val_err, "test_error": err}]


def sample_efficiency_run(fraction: float, seed: int, setup: SampleEfficiencySetup | None = None) -> list:
    s = setup or SampleEfficiencySetup()
    tr = gen_blobs(s.n_train_per_regime, child_seed(seed, 41), context=s.context)
    te = gen_blobs(s.n_test_per_regime, child_seed(seed, 42), context=s.context)
    n = max(8, int(round(fraction * len(tr))))
    idx = make_rng(child_seed(seed, 43)).permutation(len(tr))[:n]
    data = Batch(tr.C[idx], tr.X[idx], tr.y[idx])
    test = te.batch()
    common = dict(lr=s.lr, batch_size=s.batch_size, max_epochs=s.epochs, patience=s.patience,
                  seed=child_seed(seed, 44))
    cen = build_cen(tr.C.shape[1], tr.X.shape[1], hidden=(), dictionary_size=s.dictionary_size,
                    seed=child_seed(seed, 45))
    train(cen, data, TrainConfig(entropy_weight=s.entropy_weight, **common))
    mlp = build_mlp_classifier(tr.C.shape[1] + tr.X.shape[1], s.mlp_hidden, seed=child_seed(seed, 46))
    train(mlp, data, TrainConfig(**common))
    rows = []
    for name, model in (("cen", cen), ("mlp", mlp)):
        err = 1.0 - accuracy(model.predict_proba(test.C, test.X).argmax(axis=1), test.y)
        rows.append({"fraction": fraction, "seed": seed, "model": name, "n_train": n, "test_error": err})
    return rows


@dataclass
class Support2Setup:
    """Five-fold comparison of a plain chain CRF and an MLP-encoded CEN-CRF."""

    folds: int = 5
    horizon: float = SUPPORT2_HORIZON_DAYS
    width: float = SUPPORT2_WIDTH_DAYS
    lr: float = 5e-3
    epochs: int = 60
    patience: int = 5
    batch_size: int = 256
    l2: float = 1e-4
    hidden: tuple = (32,)
    dictionary_size: int = 16
    quantiles: tuple = (0.25, 0.5, 0.75)


def support2_cv(csv_path, schema_path, seed: int = 0, setup: Support2Setup | None = None) -> list:
    """Acc@25/50/75 and RAE per fold for ``crf`` (constant theta) and ``mlp-cen``.

    The schema's context and attribute columns are preprocessed per fold on
    the training part only; an all-ones column supplies the per-interval bias.
    """
    s = setup or Support2Setup()
    schema = Schema.load(schema_path)
    ds = load_csv(csv_path, schema)
    times, censored = extract_targets(ds, schema.censored_when)
    index, censored, _ = discretize_survival(times, censored, s.horizon, s.width)
    m = int(np.ceil(s.horizon / s.width - 1e-9))
    perm = make_rng(child_seed(seed, 51)).permutation(ds.n_rows)
    folds = np.array_split(perm, s.folds)
    rows = []
    for f, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([folds[g] for g in range(s.folds) if g != f]))
        test_idx = np.sort(test_idx)
        plan = PreprocessPlan.fit(ds, train_idx, schema.context, schema.attributes)
        C, X = plan.transform(ds)
        X = np.concatenate([X, np.ones((ds.n_rows, 1))], axis=1)
        q_idx = quantile_indices(index[train_idx], s.quantiles)

        def part(idx):
            return Batch(C[idx], X[idx], index[idx], censored[idx])

        models = {
            "crf": build_cen(C.shape[1], X.shape[1], "survival", m=m, encoder="constant",
                             dictionary_size=None, seed=child_seed(seed, 52, f)),
            "mlp-cen": build_cen(C.shape[1], X.shape[1], "survival", m=m, encoder="mlp", hidden=s.hidden,
                                 dictionary_size=s.dictionary_size, seed=child_seed(seed, 53, f)),
        }
        for name, model in models.items():
            train(model, part(train_idx), TrainConfig(lr=s.lr, max_epochs=s.epochs, patience=s.patience,
                                                      batch_size=s.batch_size, l2=s.l2, entropy_weight=0.0,
                                                      seed=child_seed(seed, 54, f)))
            rep = evaluate(model, part(test_idx), q_idx)
            accs = list(rep.acc_at_quantiles.values())
            rows.append({"fold": f, "model": name, "acc25": accs[0], "acc50": accs[1], "acc75": accs[2],
                         "rae": rep.rae})
    return rows


# ---------------------------------------------------------------------------
# registry and driver


def _consistency_tasks(mode, levels):
    def tasks(seeds):
        # all levels of one seed run together so they share data and baseline
        return [(_consistency_levels, (mode, tuple(levels), seed)) for seed in seeds]
    return tasks


def _consistency_levels(mode, levels, seed, setup=None):
    return consistency_experiment(mode, list(levels), seed=seed, cfg=setup)


def _grid(fn, conditions):
    return lambda seeds: [(fn, (cond, seed)) for cond in conditions for seed in seeds]


EXPERIMENTS = {
    "dict-size": (DictSizeSetup, lambda s: _grid(dict_size_run, s.sizes)),
    "sample-efficiency": (SampleEfficiencySetup, lambda s: _grid(sample_efficiency_run, s.fractions)),
    "noisy-features": (ConsistencyConfig, lambda s: _consistency_tasks("noise", NOISE_LEVELS)),
    "incomplete-features": (ConsistencyConfig, lambda s: _consistency_tasks("fraction", FEATURE_FRACTIONS)),
    "entropy-reg": (EntropyRegSetup, lambda s: _grid(entropy_reg_run, s.weights)),
    "lime-recovery": (RecoverySetup, lambda s: _grid(lime_recovery_run, s.modes)),
    "fano": (EntropyRegSetup, lambda s: _grid(fano_run, s.weights)),
}


def make_setup(name: str, overrides: dict | None = None):
    """Build the setup dataclass for ``name``; unknown override keys are rejected."""
    if name not in EXPERIMENTS:
        raise InvalidInputError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    cls = EXPERIMENTS[name][0]
    overrides = dict(overrides or {})
    known = {f.name: f for f in fields(cls)}
    bad = sorted(set(overrides) - set(known))
    if bad:
        raise InvalidInputError(f"unknown {name} setting(s): {', '.join(bad)}")
    if "surrogate" in overrides and isinstance(overrides["surrogate"], dict):
        overrides["surrogate"] = PerturbationConfig(**overrides["surrogate"])
    for key, value in overrides.items():
        if isinstance(value, list):
            overrides[key] = tuple(value)
    return cls(**overrides)


def thread_cap() -> int:
    raw = os.environ.get("CEN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as err:
        raise InvalidInputError(f"CEN_THREADS must be an integer, got {raw!r}") from err
    return max(1, n)


def _call(task):
    fn, args, setup = task
    return fn(*args, setup)


def run_experiment(name: str, seeds=(0, 1, 2), overrides: dict | None = None, threads: int | None = None) -> list:
    """Run every (condition, seed) task of ``name`` and return the rows in task order."""
    setup = make_setup(name, overrides)
    tasks = [(fn, args, setup) for fn, args in EXPERIMENTS[name][1](setup)(list(seeds))]
    workers = min(threads or thread_cap(), len(tasks)) if tasks else 1
    if workers <= 1:
        results = [_call(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_call, tasks))
    rows = [row for chunk in results for row in chunk]
    for row in rows:
        row.setdefault("experiment", name)
    return rows


def write_rows(rows: list, path) -> None:
    if not rows:
        raise InvalidInputError("no rows to write")
    header = ["experiment"] + [k for k in rows[0] if k != "experiment"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in header})


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
