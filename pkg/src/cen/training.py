"""Mini-batch optimisation, early stopping and evaluation metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from cen.errors import DivergedTrainingError, InvalidInputError, UndefinedMetricError
from cen.explanations import curve_from_log_probs, time_from_log_probs
from cen.model import Batch, CenModel, MlpClassifier, Regularization
from cen.numeric import make_rng

OPTIMIZERS = ("adam", "amsgrad", "sgd-momentum")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    entropy_weight: float = 0.1
    l1: float = 0.0
    l2: float = 0.0
    smoothness: float = 0.0
    val_fraction: float = 0.2
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.lr < 0:
            raise InvalidInputError("learning rate must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise InvalidInputError("batch size must be positive and max_epochs non-negative")
        if self.patience < 0:
            raise InvalidInputError("patience must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidInputError("val_fraction must lie in [0, 1)")
        for name in ("entropy_weight", "l1", "l2", "smoothness"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        self.betas = tuple(self.betas)

    def regularization(self) -> Regularization:
        return Regularization(l1_theta=self.l1, l2_theta=self.l2,
                              entropy_weight=self.entropy_weight, smoothness=self.smoothness)


class Optimizer:
    """First-order optimiser updating a parameter dict in place."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.vmax = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        cfg = self.cfg
        self.t += 1
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            if cfg.optimizer == "sgd-momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                p -= cfg.lr * self.m[k]
                continue
            b1, b2 = cfg.betas
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            if cfg.optimizer == "amsgrad":
                self.vmax[k] = np.maximum(self.vmax[k], v_hat)
                v_hat = self.vmax[k]
            p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def write_history_csv(self, path) -> None:
        cols = ["epoch", "train_loss", "val_loss", "val_acc", "entropy"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.history:
                writer.writerow({c: row.get(c) for c in cols})

    def history_json(self) -> str:
        return json.dumps({"best_epoch": self.best_epoch, "best_val_loss": self.best_val_loss,
                           "stopped_early": self.stopped_early, "history": self.history}, indent=2)


def split_batch(batch: Batch, fraction: float, seed) -> tuple:
    """Seeded random split into (train, held-out)."""
    n = len(batch)
    perm = make_rng(seed).permutation(n)
    n_out = int(round(n * fraction))
    if fraction > 0 and n_out == 0 and n > 1:
        n_out = 1
    return batch.subset(np.sort(perm[n_out:])), batch.subset(np.sort(perm[:n_out]))


def _snapshot(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def _restore(params: dict, snap: dict) -> None:
    for k, v in snap.items():
        params[k][...] = v


def _val_accuracy(model, batch: Batch) -> float | None:
    if model.family != "linear":
        return None
    return accuracy(model.predict_proba(batch.C, batch.X).argmax(axis=1), batch.y)


def _entropy_of(model, batch: Batch) -> float | None:
    if not isinstance(model, CenModel) or model.family != "linear" or len(batch) < 2:
        return None
    return model.blocked_entropy(batch)


def train(model, data: Batch, config: TrainConfig, val: Batch | None = None,
          install_regularization: bool = True) -> TrainResult:
    """Fit ``model`` in place with mini-batch gradient steps and early stopping.

    If ``val`` is omitted a seeded ``val_fraction`` split of ``data`` is used
    (with ``val_fraction = 0`` the training objective drives model selection).
    The best-validation weights are restored before returning.
    """
    if install_regularization and isinstance(model, CenModel):
        model.reg = config.regularization()
    rng = make_rng(config.seed)
    if val is None:
        if config.val_fraction > 0:
            data, val = split_batch(data, config.val_fraction, rng)
        else:
            val = data
    if len(data) == 0:
        raise InvalidInputError("no training rows")
    params = model.parameters()
    opt = Optimizer(params, config)
    result = TrainResult(model=model)
    best = _snapshot(params)
    best_val = model.objective(val)
    result.best_val_loss = best_val
    since_best = 0
    n = len(data)
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            snap = _snapshot(params)
            try:
                loss, grads = model.loss_and_grad(data.subset(idx), train=True, rng=rng)
            except DivergedTrainingError as err:
                raise DivergedTrainingError(f"epoch {epoch}: {err}", state=snap,
                                            diagnostics={"epoch": epoch, **(err.diagnostics or {})}) from err
            except InvalidInputError as err:
                # overflowing activations surface as non-finite softmax inputs
                if "NaN or Inf" not in str(err) and "finite" not in str(err):
                    raise
                raise DivergedTrainingError(f"epoch {epoch}: {err}", state=snap,
                                            diagnostics={"epoch": epoch}) from err
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergedTrainingError(f"epoch {epoch}: non-finite gradient", state=snap,
                                            diagnostics={"epoch": epoch, "loss": loss})
            opt.step(grads)
            total += loss * len(idx)
        try:
            val_loss = model.objective(val)
        except (DivergedTrainingError, InvalidInputError) as err:
            raise DivergedTrainingError(f"epoch {epoch}: validation loss diverged", state=best,
                                        diagnostics={"epoch": epoch}) from err
        row = {"epoch": epoch, "train_loss": total / n, "val_loss": val_loss,
               "val_acc": _val_accuracy(model, val), "entropy": _entropy_of(model, val)}
        result.history.append(row)
        if val_loss < best_val:
            best_val = val_loss
            best = _snapshot(params)
            result.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                result.stopped_early = True
                break
    _restore(params, best)
    result.best_val_loss = best_val
    return result


# ---------------------------------------------------------------------------
# metrics

def accuracy(preds, targets) -> float:
    preds = np.asarray(preds).reshape(-1)
    targets = np.asarray(targets).reshape(-1)
    if preds.shape != targets.shape:
        raise InvalidInputError(f"length mismatch {preds.shape[0]} vs {targets.shape[0]}")
    if preds.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float(np.mean(preds == targets))


def auc(scores, labels) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) with ties counted as 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.shape != labels.shape:
        raise InvalidInputError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size)
    # average ranks over tied runs
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    r = np.empty_like(ranks)
    r[order] = ranks
    u = r[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def quantile_indices(train_index, quantiles=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Empirical quantiles of observed end-interval indices (censored or not)."""
    train_index = np.asarray(train_index)
    if train_index.size == 0:
        raise UndefinedMetricError("no end times to take quantiles of")
    q = np.asarray(quantiles, dtype=np.float64)
    if np.any((q <= 0) | (q >= 1)):
        raise InvalidInputError("quantiles must lie in (0, 1)")
    return np.quantile(train_index, q, method="inverted_cdf").astype(int)


def acc_at_quantiles(curves, index, censored, quantile_idx) -> list:
    """Alive/dead accuracy at each quantile interval.

    ``curves[n, j] = S(t_j)``. A record counts at ``t_q`` if it is uncensored,
    or censored with its last-seen interval ``>= q``; it is alive at ``t_q`` iff
    its end interval ``>= q``. The model says alive iff ``S(t_q) >= 0.5``.
    """
    curves = np.asarray(curves, dtype=np.float64)
    index = np.asarray(index).astype(int)
    censored = np.asarray(censored).astype(bool)
    out = []
    for q in np.atleast_1d(quantile_idx):
        q = int(q)
        if not 0 <= q < curves.shape[1]:
            raise InvalidInputError(f"quantile interval {q} outside the curve")
        include = ~censored | (index >= q)
        if not include.any():
            raise UndefinedMetricError(f"no records are labelled at interval {q}")
        truth = index[include] >= q
        pred = curves[include, q] >= 0.5
        out.append(float(np.mean(truth == pred)))
    return out


def rae(pred_index, index, censored, width: float = 1.0) -> float:
    """Mean clipped relative error of interval-midpoint times over uncensored records."""
    pred_index = np.asarray(pred_index, dtype=np.float64)
    index = np.asarray(index, dtype=np.float64)
    censored = np.asarray(censored).astype(bool)
    keep = ~censored
    if not keep.any():
        raise UndefinedMetricError("RAE needs at least one uncensored record")
    t_hat = (pred_index[keep] + 0.5) * width
    t = (index[keep] + 0.5) * width
    err = np.abs(t_hat - t) / np.maximum(t, width)
    return float(np.mean(np.minimum(1.0, err)))


@dataclass
class MetricsReport:
    accuracy: float | None = None
    auc: float | None = None
    acc_at_quantiles: dict | None = None
    rae: float | None = None
    loss: float | None = None
    entropy: float | None = None
    n: int = 0
    schema_version: int = 1
    rae_definition: str = "mean over uncensored of min(1, |t_hat - t| / max(t, width)), interval midpoints"

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model, batch: Batch, quantile_idx=None, rule: str = "median") -> MetricsReport:
    report = MetricsReport(n=len(batch))
    report.loss = float(model.objective(batch))
    if model.family == "linear":
        proba = model.predict_proba(batch.C, batch.X)
        report.accuracy = accuracy(proba.argmax(axis=1), batch.y)
        if proba.shape[1] == 2:
            try:
                report.auc = auc(proba[:, 1], batch.y == 1)
            except UndefinedMetricError:
                report.auc = None
        report.entropy = _entropy_of(model, batch)
        return report
    censored = np.zeros(len(batch), bool) if batch.censored is None else batch.censored
    logp = model.log_probs(batch.C, batch.X)
    curves = curve_from_log_probs(logp)
    if quantile_idx is None:
        quantile_idx = quantile_indices(batch.y)
    accs = acc_at_quantiles(curves, batch.y, censored, quantile_idx)
    report.acc_at_quantiles = {str(int(q)): a for q, a in zip(np.atleast_1d(quantile_idx), accs)}
    try:
        report.rae = rae(time_from_log_probs(logp, rule), batch.y, censored)
    except UndefinedMetricError:
        report.rae = None
    return report


__all__ = [
    "TrainConfig", "Optimizer", "TrainResult", "train", "split_batch", "accuracy", "auc",
    "quantile_indices", "acc_at_quantiles", "rae", "MetricsReport", "evaluate", "MlpClassifier",
]
