"""Tabular ingestion, preprocessing, survival discretisation and synthetic data."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from cen.errors import IngestionError, InvalidInputError
from cen.model import Batch
from cen.numeric import as_array, make_rng

KINDS = ("numeric", "categorical", "event-time", "censor-flag", "label", "ignore")
MISSING_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "null", "NULL"})
NA_FILL = -1.0

# three years expressed as whole weeks, giving 156 seven-day intervals
SUPPORT2_HORIZON_DAYS = 156 * 7
SUPPORT2_WIDTH_DAYS = 7


# ---------------------------------------------------------------------------
# CSV ingestion

@dataclass
class Schema:
    """Column kinds plus the context/attribute split.

    ``censored_when`` is the raw value of the censor-flag column that marks a
    censored record (SUPPORT2's ``death`` column uses ``"0"``).
    """

    kinds: dict
    context: list = field(default_factory=list)
    attributes: list = field(default_factory=list)
    censored_when: str = "1"

    def __post_init__(self):
        for name, kind in self.kinds.items():
            if kind not in KINDS:
                raise InvalidInputError(f"column {name!r}: unknown kind {kind!r}; choose from {KINDS}")
        for role in ("context", "attributes"):
            for name in getattr(self, role):
                if name not in self.kinds:
                    raise InvalidInputError(f"{role} column {name!r} is not declared in the schema")
                if self.kinds[name] not in ("numeric", "categorical"):
                    raise InvalidInputError(f"{role} column {name!r} must be numeric or categorical")
        for kind in ("event-time", "censor-flag", "label"):
            if sum(k == kind for k in self.kinds.values()) > 1:
                raise InvalidInputError(f"at most one {kind} column is allowed")

    def column_of(self, kind: str) -> str | None:
        for name, k in self.kinds.items():
            if k == kind:
                return name
        return None

    @classmethod
    def from_dict(cls, raw: dict) -> "Schema":
        allowed = {"columns", "context", "attributes", "censored_when"}
        unknown = set(raw) - allowed
        if unknown:
            raise InvalidInputError(f"unknown schema keys: {sorted(unknown)}")
        cols = raw.get("columns")
        if isinstance(cols, list):
            kinds = {c["name"]: c["kind"] for c in cols}
        elif isinstance(cols, dict):
            kinds = dict(cols)
        else:
            raise InvalidInputError("schema needs a 'columns' list or mapping")
        return cls(kinds, list(raw.get("context", [])), list(raw.get("attributes", [])),
                   str(raw.get("censored_when", "1")))

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TabularDataset:
    """Typed columns: numeric ones as float arrays (NaN = missing),
    everything else as lists of strings (``None`` = missing)."""

    names: list
    kinds: dict
    columns: dict
    n_rows: int
    schema: Schema | None = None

    def missing_mask(self, name: str) -> np.ndarray:
        col = self.columns[name]
        if isinstance(col, np.ndarray):
            return np.isnan(col)
        return np.array([v is None for v in col], dtype=bool)

    def n_missing(self) -> int:
        return int(sum(self.missing_mask(n).sum() for n in self.names))

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=int)
        cols = {}
        for name, col in self.columns.items():
            cols[name] = col[idx] if isinstance(col, np.ndarray) else [col[i] for i in idx]
        return TabularDataset(list(self.names), dict(self.kinds), cols, int(idx.size), self.schema)


def _infer_kind(values: list) -> str:
    seen = [v for v in values if v not in MISSING_TOKENS]
    try:
        for v in seen:
            float(v)
    except ValueError:
        return "categorical"
    return "numeric"


def load_csv(path, schema: Schema | dict | None = None) -> TabularDataset:
    """Read an RFC-4180 CSV (UTF-8, header row) into typed columns.

    Without a schema, column kinds are inferred (numeric if every present
    value parses as a float). Columns absent from a given schema are ignored.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise IngestionError(f"cannot open {path}: {err.strerror}") from err
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path} is empty; a header row is required") from None
        header = [h.strip() for h in header]
        rows = []
        for i, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} fields, found {len(row)}", row=i)
            rows.append([v.strip() for v in row])
    if schema is None:
        kinds = {h: _infer_kind([r[j] for r in rows]) for j, h in enumerate(header)}
    else:
        missing = [n for n in schema.kinds if n not in header]
        if missing:
            raise IngestionError(f"schema columns missing from the header: {missing}")
        kinds = {h: schema.kinds.get(h, "ignore") for h in header}
    names = [h for h in header if kinds[h] != "ignore"]
    columns = {}
    for j, h in enumerate(header):
        kind = kinds[h]
        if kind == "ignore":
            continue
        raw = [r[j] for r in rows]
        if kind in ("numeric", "event-time"):
            col = np.empty(len(raw))
            for i, v in enumerate(raw):
                if v in MISSING_TOKENS:
                    col[i] = np.nan
                    continue
                try:
                    col[i] = float(v)
                except ValueError:
                    raise IngestionError(f"column {h!r}: cannot parse {v!r} as a number", row=i) from None
            columns[h] = col
        else:
            columns[h] = [None if v in MISSING_TOKENS else v for v in raw]
    return TabularDataset(names, {n: kinds[n] for n in names}, columns, len(rows), schema)


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class PreprocessPlan:
    """Standardisation stats and one-hot maps fitted on a training split."""

    context: list
    attributes: list
    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    fill_value: float = NA_FILL
    unseen_counts: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, ds: TabularDataset, train_idx, context: list, attributes: list) -> "PreprocessPlan":
        plan = cls(list(context), list(attributes))
        train_idx = np.asarray(train_idx, dtype=int)
        for name in dict.fromkeys(plan.context + plan.attributes):
            if name not in ds.columns:
                raise InvalidInputError(f"column {name!r} not in dataset")
            kind = ds.kinds[name]
            col = ds.columns[name]
            if kind == "numeric":
                vals = col[train_idx]
                vals = vals[~np.isnan(vals)]
                mean = float(vals.mean()) if vals.size else 0.0
                std = float(vals.std()) if vals.size else 0.0
                plan.means[name] = mean
                plan.stds[name] = std if std > 0 else 1.0
            elif kind == "categorical":
                plan.levels[name] = sorted({col[i] for i in train_idx if col[i] is not None})
            else:
                raise InvalidInputError(f"column {name!r} of kind {kind} cannot be a feature")
        return plan

    def feature_names(self, cols: list) -> list:
        out = []
        for name in cols:
            if name in self.levels:
                out.extend(f"{name}={lv}" for lv in self.levels[name])
            else:
                out.append(name)
        return out

    def _encode(self, ds: TabularDataset, cols: list) -> np.ndarray:
        blocks = []
        for name in cols:
            col = ds.columns[name]
            if name in self.levels:
                levels = self.levels[name]
                index = {lv: k for k, lv in enumerate(levels)}
                block = np.zeros((ds.n_rows, len(levels)))
                unseen = 0
                for i, v in enumerate(col):
                    if v is None:
                        # missing categorical: sentinel in every indicator column
                        block[i, :] = self.fill_value
                    elif v in index:
                        block[i, index[v]] = 1.0
                    else:
                        unseen += 1
                if unseen:
                    self.unseen_counts[name] = self.unseen_counts.get(name, 0) + unseen
                    warnings.warn(f"column {name!r}: {unseen} unseen level(s) mapped to all-zeros",
                                  stacklevel=3)
                blocks.append(block)
            else:
                z = (col - self.means[name]) / self.stds[name]
                blocks.append(np.where(np.isnan(z), self.fill_value, z)[:, None])
        if not blocks:
            return np.zeros((ds.n_rows, 0))
        return np.concatenate(blocks, axis=1)

    def transform(self, ds: TabularDataset) -> tuple:
        """``(C, X)`` for a dataset with the fitted columns."""
        return self._encode(ds, self.context), self._encode(ds, self.attributes)

    def to_dict(self) -> dict:
        return {"context": self.context, "attributes": self.attributes, "means": self.means,
                "stds": self.stds, "levels": self.levels, "fill_value": self.fill_value}

    @classmethod
    def from_dict(cls, raw: dict) -> "PreprocessPlan":
        return cls(list(raw["context"]), list(raw["attributes"]), dict(raw["means"]),
                   dict(raw["stds"]), {k: list(v) for k, v in raw["levels"].items()},
                   float(raw.get("fill_value", NA_FILL)))


def extract_targets(ds: TabularDataset, censored_when: str = "1"):
    """Labels (class indices and level names) or ``(times, censored)``."""
    label = next((n for n in ds.names if ds.kinds[n] == "label"), None)
    if label is not None:
        col = ds.columns[label]
        if isinstance(col, np.ndarray):
            col = [None if np.isnan(v) else format(v, "g") for v in col]
        if any(v is None for v in col):
            raise IngestionError(f"label column {label!r} has missing values",
                                 row=next(i for i, v in enumerate(col) if v is None))
        levels = sorted(set(col))
        index = {lv: k for k, lv in enumerate(levels)}
        return np.array([index[v] for v in col], dtype=np.int64), levels
    tcol = next((n for n in ds.names if ds.kinds[n] == "event-time"), None)
    if tcol is None:
        raise InvalidInputError("dataset has neither a label nor an event-time column")
    times = ds.columns[tcol]
    if np.any(np.isnan(times)):
        raise IngestionError(f"event-time column {tcol!r} has missing values",
                             row=int(np.flatnonzero(np.isnan(times))[0]))
    fcol = next((n for n in ds.names if ds.kinds[n] == "censor-flag"), None)
    if fcol is None:
        censored = np.zeros(ds.n_rows, dtype=bool)
    else:
        censored = np.array([v == censored_when for v in ds.columns[fcol]], dtype=bool)
    return times.astype(np.float64), censored


def preprocess(ds: TabularDataset, train_idx, context: list, attributes: list) -> tuple:
    """Fit a plan on ``train_idx`` and return ``(C, X, Y, plan)``."""
    plan = PreprocessPlan.fit(ds, train_idx, context, attributes)
    C, X = plan.transform(ds)
    censored_when = ds.schema.censored_when if ds.schema is not None else "1"
    return C, X, extract_targets(ds, censored_when), plan


def discretize_survival(times, censored, horizon: float, width: float) -> tuple:
    """Map event/censor times to interval indices.

    ``m = ceil(horizon / width)``; ``j = floor(t / width)``. Records at or past
    the horizon become censored at ``m``. Returns ``(index, censored, boundaries)``
    where ``boundaries[j] = j * width`` for ``j = 0..m``.
    """
    times = as_array(times, "times", ndim=1)
    censored = np.asarray(censored).astype(bool).reshape(-1)
    if times.shape != censored.shape:
        raise InvalidInputError("times and censor flags differ in length")
    if horizon <= 0 or width <= 0:
        raise InvalidInputError("horizon and width must be positive")
    if np.any(np.isnan(times)) or np.any(times < 0):
        raise InvalidInputError("survival times must be non-negative")
    m = int(math.ceil(horizon / width - 1e-9))
    index = np.floor(times / width).astype(np.int64)
    past = times >= horizon
    index = np.where(past, m, np.minimum(index, m))
    cens = censored | past
    return index, cens, width * np.arange(m + 1, dtype=np.float64)


# ---------------------------------------------------------------------------
# synthetic generators

@dataclass
class SyntheticData:
    C: np.ndarray
    X: np.ndarray
    y: np.ndarray
    group: np.ndarray

    def batch(self) -> Batch:
        return Batch(self.C, self.X, self.y)

    def subset(self, idx) -> "SyntheticData":
        return SyntheticData(self.C[idx], self.X[idx], self.y[idx], self.group[idx])

    def __len__(self) -> int:
        return self.C.shape[0]


@dataclass
class SyntheticSpec:
    generator: str = "xor-context"
    n_per_group: int = 100
    seed: int = 0
    variant: str = "mixed"
    n_groups: int = 4
    dim: int = 4

    def __post_init__(self):
        if self.generator not in ("xor-context", "blobs"):
            raise InvalidInputError(f"unknown generator {self.generator!r}")
        if self.n_per_group < 1 or self.n_groups < 1 or self.dim < 1:
            raise InvalidInputError("synthetic sizes must be positive")

    def generate(self) -> SyntheticData:
        rng = make_rng(self.seed)
        if self.generator == "xor-context":
            return gen_xor_context(self.n_per_group, rng, variant=self.variant)
        return gen_blobs(self.n_per_group, rng, n_regimes=self.n_groups, dim=self.dim)


# offset sign along (1,-1)/sqrt2 and label of the +diagonal blob, per context
_XOR_LAYOUT = {
    "pure": [(+1, 1, 1), (-1, 0, 0), (-1, 1, 1), (+1, 0, 0)],
    "mixed": [(+1, 1, 0), (-1, 1, 0), (-1, 0, 1), (+1, 0, 1)],
}


def gen_xor_context(n_per_context: int, rng, variant: str = "mixed", spread: float = 2.0,
                    offset: float = 0.7, noise: float = 0.2) -> SyntheticData:
    """Four one-hot contexts, each with two Gaussian blobs at ``+-spread*(1,1)/sqrt2``
    shifted by ``+-offset`` along ``(1,-1)/sqrt2``.

    ``variant="pure"``: every context holds a single class, so the context id
    alone predicts the label; contexts 0/3 and 1/2 share an X-distribution
    with opposite labels, so X alone cannot.
    ``variant="mixed"``: the two blobs of a context carry different labels;
    the labelling is flipped between contexts sharing an X-distribution.
    """
    if variant not in _XOR_LAYOUT:
        raise InvalidInputError(f"unknown variant {variant!r}; choose 'pure' or 'mixed'")
    if n_per_context < 2:
        raise InvalidInputError("need at least 2 samples per context")
    rng = make_rng(rng)
    u = np.array([1.0, 1.0]) / np.sqrt(2.0)
    v = np.array([1.0, -1.0]) / np.sqrt(2.0)
    C, X, y, g = [], [], [], []
    for ctx, (sign, lab_pos, lab_neg) in enumerate(_XOR_LAYOUT[variant]):
        side = np.where(np.arange(n_per_context) % 2 == 0, 1.0, -1.0)
        rng.shuffle(side)
        centers = side[:, None] * spread * u + sign * offset * v
        X.append(centers + noise * rng.standard_normal((n_per_context, 2)))
        y.append(np.where(side > 0, lab_pos, lab_neg))
        onehot = np.zeros((n_per_context, 4))
        onehot[:, ctx] = 1.0
        C.append(onehot)
        g.append(np.full(n_per_context, ctx))
    perm = rng.permutation(4 * n_per_context)
    return SyntheticData(np.concatenate(C)[perm], np.concatenate(X)[perm],
                         np.concatenate(y).astype(np.int64)[perm], np.concatenate(g)[perm])


def gen_blobs(n_per_regime: int, rng, n_regimes: int = 4, dim: int = 4, center_scale: float = 1.0,
              structure_seed: int = 12345, context: str = "onehot+z",
              context_noise: float = 0.0) -> SyntheticData:
    """Regime-specific linear concepts.

    Regime ``r`` draws ``z ~ N(mu_r, I)`` and labels ``y = 1[w_r . (z - mu_r) > 0]``
    with ``+-1`` weights. The context is ``[onehot(r), z]`` (or just
    ``onehot(r)`` with ``context="onehot"``) and the attributes are ``x = z``
    (to be corrupted or subsampled by the caller). ``context_noise`` adds
    ``N(0, context_noise^2)`` to the context's copy of ``z``. The regime
    geometry comes from ``structure_seed`` so that different sample seeds
    share one underlying task.
    """
    if n_per_regime < 1:
        raise InvalidInputError("need at least one sample per regime")
    if context not in ("onehot+z", "onehot"):
        raise InvalidInputError(f"unknown blob context {context!r}; choose 'onehot+z' or 'onehot'")
    if context_noise < 0:
        raise InvalidInputError("context_noise must be non-negative")
    rng = make_rng(rng)
    W, mu = blob_structure(n_regimes, dim, center_scale, structure_seed)
    group = np.repeat(np.arange(n_regimes), n_per_regime)
    rng.shuffle(group)
    Z = mu[group] + rng.standard_normal((group.size, dim))
    y = (np.einsum("nd,nd->n", W[group], Z - mu[group]) > 0).astype(np.int64)
    C = np.eye(n_regimes)[group]
    if context == "onehot+z":
        Zc = Z + context_noise * rng.standard_normal(Z.shape) if context_noise > 0 else Z
        C = np.concatenate([C, Zc], axis=1)
    return SyntheticData(C, Z.copy(), y, group)


def blob_structure(n_regimes: int, dim: int, center_scale: float = 1.0, seed: int = 12345):
    """Regime weights and centres.

    Weights are signed rows of a Sylvester-Hadamard matrix, so regimes use
    mutually orthogonal concepts whenever ``n_regimes <= dim`` is a power of two.
    """
    rng = make_rng(seed)
    size = 1 << max(0, (max(n_regimes, dim) - 1).bit_length())
    H = hadamard(size).astype(np.float64)
    rows = rng.permutation(size)[:n_regimes] if n_regimes <= size else rng.integers(size, size=n_regimes)
    W = H[rows][:, :dim] * rng.choice([-1.0, 1.0], size=(n_regimes, 1))
    mu = center_scale * rng.choice([-1.0, 1.0], size=(n_regimes, dim))
    return W, mu


def inject_noise(X, snr: float, rng) -> np.ndarray:
    """``X + N(0, var(X) / snr)`` column-wise; ``snr = inf`` returns a copy."""
    X = as_array(X, "X", ndim=2)
    if not snr > 0:
        raise InvalidInputError("snr must be positive")
    if math.isinf(snr):
        return X.copy()
    rng = make_rng(rng)
    std = np.sqrt(X.var(axis=0) / snr)
    return X + rng.standard_normal(X.shape) * std


def subsample_features(X, fraction: float, rng) -> tuple:
    """Keep ``ceil(fraction * d)`` randomly chosen columns (in original order).

    The columns are a prefix of one random permutation, so with the same seed
    a smaller fraction keeps a subset of the columns kept by a larger one.
    """
    X = as_array(X, "X", ndim=2)
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError("fraction must lie in (0, 1]")
    d = X.shape[1]
    keep = int(math.ceil(fraction * d - 1e-9))
    if keep >= d:
        return X.copy(), np.arange(d)
    rng = make_rng(rng)
    kept = np.sort(rng.permutation(d)[:keep])
    return X[:, kept], kept
