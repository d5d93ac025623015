"""Local surrogate (LIME-style) explanations of black-box predictors.

A surrogate is a kernel-weighted ridge regression of the black box's class-1
probability (or its logit) on centred perturbations ``x' - x``. The intercept
is unpenalised, so it absorbs the black box's value at the point and the
coefficients are the local slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cen.errors import InvalidInputError, SingularFitError
from cen.numeric import as_array, logit, make_rng

TARGETS = ("probability", "logit")
PROB_CLIP = 1e-6


@dataclass
class PerturbationConfig:
    """Sampling and fitting knobs.

    ``scale_c = 0`` gives the classic mode (only ``x`` is perturbed, the
    black box is queried at the fixed context). ``coupled`` maps attribute
    ``k`` to a context column receiving the very same perturbation, for
    contexts that contain a clean copy of the attributes.
    """

    n_samples: int = 1000
    scale_x: float = 0.1
    scale_c: float = 0.0
    kernel_width: float = 1.0
    distance: str = "euclidean"
    ridge: float = 1e-6
    target: str = "probability"
    coupled: tuple | None = None

    def __post_init__(self):
        if self.scale_x < 0 or self.scale_c < 0:
            raise InvalidInputError("perturbation scales must be non-negative")
        if self.kernel_width <= 0:
            raise InvalidInputError("kernel width must be positive")
        if self.distance != "euclidean":
            raise InvalidInputError(f"unsupported distance {self.distance!r}")
        if self.ridge < 0:
            raise InvalidInputError("ridge strength must be non-negative")
        if self.target not in TARGETS:
            raise InvalidInputError(f"unknown target {self.target!r}; choose from {TARGETS}")
        if self.n_samples < 1:
            raise InvalidInputError("need at least one perturbation sample")


@dataclass
class Perturbations:
    X: np.ndarray
    C: np.ndarray
    raw_weights: np.ndarray
    weights: np.ndarray  # normalised to mean 1


def kernel_weights(sq_dist: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-sq_dist / width ** 2)


def perturb(x, c, cfg: PerturbationConfig, rng) -> Perturbations:
    """Gaussian perturbations around ``(x, c)`` with exponential-kernel weights.

    The kernel acts on the joint squared distance of whatever was perturbed
    (so a joint ``(x, c)`` kernel is the product of the per-part kernels).
    """
    x = as_array(x, "x", ndim=1)
    c = as_array(c, "c", ndim=1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(c))):
        raise InvalidInputError("cannot perturb around a non-finite point")
    rng = make_rng(rng)
    n = cfg.n_samples
    dX = cfg.scale_x * rng.standard_normal((n, x.size))
    dC = np.zeros((n, c.size))
    if cfg.scale_c > 0:
        dC = cfg.scale_c * rng.standard_normal((n, c.size))
    if cfg.coupled is not None:
        coupled = np.asarray(cfg.coupled, dtype=int)
        if coupled.size != x.size:
            raise InvalidInputError("coupled needs one context column per attribute")
        dC[:, coupled] += dX
    sq = np.sum(dX ** 2, axis=1)
    if cfg.scale_c > 0:
        sq = sq + np.sum(dC ** 2, axis=1)
    raw = kernel_weights(sq, cfg.kernel_width)
    total = raw.sum()
    if total <= 0:
        raise InvalidInputError("all kernel weights underflowed; increase the kernel width")
    return Perturbations(x + dX, c + dC, raw, raw * (n / total))


@dataclass
class LocalSurrogate:
    coef: np.ndarray
    intercept: float
    center: np.ndarray
    r2: float
    ess: float
    target: str = "probability"

    def __post_init__(self):
        if not (np.all(np.isfinite(self.coef)) and np.isfinite(self.intercept)):
            raise SingularFitError("surrogate coefficients are not finite")

    def theta_at_point(self) -> np.ndarray:
        """``(w, b)`` in original coordinates: ``g(x') = w . x' + b``."""
        return np.concatenate([self.coef, [self.intercept - self.coef @ self.center]])

    def predict(self, X) -> np.ndarray:
        X = as_array(X, "X", ndim=2)
        return (X - self.center) @ self.coef + self.intercept

    def predict_label(self, X) -> np.ndarray:
        thresh = 0.5 if self.target == "probability" else 0.0
        return (self.predict(X) >= thresh).astype(np.int64)


def weighted_ridge(Z, t, w, ridge: float) -> tuple:
    """Minimise ``sum_k w_k (t_k - b - Z_k . beta)^2 + ridge * ||beta||^2``.

    Returns ``(beta, b, weighted R^2)``.
    """
    Z = as_array(Z, "Z", ndim=2)
    t = as_array(t, "t", ndim=1)
    w = as_array(w, "w", ndim=1)
    if not (Z.shape[0] == t.size == w.size):
        raise InvalidInputError("design, targets and weights differ in length")
    if np.any(w < 0):
        raise InvalidInputError("weights must be non-negative")
    A = np.concatenate([np.ones((Z.shape[0], 1)), Z], axis=1)
    Aw = A * w[:, None]
    G = A.T @ Aw
    penalty = np.full(A.shape[1], float(ridge))
    penalty[0] = 0.0
    G = G + np.diag(penalty)
    rhs = Aw.T @ t
    scale = np.max(np.abs(np.diag(G))) or 1.0
    if np.linalg.matrix_rank(G, tol=1e-12 * scale) < G.shape[0]:
        raise SingularFitError(
            f"normal equations are singular (ridge={ridge}); add ridge or samples")
    sol = np.linalg.solve(G, rhs)
    pred = A @ sol
    wsum = w.sum()
    mean = (w @ t) / wsum
    ss_tot = w @ (t - mean) ** 2
    ss_res = w @ (t - pred) ** 2
    if ss_tot <= 1e-300:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = float(1.0 - ss_res / ss_tot)
    return sol[1:], float(sol[0]), r2


def fit_surrogate(black_box, x, c, cfg: PerturbationConfig, rng) -> LocalSurrogate:
    """Fit a local linear surrogate of ``black_box(X', C') -> P(y = 1)`` around ``(x, c)``."""
    x = as_array(x, "x", ndim=1)
    if cfg.n_samples < x.size + 1:
        raise InvalidInputError(f"need at least d_x + 1 = {x.size + 1} samples")
    pts = perturb(x, c, cfg, rng)
    prob = np.asarray(black_box(pts.X, pts.C), dtype=np.float64).reshape(-1)
    if prob.size != cfg.n_samples or not np.all(np.isfinite(prob)):
        raise InvalidInputError("black box must return one finite probability per sample")
    if cfg.target == "logit":
        t = logit(prob, PROB_CLIP)
    else:
        t = prob
    coef, intercept, r2 = weighted_ridge(pts.X - x, t, pts.weights, cfg.ridge)
    ess = float(pts.weights.sum() ** 2 / np.sum(pts.weights ** 2))
    return LocalSurrogate(coef, intercept, x.copy(), r2, ess, cfg.target)


def binary_theta(model, c) -> np.ndarray:
    """Generated ``theta*(c)`` of a 2-class linear CEN as ``(w1 - w0, b1 - b0)``.

    This is the logit-space parameterisation a surrogate of ``logit P(y=1)`` recovers.
    """
    theta, _ = model.explain(np.atleast_2d(c))
    if model.n_classes != 2:
        raise InvalidInputError("binary_theta needs a 2-class model")
    d = model.d_x
    W = theta[:, : 2 * d].reshape(-1, 2, d)
    b = theta[:, 2 * d:]
    return np.concatenate([W[:, 1] - W[:, 0], (b[:, 1] - b[:, 0])[:, None]], axis=1)


def model_black_box(model):
    """Class-1 probability of a model as a batched ``(X, C)`` function."""
    def f(X, C):
        return model.predict_proba(C, X)[:, 1]
    return f


def recovery_errors(model, C, X, cfg: PerturbationConfig, seed=0) -> np.ndarray:
    """Relative L2 error between surrogate ``(w, b)`` and ``theta*(c)`` per point."""
    C = as_array(C, "C", ndim=2)
    X = as_array(X, "X", ndim=2)
    f = model_black_box(model)
    truth = binary_theta(model, C)
    rng = make_rng(seed)
    errs = np.empty(C.shape[0])
    for i in range(C.shape[0]):
        sur = fit_surrogate(f, X[i], C[i], cfg, rng)
        est = sur.theta_at_point()
        errs[i] = np.linalg.norm(est - truth[i]) / np.linalg.norm(truth[i])
    return errs


# ---------------------------------------------------------------------------
# consistency under corrupted attributes

@dataclass
class ConsistencyConfig:
    """Sizes and model settings for the corrupted-attribute sweep."""

    n_train_per_group: int = 250
    n_test_per_group: int = 500
    n_explain: int = 100
    n_regimes: int = 4
    dim: int = 4
    # a noisy context copy of z keeps the context from predicting labels as well as clean attributes
    context_noise: float = 1.0
    dictionary_size: int = 4
    entropy_weight: float = 0.1
    cen_epochs: int = 40
    cen_l2: float = 0.0
    baseline_hidden: tuple = (32,)
    baseline_epochs: int = 40
    baseline_l2: float = 1e-3
    lr: float = 0.02
    batch_size: int = 64
    surrogate: PerturbationConfig = None

    def __post_init__(self):
        if self.surrogate is None:
            self.surrogate = PerturbationConfig(n_samples=500, scale_x=0.05, kernel_width=1.0,
                                                ridge=1e-3, target="probability")


def _corrupt(mode: str, level: float, Z: np.ndarray, rng):
    from cen.data import inject_noise, subsample_features

    if mode == "noise":
        return inject_noise(Z, level, rng), np.arange(Z.shape[1])
    if mode == "fraction":
        return subsample_features(Z, level, rng)
    raise InvalidInputError(f"unknown corruption mode {mode!r}; choose 'noise' or 'fraction'")


def consistency_experiment(mode: str, levels, seed: int = 0, cfg: ConsistencyConfig | None = None) -> list:
    """CEN vs. post-hoc surrogate of a context-only model under corrupted attributes.

    Data come from :func:`cen.data.gen_blobs`: the context holds a clean copy
    of the attributes, the attributes get noise (``mode="noise"``, levels are
    SNRs) or lose columns (``mode="fraction"``). Per level the CEN is retrained
    on the corrupted attributes; the context-only baseline is trained once and
    explained by surrogates fitted on the corrupted attributes, with the
    matching clean context columns perturbed in lockstep.

    Rows: ``mode, level, seed, cen_error, surrogate_error, fidelity_r2, baseline_error``.
    """
    from cen.data import gen_blobs
    from cen.model import Batch, build_cen, build_mlp_classifier
    from cen.numeric import child_seed
    from cen.training import TrainConfig, accuracy, train

    cfg = cfg or ConsistencyConfig()
    shape = dict(n_regimes=cfg.n_regimes, dim=cfg.dim, context_noise=cfg.context_noise)
    train_data = gen_blobs(cfg.n_train_per_group, child_seed(seed, 1), **shape)
    test_data = gen_blobs(cfg.n_test_per_group, child_seed(seed, 2), **shape)
    n_groups = int(train_data.group.max()) + 1
    n_tr = len(train_data)
    C_all = np.concatenate([train_data.C, test_data.C])
    Z_all = np.concatenate([train_data.X, test_data.X])
    y_tr, y_te = train_data.y, test_data.y

    tcfg = dict(lr=cfg.lr, batch_size=cfg.batch_size, val_fraction=0.0, patience=10**6)
    base = build_mlp_classifier(C_all.shape[1], cfg.baseline_hidden, inputs="context",
                                l2=cfg.baseline_l2, seed=child_seed(seed, 3))
    dummy = np.zeros((n_tr, 1))
    train(base, Batch(train_data.C, dummy, y_tr),
          TrainConfig(max_epochs=cfg.baseline_epochs, seed=child_seed(seed, 4), **tcfg))
    base_err = 1.0 - accuracy(base.predict_proba(test_data.C, test_data.X).argmax(1), y_te)
    explain_idx = np.arange(min(cfg.n_explain, len(test_data)))

    rows = []
    for li, level in enumerate(levels):
        # common random numbers: every level shares the noise draw, column order and CEN seeds
        rng = make_rng(child_seed(seed, 5))
        X_all, kept = _corrupt(mode, float(level), Z_all, rng)
        X_tr, X_te = X_all[:n_tr], X_all[n_tr:]
        cen = build_cen(C_all.shape[1], X_all.shape[1], hidden=(), dictionary_size=cfg.dictionary_size,
                        seed=child_seed(seed, 6))
        train(cen, Batch(train_data.C, X_tr, y_tr),
              TrainConfig(max_epochs=cfg.cen_epochs, entropy_weight=cfg.entropy_weight, l2=cfg.cen_l2,
                          seed=child_seed(seed, 7), **tcfg))
        cen_err = 1.0 - accuracy(cen.predict_proba(test_data.C, X_te).argmax(1), y_te)

        scfg = PerturbationConfig(**{**cfg.surrogate.__dict__, "coupled": tuple(n_groups + kept)})

        def black_box(Xp, Cp):
            return base.predict_proba(Cp, Xp)[:, 1]

        srng = make_rng(child_seed(seed, 8, li))
        r2s, wrong = [], []
        for i in explain_idx:
            sur = fit_surrogate(black_box, X_te[i], test_data.C[i], scfg, srng)
            r2s.append(sur.r2)
            wrong.append(sur.predict_label(X_te[i:i + 1])[0] != y_te[i])
        rows.append({"mode": mode, "level": float(level), "seed": int(seed), "cen_error": float(cen_err),
                     "surrogate_error": float(np.mean(wrong)), "fidelity_r2": float(np.mean(r2s)),
                     "baseline_error": float(base_err)})
    return rows
