"""Interpretable predictor families ``p(Y | x, theta)``.

Linear explanations are multinomial logistic models. ``theta`` is flattened
as ``concat(W.ravel(), b)`` with ``W`` row-major of shape (classes, d_x).

Survival explanations are linear-chain CRFs over ``m`` binary labels where
``y^i = 1`` means the event has happened by interval ``i``. Only the ``m + 1``
monotone sequences ``0^j 1^(m-j)`` are allowed; outcome ``j`` is an event in
``[t_j, t_{j+1})`` and ``j = m`` means the subject outlived the horizon.
Outcome ``j`` scores

    s(j) = sum_{i > j} x . theta^i  +  pairwise(j)

where ``pairwise`` counts the (0,0), (0,1) and (1,1) transitions of the
sequence weighted by ``omega = (w00, w01, w11)``; (1,0) is forbidden.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from cen.errors import InvalidInputError
from cen.numeric import as_array, log_softmax, log_sum_exp, softmax


@dataclass
class LinearExplanation:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = as_array(self.W, "W", ndim=2)
        self.b = as_array(self.b, "b", ndim=1)
        if self.W.shape[0] < 2 or self.W.shape[1] < 1:
            raise InvalidInputError(f"need >= 2 classes and >= 1 attribute, W is {self.W.shape}")
        if self.b.shape != (self.W.shape[0],):
            raise InvalidInputError(f"bias shape {self.b.shape} does not match W {self.W.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise InvalidInputError("explanation parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def d_x(self) -> int:
        return self.W.shape[1]

    def to_theta(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    @classmethod
    def from_theta(cls, theta, n_classes: int, d_x: int) -> "LinearExplanation":
        theta = as_array(theta, "theta", ndim=1)
        if theta.size != linear_param_dim(n_classes, d_x):
            raise InvalidInputError(f"theta has {theta.size} entries, expected "
                                    f"{linear_param_dim(n_classes, d_x)}")
        return cls(theta[: n_classes * d_x].reshape(n_classes, d_x), theta[n_classes * d_x:])


def linear_param_dim(n_classes: int, d_x: int) -> int:
    return n_classes * (d_x + 1)


class LinearGrad(NamedTuple):
    loss: float
    W: np.ndarray
    b: np.ndarray
    x: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])


def _check_x(x, d_x: int) -> np.ndarray:
    x = as_array(x, "x", ndim=1)
    if x.shape[0] != d_x:
        raise InvalidInputError(f"x has {x.shape[0]} attributes, explanation expects {d_x}")
    return x


def linear_predict(exp: LinearExplanation, x) -> np.ndarray:
    x = _check_x(x, exp.d_x)
    return softmax(exp.W @ x + exp.b)


def linear_nll_grad(exp: LinearExplanation, x, y: int) -> LinearGrad:
    """``-log p(y | x)`` with gradients for ``W``, ``b`` and ``x``."""
    x = _check_x(x, exp.d_x)
    if not 0 <= int(y) < exp.n_classes:
        raise InvalidInputError(f"class index {y} outside [0, {exp.n_classes})")
    z = exp.W @ x + exp.b
    logp = log_softmax(z)
    delta = np.exp(logp)
    delta[int(y)] -= 1.0
    return LinearGrad(float(-logp[int(y)]), np.outer(delta, x), delta, exp.W.T @ delta)


def linear_logits_batch(theta: np.ndarray, X: np.ndarray, n_classes: int) -> np.ndarray:
    """Logits for per-row parameters ``theta`` (N, p) applied to rows of ``X`` (N, d)."""
    N, d = X.shape
    W = theta[:, : n_classes * d].reshape(N, n_classes, d)
    return np.einsum("nkd,nd->nk", W, X) + theta[:, n_classes * d:]


def linear_logits_backward(dZ: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. flattened theta rows given logit gradients ``dZ`` (N, classes)."""
    N = X.shape[0]
    dW = np.einsum("nk,nd->nkd", dZ, X).reshape(N, -1)
    return np.concatenate([dW, dZ], axis=1)


# ---------------------------------------------------------------------------
# survival chain CRF

@dataclass(frozen=True)
class SurvivalTarget:
    """Interval index plus censoring flag.

    Uncensored ``index = j``: the event happened in ``[t_j, t_{j+1})``.
    Censored ``index = j``: the subject was last seen alive in that interval.
    """

    index: int
    censored: bool = False


@dataclass
class SurvivalExplanation:
    theta: np.ndarray  # (m, d_x); row i-1 holds theta^i
    omega: np.ndarray = None  # (w00, w01, w11)

    def __post_init__(self):
        self.theta = as_array(self.theta, "theta", ndim=2)
        if self.theta.shape[0] < 1 or self.theta.shape[1] < 1:
            raise InvalidInputError(f"theta must be m x d_x with m, d_x >= 1, got {self.theta.shape}")
        self.omega = np.zeros(3) if self.omega is None else as_array(self.omega, "omega", ndim=1)
        if self.omega.shape != (3,):
            raise InvalidInputError("omega must hold (w00, w01, w11)")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.omega))):
            raise InvalidInputError("survival explanation parameters must be finite")

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def d_x(self) -> int:
        return self.theta.shape[1]


def pair_counts(m: int) -> np.ndarray:
    """(m+1, 3) counts of (0,0), (0,1), (1,1) transitions for each valid outcome."""
    j = np.arange(m + 1)
    return np.stack([
        np.maximum(j - 1, 0),
        ((j >= 1) & (j <= m - 1)).astype(float),
        np.maximum(m - 1 - j, 0),
    ], axis=1).astype(np.float64)


def outcome_scores(A: np.ndarray, omega: np.ndarray | None = None) -> np.ndarray:
    """Scores ``s(0..m)`` from per-interval potentials ``A[..., i-1] = x . theta^i``.

    ``s(k)`` is the suffix sum of ``A`` after position ``k``; ``s(m) = 0``.
    """
    m = A.shape[-1]
    suffix = np.cumsum(A[..., ::-1], axis=-1)[..., ::-1]
    S = np.concatenate([suffix, np.zeros(A.shape[:-1] + (1,))], axis=-1)
    if omega is not None and np.any(omega != 0):
        S = S + pair_counts(m) @ omega
    return S


def scores_backward(dS: np.ndarray) -> np.ndarray:
    """Map gradients on scores (…, m+1) to gradients on potentials (…, m)."""
    return np.cumsum(dS, axis=-1)[..., :-1]


def tail_start(j: int, m: int) -> int:
    """First outcome counted by the censored likelihood of index ``j``."""
    return min(j + 1, m)


def normalize_target(target: SurvivalTarget, m: int) -> SurvivalTarget:
    j = int(target.index)
    if j < 0 or j > m:
        raise InvalidInputError(f"interval index {j} outside [0, {m}]")
    if j == m and not target.censored:
        warnings.warn(f"uncensored event at the horizon index {m}; clamped to {m - 1}",
                      stacklevel=3)
        return SurvivalTarget(m - 1, False)
    return target


def survival_log_probs(exp: SurvivalExplanation, x) -> np.ndarray:
    """Log-probabilities of the ``m + 1`` outcomes."""
    x = _check_x(x, exp.d_x)
    return log_softmax(outcome_scores(exp.theta @ x, exp.omega))


def survival_censored_logprob(exp: SurvivalExplanation, x, j: int) -> float:
    """``log P(T >= t_j)`` as the tail mass over outcomes ``k >= min(j+1, m)``."""
    if not 0 <= int(j) <= exp.m:
        raise InvalidInputError(f"interval index {j} outside [0, {exp.m}]")
    logp = survival_log_probs(exp, x)
    return float(log_sum_exp(logp[tail_start(int(j), exp.m):]))


class SurvivalGrad(NamedTuple):
    loss: float
    theta: np.ndarray
    omega: np.ndarray


def survival_nll_scores(S: np.ndarray, index: np.ndarray, censored: np.ndarray):
    """Per-row NLL and its gradient w.r.t. the outcome scores ``S`` (N, m+1)."""
    m = S.shape[1] - 1
    k = np.arange(m + 1)[None, :]
    start = np.minimum(index + 1, m)[:, None]
    mask = np.where(censored[:, None], k >= start, k == index[:, None])
    logZ = log_sum_exp(S, axis=1)
    P = np.exp(S - logZ[:, None])
    masked = np.where(mask, S, -np.inf)
    log_num = log_sum_exp(masked, axis=1)
    Q = np.where(mask, np.exp(masked - log_num[:, None]), 0.0)
    return logZ - log_num, P - Q


def survival_grad(exp: SurvivalExplanation, x, target: SurvivalTarget) -> SurvivalGrad:
    """Negative log-likelihood of one target and its gradients.

    Uncensored: ``-log p(j)``; censored: ``-log sum_{k >= min(j+1, m)} p(k)``.
    """
    x = _check_x(x, exp.d_x)
    target = normalize_target(target, exp.m)
    S = outcome_scores(exp.theta @ x, exp.omega)[None, :]
    loss, dS = survival_nll_scores(S, np.array([target.index]), np.array([bool(target.censored)]))
    dA = scores_backward(dS)[0]
    return SurvivalGrad(float(loss[0]), np.outer(dA, x), dS[0] @ pair_counts(exp.m))


def survival_curve(exp: SurvivalExplanation, x) -> np.ndarray:
    """``S(t_j) = P(T >= t_j) = sum_{k >= j} p(k)`` for ``j = 0..m``."""
    return curve_from_log_probs(survival_log_probs(exp, x))


def curve_from_log_probs(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    S = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1]
    S = np.minimum(S, 1.0)
    S[..., 0] = 1.0
    # enforce monotonicity against rounding in the cumulative sum
    return np.minimum.accumulate(S, axis=-1)


PREDICTION_RULES = ("median", "mean", "argmax")


def time_from_log_probs(logp: np.ndarray, rule: str = "median") -> np.ndarray:
    p = np.exp(logp)
    if rule == "median":
        cdf = np.cumsum(p, axis=-1)
        return np.argmax(cdf >= 0.5 - 1e-12, axis=-1)
    if rule == "mean":
        idx = np.arange(p.shape[-1])
        return np.rint(p @ idx).astype(int)
    if rule == "argmax":
        return np.argmax(p, axis=-1)
    raise InvalidInputError(f"unknown prediction rule {rule!r}; choose from {PREDICTION_RULES}")


def predicted_time(exp: SurvivalExplanation, x, rule: str = "median") -> int:
    """Predicted outcome interval; default is the median of the discrete distribution."""
    return int(time_from_log_probs(survival_log_probs(exp, x), rule))
