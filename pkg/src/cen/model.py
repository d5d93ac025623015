"""Contextual explanation network: encoder -> explanation parameters -> prediction.

Three ways of producing ``theta`` from a context are supported:

* ``constant``: a free parameter vector shared by every instance (the plain
  linear / CRF baseline, no encoder at all),
* unconstrained: the encoder output *is* ``theta``,
* constrained: the encoder emits attention logits and ``theta = alpha^T D``.

For the survival family with a dictionary, atoms are per-interval weight
vectors and each interval gets its own attention (MLP head reshaped to
(m, K), or a recurrent encoder unrolled for m steps).

With ``mixing="moe"`` the model mixes the *predictions* of the atoms instead
of their parameters (mixture of experts).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from cen.encoders import (
    Dictionary,
    MlpEncoder,
    RecurrentEncoder,
    init_dictionary,
    init_mlp,
    init_recurrent,
    mlp_backward,
    mlp_forward_cached,
    recurrent_backward,
    recurrent_forward_cached,
)
from cen.errors import DivergedTrainingError, InvalidInputError, UnimplementedFeatureError
from cen.explanations import (
    LinearExplanation,
    SurvivalExplanation,
    curve_from_log_probs,
    linear_logits_backward,
    linear_logits_batch,
    linear_param_dim,
    outcome_scores,
    pair_counts,
    scores_backward,
    survival_nll_scores,
)
from cen.numeric import as_array, log_softmax, log_sum_exp, make_rng, softmax

FAMILIES = ("linear", "survival")
ENCODERS = ("mlp", "recurrent", "constant")
MIXINGS = ("cen", "moe")


@dataclass
class Regularization:
    """Posterior-regularisation strengths.

    ``l1_theta``/``l2_theta`` act on generated explanations (averaged over the
    batch), ``entropy_weight`` scales the conditional-entropy bonus and
    ``smoothness`` penalises ``||theta^{t+1} - theta^t||^2`` for survival models.
    Dictionary penalties live on :class:`~cen.encoders.Dictionary`.
    """

    l1_theta: float = 0.0
    l2_theta: float = 0.0
    entropy_weight: float = 0.1
    smoothness: float = 0.0

    def __post_init__(self):
        for name in ("l1_theta", "l2_theta", "entropy_weight", "smoothness"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")


@dataclass
class Batch:
    """Aligned contexts, attributes and targets.

    ``y`` holds class indices (linear family) or interval indices (survival,
    with ``censored`` flags).
    """

    C: np.ndarray
    X: np.ndarray
    y: np.ndarray
    censored: np.ndarray | None = None

    def __post_init__(self):
        self.C = as_array(self.C, "C", ndim=2)
        self.X = as_array(self.X, "X", ndim=2)
        self.y = np.asarray(self.y).astype(np.int64).reshape(-1)
        n = self.C.shape[0]
        if self.X.shape[0] != n or self.y.shape[0] != n:
            raise InvalidInputError(f"row counts differ: C {self.C.shape[0]}, X {self.X.shape[0]}, "
                                    f"y {self.y.shape[0]}")
        if self.censored is not None:
            self.censored = np.asarray(self.censored).astype(bool).reshape(-1)
            if self.censored.shape[0] != n:
                raise InvalidInputError("censoring flags do not match the number of rows")

    def __len__(self) -> int:
        return self.C.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.C[idx], self.X[idx], self.y[idx],
                     None if self.censored is None else self.censored[idx])


class CenModel:
    """Encoder + optional dictionary + explanation family."""

    def __init__(self, family: str, d_x: int, encoder=None, dictionary: Dictionary | None = None,
                 n_classes: int = 2, m: int | None = None, reg: Regularization | None = None,
                 theta0: np.ndarray | None = None, omega: np.ndarray | None = None,
                 learn_omega: bool = False, mixing: str = "cen"):
        if family not in FAMILIES:
            raise InvalidInputError(f"unknown family {family!r}")
        if mixing not in MIXINGS:
            raise InvalidInputError(f"unknown mixing {mixing!r}")
        self.family = family
        self.d_x = int(d_x)
        self.n_classes = int(n_classes)
        self.m = None if m is None else int(m)
        self.encoder = encoder
        self.dictionary = dictionary
        self.reg = reg or Regularization()
        self.theta0 = theta0
        self.omega = np.zeros(3) if omega is None else as_array(omega, "omega", ndim=1).copy()
        self.learn_omega = bool(learn_omega)
        self.mixing = mixing
        self._validate()

    # -- structure ---------------------------------------------------------

    @property
    def atom_dim(self) -> int:
        if self.family == "linear":
            return linear_param_dim(self.n_classes, self.d_x)
        return self.d_x

    @property
    def theta_shape(self) -> tuple:
        if self.family == "linear":
            return (self.atom_dim,)
        return (self.m, self.d_x)

    @property
    def constrained(self) -> bool:
        return self.dictionary is not None

    @property
    def context_dim(self) -> int:
        return 0 if self.encoder is None else self.encoder.in_dim

    def _validate(self):
        if self.family == "linear" and self.n_classes < 2:
            raise InvalidInputError("linear explanations need >= 2 classes")
        if self.family == "survival":
            if self.m is None or self.m < 1:
                raise InvalidInputError("survival family needs m >= 1 intervals")
            if self.omega.shape != (3,):
                raise InvalidInputError("omega must hold (w00, w01, w11)")
        if self.mixing == "moe" and (self.family != "linear" or not self.constrained):
            raise InvalidInputError("mixture-of-experts mixing needs a linear family and a dictionary")
        if self.encoder is None:
            if self.theta0 is None:
                raise InvalidInputError("a model without encoder needs constant parameters theta0")
            self.theta0 = as_array(self.theta0, "theta0")
            if self.theta0.shape != self.theta_shape:
                raise InvalidInputError(f"theta0 shape {self.theta0.shape} != {self.theta_shape}")
            return
        out = self.encoder.out_dim
        if self.constrained:
            K = self.dictionary.size
            if self.dictionary.atom_dim != self.atom_dim:
                raise InvalidInputError(f"dictionary atoms have {self.dictionary.atom_dim} entries, "
                                        f"explanations need {self.atom_dim}")
            want = K * self.m if (self.family == "survival" and isinstance(self.encoder, MlpEncoder)) else K
        else:
            if isinstance(self.encoder, RecurrentEncoder):
                raise InvalidInputError("a recurrent encoder must attend over a dictionary")
            want = int(np.prod(self.theta_shape))
        if out != want:
            raise InvalidInputError(f"encoder emits {out} values, model needs {want}")
        if isinstance(self.encoder, RecurrentEncoder) and self.family != "survival":
            raise InvalidInputError("recurrent encoders generate per-interval survival explanations")

    def parameters(self) -> dict:
        params = {}
        if self.encoder is not None:
            params.update(self.encoder.params("enc."))
        else:
            params["theta0"] = self.theta0
        if self.dictionary is not None:
            params["dict.D"] = self.dictionary.D
        if self.learn_omega:
            params["omega"] = self.omega
        return params

    def copy(self) -> "CenModel":
        return copy.deepcopy(self)

    # -- explanation generation -------------------------------------------

    def _explain(self, C: np.ndarray, train: bool = False, rng=None):
        N = C.shape[0]
        if self.encoder is None:
            theta = np.broadcast_to(self.theta0, (N,) + self.theta_shape).copy()
            return theta, None, ("const",)
        if C.ndim != 2 or C.shape[1] != self.encoder.in_dim:
            raise InvalidInputError(f"context has shape {C.shape}, encoder expects "
                                    f"{self.encoder.in_dim} columns")
        if isinstance(self.encoder, RecurrentEncoder):
            logits, enc_cache = recurrent_forward_cached(self.encoder, C, self.m)
        else:
            out, enc_cache = mlp_forward_cached(self.encoder, C, train, rng)
            if not self.constrained:
                return out.reshape((N,) + self.theta_shape), None, ("mlp", enc_cache)
            logits = out.reshape(N, self.m, -1) if self.family == "survival" else out
        alpha = softmax(logits, axis=-1)
        if self.mixing == "moe":
            return None, alpha, ("gate", enc_cache, alpha)
        theta = alpha @ self.dictionary.D
        return theta, alpha, ("attn", enc_cache, alpha)

    def _explain_backward(self, cache, dtheta: np.ndarray | None, dalpha_extra=None) -> dict:
        grads = {}
        kind = cache[0]
        if kind == "const":
            grads["theta0"] = dtheta.sum(axis=0)
            return grads
        if kind == "mlp":
            N = dtheta.shape[0]
            dout = dtheta.reshape(N, -1)
            dlogits = None
        else:
            alpha = cache[2]
            if kind == "attn":
                K = alpha.shape[-1]
                grads["dict.D"] = alpha.reshape(-1, K).T @ dtheta.reshape(-1, dtheta.shape[-1])
                dalpha = dtheta @ self.dictionary.D.T
                # softmax Jacobian-vector product
                dlogits = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
            else:
                dlogits = np.zeros_like(alpha)
            if dalpha_extra is not None:
                dlogits = dlogits + dalpha_extra
            dout = dlogits.reshape(alpha.shape[0], -1)
        if isinstance(self.encoder, RecurrentEncoder):
            enc_grads = recurrent_backward(self.encoder, cache[1], dlogits)
            grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
        else:
            dW, db, _ = mlp_backward(self.encoder, cache[1], dout)
            for i, (gw, gb) in enumerate(zip(dW, db)):
                grads[f"enc.W{i}"] = gw
                grads[f"enc.b{i}"] = gb
        return grads

    def explain(self, C) -> tuple:
        """Generated explanations and attention for a batch of contexts.

        Returns ``(theta, alpha)``; ``alpha`` is ``None`` for unconstrained or
        constant models. In MoE mode ``theta`` is the attention-weighted mean
        of the experts (for inspection only; predictions mix likelihoods).
        """
        C = self._contexts(C)
        theta, alpha, _ = self._explain(C)
        if self.mixing == "moe":
            theta = alpha @ self.dictionary.D
        return theta, alpha

    def _contexts(self, C) -> np.ndarray:
        C = as_array(C, "C")
        if C.ndim == 1:
            C = C[None, :]
        if self.encoder is None:
            return C.reshape(C.shape[0], -1)
        return C

    # -- predictions -------------------------------------------------------

    def predict_proba(self, C, X) -> np.ndarray:
        """Class probabilities (linear family)."""
        if self.family != "linear":
            raise InvalidInputError("predict_proba is defined for the linear family")
        C = self._contexts(C)
        X = as_array(X, "X", ndim=2)
        self._check_x(X, C.shape[0])
        theta, alpha, _ = self._explain(C)
        if self.mixing == "moe":
            return np.exp(self._moe_log_mixture(alpha, X))
        return softmax(linear_logits_batch(theta, X, self.n_classes), axis=-1)

    def log_probs(self, C, X) -> np.ndarray:
        """Outcome log-probabilities (N, m+1) for the survival family."""
        if self.family != "survival":
            raise InvalidInputError("log_probs is defined for the survival family")
        C = self._contexts(C)
        X = as_array(X, "X", ndim=2)
        self._check_x(X, C.shape[0])
        theta, _, _ = self._explain(C)
        S = outcome_scores(np.einsum("nmd,nd->nm", theta, X), self.omega)
        return log_softmax(S, axis=-1)

    def survival_curves(self, C, X) -> np.ndarray:
        return curve_from_log_probs(self.log_probs(C, X))

    def _check_x(self, X: np.ndarray, n: int):
        if X.shape[1] != self.d_x:
            raise InvalidInputError(f"X has {X.shape[1]} columns, model expects {self.d_x}")
        if X.shape[0] != n:
            raise InvalidInputError(f"{X.shape[0]} attribute rows vs {n} context rows")

    def _moe_log_mixture(self, alpha: np.ndarray, X: np.ndarray) -> np.ndarray:
        """log sum_k alpha_k p(y | x, theta_k) for every class y: (N, classes)."""
        N = X.shape[0]
        D = self.dictionary.D
        K = D.shape[0]
        Z = linear_logits_batch(np.repeat(D[None], N, axis=0).reshape(N * K, -1),
                                np.repeat(X, K, axis=0), self.n_classes).reshape(N, K, -1)
        logp = log_softmax(Z, axis=-1)
        with np.errstate(divide="ignore"):
            log_alpha = np.log(alpha)
        return log_sum_exp(log_alpha[:, :, None] + logp, axis=1)

    # -- objectives ---------------------------------------------------------

    def _theta_penalty(self, theta: np.ndarray):
        """Mean-over-batch penalty on generated theta and its gradient."""
        N = theta.shape[0]
        r = self.reg
        pen = 0.0
        grad = np.zeros_like(theta)
        if r.l1_theta:
            pen += r.l1_theta * np.abs(theta).sum() / N
            grad += r.l1_theta * np.sign(theta) / N
        if r.l2_theta:
            pen += r.l2_theta * np.square(theta).sum() / N
            grad += 2.0 * r.l2_theta * theta / N
        if r.smoothness and self.family == "survival" and theta.shape[1] > 1:
            diff = np.diff(theta, axis=1)
            pen += r.smoothness * np.square(diff).sum() / N
            g = 2.0 * r.smoothness * diff / N
            grad[:, 1:] += g
            grad[:, :-1] -= g
        return pen, grad

    def _dict_penalty(self):
        if self.dictionary is None:
            return 0.0, None
        return self.dictionary.penalty(), self.dictionary.penalty_grad()

    def nll(self, batch: Batch, train: bool = False, rng=None, with_grad: bool = True):
        """Mean negative log-likelihood plus L1/L2 (and smoothness) penalties."""
        if len(batch) == 0:
            raise InvalidInputError("empty batch")
        if self.mixing == "moe":
            return self._moe_nll(batch, train, rng, with_grad)
        C = self._contexts(batch.C)
        self._check_x(batch.X, C.shape[0])
        N = len(batch)
        theta, alpha, cache = self._explain(C, train, rng)
        if self.family == "linear":
            Z = linear_logits_batch(theta, batch.X, self.n_classes)
            logp = log_softmax(Z, axis=-1)
            data_loss = -logp[np.arange(N), batch.y].mean()
            if with_grad:
                dZ = np.exp(logp)
                dZ[np.arange(N), batch.y] -= 1.0
                dtheta = linear_logits_backward(dZ / N, batch.X)
        else:
            censored = np.zeros(N, bool) if batch.censored is None else batch.censored
            index = self._survival_index(batch.y, censored)
            A = np.einsum("nmd,nd->nm", theta, batch.X)
            S = outcome_scores(A, self.omega)
            losses, dS = survival_nll_scores(S, index, censored)
            data_loss = losses.mean()
            if with_grad:
                dA = scores_backward(dS) / N
                dtheta = dA[:, :, None] * batch.X[:, None, :]
                domega = (dS / N).sum(axis=0) @ pair_counts(self.m)
        pen, dpen = self._theta_penalty(theta)
        dict_pen, ddict = self._dict_penalty()
        loss = float(data_loss + pen + dict_pen)
        if not np.isfinite(loss):
            raise DivergedTrainingError("non-finite loss", diagnostics={"data_loss": float(data_loss)})
        if not with_grad:
            return loss, None
        grads = self._explain_backward(cache, dtheta + dpen)
        if ddict is not None:
            grads["dict.D"] = grads.get("dict.D", 0.0) + ddict
        if self.learn_omega:
            grads["omega"] = domega
        return loss, grads

    def _survival_index(self, y: np.ndarray, censored: np.ndarray) -> np.ndarray:
        if np.any(y < 0) or np.any(y > self.m):
            raise InvalidInputError(f"interval indices must lie in [0, {self.m}]")
        bad = (y == self.m) & ~censored
        if np.any(bad):
            import warnings
            warnings.warn(f"{int(bad.sum())} uncensored events at the horizon index; clamped to "
                          f"{self.m - 1}", stacklevel=3)
            y = np.where(bad, self.m - 1, y)
        return y

    def _moe_nll(self, batch: Batch, train: bool, rng, with_grad: bool):
        C = self._contexts(batch.C)
        self._check_x(batch.X, C.shape[0])
        N = len(batch)
        _, alpha, cache = self._explain(C, train, rng)
        D = self.dictionary.D
        K = D.shape[0]
        Xr = np.repeat(batch.X, K, axis=0)
        Z = linear_logits_batch(np.repeat(D[None], N, axis=0).reshape(N * K, -1), Xr,
                                self.n_classes).reshape(N, K, -1)
        logp_all = log_softmax(Z, axis=-1)
        logp = logp_all[np.arange(N), :, batch.y]  # (N, K)
        with np.errstate(divide="ignore"):
            log_alpha = np.log(alpha)
        joint = log_alpha + logp
        log_mix = log_sum_exp(joint, axis=1)
        data_loss = -log_mix.mean()
        # expected theta penalty under the gate
        pen_k = np.array([self._theta_penalty(D[k:k + 1])[0] for k in range(K)])
        pen = float((alpha * pen_k).sum() / N)
        dict_pen, ddict = self._dict_penalty()
        loss = float(data_loss + pen + dict_pen)
        if not np.isfinite(loss):
            raise DivergedTrainingError("non-finite loss", diagnostics={"data_loss": float(data_loss)})
        if not with_grad:
            return loss, None
        resp = np.exp(joint - log_mix[:, None])  # posterior over experts
        # gate logits: d(-log mix)/dlogit = -(resp - alpha); penalty term via softmax JVP
        dlogits = -(resp - alpha) / N + alpha * (pen_k - (alpha * pen_k).sum(axis=1, keepdims=True)) / N
        grads = self._explain_backward(cache, None, dalpha_extra=dlogits.reshape(cache[2].shape))
        onehot = np.zeros_like(logp_all)
        onehot[np.arange(N), :, batch.y] = 1.0
        dZ = resp[:, :, None] * (np.exp(logp_all) - onehot) / N  # (N, K, classes)
        dW = np.einsum("nkc,nd->kcd", dZ, batch.X).reshape(K, -1)
        dD = np.concatenate([dW, dZ.sum(axis=0)], axis=1)
        w = alpha.sum(axis=0)  # sum_n alpha_nk
        for k in range(K):
            _, g = self._theta_penalty(D[k:k + 1])
            dD[k] += w[k] * g[0] / N
        grads["dict.D"] = dD + ddict
        return loss, grads

    def entropy(self, batch: Batch, with_grad: bool = True, train: bool = False, rng=None):
        """Batch estimate of the conditional entropy of Y given the generated theta.

        ``H = -(1/B) sum_i sum_y p(y|x_i,theta_i) log[(1/B) sum_j p(y|x_j,theta_i)]``
        """
        if self.family != "linear":
            raise UnimplementedFeatureError("entropy estimate is only implemented for linear explanations")
        N = len(batch)
        if N < 2:
            raise InvalidInputError("entropy estimate needs a batch of at least 2")
        C = self._contexts(batch.C)
        self._check_x(batch.X, C.shape[0])
        theta, alpha, cache = self._explain(C, train, rng)
        if self.mixing == "moe":
            theta = alpha @ self.dictionary.D
        d, k = self.d_x, self.n_classes
        W = theta[:, : k * d].reshape(N, k, d)
        b = theta[:, k * d:]
        Z = (W.reshape(N * k, d) @ batch.X.T).reshape(N, k, N).transpose(0, 2, 1) + b[:, None, :]
        P = softmax(Z, axis=-1)
        Q = np.maximum(P.mean(axis=1), 1e-300)  # (N, k)
        logQ = np.log(Q)
        diag = P[np.arange(N), np.arange(N)]  # (N, k)
        H = float(-(diag * logQ).sum() / N)
        if not with_grad:
            return H, None
        if self.mixing == "moe":
            raise UnimplementedFeatureError("entropy gradients are defined for CEN mixing only")
        G = np.broadcast_to((-(diag / Q) / (N * N))[:, None, :], P.shape).copy()
        G[np.arange(N), np.arange(N)] += -logQ / N
        dZ = P * (G - np.sum(G * P, axis=-1, keepdims=True))
        dW = (dZ.transpose(0, 2, 1) @ batch.X).reshape(N, -1)
        dtheta = np.concatenate([dW, dZ.sum(axis=1)], axis=1)
        return H, self._explain_backward(cache, dtheta)

    def loss_and_grad(self, batch: Batch, train: bool = False, rng=None, with_grad: bool = True):
        """Training objective: NLL + penalties - entropy_weight * H(Y|theta)."""
        # replay the rng so both terms see the same dropout masks
        replay = None
        if rng is not None:
            rng = make_rng(rng)
            replay = np.random.Generator(np.random.PCG64())
            replay.bit_generator.state = rng.bit_generator.state
        loss, grads = self.nll(batch, train=train, rng=rng, with_grad=with_grad)
        lam = self.reg.entropy_weight
        if lam > 0 and self.family == "linear" and self.mixing == "cen" and len(batch) >= 2:
            H, hgrads = self.entropy(batch, with_grad=with_grad, train=train, rng=replay)
            loss -= lam * H
            if with_grad:
                for key, g in hgrads.items():
                    grads[key] = grads[key] - lam * g
        return loss, grads

    def objective(self, batch: Batch, block: int = 256) -> float:
        """Regularised loss without gradients; the entropy term is averaged over
        consecutive blocks of ``block`` rows to keep the cost linear in N."""
        loss, _ = self.nll(batch, with_grad=False)
        lam = self.reg.entropy_weight
        if lam > 0 and self.family == "linear" and self.mixing == "cen" and len(batch) >= 2:
            loss -= lam * self.blocked_entropy(batch, block)
        return loss

    def blocked_entropy(self, batch: Batch, block: int = 256) -> float:
        """Size-weighted mean of per-block entropy estimates (a trailing block
        of one row is merged into its predecessor)."""
        n = len(batch)
        edges = list(range(0, n, block)) + [n]
        if len(edges) > 2 and edges[-1] - edges[-2] < 2:
            edges.pop(-2)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += (hi - lo) * self.entropy(batch.subset(slice(lo, hi)), with_grad=False)[0]
        return total / n


# ---------------------------------------------------------------------------
# module-level operations

def cen_forward(model: CenModel, c, x):
    """Single-instance forward pass: ``(prediction, theta, alpha)``.

    The prediction is a class distribution (linear) or the ``m + 1`` outcome
    probabilities (survival). ``alpha`` is empty when there is no dictionary.
    """
    c = as_array(c, "c", ndim=1)
    x = as_array(x, "x", ndim=1)
    C, X = c[None, :], x[None, :]
    if model.family == "linear":
        pred = model.predict_proba(C, X)[0]
    else:
        pred = np.exp(model.log_probs(C, X)[0])
    theta, alpha = model.explain(C)
    return pred, theta[0], (np.zeros(0) if alpha is None else alpha[0])


def cen_nll(model: CenModel, batch: Batch):
    """Mean NLL + penalties, with gradients for every trainable parameter."""
    return model.nll(batch)


def entropy_estimate(model: CenModel, batch: Batch) -> float:
    return model.entropy(batch, with_grad=False)[0]


def cen_regularized_loss(model: CenModel, batch: Batch):
    return model.loss_and_grad(batch)


def moe_nll(model: CenModel, batch: Batch):
    """Mixture-of-experts NLL using the model's encoder as gate and its atoms as experts."""
    if model.mixing == "moe":
        return model.nll(batch)
    moe = CenModel(model.family, model.d_x, encoder=model.encoder, dictionary=model.dictionary,
                   n_classes=model.n_classes, reg=model.reg, mixing="moe")
    return moe.nll(batch)


def build_cen(context_dim: int, attr_dim: int, family: str = "linear", *, n_classes: int = 2,
              m: int | None = None, encoder: str = "mlp", hidden=(16,), dictionary_size: int | None = 4,
              rnn_hidden: int = 16, dropout: float = 0.0, dict_scale: float = 0.1,
              l1_dict: float = 0.0, l2_dict: float = 0.0, reg: Regularization | None = None,
              learn_omega: bool = False, mixing: str = "cen", seed=0) -> CenModel:
    """Construct a freshly initialised model."""
    if encoder not in ENCODERS:
        raise InvalidInputError(f"unknown encoder {encoder!r}; choose from {ENCODERS}")
    rng = make_rng(seed)
    atom = linear_param_dim(n_classes, attr_dim) if family == "linear" else attr_dim
    theta_size = atom if family == "linear" else (m or 0) * attr_dim
    dictionary = None
    enc = None
    theta0 = None
    if encoder == "constant":
        shape = (atom,) if family == "linear" else (m, attr_dim)
        theta0 = rng.normal(0.0, dict_scale, size=shape)
    else:
        if dictionary_size is not None:
            dictionary = init_dictionary(dictionary_size, atom, rng, scale=dict_scale, l1=l1_dict, l2=l2_dict)
        if encoder == "recurrent":
            if dictionary is None:
                raise InvalidInputError("recurrent encoders need a dictionary")
            enc = init_recurrent(context_dim, rnn_hidden, dictionary_size, rng)
        else:
            if dictionary is None:
                out = theta_size
            elif family == "survival":
                out = dictionary_size * m
            else:
                out = dictionary_size
            enc = init_mlp([context_dim, *hidden, out], rng, dropout=dropout)
    return CenModel(family, attr_dim, encoder=enc, dictionary=dictionary, n_classes=n_classes, m=m,
                    reg=reg, theta0=theta0, learn_omega=learn_omega, mixing=mixing)


class MlpClassifier:
    """Black-box baseline: an MLP mapping selected inputs straight to class logits."""

    family = "linear"

    def __init__(self, encoder: MlpEncoder, inputs: str = "both", n_classes: int = 2, l2: float = 0.0):
        if inputs not in ("both", "context", "attributes"):
            raise InvalidInputError(f"unknown input selection {inputs!r}")
        self.encoder = encoder
        self.inputs = inputs
        self.n_classes = n_classes
        self.l2 = l2

    def _features(self, C, X) -> np.ndarray:
        C = as_array(C, "C", ndim=2)
        X = as_array(X, "X", ndim=2)
        if self.inputs == "context":
            return C
        if self.inputs == "attributes":
            return X
        return np.concatenate([C, X], axis=1)

    def parameters(self) -> dict:
        return self.encoder.params("enc.")

    def copy(self) -> "MlpClassifier":
        return copy.deepcopy(self)

    def predict_proba(self, C, X) -> np.ndarray:
        out, _ = mlp_forward_cached(self.encoder, self._features(C, X))
        return softmax(out, axis=-1)

    def loss_and_grad(self, batch: Batch, train: bool = False, rng=None, with_grad: bool = True):
        N = len(batch)
        out, cache = mlp_forward_cached(self.encoder, self._features(batch.C, batch.X), train, rng)
        logp = log_softmax(out, axis=-1)
        loss = -logp[np.arange(N), batch.y].mean()
        loss += self.l2 * sum(np.square(w).sum() for w in self.encoder.weights)
        if not np.isfinite(loss):
            raise DivergedTrainingError("non-finite loss")
        if not with_grad:
            return float(loss), None
        d = np.exp(logp)
        d[np.arange(N), batch.y] -= 1.0
        dW, db, _ = mlp_backward(self.encoder, cache, d / N)
        grads = {}
        for i, (gw, gb) in enumerate(zip(dW, db)):
            grads[f"enc.W{i}"] = gw + 2.0 * self.l2 * self.encoder.weights[i]
            grads[f"enc.b{i}"] = gb
        return float(loss), grads

    def nll(self, batch: Batch, **kw):
        return self.loss_and_grad(batch, **kw)

    def objective(self, batch: Batch) -> float:
        return self.loss_and_grad(batch, with_grad=False)[0]


def build_mlp_classifier(in_dim: int, hidden=(32,), n_classes: int = 2, inputs: str = "both",
                         l2: float = 0.0, seed=0) -> MlpClassifier:
    rng = make_rng(seed)
    return MlpClassifier(init_mlp([in_dim, *hidden, n_classes], rng), inputs=inputs,
                         n_classes=n_classes, l2=l2)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class FanoReport:
    """Plug-in check of the explanation-contribution lower bound.

    ``delta_hat`` is an estimate of H(Y|theta), not a guaranteed lower bound,
    so ``holds`` is a heuristic diagnostic rather than a certificate.
    """

    epsilon_hat: float
    delta_hat: float
    bound: float
    contribution_lower_bound: float
    contribution: float
    accuracy_full: float
    accuracy_theta_only: float
    n_clusters: int
    holds: bool
    note: str = "delta_hat is a plug-in entropy estimate; the check is heuristic"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fano_bound(epsilon: float, delta: float, n_classes: int) -> float:
    """``(delta - 1) / log|Y| - epsilon`` (entropy in nats)."""
    if n_classes < 2:
        raise InvalidInputError("the bound needs at least two classes")
    return (delta - 1.0) / np.log(n_classes) - epsilon


def _theta_clusters(theta: np.ndarray, k: int, rng: np.random.Generator) -> tuple:
    rounded = np.round(theta, 9)
    uniq, labels = np.unique(rounded, axis=0, return_inverse=True)
    if uniq.shape[0] <= k:
        return labels.reshape(-1), uniq.shape[0]
    seed = int(rng.integers(2**31 - 1))
    _, labels = kmeans2(theta, k, minit="++", seed=seed)
    return labels, k


def fano_diagnostic(model: CenModel, batch: Batch, seed=0, holdout_fraction: float = 0.5,
                    n_clusters: int | None = None) -> FanoReport:
    """Compare the model's accuracy with what its explanations alone can predict."""
    if model.family != "linear":
        raise InvalidInputError("the diagnostic is defined for linear explanations")
    if model.n_classes < 2:
        raise InvalidInputError("need at least two classes")
    rng = make_rng(seed)
    N = len(batch)
    if N < 4:
        raise InvalidInputError("need at least 4 labelled rows")
    theta, _ = model.explain(batch.C)
    k = n_clusters or (model.dictionary.size if model.dictionary is not None else 2 * model.n_classes)
    labels, n_found = _theta_clusters(theta, k, rng)
    perm = rng.permutation(N)
    n_fit = max(1, int(round(N * (1.0 - holdout_fraction))))
    fit_idx, eval_idx = perm[:n_fit], perm[n_fit:]
    global_major = np.bincount(batch.y[fit_idx], minlength=model.n_classes).argmax()
    vote = {}
    for cl in np.unique(labels[fit_idx]):
        sel = fit_idx[labels[fit_idx] == cl]
        vote[cl] = np.bincount(batch.y[sel], minlength=model.n_classes).argmax()
    theta_pred = np.array([vote.get(cl, global_major) for cl in labels[eval_idx]])
    full_pred = model.predict_proba(batch.C[eval_idx], batch.X[eval_idx]).argmax(axis=1)
    y_eval = batch.y[eval_idx]
    acc_full = float(np.mean(full_pred == y_eval))
    acc_theta = float(np.mean(theta_pred == y_eval))
    eps = 1.0 - acc_full
    delta = entropy_estimate(model, batch)
    bound = fano_bound(eps, delta, model.n_classes)
    contribution = acc_full - acc_theta
    return FanoReport(
        epsilon_hat=eps, delta_hat=delta, bound=bound,
        contribution_lower_bound=(delta - 1.0) / np.log(model.n_classes) - eps,
        contribution=contribution, accuracy_full=acc_full, accuracy_theta_only=acc_theta,
        n_clusters=int(n_found), holds=bool(contribution >= bound - 1e-6),
    )
