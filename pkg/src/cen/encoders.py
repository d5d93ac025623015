"""Context encoders and the global explanation dictionary.

An encoder maps a context vector ``c`` either straight to explanation
parameters or to attention logits over the ``K`` atoms of a
:class:`Dictionary`. Every forward pass has a cached twin and a matching
backward pass so models can chain analytic gradients through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cen.errors import InvalidInputError
from cen.numeric import as_array, glorot_uniform, sigmoid, softmax

SIMPLEX_TOL = 1e-9


@dataclass
class MlpEncoder:
    """Feed-forward net; ReLU between layers, linear output.

    ``weights[i]`` has shape (out, in). Dropout (inverted) is applied to
    hidden activations in training mode only.
    """

    weights: list
    biases: list
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidInputError("MlpEncoder needs one bias per weight matrix and >= 1 layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidInputError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidInputError(f"layer {i} input {w.shape[1]} != previous output "
                                        f"{self.weights[i - 1].shape[0]}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self, prefix: str = "") -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def init_mlp(sizes, rng: np.random.Generator, dropout: float = 0.0) -> MlpEncoder:
    """Glorot-uniform weights, zero biases. ``sizes = [in, hidden..., out]``."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 0 for s in sizes):
        raise InvalidInputError(f"bad layer sizes {sizes}")
    weights = [glorot_uniform(rng, sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    return MlpEncoder(weights, biases, dropout)


def _mlp_forward(enc: MlpEncoder, C: np.ndarray, train_mode: bool, rng):
    acts = [C]
    masks = []
    h = C
    n_layers = len(enc.weights)
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        z = h @ w.T + b
        if i == n_layers - 1:
            h = z
            break
        h = np.maximum(z, 0.0)
        if train_mode and enc.dropout > 0.0:
            if rng is None:
                raise InvalidInputError("training-mode dropout needs an rng")
            keep = 1.0 - enc.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)
    return h, (acts, masks)


def mlp_forward(enc: MlpEncoder, c, train_mode: bool = False, rng=None) -> np.ndarray:
    """Evaluate the encoder on one context vector or a batch (rows)."""
    c = as_array(c, "context")
    single = c.ndim == 1
    C = c[None, :] if single else c
    if C.ndim != 2 or C.shape[1] != enc.in_dim:
        raise InvalidInputError(f"context has shape {c.shape}, encoder expects {enc.in_dim} features")
    out, _ = _mlp_forward(enc, C, train_mode, rng)
    return out[0] if single else out


def mlp_forward_cached(enc: MlpEncoder, C: np.ndarray, train_mode: bool = False, rng=None):
    if C.ndim != 2 or C.shape[1] != enc.in_dim:
        raise InvalidInputError(f"context batch {C.shape} does not match encoder input {enc.in_dim}")
    return _mlp_forward(enc, C, train_mode, rng)


def mlp_backward(enc: MlpEncoder, cache, grad_out: np.ndarray):
    """Return ``(dW list, db list, d_input)`` for the loss gradient ``grad_out``."""
    acts, masks = cache
    n_layers = len(enc.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    g = grad_out
    for i in range(n_layers - 1, -1, -1):
        dW[i] = g.T @ acts[i]
        db[i] = g.sum(axis=0)
        g = g @ enc.weights[i]
        if i > 0:
            mask = masks[i - 1]
            if mask is not None:
                g = g * mask
            # ReLU gate: the stored activation is post-ReLU (and post-dropout)
            g = g * (acts[i] > 0.0)
    return dW, db, g


@dataclass
class RecurrentEncoder:
    """GRU-style gated cell fed the same context at every step, with a
    linear head giving attention logits over ``K`` atoms per step.

        z = sig(Wz c + Uz h + bz)        r = sig(Wr c + Ur h + br)
        n = tanh(Wh c + Uh (r*h) + bh)   h' = (1 - z) * h + z * n
        logits = Wo h' + bo
    """

    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray

    _NAMES = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh", "Wo", "bo")

    def __post_init__(self):
        H, d = self.Wz.shape
        K = self.Wo.shape[0]
        expect = {
            "Wz": (H, d), "Wr": (H, d), "Wh": (H, d),
            "Uz": (H, H), "Ur": (H, H), "Uh": (H, H),
            "bz": (H,), "br": (H,), "bh": (H,),
            "Wo": (K, H), "bo": (K,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise InvalidInputError(f"{name}: expected {shape}, got {getattr(self, name).shape}")

    @property
    def in_dim(self) -> int:
        return self.Wz.shape[1]

    @property
    def hidden(self) -> int:
        return self.Wz.shape[0]

    @property
    def out_dim(self) -> int:
        return self.Wo.shape[0]

    def params(self, prefix: str = "") -> dict:
        return {f"{prefix}{n}": getattr(self, n) for n in self._NAMES}


def init_recurrent(in_dim: int, hidden: int, k: int, rng: np.random.Generator) -> RecurrentEncoder:
    def g(o, i):
        return glorot_uniform(rng, o, i)

    return RecurrentEncoder(
        Wz=g(hidden, in_dim), Wr=g(hidden, in_dim), Wh=g(hidden, in_dim),
        Uz=g(hidden, hidden), Ur=g(hidden, hidden), Uh=g(hidden, hidden),
        bz=np.zeros(hidden), br=np.zeros(hidden), bh=np.zeros(hidden),
        Wo=g(k, hidden), bo=np.zeros(k),
    )


def recurrent_forward_cached(enc: RecurrentEncoder, C: np.ndarray, m: int):
    """Batched unroll. Returns attention logits of shape (N, m, K) and a cache."""
    if m < 1:
        raise InvalidInputError(f"step count must be >= 1, got {m}")
    if C.ndim != 2 or C.shape[1] != enc.in_dim:
        raise InvalidInputError(f"context batch {C.shape} does not match encoder input {enc.in_dim}")
    N = C.shape[0]
    xz = C @ enc.Wz.T + enc.bz
    xr = C @ enc.Wr.T + enc.br
    xh = C @ enc.Wh.T + enc.bh
    h = np.zeros((N, enc.hidden))
    steps = []
    hs = np.empty((N, m, enc.hidden))
    for t in range(m):
        z = sigmoid(xz + h @ enc.Uz.T)
        r = sigmoid(xr + h @ enc.Ur.T)
        n = np.tanh(xh + (r * h) @ enc.Uh.T)
        h_new = (1.0 - z) * h + z * n
        steps.append((h, z, r, n))
        hs[:, t] = h_new
        h = h_new
    logits = hs @ enc.Wo.T + enc.bo
    return logits, (C, steps, hs)


def recurrent_backward(enc: RecurrentEncoder, cache, grad_logits: np.ndarray) -> dict:
    """Backprop-through-time. Returns gradients keyed like :meth:`RecurrentEncoder.params`."""
    C, steps, hs = cache
    N, m, H = hs.shape
    grads = {n: np.zeros_like(getattr(enc, n)) for n in enc._NAMES}
    grads["Wo"] = np.einsum("ntk,nth->kh", grad_logits, hs)
    grads["bo"] = grad_logits.sum(axis=(0, 1))
    dh_out = grad_logits @ enc.Wo  # (N, m, H)
    dxz = np.zeros((N, H))
    dxr = np.zeros((N, H))
    dxh = np.zeros((N, H))
    dh_next = np.zeros((N, H))
    for t in range(m - 1, -1, -1):
        h_prev, z, r, n = steps[t]
        dh = dh_out[:, t] + dh_next
        dz = dh * (n - h_prev)
        dn = dh * z
        dh_prev = dh * (1.0 - z)
        dan = dn * (1.0 - n * n)
        grads["Uh"] += dan.T @ (r * h_prev)
        drh = dan @ enc.Uh
        dr = drh * h_prev
        dh_prev += drh * r
        dar = dr * r * (1.0 - r)
        grads["Ur"] += dar.T @ h_prev
        dh_prev += dar @ enc.Ur
        daz = dz * z * (1.0 - z)
        grads["Uz"] += daz.T @ h_prev
        dh_prev += daz @ enc.Uz
        dxz += daz
        dxr += dar
        dxh += dan
        dh_next = dh_prev
    grads["Wz"] = dxz.T @ C
    grads["Wr"] = dxr.T @ C
    grads["Wh"] = dxh.T @ C
    grads["bz"] = dxz.sum(axis=0)
    grads["br"] = dxr.sum(axis=0)
    grads["bh"] = dxh.sum(axis=0)
    return grads


def recurrent_unroll(enc: RecurrentEncoder, c, m: int) -> np.ndarray:
    """Attention vectors ``alpha^1..alpha^m`` (shape (m, K)) for one context."""
    if m < 1:
        raise InvalidInputError(f"step count must be >= 1, got {m}")
    c = as_array(c, "context", ndim=1)
    logits, _ = recurrent_forward_cached(enc, c[None, :], m)
    return softmax(logits[0], axis=-1)


@dataclass
class Dictionary:
    """``K`` global explanation atoms stored row-wise in ``D`` (K x p)."""

    D: np.ndarray
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.D.ndim != 2 or self.D.shape[0] < 1:
            raise InvalidInputError(f"dictionary must be K x p with K >= 1, got {self.D.shape}")
        if not np.all(np.isfinite(self.D)):
            raise InvalidInputError("dictionary has non-finite entries")
        if self.l1 < 0 or self.l2 < 0:
            raise InvalidInputError("dictionary penalties must be non-negative")

    @property
    def size(self) -> int:
        return self.D.shape[0]

    @property
    def atom_dim(self) -> int:
        return self.D.shape[1]

    def penalty(self) -> float:
        return float(self.l1 * np.abs(self.D).sum() + self.l2 * np.square(self.D).sum())

    def penalty_grad(self) -> np.ndarray:
        return self.l1 * np.sign(self.D) + 2.0 * self.l2 * self.D


def init_dictionary(k: int, p: int, rng: np.random.Generator, scale: float = 0.1,
                    l1: float = 0.0, l2: float = 0.0) -> Dictionary:
    return Dictionary(rng.normal(0.0, scale, size=(k, p)), l1=l1, l2=l2)


def check_simplex(alpha: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if np.any(alpha < -tol) or np.any(np.abs(alpha.sum(axis=-1) - 1.0) > tol):
        raise InvalidInputError("attention vector is not on the probability simplex")


def attention_compose(alpha, D) -> np.ndarray:
    """Explanation parameters ``theta = alpha^T D`` (works on batches of alpha)."""
    alpha = as_array(alpha, "alpha")
    D = D.D if isinstance(D, Dictionary) else as_array(D, "D", ndim=2)
    if alpha.shape[-1] != D.shape[0]:
        raise InvalidInputError(f"attention has {alpha.shape[-1]} entries, dictionary has {D.shape[0]} atoms")
    check_simplex(alpha)
    return alpha @ D
