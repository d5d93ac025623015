"""Numerically stable reductions, shape checks, seeded RNG and a
finite-difference gradient oracle.

All arrays are ``float64`` numpy arrays. Random streams come from numpy's
``PCG64`` bit generator (128-bit permuted congruential generator) seeded
through ``SeedSequence``, so a given integer seed always replays the same
stream bit for bit.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from cen.errors import InvalidInputError

FD_EPS = 1e-5


def make_rng(seed: int | np.random.Generator | None = 0) -> np.random.Generator:
    """Return a PCG64 generator. Passing a generator returns it unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise InvalidInputError("an explicit seed is required for reproducibility")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def child_seed(seed: int, *key: int) -> int:
    """Deterministic, well-separated integer seed derived from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_array(value, name: str = "array", ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str = "array") -> None:
    """Raise unless ``arr.shape`` matches ``shape`` (``None`` entries are wildcards)."""
    if arr.ndim != len(shape) or any(
        want is not None and got != want for got, want in zip(arr.shape, shape)
    ):
        raise InvalidInputError(f"{name}: expected shape {shape}, got {arr.shape}")


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")


def validate_params(params: Mapping[str, np.ndarray]) -> None:
    """Reject any parameter tensor holding NaN/Inf."""
    for key, value in params.items():
        check_finite(value, key)


def softmax(v, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidInputError("softmax of an empty array")
    check_finite(v, "softmax input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_sum_exp(v, axis: int = -1) -> np.ndarray | float:
    """``log(sum(exp(v)))`` along ``axis`` with the max factored out.

    Entries equal to ``-inf`` are allowed (they contribute zero mass) as long as
    each slice has at least one finite entry.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise InvalidInputError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("log_sum_exp needs at least one finite entry per slice")
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(v - m), axis=axis))
    return float(out) if np.ndim(out) == 0 else out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v - np.expand_dims(log_sum_exp(v, axis=axis), axis)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p, clip: float = 1e-6):
    p = np.clip(np.asarray(p, dtype=np.float64), clip, 1.0 - clip)
    return np.log(p) - np.log1p(-p)


def fd_gradient(f: Callable[[np.ndarray], float], p, eps: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``p``."""
    p = np.array(p, dtype=np.float64, copy=True)
    flat = p.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(p)
        flat[i] = orig - eps
        lo = f(p)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise InvalidInputError(f"non-finite function value while perturbing coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(p.shape)


def relative_error(analytic, numeric) -> float:
    """``max_i |a_i - n_i| / (1 + |n_i|)``; the comparison used for gradient checks."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / (1.0 + np.abs(n))))


def flatten_params(params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Concatenate parameter tensors in key-sorted order."""
    keys = sorted(params)
    if not keys:
        return np.zeros(0)
    return np.concatenate([np.ravel(params[k]) for k in keys])


def unflatten_into(params: Mapping[str, np.ndarray], flat: np.ndarray) -> None:
    """Inverse of :func:`flatten_params`; writes in place."""
    offset = 0
    for k in sorted(params):
        size = params[k].size
        params[k][...] = flat[offset:offset + size].reshape(params[k].shape)
        offset += size
    if offset != flat.size:
        raise InvalidInputError(f"flat vector has {flat.size} entries, parameters need {offset}")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """``U(-s, s)`` with ``s = sqrt(6 / (fan_in + fan_out))``, shaped (fan_out, fan_in)."""
    total = fan_in + fan_out
    s = np.sqrt(6.0 / total) if total > 0 else 0.0
    return rng.uniform(-s, s, size=(fan_out, fan_in))
