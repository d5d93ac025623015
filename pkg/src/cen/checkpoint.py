"""Versioned JSON checkpoints.

Layout::

    {"format": "cen-checkpoint", "version": 1, "byte_order": "little",
     "config": {...}, "params": {name: {"shape": [...], "dtype": "<f8",
     "data": base64 of the C-order little-endian float64 bytes}}}

``config`` holds everything needed to rebuild the model skeleton (family,
encoder kind and sizes, dictionary size, regularisation) plus any extra
metadata such as the preprocessing plan.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from cen.encoders import Dictionary, MlpEncoder, RecurrentEncoder
from cen.errors import InvalidInputError
from cen.model import CenModel, MlpClassifier, Regularization

FORMAT = "cen-checkpoint"
VERSION = 1
DTYPE = "<f8"


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=DTYPE)
    return {"shape": list(arr.shape), "dtype": DTYPE,
            "data": base64.b64encode(arr.tobytes(order="C")).decode("ascii")}


def decode_array(blob: dict) -> np.ndarray:
    if blob.get("dtype") != DTYPE:
        raise InvalidInputError(f"unsupported dtype {blob.get('dtype')!r}")
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype=DTYPE).astype(np.float64)
    shape = tuple(int(s) for s in blob["shape"])
    if arr.size != int(np.prod(shape)):
        raise InvalidInputError(f"checkpoint array has {arr.size} values for shape {shape}")
    return arr.reshape(shape)


def model_config(model) -> dict:
    if isinstance(model, MlpClassifier):
        return {"kind": "mlp-classifier", "inputs": model.inputs, "n_classes": model.n_classes,
                "l2": model.l2, "layers": len(model.encoder.weights), "dropout": model.encoder.dropout}
    enc = model.encoder
    if enc is None:
        enc_kind, layers, dropout = "constant", 0, 0.0
    elif isinstance(enc, RecurrentEncoder):
        enc_kind, layers, dropout = "recurrent", 0, 0.0
    else:
        enc_kind, layers, dropout = "mlp", len(enc.weights), enc.dropout
    d = model.dictionary
    return {
        "kind": "cen", "family": model.family, "d_x": model.d_x, "n_classes": model.n_classes,
        "m": model.m, "encoder": enc_kind, "layers": layers, "dropout": dropout,
        "dictionary": d is not None, "l1_dict": d.l1 if d else 0.0, "l2_dict": d.l2 if d else 0.0,
        "reg": dict(model.reg.__dict__), "mixing": model.mixing, "learn_omega": model.learn_omega,
        "omega": model.omega.tolist(),
    }


def save(model, path, extra: dict | None = None) -> None:
    params = model.parameters()
    payload = {"format": FORMAT, "version": VERSION, "byte_order": "little",
               "config": model_config(model), "extra": extra or {},
               "params": {k: encode_array(v) for k, v in sorted(params.items())}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def _mlp_from(params: dict, prefix: str, layers: int, dropout: float) -> MlpEncoder:
    return MlpEncoder([params[f"{prefix}W{i}"] for i in range(layers)],
                      [params[f"{prefix}b{i}"] for i in range(layers)], dropout)


def load(path) -> tuple:
    """Return ``(model, extra)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidInputError(f"cannot read checkpoint {path}: {err}") from err
    if payload.get("format") != FORMAT:
        raise InvalidInputError(f"{path} is not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = payload["config"]
    params = {k: decode_array(v) for k, v in payload["params"].items()}
    if cfg["kind"] == "mlp-classifier":
        enc = _mlp_from(params, "enc.", cfg["layers"], cfg["dropout"])
        return MlpClassifier(enc, cfg["inputs"], cfg["n_classes"], cfg["l2"]), payload.get("extra", {})
    if cfg["encoder"] == "mlp":
        enc = _mlp_from(params, "enc.", cfg["layers"], cfg["dropout"])
    elif cfg["encoder"] == "recurrent":
        enc = RecurrentEncoder(**{n: params[f"enc.{n}"] for n in RecurrentEncoder._NAMES})
    else:
        enc = None
    dictionary = None
    if cfg["dictionary"]:
        dictionary = Dictionary(params["dict.D"], cfg["l1_dict"], cfg["l2_dict"])
    omega = params.get("omega", np.asarray(cfg["omega"], dtype=np.float64))
    model = CenModel(cfg["family"], cfg["d_x"], encoder=enc, dictionary=dictionary,
                     n_classes=cfg["n_classes"], m=cfg["m"], reg=Regularization(**cfg["reg"]),
                     theta0=params.get("theta0"), omega=omega, learn_omega=cfg["learn_omega"],
                     mixing=cfg["mixing"])
    return model, payload.get("extra", {})
