"""Versioned JSON checkpoints with bit-exact array payloads.

Arrays are stored as base64 of their little-endian float64 bytes, so a
save/load round trip is lossless.  Writes go to a temporary file in the
target directory and are renamed into place, so a reader never sees a
half-written checkpoint.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .classifier import ClassifierHead
from .embedding import LabelEncoder
from .model import DenModel, ModelConfig
from .nn import DenseNet
from .plf import PLF, PLFBank

FORMAT = "den-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        shape = tuple(int(s) for s in obj["shape"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"malformed array record: {err}") from None
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"array payload of {len(raw)} bytes does not fit shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _net_to_dict(net: DenseNet) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "activations": list(net.activations),
        "weights": [encode_array(w) for w in net.weights],
        "biases": [encode_array(b) for b in net.biases],
    }


def _net_from_dict(obj: dict) -> DenseNet:
    return DenseNet(
        [int(x) for x in obj["layer_dims"]],
        [decode_array(w) for w in obj["weights"]],
        [decode_array(b) for b in obj["biases"]],
        list(obj["activations"]),
    )


def bank_to_dict(bank: PLFBank) -> list[dict]:
    return [
        {"keypoints": encode_array(p.keypoints), "alpha": encode_array(p.alpha), "monotonic": p.monotonic}
        for p in bank.plfs
    ]


def bank_from_dict(obj: list[dict]) -> PLFBank:
    return PLFBank(
        [PLF(decode_array(p["keypoints"]), decode_array(p["alpha"]), bool(p["monotonic"])) for p in obj]
    )


def model_to_dict(model: DenModel) -> dict:
    out = {
        "format": FORMAT,
        "version": VERSION,
        "mode": model.mode,
        "config": model.config.to_dict(),
        "h": _net_to_dict(model.h),
        "phi": _net_to_dict(model.head.phi),
        "psi": None if model.head.psi is None else _net_to_dict(model.head.psi),
        "v": None if model.v is None else encode_array(model.v.table),
        "bank": None,
    }
    if model.bank is not None:
        out["bank"] = {"task_id": model.bank_task_id, "plfs": bank_to_dict(model.bank)}
    return out


def model_from_dict(obj: dict) -> DenModel:
    if not isinstance(obj, dict) or obj.get("format") != FORMAT:
        raise CheckpointError("not a checkpoint (missing format tag)")
    if obj.get("version") != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {obj.get('version')!r} is not supported (expected {VERSION})"
        )
    try:
        config = ModelConfig(**obj["config"])
        if obj["mode"] != config.mode:
            raise CheckpointError("mode field disagrees with the stored config")
        h = _net_from_dict(obj["h"])
        phi = _net_from_dict(obj["phi"])
        psi = None if obj["psi"] is None else _net_from_dict(obj["psi"])
        v = None if obj["v"] is None else LabelEncoder(decode_array(obj["v"]))
        model = DenModel(config, h, ClassifierHead(phi, psi), v)
        if obj["bank"] is not None:
            model.bank = bank_from_dict(obj["bank"]["plfs"])
            model.bank_task_id = obj["bank"]["task_id"]
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"inconsistent checkpoint: {err}") from None
    _check_shapes(model)
    return model


def _check_shapes(model: DenModel) -> None:
    c = model.config
    want_h = c.r + (c.m if c.mode == "multiclass" else 0)
    if model.h.in_dim != want_h:
        raise CheckpointError(f"h takes {model.h.in_dim} inputs, config implies {want_h}")
    width = 2 * model.h.out_dim + 1 if c.mode == "binary" else model.h.out_dim
    if model.head.phi.in_dim != c.r + width:
        raise CheckpointError("phi input width does not match the embedding width")
    if c.mode == "binary" and (model.head.psi is None or model.head.psi.in_dim != model.head.phi.out_dim):
        raise CheckpointError("psi is missing or does not match phi's output")
    if c.mode == "multiclass" and (model.v is None or model.v.table.shape != (c.L_max, c.m)):
        raise CheckpointError("label encoder is missing or has the wrong shape")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_checkpoint(model: DenModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> DenModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: corrupt or truncated checkpoint ({err.msg})") from None
    return model_from_dict(obj)
