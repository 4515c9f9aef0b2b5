"""Checkpoint persistence: a JSON manifest plus a little-endian binary blob.

The manifest records the model class, constructor parameters, per-network
layouts into the flat parameter vector, and the blob's dtype/count/sha256.
Loading validates that the blob byte length equals count * element size.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .degradations import DegradationSpec
from .errors import ConfigurationError, InvalidInputError
from .forward_model import MultiFidelityForwardModel
from .inverse_model import VariationalInverseModel

FORMAT_VERSION = 1

_FORWARD_NETS = ("alpha1", "alpha2", "beta")
_INVERSE_NETS = ("theta1", "theta2", "phi")


def _json_safe(value):
    if isinstance(value, DegradationSpec):
        return {"__degradation__": value.to_dict()}
    if isinstance(value, MultiFidelityForwardModel):
        return {"__forward_model__": True}
    if callable(value):
        return {"__callable__": getattr(value, "__name__", "callable")}
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _restore_param(value):
    if isinstance(value, dict):
        if "__degradation__" in value:
            return DegradationSpec.from_dict(value["__degradation__"])
        if "__forward_model__" in value or "__callable__" in value:
            return None  # samplers are not serialized; refit requires re-wiring
    return value


def model_manifest(model) -> dict:
    """Architecture/configuration manifest of a fitted model (no weights)."""
    if isinstance(model, MultiFidelityForwardModel):
        net_names, specs = _FORWARD_NETS, (
            model.alpha1_spec_,
            model.alpha2_spec_,
            model.beta_spec_,
        )
        extra = {
            "lowfid_dim": int(model.lowfid_dim_),
            "measurement_shape": list(model.measurement_shape_),
        }
    elif isinstance(model, VariationalInverseModel):
        net_names, specs = _INVERSE_NETS, (
            model.theta1_spec_,
            model.theta2_spec_,
            model.phi_spec_,
        )
        extra = {"n_paired": int(model.n_paired_)}
    else:
        raise ConfigurationError(f"cannot checkpoint {type(model).__name__}")
    offsets = model._net_offsets_
    nets = [
        {
            "name": name,
            "layer_widths": list(spec.layer_widths),
            "activation": spec.activation,
            "offset": int(lo),
            "count": int(hi - lo),
        }
        for name, spec, lo, hi in zip(net_names, specs, offsets[:-1], offsets[1:])
    ]
    return {
        "format_version": FORMAT_VERSION,
        "model_class": type(model).__name__,
        "params": {k: _json_safe(v) for k, v in model.get_params(deep=False).items()},
        "nets": nets,
        "image_shape": list(model.image_shape_),
        "measurement_dim": int(model.measurement_dim_),
        "seed": int(model.seed),
        **extra,
    }


def save_model(model, directory) -> dict:
    """Write manifest.json + weights.bin; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = model_manifest(model)
    flat = np.ascontiguousarray(model.params_)
    le_dtype = "<f4" if flat.dtype == np.float32 else "<f8"
    blob = flat.astype(le_dtype).tobytes()
    manifest["blob"] = {
        "file": "weights.bin",
        "dtype": le_dtype,
        "count": int(flat.size),
        "byte_length": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (directory / "weights.bin").write_bytes(blob)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_model(directory):
    """Reconstruct a fitted model from a checkpoint directory."""
    directory = Path(directory)
    try:
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint format {manifest.get('format_version')}"
        )
    blob_info = manifest["blob"]
    blob = (directory / blob_info["file"]).read_bytes()
    itemsize = np.dtype(blob_info["dtype"]).itemsize
    if len(blob) != blob_info["count"] * itemsize:
        raise InvalidInputError(
            f"blob length {len(blob)} != declared count {blob_info['count']} "
            f"* element size {itemsize}"
        )
    if hashlib.sha256(blob).hexdigest() != blob_info["sha256"]:
        raise InvalidInputError("blob checksum mismatch")
    flat = np.frombuffer(blob, dtype=blob_info["dtype"]).astype(
        np.float32 if blob_info["dtype"] == "<f4" else np.float64
    )

    params = {k: _restore_param(v) for k, v in manifest["params"].items()}
    for key in ("hidden",):
        if isinstance(params.get(key), list):
            params[key] = tuple(params[key])

    from . import nnet

    cls = {
        "MultiFidelityForwardModel": MultiFidelityForwardModel,
        "VariationalInverseModel": VariationalInverseModel,
    }.get(manifest["model_class"])
    if cls is None:
        raise ConfigurationError(f"unknown model class {manifest['model_class']}")
    if cls is MultiFidelityForwardModel:
        params = {k: v for k, v in params.items() if k != "lowfid"} | {
            "lowfid": _restore_param(manifest["params"].get("lowfid"))
        }
    model = cls(**params)

    net_names = _FORWARD_NETS if cls is MultiFidelityForwardModel else _INVERSE_NETS
    offsets = [0]
    for name, net in zip(net_names, manifest["nets"]):
        spec = nnet.MLPSpec(tuple(net["layer_widths"]), net["activation"])
        setattr(model, f"{name}_spec_", spec)
        offsets.append(net["offset"] + net["count"])
    model._net_offsets_ = np.asarray(offsets)
    model.params_ = flat.copy()
    model.image_shape_ = tuple(manifest["image_shape"])
    model.n_pixels_ = int(np.prod(model.image_shape_))
    model.measurement_dim_ = int(manifest["measurement_dim"])
    model.trace_ = np.zeros((0, 4))
    if cls is MultiFidelityForwardModel:
        model.lowfid_dim_ = int(manifest["lowfid_dim"])
        model.measurement_shape_ = tuple(manifest["measurement_shape"])
    else:
        model.n_paired_ = int(manifest["n_paired"])
    return model
