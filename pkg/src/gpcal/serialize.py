"""Versioned JSON serialization for trained models plus run-manifest helpers.

All file writes go through :func:`atomic_write_text`: content lands in a
``.partial`` sibling first and is renamed into place, so a crashed run never
leaves a truncated file under the final name.
"""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__, gp
from .calibration import ImplicitCalibration
from .mlp import MlpConfig, MlpModel, MlpSpec

MODEL_SCHEMA_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".partial"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _array(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _standardization_to_dict(st: gp.StandardizationParams) -> dict:
    return {
        "input_means": _array(st.input_means),
        "input_scales": _array(st.input_scales),
        "target_mean": float(st.target_mean),
        "target_scale": float(st.target_scale),
    }


def _standardization_from_dict(d: dict) -> gp.StandardizationParams:
    return gp.StandardizationParams(
        np.array(d["input_means"]), np.array(d["input_scales"]),
        float(d["target_mean"]), float(d["target_scale"]),
    )


def _fitted_gp_to_dict(model: gp.FittedGP) -> dict:
    # raw-unit training data plus the standardization used at fit time;
    # the Cholesky factor is recomputed on load
    st = model.standardization
    return {
        "kernel": {"family": model.kernel.family, "input_dim": model.kernel.input_dim},
        "hyperparameters": {
            "outputscale": model.hyper.outputscale,
            "lengthscales": _array(model.hyper.lengthscales),
            "noise_variance": model.hyper.noise_variance,
        },
        "standardization": _standardization_to_dict(st),
        "train_inputs": _array(model.dataset.inputs * st.input_scales + st.input_means),
        "train_targets": _array(model.dataset.targets * st.target_scale + st.target_mean),
    }


def _fitted_gp_from_dict(d: dict) -> gp.FittedGP:
    spec = gp.KernelSpec(d["kernel"]["family"], int(d["kernel"]["input_dim"]))
    hyper = gp.Hyperparameters(
        outputscale=float(d["hyperparameters"]["outputscale"]),
        lengthscales=np.array(d["hyperparameters"]["lengthscales"]),
        noise_variance=float(d["hyperparameters"]["noise_variance"]),
    )
    st = _standardization_from_dict(d["standardization"])
    X = np.array(d["train_inputs"], dtype=float)
    y = np.array(d["train_targets"], dtype=float)
    return gp.condition(gp.Dataset(X, y), spec, hyper, standardization=st)


def calibration_to_dict(model: ImplicitCalibration) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_type": "gp_calibration",
        "camera_count": model.camera_count,
        "uncertainty": "latent-std, mean over xyz axes (observation noise excluded)",
        "axes": {
            "x": _fitted_gp_to_dict(model.gp_x),
            "y": _fitted_gp_to_dict(model.gp_y),
            "z": _fitted_gp_to_dict(model.gp_z),
        },
    }


def calibration_from_dict(doc: dict) -> ImplicitCalibration:
    if doc.get("model_type") != "gp_calibration":
        raise ValueError(f"not a GP calibration document: {doc.get('model_type')!r}")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')!r}")
    axes = doc["axes"]
    return ImplicitCalibration(
        gp_x=_fitted_gp_from_dict(axes["x"]),
        gp_y=_fitted_gp_from_dict(axes["y"]),
        gp_z=_fitted_gp_from_dict(axes["z"]),
        camera_count=int(doc["camera_count"]),
    )


def mlp_to_dict(model: MlpModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_type": "mlp_calibration",
        "spec": {
            "input_dim": model.spec.input_dim,
            "hidden": list(model.spec.hidden),
            "output_dim": model.spec.output_dim,
            "negative_slope": model.spec.negative_slope,
            "dropout_rate": model.spec.dropout_rate,
        },
        "training": {
            "learning_rate": model.config.learning_rate,
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
            "seed": model.config.seed,
        },
        "weights": [_array(W) for W in model.weights],
        "biases": [_array(b) for b in model.biases],
        "input_means": _array(model.input_means),
        "input_scales": _array(model.input_scales),
        "target_means": _array(model.target_means),
        "target_scales": _array(model.target_scales),
    }


def mlp_from_dict(doc: dict) -> MlpModel:
    if doc.get("model_type") != "mlp_calibration":
        raise ValueError(f"not an MLP document: {doc.get('model_type')!r}")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')!r}")
    spec = MlpSpec(
        input_dim=int(doc["spec"]["input_dim"]),
        hidden=tuple(doc["spec"]["hidden"]),
        output_dim=int(doc["spec"]["output_dim"]),
        negative_slope=float(doc["spec"]["negative_slope"]),
        dropout_rate=float(doc["spec"]["dropout_rate"]),
    )
    cfg = MlpConfig(
        learning_rate=float(doc["training"]["learning_rate"]),
        epochs=int(doc["training"]["epochs"]),
        batch_size=doc["training"]["batch_size"],
        seed=int(doc["training"]["seed"]),
    )
    return MlpModel(
        spec=spec,
        config=cfg,
        weights=[np.array(W) for W in doc["weights"]],
        biases=[np.array(b) for b in doc["biases"]],
        input_means=np.array(doc["input_means"]),
        input_scales=np.array(doc["input_scales"]),
        target_means=np.array(doc["target_means"]),
        target_scales=np.array(doc["target_scales"]),
    )


def build_manifest(command: str, config: dict, metrics: dict, out_dir, files: list) -> dict:
    """Run manifest: config echo, code version, timestamps, file inventory."""
    inventory = []
    for name in sorted(files):
        path = os.path.join(out_dir, name)
        inventory.append({"path": name, "sha256": sha256_file(path), "bytes": os.path.getsize(path)})
    return {
        "command": command,
        "config": config,
        "package_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "metrics": metrics,
        "files": inventory,
    }
