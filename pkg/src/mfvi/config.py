"""Experiment configuration: a JSON document with a fixed schema.

A config fully determines a pipeline run (dataset, splits, observation
specs, architectures, schedules, seed), and its fingerprint keys stage
skipping and reproducibility checks. Any leaf can be overridden from the
environment with MFVI_-prefixed variables, nested keys joined by double
underscores (e.g. ``MFVI_SPLITS__K=500``).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .degradations import DegradationSpec
from .errors import ConfigurationError

SCHEMA_VERSION = 1
ENV_PREFIX = "MFVI_"

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "task": "blur_digits",
    "dataset": {"kind": "synthetic_digits", "n": 2000, "image_size": 28, "path": None},
    "splits": {"K": 200, "L": 1500, "test_n": 200},
    "true_spec": {"kind": "blur", "sigma_psf": 2.0, "snr_db": 16.0},
    "lowfid_spec": {"kind": "blur", "sigma_psf": 1.5},
    "forward": {
        "latent_dim": 24,
        "hidden": [128],
        "n_iter": 1200,
        "batch_size": 50,
        "learning_rate": 1e-3,
    },
    "inverse": {
        "latent_dim": 48,
        "hidden": [256],
        "n_iter": 2500,
        "batch_size": 50,
        "learning_rate": 1e-3,
    },
    "baselines": [],
    "eval": {"n_posterior_draws": 25, "n_grid_examples": 6, "n_grid_draws": 3},
    "seed": 0,
    "dtype": "float32",
    "out_dir": "runs/experiment",
}


def _deep_update(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    """Validated view over the config document."""

    doc: dict = field(default_factory=dict)

    def __post_init__(self):
        self.doc = _deep_update(_DEFAULTS, self.doc or {})
        self.validate()

    # ------------------------------------------------------------ accessors

    def __getitem__(self, key):
        return self.doc[key]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def true_spec(self) -> DegradationSpec:
        return DegradationSpec.from_dict(self.doc["true_spec"])

    @property
    def lowfid_spec(self) -> DegradationSpec:
        return DegradationSpec.from_dict(self.doc["lowfid_spec"])

    @property
    def out_dir(self) -> Path:
        return Path(self.doc["out_dir"])

    # ------------------------------------------------------------ validation

    def validate(self):
        doc = self.doc
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported schema_version {doc['schema_version']}"
            )
        splits = doc["splits"]
        K, L, test_n = int(splits["K"]), int(splits["L"]), int(splits["test_n"])
        if min(K, L, test_n) < 0:
            raise ConfigurationError("split sizes must be non-negative")
        ds = doc["dataset"]
        if ds["kind"] not in ("synthetic_digits", "idx"):
            raise ConfigurationError(f"unknown dataset kind {ds['kind']!r}")
        if ds["kind"] == "idx":
            if not ds.get("path"):
                raise ConfigurationError("idx dataset requires a path")
            if not Path(ds["path"]).exists():
                raise ConfigurationError(f"dataset path {ds['path']} does not exist")
        elif K + L + test_n > int(ds["n"]):
            raise ConfigurationError(
                f"splits K+L+test={K + L + test_n} exceed dataset n={ds['n']}"
            )
        true_spec, lowfid = self.true_spec, self.lowfid_spec
        if true_spec.kind != lowfid.kind:
            raise ConfigurationError(
                f"true ({true_spec.kind}) and lowfid ({lowfid.kind}) specs "
                "must share a kind"
            )
        if str(doc["dtype"]) not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32/float64, got {doc['dtype']}")
        from .baselines import CVAE_KINDS

        for kind in doc["baselines"]:
            if kind not in CVAE_KINDS:
                raise ConfigurationError(f"unknown baseline kind {kind!r}")

    # ------------------------------------------------------------ round trip

    def to_json(self, indent: int = 1) -> str:
        return json.dumps(self.doc, indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        return cls(doc)

    @classmethod
    def load(cls, path, environ=None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_json(text)
        return cfg.with_env_overrides(environ if environ is not None else os.environ)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def replace(self, **groups) -> "ExperimentConfig":
        """New config with group-level dict overrides merged in."""
        return ExperimentConfig(_deep_update(self.doc, groups))

    # ------------------------------------------------------------ overrides

    def with_env_overrides(self, environ) -> "ExperimentConfig":
        overrides = {}
        for name, raw in environ.items():
            if not name.startswith(ENV_PREFIX):
                continue
            path = name[len(ENV_PREFIX) :].lower().split("__")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = overrides
            for key in path[:-1]:
                node = node.setdefault(key, {})
            node[path[-1]] = value
        if not overrides:
            return self
        return ExperimentConfig(_deep_update(self.doc, overrides))

    # ------------------------------------------------------------ identity

    def fingerprint(self) -> str:
        """Hash of everything that affects results (out_dir excluded)."""
        doc = {k: v for k, v in self.doc.items() if k != "out_dir"}
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
