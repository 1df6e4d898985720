"""Run configuration: defaults, JSON config file, CLI overrides (in that order)."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .defocus import DefocusParams
from .synthcam import CameraParams

SCHEMA_VERSION = 1


def _defaults() -> dict:
    return {
        "seed": 0,
        "jobs": 1,
        "out_dir": "out",
        "defocus": DefocusParams().to_dict(),
        "camera": CameraParams().to_dict(),
        "synth": {"n_real": 100, "n_fake": 100, "size": 96, "layers": 8},
        "estimate": {"warmup": 5},
        "analysis": {
            "window": 7,
            "threshold": 0.1,
            "thresholds": [0.1, 0.01, 0.001, 0.0001],
            "normalization": "sigma_max",
        },
        "alignment": {"n_bins": 20, "epsilon": 1e-10, "pooled": False, "png_signed": False},
        "classify": {"lr": 0.5, "epochs": 500, "l2": 1e-3, "threshold": 0.5, "split_seed": 0,
                     "split": [0.70, 0.15, 0.15]},
        "bench": {"warmup": 5, "reps": 30},
    }


@dataclass
class RunConfig:
    values: dict = field(default_factory=_defaults)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, dotted: str):
        node = self.values
        for part in dotted.split("."):
            node = node[part]
        return node

    def set(self, dotted: str, value):
        node = self.values
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value

    def merge(self, overrides: dict):
        _deep_update(self.values, overrides)
        return self

    @property
    def defocus(self) -> DefocusParams:
        return DefocusParams.from_dict(self.values["defocus"])

    @property
    def camera(self) -> CameraParams:
        return CameraParams(**self.values["camera"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            with open(path) as fh:
                file_values = json.load(fh)
            unknown = set(file_values) - set(cfg.values)
            if unknown:
                raise ValueError(f"unknown config sections: {sorted(unknown)}")
            cfg.merge(file_values)
        for dotted, value in (overrides or {}).items():
            if value is not None:
                cfg.set(dotted, value)
        # validate eagerly so bad values fail before any work starts
        cfg.defocus
        cfg.camera
        return cfg


def _deep_update(dst: dict, src: dict):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = copy.deepcopy(v)
