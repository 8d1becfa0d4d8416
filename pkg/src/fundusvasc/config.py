"""Run configuration: one flat, JSON-serializable parameter block.

Unknown keys in a config file are rejected so typos fail loudly instead of
silently running with defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import prep, vesselgeom, vesselgraph


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class RunConfig:
    # geometric normalization
    out_size: int = prep.OUT_SIZE
    big_cut_fraction: float = prep.BIG_CUT_FRACTION
    # contrast enhancement
    enhance_sigma_fraction: float = prep.ENHANCE_SIGMA_FRACTION
    enhance_alpha: float = prep.ENHANCE_ALPHA
    # prediction fusion
    tta: str = "full"  # none | horizontal | vertical | full
    # feature extraction
    cre_radius: float = 3.0
    delta: float = 10.0
    width_step: float = vesselgeom.WIDTH_STEP
    inflection_eps: float = vesselgeom.INFLECTION_EPS
    curvature_step: float = vesselgeom.CURVATURE_STEP
    curvature_scale: float = 1.0
    prune_len: float = vesselgraph.PRUNE_LEN
    min_chain_points: int = vesselgeom.MIN_CHAIN_POINTS
    exclude_disc_bifurcations: bool = True
    # execution
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        positive = (
            "out_size",
            "enhance_sigma_fraction",
            "enhance_alpha",
            "cre_radius",
            "delta",
            "width_step",
            "curvature_step",
            "min_chain_points",
            "threads",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("big_cut_fraction", "inflection_eps", "prune_len"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.tta not in ("none", "horizontal", "vertical", "full"):
            raise ConfigError(f"unknown tta set {self.tta!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def feature_config(self):
        from .biomarkers import FeatureConfig

        return FeatureConfig(
            cre_radius=self.cre_radius,
            delta=self.delta,
            width_step=self.width_step,
            inflection_eps=self.inflection_eps,
            curvature_step=self.curvature_step,
            curvature_scale=self.curvature_scale,
            prune_len=self.prune_len,
            min_chain_points=self.min_chain_points,
            exclude_disc_bifurcations=self.exclude_disc_bifurcations,
        )
