"""Pipeline configuration: defaults and the plain-text config file format.

The file format is one ``key = value`` per line, ``#`` comments. Unknown
keys are errors on purpose: a silently ignored hyperparameter typo would
invalidate any comparison made with the run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError


@dataclass
class PipelineConfig:
    timestep: int = 50
    layers: tuple = (2, 5, 8, 11)
    match_layer: int = 2
    pca_dim: int = 64
    clusters: int = 200
    top_k: int = 10
    kernel: int = 3
    crop_size: int = 128
    n_templates: int = 300
    ransac_px: float = 3.0
    pnp_iters: int = 1000
    cluster_sim_floor: float = 0.5
    sampson_thresh: float = 2.0
    seed: int = 0
    crop_margin: float = 0.1
    coprojection: str = "joint"  # "independent" disables the shared basis (ablation)
    record_time: bool = False  # wall time in the CSV breaks byte-determinism

    def __post_init__(self):
        self.layers = tuple(int(l) for l in self.layers)
        positive = (
            "timestep",
            "match_layer",
            "pca_dim",
            "clusters",
            "top_k",
            "kernel",
            "crop_size",
            "n_templates",
            "ransac_px",
            "pnp_iters",
            "cluster_sim_floor",
            "sampson_thresh",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.layers or any(l <= 0 for l in self.layers):
            raise ConfigError("layers must be a non-empty list of positive indices")
        if self.match_layer not in self.layers:
            raise ConfigError(f"match_layer {self.match_layer} not in layers {self.layers}")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")
        if self.coprojection not in ("joint", "independent"):
            raise ConfigError(f"coprojection must be joint or independent")
        if not 0 <= self.crop_margin < 1:
            raise ConfigError("crop_margin must lie in [0, 1)")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "layers":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if key in ("coprojection",):
        return raw
    if key in ("record_time",):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be true or false, got {raw!r}")
    if key in ("ransac_px", "cluster_sim_floor", "sampson_thresh", "crop_margin"):
        return float(raw)
    return int(raw)


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file; ``overrides`` (e.g. a CLI --seed) win over the file."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, raw)
    config = PipelineConfig(**values)
    if overrides:
        config = replace(config, **overrides)
    return config
