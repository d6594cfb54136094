"""Flat key-value run configuration.

Format: one ``key = value`` per line, ``#`` comments.  List-valued keys
(methods, n_fl, delta) take comma-separated entries.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .errors import ValidationError

KNOWN_METHODS = ("greedy", "uniform", "levscore", "kmeans", "sampling")
DETERMINISTIC_METHODS = ("greedy", "kmeans")


@dataclass
class RunConfig:
    """Everything a pipeline run needs; see the benchmark config for a sample."""

    surface_mesh: str = ""
    volume_nodes: str = ""
    volume_elements: str = ""
    fixed_nodes: str = ""
    contact_region: str = ""
    young_modulus: float = 1e9
    poisson_ratio: float = 0.3
    footprint_radius_rel: float = 0.02
    force_magnitude: float = 1.0
    basis_size: int = 15
    basis_which: str = "smallest"
    method: str = "greedy"
    methods: list[str] = field(
        default_factory=lambda: list(KNOWN_METHODS))
    n_fl: list[int] = field(default_factory=lambda: [25])
    top_k: int = 40
    delta: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1])
    seed: int = 0
    trials: int = 10
    armijo_alpha: float = 0.3
    armijo_beta: float = 0.5
    potential_alpha: float = 1.0
    cache_dir: str = ""
    output_dir: str = "out"

    def validate(self) -> None:
        for key in ("surface_mesh", "volume_nodes", "volume_elements",
                    "fixed_nodes", "contact_region"):
            path = getattr(self, key)
            if not path:
                raise ValidationError(f"config key {key} is required")
            if not os.path.exists(path):
                raise ValidationError(f"{key}: no such file {path!r}")
        if self.basis_size < 1:
            raise ValidationError("basis_size must be >= 1")
        if any(d < 0 for d in self.delta):
            raise ValidationError("delta values must be >= 0")
        if any(n < 1 for n in self.n_fl):
            raise ValidationError("n_fl values must be >= 1")
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if self.method not in KNOWN_METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ValidationError(f"unknown method {m!r} in methods")

    def effective_cache_dir(self) -> str | None:
        env = os.environ.get("WCL_CACHE_DIR")
        if env:
            return env
        return self.cache_dir or None


_LIST_KEYS = {"methods": str, "n_fl": int, "delta": float}
_INT_KEYS = {"basis_size", "top_k", "seed", "trials"}
_FLOAT_KEYS = {"young_modulus", "poisson_ratio", "footprint_radius_rel",
               "force_magnitude", "armijo_alpha", "armijo_beta",
               "potential_alpha"}


def parse_config(path: str) -> RunConfig:
    """Parse and validate a flat key-value config file."""
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig()
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                if key in _LIST_KEYS:
                    cast = _LIST_KEYS[key]
                    parsed = [cast(tok.strip())
                              for tok in value.split(",") if tok.strip()]
                elif key in _INT_KEYS:
                    parsed = int(value)
                elif key in _FLOAT_KEYS:
                    parsed = float(value)
                else:
                    parsed = value
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
            setattr(cfg, key, parsed)

    # Resolve mesh paths relative to the config file location.
    for key in ("surface_mesh", "volume_nodes", "volume_elements",
                "fixed_nodes", "contact_region", "cache_dir", "output_dir"):
        value = getattr(cfg, key)
        if value and not os.path.isabs(value):
            setattr(cfg, key, os.path.join(base, value))
    cfg.validate()
    return cfg
