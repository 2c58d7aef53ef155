"""Run configuration shared by the command-line tools and scripts."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .shading import ShadowConfig

# subcommands that draw random numbers and therefore need an explicit seed
SEEDED = ("forge", "fit-bg")


@dataclass
class RunConfig:
    subcommand: str = ""
    inputs: dict = field(default_factory=dict)    # name -> path read by the subcommand
    outputs: dict = field(default_factory=dict)   # name -> path written by the subcommand
    K: int = 32
    equirect: tuple | None = None                 # (W, H) one cell per env pixel instead of K bands
    seed: int | None = None
    samples_per_cell: int = 8
    ray_step: float | None = None
    max_ray_distance: float | None = None
    shadow_bias: float | None = None
    ground_plane: tuple | None = None
    shadows: bool = True
    ridge_lambda: float = 1e-2
    grid: tuple = (16, 12)
    out_size: tuple = (128, 96)                   # object render size, width x height
    crop_size: tuple = (160, 120)                 # background crop size, width x height
    env_size: tuple = (64, 32)
    fov_deg: float = 60.0
    window_radius: int = 2
    eps: float = 1e-3
    threads: int = 1

    def shadow_config(self) -> ShadowConfig:
        return ShadowConfig(samples_per_cell=self.samples_per_cell, ray_step=self.ray_step,
                            max_ray_distance=self.max_ray_distance, shadow_bias=self.shadow_bias,
                            ground_plane=self.ground_plane, shadows=self.shadows)

    def validate(self) -> None:
        """Check everything that can be checked before any work starts."""
        if self.subcommand in SEEDED and self.seed is None:
            raise ValueError("--seed is required")
        if self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        if self.samples_per_cell < 1:
            raise ValueError(f"samples_per_cell must be at least 1, got {self.samples_per_cell}")
        if self.ridge_lambda < 0:
            raise ValueError(f"ridge lambda must be nonnegative, got {self.ridge_lambda}")
        if not 0 < self.fov_deg < 180:
            raise ValueError(f"fov must be in (0, 180), got {self.fov_deg}")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")
        for name, path in self.inputs.items():
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(f"{name}: {path} does not exist")

    def dump(self) -> str:
        return json.dumps(asdict(self), indent=1, default=str)
