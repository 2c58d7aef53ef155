"""Random procedural skies tagged by illumination condition."""
from __future__ import annotations

import numpy as np

from .envlight import SkyParams

CONDITIONS = ("sunny", "sunrise/sunset", "cloudy", "night")


def _sun_dir(elev_deg: float, azim_deg: float) -> tuple:
    e, a = np.radians(elev_deg), np.radians(azim_deg)
    return (float(np.cos(e) * np.cos(a)), float(np.sin(e)), float(np.cos(e) * np.sin(a)))


def random_sky(rng: np.random.Generator, condition: str | None = None) -> SkyParams:
    """Sky whose up-facing irradiance is roughly unit scale (night much dimmer)."""
    if condition is None:
        condition = CONDITIONS[rng.choice(len(CONDITIONS), p=[0.4, 0.2, 0.3, 0.1])]
    azim = float(rng.uniform(0, 360))
    tint = rng.uniform(0.85, 1.15, size=3)
    if condition == "sunny":
        elev = rng.uniform(25, 70)
        sun = np.array([1.0, 0.95, 0.85]) * tint * rng.uniform(25, 45)
        zenith = np.array([0.08, 0.14, 0.32]) * rng.uniform(0.7, 1.3)
        horizon = np.array([0.22, 0.25, 0.30]) * rng.uniform(0.7, 1.3)
        ground = np.array([0.10, 0.09, 0.07]) * rng.uniform(0.6, 1.4)
        radius = rng.uniform(0.06, 0.12)
    elif condition == "sunrise/sunset":
        elev = rng.uniform(5, 20)
        sun = np.array([1.0, 0.55, 0.25]) * tint * rng.uniform(25, 45)
        zenith = np.array([0.10, 0.10, 0.22]) * rng.uniform(0.6, 1.2)
        horizon = np.array([0.35, 0.20, 0.12]) * rng.uniform(0.6, 1.2)
        ground = np.array([0.06, 0.04, 0.03]) * rng.uniform(0.6, 1.4)
        radius = rng.uniform(0.06, 0.12)
    elif condition == "cloudy":
        elev = rng.uniform(20, 70)
        sun = np.array([1.0, 1.0, 1.0]) * tint * rng.uniform(0.0, 3.0)
        zenith = np.array([0.30, 0.31, 0.33]) * tint * rng.uniform(0.6, 1.3)
        horizon = np.array([0.22, 0.22, 0.23]) * tint * rng.uniform(0.6, 1.3)
        ground = np.array([0.07, 0.07, 0.06]) * rng.uniform(0.6, 1.4)
        radius = rng.uniform(0.25, 0.45)
    elif condition == "night":
        elev = rng.uniform(20, 60)
        sun = np.array([0.7, 0.8, 1.0]) * tint * rng.uniform(0.5, 1.5)
        zenith = np.array([0.010, 0.015, 0.040]) * rng.uniform(0.6, 1.4)
        horizon = np.array([0.030, 0.025, 0.030]) * rng.uniform(0.6, 1.4)
        ground = np.array([0.010, 0.008, 0.006]) * rng.uniform(0.6, 1.4)
        radius = rng.uniform(0.04, 0.08)
    else:
        raise ValueError(f"unknown condition {condition!r}")
    return SkyParams(_sun_dir(elev, azim), tuple(map(float, sun)), float(radius),
                     tuple(map(float, zenith)), tuple(map(float, horizon)),
                     tuple(map(float, ground)), condition)
