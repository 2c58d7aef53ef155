"""Background illumination estimation by closed-form ridge regression."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envlight import BasisPartition, IlluminationDescriptor
from .shading import ShadingBases, compose_shading

DEFAULT_GRID = (16, 12)
DEFAULT_LAMBDA = 1e-2


def _block_edges(n: int, parts: int) -> np.ndarray:
    return (np.arange(parts + 1) * n) // parts


def extract_features(bg: np.ndarray, grid_w: int = DEFAULT_GRID[0],
                     grid_h: int = DEFAULT_GRID[1]) -> np.ndarray:
    """[grid row-major RGB block means..., mean RGB, p10 RGB, p90 RGB].

    Block j of n pixels spans [j*n // g, (j+1)*n // g).
    """
    bg = np.asarray(bg, dtype=np.float64)
    if bg.ndim != 3 or bg.shape[2] != 3 or bg.size == 0:
        raise ValueError(f"background must be a nonempty H x W x 3 image, got {bg.shape}")
    h, w = bg.shape[:2]
    if grid_h > h or grid_w > w:
        raise ValueError(f"{grid_w}x{grid_h} grid is finer than the {w}x{h} image")
    ye, xe = _block_edges(h, grid_h), _block_edges(w, grid_w)
    # summed-area table gives every block mean in one pass
    sat = np.zeros((h + 1, w + 1, 3))
    sat[1:, 1:] = bg.cumsum(0).cumsum(1)
    sums = sat[ye[1:]][:, xe[1:]] - sat[ye[:-1]][:, xe[1:]] - sat[ye[1:]][:, xe[:-1]] + sat[ye[:-1]][:, xe[:-1]]
    areas = np.diff(ye)[:, None, None] * np.diff(xe)[None, :, None]
    pix = bg.reshape(-1, 3)
    stats = [pix.mean(axis=0), np.percentile(pix, 10, axis=0), np.percentile(pix, 90, axis=0)]
    return np.concatenate([(sums / areas).ravel()] + stats)


def feature_layout(grid_w: int, grid_h: int) -> dict:
    return {"grid_w": grid_w, "grid_h": grid_h, "order": ["grid_rgb_row_major", "mean_rgb",
                                                          "p10_rgb", "p90_rgb"],
            "length": 3 * grid_w * grid_h + 9}


@dataclass
class BgEstimator:
    W: np.ndarray      # F x 3K
    bias: np.ndarray   # 3K
    partition: BasisPartition
    ridge_lambda: float
    grid: tuple = DEFAULT_GRID
    train_loss: float = float("nan")
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.partition.K

    def to_dict(self) -> dict:
        return {"K": self.K, "partition": self.partition.to_dict(), "lambda": self.ridge_lambda,
                "feature_layout": feature_layout(*self.grid), "seed": self.seed,
                "train_loss": self.train_loss, "W": self.W.ravel().tolist(),
                "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BgEstimator":
        part = BasisPartition.from_dict(d["partition"])
        if int(d["K"]) != part.K:
            raise ValueError(f"estimator K={d['K']} does not match its partition ({part.K} cells)")
        layout = d["feature_layout"]
        F = int(layout["length"])
        W = np.asarray(d["W"], dtype=float)
        if W.size != F * 3 * part.K:
            raise ValueError(f"estimator W has {W.size} entries, expected {F} x {3 * part.K}")
        return cls(W.reshape(F, 3 * part.K), np.asarray(d["bias"], dtype=float), part,
                   float(d["lambda"]), (int(layout["grid_w"]), int(layout["grid_h"])),
                   float(d.get("train_loss", float("nan"))), d.get("seed"))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "BgEstimator":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def fit(training: list[tuple[np.ndarray, IlluminationDescriptor]], ridge_lambda: float = DEFAULT_LAMBDA,
        grid: tuple = DEFAULT_GRID, seed: int | None = None) -> BgEstimator:
    """Ridge regression on mean-centered features: W = (Xc'Xc + lam I)^-1 Xc'Yc."""
    if not training:
        raise ValueError("no training samples")
    part = training[0][1].partition
    for _, desc in training:
        if desc.partition.id != part.id:
            raise ValueError(f"training descriptors mix partitions {part.id} and {desc.partition.id}")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be nonnegative")
    X = np.stack([np.asarray(f, dtype=np.float64) for f, _ in training])
    Y = np.stack([d.l.ravel() for _, d in training])
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    n, F = Xc.shape
    if ridge_lambda == 0 and np.linalg.matrix_rank(Xc) < F:
        raise np.linalg.LinAlgError("singular normal equations: lambda is 0 and features are rank deficient")
    if n < F:
        # dual form, same solution when lambda > 0
        W = Xc.T @ np.linalg.solve(Xc @ Xc.T + ridge_lambda * np.eye(n), Yc)
    else:
        W = np.linalg.solve(Xc.T @ Xc + ridge_lambda * np.eye(F), Xc.T @ Yc)
    bias = y_mean - x_mean @ W
    loss = float(np.mean((X @ W + bias - Y) ** 2))
    return BgEstimator(W, bias, part, float(ridge_lambda), tuple(grid), loss, seed)


def predict_raw(est: BgEstimator, features: np.ndarray) -> np.ndarray:
    """Unclamped 3 x K prediction."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (est.W.shape[0],):
        raise ValueError(f"expected {est.W.shape[0]} features, got {features.shape}")
    return (features @ est.W + est.bias).reshape(3, est.K)


def estimate(est: BgEstimator | None, bg: np.ndarray) -> IlluminationDescriptor:
    if est is None or est.W is None:
        raise ValueError("estimator is not fitted")
    l = np.maximum(predict_raw(est, extract_features(bg, *est.grid)), 0.0)
    return IlluminationDescriptor(l, est.partition)


def eval_bie_loss(pred: IlluminationDescriptor, gt: IlluminationDescriptor, bases: ShadingBases,
                  gt_shading: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute descriptor error plus mean absolute error of the shading
    composed from the predicted descriptor (over `mask` pixels if given)."""
    if pred.l.shape != gt.l.shape:
        raise ValueError(f"descriptor shapes differ: {pred.l.shape} vs {gt.l.shape}")
    gt_shading = np.asarray(gt_shading, dtype=np.float64)
    if gt_shading.shape != bases.SB.shape[1:] + (3,):
        raise ValueError(f"shading {gt_shading.shape} does not match bases {bases.SB.shape[1:]}")
    diff = np.abs(gt_shading - compose_shading(bases, pred))
    if mask is not None:
        diff = diff[np.asarray(mask) > 0.5]
    return float(np.mean(np.abs(gt.l - pred.l)) + np.mean(diff))
