"""Delentropy: halved Shannon entropy of the joint histogram of image gradients."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_BINS = 256
GRAD_RANGE = 3.0


@dataclass
class GradientHistogram:
    d_x: np.ndarray
    d_y: np.ndarray
    counts: np.ndarray  # (N_BINS, N_BINS), axis 0 = d_x bin, axis 1 = d_y bin
    p: np.ndarray
    edges: np.ndarray

    def write_csv(self, path: str | Path) -> None:
        """Occupied bins only: i,j,dx_low,dy_low,count,p."""
        lines = ["i,j,dx_low,dy_low,count,p"]
        for i, j in zip(*np.nonzero(self.counts)):
            lines.append(
                f"{i},{j},{self.edges[i]:.17g},{self.edges[j]:.17g},{int(self.counts[i, j])},{self.p[i, j]:.17g}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def gradient_field(raster) -> tuple[np.ndarray, np.ndarray]:
    """Valid-region correlation with [[-1,0,1]]*3 (d_x, along columns) and its transpose (d_y)."""
    r = np.asarray(raster, dtype=float)
    if r.ndim != 2 or r.shape[0] < 3 or r.shape[1] < 3:
        raise ValueError(f"raster must be at least 3x3, got shape {r.shape}")
    diff_x = r[:, 2:] - r[:, :-2]  # (H, W-2)
    d_x = diff_x[:-2] + diff_x[1:-1] + diff_x[2:]
    diff_y = r[2:, :] - r[:-2, :]  # (H-2, W)
    d_y = diff_y[:, :-2] + diff_y[:, 1:-1] + diff_y[:, 2:]
    return d_x, d_y


def deldensity(raster) -> GradientHistogram:
    d_x, d_y = gradient_field(raster)
    edges = np.linspace(-GRAD_RANGE, GRAD_RANGE, N_BINS + 1)
    counts, _, _ = np.histogram2d(d_x.ravel(), d_y.ravel(), bins=[edges, edges])
    return GradientHistogram(d_x=d_x, d_y=d_y, counts=counts, p=counts / counts.sum(), edges=edges)


def delentropy(raster) -> float:
    """DE = -1/2 sum p log2 p over the (d_x, d_y) histogram, in bits.

    The raster is expected in [0, 1]; gradients then lie in [-3, 3].
    """
    p = deldensity(raster).p
    nz = p[p > 0]
    return float(-0.5 * np.sum(nz * np.log2(nz))) + 0.0  # no negative zero


def normalise_raster(raster) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant raster maps to zeros."""
    r = np.asarray(raster, dtype=float)
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.zeros_like(r)
    return (r - lo) / (hi - lo)
