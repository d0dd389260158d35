"""Binary PPM rendering of score matrices on a blue-white-red scale."""

from __future__ import annotations

import numpy as np

MISSING = np.array([160, 160, 160], dtype=np.float64)


def ppm_heatmap(matrix, cell: int = 8, limit: float = 1.0) -> bytes:
    """Render ``matrix`` with -limit as blue, 0 as white and +limit as red; NaN is grey."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("heatmaps need a 2-D matrix")
    t = np.clip(np.nan_to_num(m, nan=0.0) / limit, -1.0, 1.0)[..., None]
    white = np.array([255.0, 255.0, 255.0])
    red, blue = np.array([178.0, 24.0, 43.0]), np.array([33.0, 102.0, 172.0])
    rgb = np.where(t >= 0, white + t * (red - white), white - t * (blue - white))
    rgb[np.isnan(m)] = MISSING
    img = np.repeat(np.repeat(np.rint(rgb).astype(np.uint8), cell, axis=0), cell, axis=1)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + img.tobytes()
