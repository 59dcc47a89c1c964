"""Input preprocessing, numerically identical to the pipeline toolkit's
preprocess op: brightness scaling with clamping, then a separable gaussian
smooth (reflect padding), rounded back to uint8. Kept dependency-light so the
trainer only talks to the toolkit through files."""

from __future__ import annotations

import numpy as np

BRIGHTNESS_BY_MODALITY = {"lsm1": 1.5, "lsm2": 1.0, "asm": 1.0}


def gaussian_kernel(size: int = 3, sigma: float = 1.0) -> np.ndarray:
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _correlate1d_reflect(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    half = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (half, half)
    padded = np.pad(values, pad, mode="symmetric")
    out = np.zeros_like(values)
    for k, weight in enumerate(kernel):
        if axis == 0:
            out += weight * padded[k:k + values.shape[0], :]
        else:
            out += weight * padded[:, k:k + values.shape[1]]
    return out


def preprocess_pixels(pixels: np.ndarray, brightness_factor: float = 1.0,
                      kernel_size: int = 3, sigma: float = 1.0) -> np.ndarray:
    """uint8 HxW -> uint8 HxW; brightness (clamped) then gaussian smoothing."""
    if pixels.ndim != 2:
        raise ValueError("preprocess expects single-channel pixels")
    out = np.clip(pixels.astype(np.float64) * brightness_factor, 0.0, 255.0)
    kernel = gaussian_kernel(kernel_size, sigma)
    out = _correlate1d_reflect(out, kernel, axis=0)
    out = _correlate1d_reflect(out, kernel, axis=1)
    return np.rint(np.clip(out, 0.0, 255.0)).astype(np.uint8)
