"""Synthetic test planes: constant, periodic, noise and pseudo-periodic textures."""

from __future__ import annotations

import numpy as np


def constant_plane(shape=(64, 64), value: float = 100.0) -> np.ndarray:
    return np.full(shape, float(value))


def periodic_plane(shape=(64, 64), period: int = 8, amplitude: float = 60.0) -> np.ndarray:
    """Integer-valued separable cosine pattern with the same period along both axes."""
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    v = 128 + amplitude * np.cos(2 * np.pi * xx / period) * np.cos(2 * np.pi * yy / period)
    return np.round(v)


def noise_plane(shape=(64, 64), seed: int = 0) -> np.ndarray:
    """Uniform 8-bit white noise."""
    return np.random.default_rng(seed).integers(0, 256, size=shape).astype(np.float64)


def pseudo_periodic_texture(shape=(256, 256), seed: int = 0, period: float = 6.0,
                            jitter: float = 6.0, noise: float = 4.0) -> np.ndarray:
    """Facade-like texture: a fine periodic lattice with slow geometric drift and noise.

    The lattice carries energy close to the base-layer Nyquist frequency so the
    2x down/upsampling chain blurs it, while its repetitions give the epitome
    good examples.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    # Smooth random displacement field bends the lattice.
    phase_y = jitter * np.sin(2 * np.pi * (xx / w * rng.uniform(0.5, 1.5) + rng.uniform()))
    phase_x = jitter * np.sin(2 * np.pi * (yy / h * rng.uniform(0.5, 1.5) + rng.uniform()))
    u = 2 * np.pi * (xx + phase_x) / period
    v = 2 * np.pi * (yy + phase_y) / period
    lattice = np.sign(np.sin(u)) * np.sign(np.sin(v))
    shading = 30 * np.sin(2 * np.pi * (xx + yy) / (1.7 * w) + rng.uniform(0, 2 * np.pi))
    img = 128 + 50 * lattice + 20 * np.cos(u) + shading + rng.normal(0, noise, shape)
    return np.clip(np.round(img), 0, 255)


def facade_texture(shape=(256, 256), seed: int = 0, period=(12, 10), window=(7, 5),
                   levels=(60.0, 170.0), wall: float = 190.0, noise: float = 2.0,
                   blur: float = 0.7, grain: float = 0.0, jitter: int = 0,
                   mullions: float = 0.0) -> np.ndarray:
    """City-like building facade: a lattice of windows with random lighting.

    Window intensities are drawn uniformly from the ``levels`` range. Each
    window corner moves by up to ``jitter`` pixels and, with probability
    ``mullions``, a dark one-pixel bar splits the window at a random column.

    Window edges are slightly blurred, the wall carries a slow shading ramp,
    ``grain`` adds a fine stochastic texture of that standard deviation (which
    no exemplar can predict) and white noise of standard deviation ``noise``
    is added.
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    h, w = shape
    py, px = period
    wy, wx = window
    img = np.full(shape, wall)
    for r0 in range(0, h, py):
        for c0 in range(0, w, px):
            dy, dx = rng.integers(-jitter, jitter + 1, 2) if jitter else (0, 0)
            top, left = r0 + 2 + dy, c0 + 2 + dx
            img[max(top, 0):top + wy, max(left, 0):left + wx] = rng.uniform(*levels)
            if mullions and rng.uniform() < mullions and left + wx <= w:
                col = left + rng.integers(1, wx - 1)
                img[max(top, 0):top + wy, col] = levels[0] - 20.0
    img = gaussian_filter(img, blur)
    yy, xx = np.mgrid[:h, :w]
    img += 12.0 * (xx + yy) / (h + w) - 6.0
    if grain:
        g = gaussian_filter(rng.normal(0.0, 1.0, shape), 0.6)
        img += grain * g / g.std()
    img += rng.normal(0.0, noise, shape)
    return np.clip(np.round(img), 0, 255)
