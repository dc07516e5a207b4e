"""Post-hoc spectral rectifiers: Savitzky-Golay smoothing, PCA projection,
iterative back-projection.

All three operate on a fixed super-resolved cube and never touch the model
that produced it.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cube import HsiCube
from .degrade import fnv1a64, resample


def sg_coefficients(window: int, polyorder: int) -> np.ndarray:
    """Central smoothing coefficients from the Vandermonde normal equations."""
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if polyorder >= window:
        raise ValueError(f"polyorder {polyorder} must be < window {window}")
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    a = np.vander(x, polyorder + 1, increasing=True)
    # first row of (A^T A)^-1 A^T evaluates the fitted polynomial at x=0
    return np.linalg.solve(a.T @ a, a.T)[0]


def sg_smooth(cube: HsiCube, window: int = 7, polyorder: int = 3) -> HsiCube:
    """Savitzky-Golay filter along the spectral axis of every pixel.

    The spectrum is reflect-padded by (window-1)/2 before filtering and
    cropped back to the original band count; output clamped to [0,1].
    """
    coeffs = sg_coefficients(window, polyorder)
    half = window // 2
    padded = np.pad(cube.data, ((0, 0), (0, 0), (half, half)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, window, axis=2)
    out = np.tensordot(win, coeffs, axes=(-1, 0))
    return HsiCube(np.clip(out, 0.0, 1.0), cube.id)


@dataclass
class PcaBasis:
    """Dataset-level spectral subspace: top-k components of sampled spectra."""

    mean: np.ndarray          # (S,)
    components: np.ndarray    # (k, S), orthonormal rows
    n_samples: int

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    @property
    def bands(self) -> int:
        return self.components.shape[1]


def pca_fit(cubes: list[HsiCube], k: int = 8, n_samples: int = 20000,
            seed: str = "pca") -> PcaBasis:
    """Fit the top-k spectral subspace from uniformly sampled pixel spectra.

    Sampling is seeded and without replacement when the pixel pool suffices.
    Component signs are fixed so the first nonzero entry of each row is
    positive, making the basis reproducible.
    """
    if not cubes:
        raise ValueError("no cubes to fit")
    s = cubes[0].bands
    if k > s:
        raise ValueError(f"rank {k} exceeds band count {s}")
    spectra = np.concatenate([c.data.reshape(-1, s) for c in cubes], axis=0)
    pool = spectra.shape[0]
    rng = np.random.default_rng(fnv1a64(seed))
    idx = rng.choice(pool, size=n_samples, replace=pool < n_samples)
    sample = spectra[idx]
    mean = sample.mean(axis=0)
    centered = sample - mean
    cov = centered.T @ centered / sample.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T.copy()
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return PcaBasis(mean=mean, components=comps, n_samples=n_samples)


def pca_project(cube: HsiCube, basis: PcaBasis) -> HsiCube:
    """Project every spectrum onto the basis and reconstruct; clamp to [0,1]."""
    if cube.bands != basis.bands:
        raise ValueError(f"cube has {cube.bands} bands, basis expects {basis.bands}")
    flat = cube.data.reshape(-1, cube.bands) - basis.mean
    recon = flat @ basis.components.T @ basis.components + basis.mean
    return HsiCube(np.clip(recon.reshape(cube.data.shape), 0.0, 1.0), cube.id)


def ibp_refine(sr: HsiCube, lr: HsiCube, alpha: int, steps: int = 10,
               eta: float = 1.0, record_residuals: bool = False):
    """Iterative back-projection against the observed LR cube.

    Update: sr <- sr + eta * U(lr - D(sr)), per band, with D/U the training
    bicubic pair; clamp to [0,1] only after the final step.  With
    record_residuals the per-step LR residual norms ||lr - D(sr_t)||_2
    (t = 0..steps) are returned alongside the cube.
    """
    if sr.data.shape[:2] != (lr.height * alpha, lr.width * alpha):
        raise ValueError(
            f"sr is {sr.data.shape[:2]}, expected {alpha}x the lr size {lr.data.shape[:2]}")
    if sr.bands != lr.bands:
        raise ValueError(f"band mismatch: sr {sr.bands} vs lr {lr.bands}")
    down = Fraction(1, alpha)
    x = HsiCube(sr.data.copy(), sr.id)
    residuals = []

    def lr_residual(c):
        return lr.data - resample(c, down).data

    if record_residuals:
        residuals.append(float(np.linalg.norm(lr_residual(x))))
    for _ in range(steps):
        r = lr_residual(x)
        x = HsiCube(x.data + eta * resample(HsiCube(r, lr.id), alpha).data, sr.id)
        if record_residuals:
            residuals.append(float(np.linalg.norm(lr_residual(x))))
    x = HsiCube(np.clip(x.data, 0.0, 1.0), sr.id)
    return (x, residuals) if record_residuals else x
