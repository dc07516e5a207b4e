"""Spatial and spectral quality metrics plus error-map generation.

mPSNR/mSSIM average per-band values over all bands; mSAM and CC average
over pixels/bands of one image (dataset-level aggregation is the caller's
mean over images).  All metrics are total functions on same-shape pairs:
degenerate inputs follow documented rules instead of producing NaN.
"""

from dataclasses import dataclass, field

import numpy as np

from .cube import HsiCube

_EPS = 1e-12
PSNR_CAP_DB = 100.0


@dataclass
class MetricReport:
    mpsnr: float
    mssim: float
    msam: float
    cc: float
    per_band_psnr: list[float] = field(default_factory=list)
    error_map: np.ndarray | None = None

    CSV_HEADER = "image_id,scale,setting,mpsnr,mssim,msam,cc"

    def csv_row(self, image_id: str, scale: int, setting: str) -> str:
        vals = [self.mpsnr, self.mssim, self.msam, self.cc]
        return ",".join([image_id, str(scale), setting] + [repr(float(v)) for v in vals])


def _check_pair(est: HsiCube, gt: HsiCube) -> None:
    if est.data.shape != gt.data.shape:
        raise ValueError(f"shape mismatch: est {est.data.shape} vs gt {gt.data.shape}")


def per_band_psnr(est: HsiCube, gt: HsiCube) -> np.ndarray:
    _check_pair(est, gt)
    mse = np.mean((est.data - gt.data) ** 2, axis=(0, 1))
    out = np.full(mse.shape, PSNR_CAP_DB)
    nz = mse > 0
    out[nz] = 10.0 * np.log10(1.0 / mse[nz])
    return out


def mpsnr(est: HsiCube, gt: HsiCube) -> float:
    """Mean over bands of 10*log10(1/MSE_band) on [0,1] data; 100 dB cap at zero error."""
    return float(per_band_psnr(est, gt).mean())


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(win, window, axes=([2, 3], [0, 1]))


def mssim(est: HsiCube, gt: HsiCube) -> float:
    """Per-band SSIM, 11x11 Gaussian window sigma=1.5, C1=0.01^2, C2=0.03^2, data range 1."""
    _check_pair(est, gt)
    h, w, s = est.data.shape
    if h < 11 or w < 11:
        raise ValueError(f"image {h}x{w} smaller than the 11x11 SSIM window")
    window = _ssim_window()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for b in range(s):
        x, y = est.data[:, :, b], gt.data[:, :, b]
        mx = _filter_valid(x, window)
        my = _filter_valid(y, window)
        vx = _filter_valid(x * x, window) - mx * mx
        vy = _filter_valid(y * y, window) - my * my
        cxy = _filter_valid(x * y, window) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def msam(est: HsiCube, gt: HsiCube) -> float:
    """Mean spectral angle over pixels, in degrees; zero-norm spectra contribute 0."""
    _check_pair(est, gt)
    a = est.data.reshape(-1, est.bands)
    b = gt.data.reshape(-1, gt.bands)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    u = a[ok] / na[ok, None]
    v = b[ok] / nb[ok, None]
    # two-argument form of arccos(<u,v>): exact 0 for parallel spectra, where
    # the clamped-dot-product route loses the last ulp
    ang = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
    angles = np.zeros(a.shape[0])
    angles[ok] = np.degrees(ang)
    return float(angles.mean())


def cc(est: HsiCube, gt: HsiCube) -> float:
    """Mean over bands of the per-band Pearson correlation across pixels.

    Constant bands correlate 1 when identical, else 0 (epsilon-guarded).
    """
    _check_pair(est, gt)
    vals = []
    for b in range(est.bands):
        x = est.data[:, :, b].ravel()
        y = gt.data[:, :, b].ravel()
        dx, dy = x - x.mean(), y - y.mean()
        denom = np.sqrt((dx * dx).sum()) * np.sqrt((dy * dy).sum())
        if denom < _EPS:
            vals.append(1.0 if np.array_equal(x, y) else 0.0)
        else:
            vals.append(float((dx * dy).sum() / denom))
    return float(np.mean(vals))


def error_map(est: HsiCube, gt: HsiCube, normalize: bool = False) -> np.ndarray:
    """Band-averaged absolute error per pixel; optional per-image min-max normalization."""
    _check_pair(est, gt)
    e = np.mean(np.abs(est.data - gt.data), axis=2)
    if not normalize:
        return e
    lo, hi = e.min(), e.max()
    if hi == lo:
        return np.zeros_like(e)
    return (e - lo) / (hi - lo)


def evaluate(est: HsiCube, gt: HsiCube, with_error_map: bool = False) -> MetricReport:
    """All four metrics in one report; optionally attaches the raw error map."""
    band_psnr = per_band_psnr(est, gt)
    return MetricReport(
        mpsnr=float(band_psnr.mean()),
        mssim=mssim(est, gt),
        msam=msam(est, gt),
        cc=cc(est, gt),
        per_band_psnr=[float(v) for v in band_psnr],
        error_map=error_map(est, gt) if with_error_map else None,
    )
