"""Degradation operators and the nine test-time mismatch settings.

The training operator D and the upsampler U are separable Keys bicubic
resamplers (a = -0.5) built as explicit per-axis weight matrices; the
mismatch settings swap the kernel (area, a = -0.75), add band-wise Gaussian
blur in HR space, and/or add seeded Gaussian noise in LR space.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cube import HsiCube

SETTING_NAMES = ("Train", "K1", "K2", "B1", "B2", "N1", "N2", "N3", "J1", "J2")

# setting -> (blur sigma, noise n in 0..255 units)
_SETTING_TABLE = {
    "Train": (0.0, 0),
    "K1": (0.0, 0),
    "K2": (0.0, 0),
    "B1": (0.6, 0),
    "B2": (1.0, 0),
    "N1": (0.0, 1),
    "N2": (0.0, 2),
    "N3": (0.0, 5),
    "J1": (0.6, 2),
    "J2": (1.0, 5),
}


@dataclass(frozen=True)
class DegradationSpec:
    """One test-time degradation setting plus the scale factor."""

    setting: str
    scale: int
    sigma: float = 0.0
    noise: int = 0

    def __post_init__(self):
        if self.setting not in _SETTING_TABLE:
            raise ValueError(f"unknown setting {self.setting!r}")
        want = _SETTING_TABLE[self.setting]
        if (self.sigma, self.noise) != want:
            raise ValueError(f"setting {self.setting} requires sigma={want[0]}, n={want[1]}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")

    @classmethod
    def named(cls, setting: str, scale: int) -> "DegradationSpec":
        sigma, noise = _SETTING_TABLE.get(setting, (None, None))
        if sigma is None:
            raise ValueError(f"unknown setting {setting!r} (choose from {', '.join(SETTING_NAMES)})")
        return cls(setting, scale, sigma, noise)


# ---------------------------------------------------------------------------
# separable resampling
# ---------------------------------------------------------------------------

def keys_cubic(t: np.ndarray, a: float) -> np.ndarray:
    """Keys cubic interpolation kernel with parameter a (-0.5 or -0.75)."""
    at = np.abs(t)
    inner = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    outer = a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def resample_matrix(n_in: int, n_out: int, kernel: str) -> np.ndarray:
    """Dense n_out x n_in one-axis resampling operator, rows summing to 1.

    Downsampling widens the bicubic support by the scale factor
    (anti-aliasing); edges are handled by clamping source indices.
    'area' is the plain block mean and requires n_in divisible by n_out.
    """
    if kernel == "area":
        if n_in % n_out:
            raise ValueError(f"area resampling needs {n_in} divisible by {n_out}")
        alpha = n_in // n_out
        m = np.zeros((n_out, n_in))
        for i in range(n_out):
            m[i, i * alpha:(i + 1) * alpha] = 1.0 / alpha
        return m

    a = {"bicubic_a_half": -0.5, "bicubic_a_threequarter": -0.75}.get(kernel)
    if a is None:
        raise ValueError(f"unknown kernel {kernel!r}")
    ratio = n_out / n_in
    # widen the kernel when shrinking so it acts as a proper low-pass
    width = max(1.0, 1.0 / ratio)
    support = 2.0 * width
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / ratio - 0.5
        lo = int(np.floor(center - support)) + 1
        hi = int(np.floor(center + support)) + 1
        j = np.arange(lo, hi)
        wts = keys_cubic((j - center) / width, a) / width
        np.add.at(m[i], np.clip(j, 0, n_in - 1), wts)
        m[i] /= m[i].sum()
    return m


def _norm_factor(factor) -> tuple[int, int]:
    """Return (n_up, n_down) for an integer up or down scale."""
    f = Fraction(factor).limit_denominator(10**6)
    if f >= 1:
        if f.denominator != 1:
            raise ValueError(f"upsampling factor must be an integer, got {factor}")
        return f.numerator, 1
    inv = 1 / f
    if inv.denominator != 1:
        raise ValueError(f"downsampling factor must be 1/alpha with integer alpha, got {factor}")
    return 1, inv.numerator


def resample(cube: HsiCube, factor, kernel: str = "bicubic_a_half") -> HsiCube:
    """Per-band separable resampling by an integer factor (up) or its inverse (down)."""
    up, down = _norm_factor(factor)
    h, w, _ = cube.data.shape
    if down > 1 and (h % down or w % down):
        raise ValueError(f"dimensions {h}x{w} not divisible by {down}; center_crop first")
    hn = h * up // down
    wn = w * up // down
    rh = resample_matrix(h, hn, kernel)
    rw = resample_matrix(w, wn, kernel)
    out = apply_separable(rh, rw, cube.data)
    return HsiCube(out, cube.id)


def apply_separable(rh: np.ndarray, rw: np.ndarray, data: np.ndarray) -> np.ndarray:
    t = np.tensordot(rh, data, axes=(1, 0))
    return np.tensordot(rw, t, axes=(1, 1)).transpose(1, 0, 2)


def bicubic_pair(hr_size: tuple[int, int], alpha: int):
    """((Rh_down, Rw_down), (Rh_up, Rw_up)) for the training operator D and U."""
    h, w = hr_size
    down = (resample_matrix(h, h // alpha, "bicubic_a_half"),
            resample_matrix(w, w // alpha, "bicubic_a_half"))
    up = (resample_matrix(h // alpha, h, "bicubic_a_half"),
          resample_matrix(w // alpha, w, "bicubic_a_half"))
    return down, up


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------

def blur_kernel_size(sigma: float) -> int:
    # Truncation at 3 sigma per side; reproduces k=5 at sigma=0.6, k=7 at 1.0.
    return max(3, 2 * int(np.ceil(3.0 * sigma)) + 1)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    k = blur_kernel_size(sigma)
    x = np.arange(k) - (k - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _correlate_axis(data: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    pad = len(taps) // 2
    widths = [(0, 0)] * data.ndim
    widths[axis] = (pad, pad)
    padded = np.pad(data, widths, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(taps), axis=axis)
    return np.tensordot(win, taps, axes=(-1, 0))


def gaussian_blur(cube: HsiCube, sigma: float) -> HsiCube:
    """Band-wise Gaussian blur with reflect padding.

    The 2-D kernel is the normalized separable Gaussian, applied to each
    spectral band independently.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    taps = gaussian_kernel_1d(sigma)
    out = _correlate_axis(_correlate_axis(cube.data, taps, 0), taps, 1)
    return HsiCube(out, cube.id)


# ---------------------------------------------------------------------------
# seeded noise (counter-based: FNV-1a -> splitmix64 -> Box-Muller)
# ---------------------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _splitmix64(seed: int, n: int) -> np.ndarray:
    counters = np.arange(1, n + 1, dtype=np.uint64)
    z = (np.uint64(seed) + counters * np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9) & _MASK64
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB) & _MASK64
    return z ^ (z >> np.uint64(31))


def standard_normal(seed_key: str, n: int) -> np.ndarray:
    """n i.i.d. N(0,1) draws, fully determined by the seed string."""
    pairs = (n + 1) // 2
    bits = _splitmix64(fnv1a64(seed_key), 2 * pairs)
    # (0,1] for the log, [0,1) for the angle
    u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out[:n]


def add_noise(cube: HsiCube, n: int, seed_key: str) -> HsiCube:
    """Add i.i.d. Gaussian noise of std n/255, clamp to [0,1]; deterministic per seed_key."""
    if n < 0:
        raise ValueError(f"noise level must be >= 0, got {n}")
    if n == 0:
        return cube
    eps = standard_normal(seed_key, cube.data.size).reshape(cube.data.shape)
    noisy = cube.data + eps * (n / 255.0)
    return HsiCube(np.clip(noisy, 0.0, 1.0), cube.id)


# ---------------------------------------------------------------------------
# cropping and the full setting pipeline
# ---------------------------------------------------------------------------

def center_crop(cube: HsiCube, alpha: int) -> HsiCube:
    """Crop H and W down to the largest multiples of alpha, centered.

    An odd trim drops the extra row/column from the bottom/right.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    h, w, _ = cube.data.shape
    nh, nw = (h // alpha) * alpha, (w // alpha) * alpha
    if nh == 0 or nw == 0:
        raise ValueError(f"cube {h}x{w} too small for scale {alpha}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return HsiCube(cube.data[top:top + nh, left:left + nw, :].copy(), cube.id)


def apply_setting(hr: HsiCube, spec: DegradationSpec) -> HsiCube:
    """HR cube -> LR observation under one degradation setting.

    Pipeline order: optional HR-space blur, downsample with the setting's
    kernel, optional LR-space noise.  The cube must be pre-cropped so that
    H and W are divisible by the scale.
    """
    kernel = {"K1": "area", "K2": "bicubic_a_threequarter"}.get(spec.setting, "bicubic_a_half")
    x = hr
    if spec.sigma > 0:
        x = gaussian_blur(x, spec.sigma)
    x = resample(x, Fraction(1, spec.scale), kernel)
    if spec.noise > 0:
        x = add_noise(x, spec.noise, hr.id + spec.setting)
    return HsiCube(np.clip(x.data, 0.0, 1.0), hr.id)
