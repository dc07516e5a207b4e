"""Losses, optimizer, schedule, synthetic data, and the toy training loop.

The toy backbone is a parameter-free bicubic upsampler, so any improvement
over the untrained (identity) rectifier is attributable to the rectifier
itself.  Training is bitwise reproducible for a fixed (config, seeds).
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import srnet
from . import tensor as T
from .cube import HsiCube
from .degrade import bicubic_pair, fnv1a64, resample
from .metrics import mpsnr, msam
from .srnet import ParamStore, SrNetConfig
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    deg: float = 0.2

    def __post_init__(self):
        if self.rec < 0 or self.deg < 0:
            raise ValueError("loss weights must be >= 0")


def reconstruction_loss(sr_out: Tensor, gt_hr: Tensor) -> Tensor:
    return T.mean_all(T.mul(T.sub(sr_out, gt_hr), T.sub(sr_out, gt_hr)))


def degradation_loss(sr_out: Tensor, lr_obs: Tensor, alpha: int) -> Tensor:
    """Mean squared error between the bicubic-downsampled output and the LR
    observation; the downsampler is a fixed linear map with its adjoint on
    the tape."""
    h, w = sr_out.shape[0], sr_out.shape[1]
    (rh, rw), _ = bicubic_pair((h, w), alpha)
    d = T.linmap2d(sr_out, rh, rw)
    diff = T.sub(d, lr_obs)
    return T.mean_all(T.mul(diff, diff))


def loss_total(sr_out: Tensor, gt_hr: Tensor, lr_obs: Tensor, alpha: int,
               weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted sum of the reconstruction and degradation-consistency terms.

    Both terms are means (not sums) so the weights stay comparable across
    patch sizes.
    """
    if sr_out.shape != gt_hr.shape:
        raise ValueError(f"sr_out {sr_out.shape} vs gt {gt_hr.shape}")
    if (gt_hr.shape[0] != alpha * lr_obs.shape[0]
            or gt_hr.shape[1] != alpha * lr_obs.shape[1]):
        raise ValueError(f"lr {lr_obs.shape} inconsistent with scale {alpha}")
    total = T.scale(reconstruction_loss(sr_out, gt_hr), weights.rec)
    if weights.deg != 0.0:
        total = T.add(total, T.scale(degradation_loss(sr_out, lr_obs, alpha), weights.deg))
    return total


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptimizerState,
               lr: float, weight_decay: float = 0.0) -> None:
    """Decoupled weight decay plus bias-corrected moment update, in place.

    The decay term is scaled by lr, so lr=0 leaves parameters untouched.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, want {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1 / (np.sqrt(v / c2) + state.eps) + weight_decay * p.data)


def cosine_lr(step: int, total_steps: int, lr_max: float = 1e-4, lr_min: float = 1e-5) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside 0..{total_steps}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def make_toy_dataset(count: int, height: int, width: int, bands: int, alpha: int,
                     seed: str) -> list[tuple[HsiCube, HsiCube]]:
    """Seeded (gt_hr, lr_obs) pairs with smooth spectra and mixed spatial detail.

    Each pixel's spectrum is a mixture of 2-4 Gaussian bumps along the band
    axis (widths >= 2 bands, total amplitude <= 0.9 over a 0.05 floor), so
    band-to-band second differences stay below 0.25 by construction.  The
    bump amplitudes are modulated by smooth sinusoidal fields plus sharp
    half-plane edges; lr_obs is exactly the training bicubic downsample.
    """
    if height % alpha or width % alpha:
        raise ValueError(f"{height}x{width} not divisible by scale {alpha}")
    rng = np.random.default_rng(fnv1a64(seed))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    s_axis = np.arange(bands, dtype=np.float64)
    out = []
    for i in range(count):
        n_bumps = int(rng.integers(2, 5))
        amps = rng.uniform(0.3, 1.0, size=n_bumps)
        amps *= 0.9 / amps.sum()
        cube = np.full((height, width, bands), 0.05)
        for k in range(n_bumps):
            mu = rng.uniform(0, bands - 1)
            sig = rng.uniform(2.0, 6.0)
            bump = np.exp(-0.5 * ((s_axis - mu) / sig) ** 2)
            # smooth sinusoidal field in [0.25, 0.75]
            fy, fx = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            smooth = 0.5 + 0.25 * np.sin(2 * np.pi * fy * yy + phase[0]) \
                * np.sin(2 * np.pi * fx * xx + phase[1])
            # sharp half-plane edge scaling one side down
            nx, ny = rng.normal(size=2)
            offset = rng.uniform(0.3, 0.7)
            mask = (nx * xx + ny * yy > offset * (nx + ny)).astype(np.float64)
            spatial = smooth * (0.4 + 0.6 * mask)
            cube += amps[k] * spatial[:, :, None] * bump[None, None, :]
        gt = HsiCube(np.clip(cube, 0.0, 1.0), id=f"toy{i:03d}")
        lr = resample(gt, Fraction(1, alpha))
        out.append((gt, lr))
    return out


# ---------------------------------------------------------------------------
# training loop and gradient verification
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    CSV_HEADER = "step,lr,loss_total,loss_rec,loss_deg,val_mpsnr,val_msam"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([
                str(r["step"]), repr(r["lr"]), repr(r["loss_total"]),
                repr(r["loss_rec"]), repr(r["loss_deg"]),
                repr(r["val_mpsnr"]), repr(r["val_msam"]),
            ]))
        return "\n".join(lines) + "\n"


def bicubic_backbone(lr: HsiCube, alpha: int) -> HsiCube:
    """Parameter-free stand-in for an SR model: bicubic upsampling."""
    return resample(lr, alpha)


def _rectify_cube(lr: HsiCube, alpha: int, params: ParamStore, config: SrNetConfig) -> HsiCube:
    return srnet.srnet_forward(bicubic_backbone(lr, alpha), params, config)


def validate(pairs, alpha: int, params: ParamStore, config: SrNetConfig) -> tuple[float, float]:
    psnrs, sams = [], []
    for gt, lr in pairs:
        rect = _rectify_cube(lr, alpha, params, config)
        psnrs.append(mpsnr(rect, gt))
        sams.append(msam(rect, gt))
    return float(np.mean(psnrs)), float(np.mean(sams))


def train_loop(config: SrNetConfig, dataset, alpha: int, *, epochs: int | None = None,
               steps: int | None = None, batch: int = 4,
               weights: LossWeights = LossWeights(), seed: str = "train",
               lr_max: float = 1e-4, lr_min: float = 1e-5, weight_decay: float = 1e-4,
               val_count: int | None = None, log_every: int = 20,
               params: ParamStore | None = None) -> tuple[ParamStore, TrainLog]:
    """Toy-scale end-to-end training of the rectifier on (gt, lr) pairs.

    Exactly one of epochs/steps selects the duration; the last quarter of
    the dataset (at least one cube) is held out for validation.  The whole
    loop is deterministic given (config, dataset, seed).
    """
    if (epochs is None) == (steps is None):
        raise ValueError("give exactly one of epochs= or steps=")
    if val_count is None:
        val_count = max(1, len(dataset) // 4) if len(dataset) > 1 else 0
    train_set = dataset[:len(dataset) - val_count]
    val_set = dataset[len(dataset) - val_count:]
    if not train_set:
        raise ValueError("dataset too small for the requested validation split")
    steps_per_epoch = math.ceil(len(train_set) / batch)
    total_steps = steps if steps is not None else epochs * steps_per_epoch

    if params is None:
        params = srnet.init_params(config, seed)
    state = OptimizerState()
    log = TrainLog()
    rng = np.random.default_rng(fnv1a64(seed + ":order"))
    order: list[int] = []

    def next_batch():
        nonlocal order
        picked = []
        while len(picked) < min(batch, len(train_set)):
            if not order:
                order = list(rng.permutation(len(train_set)))
            picked.append(order.pop(0))
        return picked

    names = params.names()
    for step in range(total_steps):
        lr_now = cosine_lr(step, total_steps, lr_max, lr_min)
        if weights.rec == 0.0 and weights.deg == 0.0:
            grads = {n: np.zeros_like(params[n].data) for n in names}
            loss_val = rec_val = deg_val = 0.0
        else:
            grad_acc = {n: np.zeros_like(params[n].data) for n in names}
            loss_val = rec_val = deg_val = 0.0
            idxs = next_batch()
            for i in idxs:
                gt, lr_cube = train_set[i]
                sr = bicubic_backbone(lr_cube, alpha)
                with Tape() as tape:
                    for n in names:
                        tape.watch(params[n])
                    out = srnet.forward_tensor(Tensor(sr.data), params, config)
                    rec = reconstruction_loss(out, Tensor(gt.data))
                    deg = degradation_loss(out, Tensor(lr_cube.data), alpha)
                    total = T.add(T.scale(rec, weights.rec), T.scale(deg, weights.deg))
                for n, g in zip(names, tape.gradient(total, [params[n] for n in names])):
                    grad_acc[n] += g.data
                loss_val += total.item()
                rec_val += rec.item()
                deg_val += deg.item()
            k = len(idxs)
            grads = {n: g / k for n, g in grad_acc.items()}
            loss_val, rec_val, deg_val = loss_val / k, rec_val / k, deg_val / k
        adamw_step(params, grads, state, lr_now, weight_decay)
        if val_set and (step % log_every == 0 or step == total_steps - 1):
            vp, vs = validate(val_set, alpha, params, config)
            log.rows.append(dict(step=step, lr=lr_now, loss_total=loss_val,
                                 loss_rec=rec_val, loss_deg=deg_val,
                                 val_mpsnr=vp, val_msam=vs))
    return params, log


def grad_check(config: SrNetConfig, seed: str = "gradcheck", *, height: int = 6,
               width: int = 6, alpha: int = 2, coords_per_param: int = 5,
               fd_step: float = 1e-5) -> dict[str, float]:
    """Central finite-difference check of d(loss_total)/d(theta) for every
    named parameter; returns name -> max relative error."""
    rng = np.random.default_rng(fnv1a64(seed))
    params = srnet.init_params(config, seed)
    # move off the zero init so every path carries signal
    for name, p in params.items():
        if name.startswith("mcr.back") and name.endswith("out.w"):
            p.data += rng.uniform(-0.05, 0.05, size=p.data.shape)
    gt = Tensor(rng.uniform(0.25, 0.75, size=(height, width, config.bands)))
    lr = Tensor(rng.uniform(0.25, 0.75, size=(height // alpha, width // alpha, config.bands)))
    x = Tensor(rng.uniform(0.3, 0.7, size=(height, width, config.bands)))
    wts = LossWeights()

    def loss_value() -> float:
        out = srnet.forward_tensor(x, params, config)
        return loss_total(out, gt, lr, alpha, wts).item()

    names = params.names()
    with Tape() as tape:
        for n in names:
            tape.watch(params[n])
        out = srnet.forward_tensor(x, params, config)
        total = loss_total(out, gt, lr, alpha, wts)
    analytic = {n: g.data for n, g in zip(names, tape.gradient(total, [params[n] for n in names]))}

    report = {}
    for name in names:
        p = params[name].data
        flat = p.reshape(-1)
        n_coords = min(coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        worst = 0.0
        for c in coords:
            keep = flat[c]
            flat[c] = keep + fd_step
            f_plus = loss_value()
            flat[c] = keep - fd_step
            f_minus = loss_value()
            flat[c] = keep
            fd = (f_plus - f_minus) / (2 * fd_step)
            an = analytic[name].reshape(-1)[c]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
        report[name] = worst
    return report
