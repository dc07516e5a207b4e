"""Command-line front end.

Subcommands: import, degrade, upsample, rectify, pca-fit, train, eval,
robustness, emit-errormap, emit-spectra, complexity.  Report commands write
matplotlib figures next to their delimited outputs.

Exit codes: 0 success, 1 usage error, 2 data error.  Every run writes its
fully-resolved configuration (flags over config-file values over defaults)
next to its outputs as a key=value manifest.
"""

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import classical, degrade, metrics, srnet, train as training, weights as wio
from .cube import (CubeFormatError, HsiCube, export_spectra_csv, pseudo_rgb,
                   read_cube, write_cube, write_pgm, write_ppm)
from .degrade import SETTING_NAMES, DegradationSpec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_manifest(args: argparse.Namespace, anchor) -> None:
    skip = {"func"}
    items = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    lines = [f"{k}={'' if v is None else v}" for k, v in items.items()]
    anchor = Path(anchor)
    if anchor.is_dir():
        target = anchor / "run.manifest"
    else:
        target = anchor.with_name(anchor.name + ".manifest")
    _write_text(target, "\n".join(lines) + "\n")


def _load_config_file(path) -> list[str]:
    """key=value lines -> injected flags (explicit flags still win)."""
    flags = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line without '=': {line!r}")
        flags.append(f"--{key.strip().replace('_', '-')}")
        if value.strip():
            flags.append(value.strip())
    return flags


def _load_srnet(weights_path) -> tuple[srnet.ParamStore, srnet.SrNetConfig]:
    meta = wio.read_sidecar(str(weights_path) + ".meta")
    config = srnet.SrNetConfig.from_sidecar(meta)
    params = srnet.ParamStore.from_arrays(wio.read_weights(weights_path))
    return params, config


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_import(args) -> int:
    raw = Path(args.input).read_bytes()
    n = args.height * args.width * args.bands
    if len(raw) < 4 * n:
        raise CubeFormatError(f"{args.input}: expected {4 * n} bytes, found {len(raw)}")
    flat = np.frombuffer(raw[:4 * n], dtype="<f4").astype(np.float64)
    if np.isnan(flat).any():
        raise CubeFormatError(f"{args.input}: NaN in payload")
    if args.layout == "bsq":
        data = flat.reshape(args.bands, args.height, args.width).transpose(1, 2, 0)
    else:  # bip: band-interleaved by pixel
        data = flat.reshape(args.height, args.width, args.bands)
    cube = HsiCube(np.clip(data, 0.0, 1.0), id=Path(args.out).stem)
    write_cube(cube, args.out)
    _write_manifest(args, args.out)
    return 0


def cmd_degrade(args) -> int:
    hr = read_cube(args.input)
    spec = DegradationSpec.named(args.setting, args.scale)
    cropped = degrade.center_crop(hr, args.scale)
    if args.save_hr:
        write_cube(cropped, args.save_hr)
    lr = degrade.apply_setting(cropped, spec)
    write_cube(lr, args.out)
    _write_manifest(args, args.out)
    return 0


def cmd_upsample(args) -> int:
    lr = read_cube(args.input)
    sr = training.bicubic_backbone(lr, args.scale)
    write_cube(HsiCube(np.clip(sr.data, 0.0, 1.0), sr.id), args.out)
    _write_manifest(args, args.out)
    return 0


def cmd_rectify(args) -> int:
    sr = read_cube(args.sr)
    if args.method == "sg":
        out = classical.sg_smooth(sr, window=args.window, polyorder=args.polyorder)
    elif args.method == "pca":
        if not args.weights:
            raise UsageError("--method pca requires --weights with a fitted basis")
        arrays = wio.read_weights(args.weights)
        basis = classical.PcaBasis(mean=arrays["pca.mean"], components=arrays["pca.components"],
                                   n_samples=int(arrays["pca.n_samples"][0]))
        out = classical.pca_project(sr, basis)
    elif args.method == "ibp":
        if not args.lr:
            raise UsageError("--method ibp requires --lr and --scale")
        lr = read_cube(args.lr)
        out = classical.ibp_refine(sr, lr, args.scale, steps=args.ibp_steps, eta=args.ibp_eta)
    elif args.method == "srnet":
        if not args.weights:
            raise UsageError("--method srnet requires --weights")
        params, config = _load_srnet(args.weights)
        out = srnet.srnet_forward(sr, params, config)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown method {args.method}")
    write_cube(HsiCube(out.data, Path(args.out).stem), args.out)
    _write_manifest(args, args.out)
    return 0


def cmd_pca_fit(args) -> int:
    cubes = [read_cube(p) for p in args.cubes]
    basis = classical.pca_fit(cubes, k=args.rank, n_samples=args.samples, seed=args.seed)
    wio.write_weights({
        "pca.mean": basis.mean,
        "pca.components": basis.components,
        "pca.n_samples": np.array([float(basis.n_samples)]),
    }, args.out)
    _write_manifest(args, args.out)
    return 0


def cmd_train(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = srnet.SrNetConfig(bands=args.bands, groups=args.groups, blocks=args.blocks,
                               refine_stages=args.refine_stages, rank=args.rank)
    dataset = training.make_toy_dataset(args.cubes, args.lr_size * args.scale,
                                        args.lr_size * args.scale, args.bands,
                                        args.scale, args.seed)
    wts = training.LossWeights(rec=args.lambda_rec, deg=args.lambda_deg)
    params, log = training.train_loop(
        config, dataset, args.scale, steps=args.steps, batch=args.batch, weights=wts,
        seed=args.seed, lr_max=args.lr_max, lr_min=args.lr_min,
        weight_decay=args.weight_decay, log_every=args.log_every)
    wio.write_weights(params.to_arrays(), outdir / "weights.srw")
    meta = config.sidecar()
    meta.update({"seed": args.seed, "steps": str(args.steps), "scale": str(args.scale)})
    wio.write_sidecar(meta, outdir / "weights.srw.meta")
    _write_text(outdir / "train_log.csv", log.to_csv())
    if log.rows:
        from . import report
        report.training_figure(log.rows, outdir / "training.png")
    _write_manifest(args, outdir)
    return 0


def _parse_pairs(pairs) -> list[tuple[Path, Path]]:
    out = []
    for spec in pairs:
        est, sep, gt = spec.partition(":")
        if not sep:
            raise UsageError(f"pair {spec!r} must be EST:GT")
        out.append((Path(est), Path(gt)))
    return out


def cmd_eval(args) -> int:
    rows = [metrics.MetricReport.CSV_HEADER]
    curves = []
    for est_path, gt_path in _parse_pairs(args.pairs):
        est, gt = read_cube(est_path), read_cube(gt_path)
        rep = metrics.evaluate(est, gt)
        rows.append(rep.csv_row(est.id, args.scale, args.setting))
        curves.append((est.id, rep.per_band_psnr))
    _write_text(args.out, "\n".join(rows) + "\n")
    from . import report
    report.per_band_psnr_figure(curves, Path(args.out).with_suffix(".png"))
    _write_manifest(args, args.out)
    return 0


_ROBUST_METRICS = ("mpsnr", "mssim", "msam")


def _mean_metrics(reports: list[metrics.MetricReport]) -> dict[str, float]:
    return {m: float(np.mean([getattr(r, m) for r in reports])) for m in _ROBUST_METRICS}


def cmd_robustness(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cubes = [read_cube(p) for p in args.hr]
    rectifier = None
    if args.weights:
        if args.method != "srnet":
            raise UsageError("--weights applies to --method srnet")
        params, config = _load_srnet(args.weights)
        rectifier = lambda sr, lr: srnet.srnet_forward(sr, params, config)
    elif args.method == "sg":
        rectifier = lambda sr, lr: classical.sg_smooth(sr)
    elif args.method == "ibp":
        rectifier = lambda sr, lr: classical.ibp_refine(sr, lr, args.scale)

    settings = ("Train",) + tuple(s for s in SETTING_NAMES if s != "Train")
    table: dict[str, dict[str, float]] = {}
    for setting in settings:
        spec = DegradationSpec.named(setting, args.scale)
        base_reports, rect_reports = [], []
        for hr in cubes:
            cropped = degrade.center_crop(hr, args.scale)
            lr = degrade.apply_setting(cropped, spec)
            sr = training.bicubic_backbone(lr, args.scale)
            sr = HsiCube(np.clip(sr.data, 0.0, 1.0), sr.id)
            base_reports.append(metrics.evaluate(sr, cropped))
            if rectifier is not None:
                rect_reports.append(metrics.evaluate(rectifier(sr, lr), cropped))
        table[f"base:{setting}"] = _mean_metrics(base_reports)
        if rectifier is not None:
            table[f"{args.method}:{setting}"] = _mean_metrics(rect_reports)

    variants = ["base"] + ([args.method] if rectifier is not None else [])
    header = ["setting"] + [f"{m}_{v}" for v in variants for m in _ROBUST_METRICS]
    lines = [",".join(header)]
    for setting in settings:
        row = [setting]
        for v in variants:
            row += [repr(table[f"{v}:{setting}"][m]) for m in _ROBUST_METRICS]
        lines.append(",".join(row))
    _write_text(outdir / "robustness.csv", "\n".join(lines) + "\n")
    from . import report
    report.robustness_figure(list(settings), table, outdir / "robustness.png")
    _write_manifest(args, outdir)
    return 0


def cmd_emit_errormap(args) -> int:
    est, gt = read_cube(args.est), read_cube(args.gt)
    raw = metrics.error_map(est, gt, normalize=False)
    norm = metrics.error_map(est, gt, normalize=True)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(np.floor(norm * 255.0 + 0.5).astype(np.uint8), prefix.with_suffix(".pgm"))
    tmp = prefix.with_suffix(".f32.tmp")
    tmp.write_bytes(raw.astype("<f4").tobytes())
    tmp.replace(prefix.with_suffix(".f32"))
    from . import report
    report.errormap_figure(norm, prefix.with_suffix(".png"), title=est.id)
    if args.pseudo_rgb:
        write_ppm(pseudo_rgb(gt), prefix.with_suffix(".ppm"))
    _write_manifest(args, prefix.with_suffix(".pgm"))
    return 0


def cmd_emit_spectra(args) -> int:
    labeled = []
    for spec in args.cubes:
        label, sep, path = spec.partition("=")
        if not sep:
            raise UsageError(f"cube spec {spec!r} must be LABEL=PATH")
        labeled.append((label, read_cube(path)))
    pixels = []
    for p in args.pixel:
        try:
            i, j = (int(v) for v in p.split(","))
        except ValueError:
            raise UsageError(f"pixel {p!r} must be I,J")
        pixels.append((i, j))
    csv_text = export_spectra_csv(labeled, pixels)
    _write_text(args.out, csv_text)
    from . import report
    curves = [(f"{label}@{i}:{j}", cube.data[i, j, :])
              for label, cube in labeled for (i, j) in pixels]
    report.spectra_figure(curves, Path(args.out).with_suffix(".png"))
    _write_manifest(args, args.out)
    return 0


# FLOPs protocol: HR patch sizes per scale (LR 64^2 at x2, 32^2 at x4/x8).
_COMPLEXITY_SIZES = ((2, 128, 128), (4, 128, 128), (8, 256, 256))


def cmd_complexity(args) -> int:
    config = srnet.SrNetConfig(bands=args.bands, groups=args.groups, blocks=args.blocks,
                               refine_stages=args.refine_stages, rank=args.rank)
    n_params = srnet.count_params(srnet.init_params(config, seed="count"))
    rows = []
    for scale, h, w in _COMPLEXITY_SIZES:
        rows.append(dict(scale=scale, height=h, width=w, params=n_params,
                         flops=srnet.estimate_flops(config, h, w)))
    lines = ["scale,hr_height,hr_width,params,flops"]
    for r in rows:
        lines.append(f"{r['scale']},{r['height']},{r['width']},{r['params']},{r['flops']}")
    _write_text(args.out, "\n".join(lines) + "\n")
    from . import report
    report.complexity_figure(rows, Path(args.out).with_suffix(".png"))
    _write_manifest(args, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="hsrect", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="raw float32 -> HSC1 cube")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--layout", choices=("bsq", "bip"), default="bsq")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("degrade", help="HR cube -> LR observation under a setting")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--setting", choices=SETTING_NAMES, default="Train")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--save-hr", default=None, help="also write the center-cropped HR cube")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("upsample", help="bicubic backbone: LR cube -> SR cube")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("rectify", help="apply a spectral rectifier to an SR cube")
    p.add_argument("--sr", required=True)
    p.add_argument("--lr", default=None)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--method", choices=("sg", "pca", "ibp", "srnet"), required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--polyorder", type=int, default=3)
    p.add_argument("--ibp-steps", type=int, default=10)
    p.add_argument("--ibp-eta", type=float, default=1.0)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("pca-fit", help="fit the PCA spectral basis from cubes")
    p.add_argument("cubes", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", default="pca")
    p.set_defaults(func=cmd_pca_fit)

    p = sub.add_parser("train", help="toy-scale end-to-end training loop")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--cubes", type=int, default=16)
    p.add_argument("--lr-size", type=int, default=32)
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", default="toy")
    p.add_argument("--lambda-rec", type=float, default=1.0)
    p.add_argument("--lambda-deg", type=float, default=0.2)
    p.add_argument("--lr-max", type=float, default=1e-4)
    p.add_argument("--lr-min", type=float, default=1e-5)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--refine-stages", type=int, default=1)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--log-every", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for EST:GT cube pairs")
    p.add_argument("pairs", nargs="+", metavar="EST:GT")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--scale", type=int, default=0)
    p.add_argument("--setting", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="degradation-mismatch table over all settings")
    p.add_argument("hr", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--method", choices=("sg", "ibp", "srnet"), default="srnet")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("emit-errormap", help="band-averaged error map (PGM + raw f32 + figure)")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("-o", "--out", required=True, help="output prefix")
    p.add_argument("--pseudo-rgb", action="store_true", help="also render the GT pseudo-RGB PPM")
    p.set_defaults(func=cmd_emit_errormap)

    p = sub.add_parser("emit-spectra", help="per-pixel spectral curves (CSV + figure)")
    p.add_argument("cubes", nargs="+", metavar="LABEL=PATH")
    p.add_argument("--pixel", action="append", required=True, metavar="I,J")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_emit_spectra)

    p = sub.add_parser("complexity", help="parameter and FLOPs table per the patch protocol")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--refine-stages", type=int, default=1)
    p.add_argument("--rank", type=int, default=8)
    p.set_defaults(func=cmd_complexity)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # config-file values are injected before the explicit flags so flags win
    if "--config" in argv:
        i = argv.index("--config")
        try:
            cfg_path = argv[i + 1]
        except IndexError:
            print("error: --config needs a path", file=sys.stderr)
            return 1
        del argv[i:i + 2]
        try:
            injected = _load_config_file(cfg_path)
        except (OSError, UsageError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        argv = argv[:1] + injected + argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (CubeFormatError, wio.WeightsFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
