"""Command-line front end.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage or validation
errors. All subcommands are deterministic given their seed inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio, optim, quality, sphergeo
from .scene import export_ply, load_scene, save_scene

FACE_NAMES = ("front", "right", "back", "left", "up", "down")


class CliError(Exception):
    """Validation failure that maps to exit code 2."""


def _load_erp_checked(path) -> np.ndarray:
    if not Path(path).exists():
        raise CliError(f"no such file: {path}")
    img = dataio.load_erp_png(path)
    if img.shape[1] != 2 * img.shape[0]:
        raise CliError(
            f"{path}: ERP image must be 2:1, got {img.shape[1]}x{img.shape[0]}"
        )
    return img


def _check_padding(p: int, erp_h: int) -> None:
    if p < 0:
        raise CliError("--padding must be non-negative")
    if 2.0 * p / erp_h >= 0.5:
        raise CliError(
            f"--padding {p} too large for ERP height {erp_h}: the padded grid "
            f"range [-0.5 - 2p/H, 0.5 + 2p/H] requires 2p/H < 0.5 so padding "
            f"stays clear of the opposite face's center"
        )


def cmd_project(args) -> int:
    if args.direction == "to-cube":
        erp = _load_erp_checked(args.input)
        erp_h = erp.shape[0]
        face_res = args.face_res or erp_h // 2
        _check_padding(args.padding, erp_h)
        faces = sphergeo.erp_to_cubemap(erp, face_res, args.padding)
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for name, face in zip(FACE_NAMES, faces):
            dataio.save_face_png(face, out / f"{name}.png")
        (out / "cubemap.json").write_text(json.dumps({
            "face_res": face_res, "padding": args.padding,
            "erp_h": erp_h, "erp_w": erp.shape[1],
        }, indent=2) + "\n")
        return 0
    # to-erp
    src = Path(args.input)
    if not src.is_dir():
        raise CliError(f"expected a cubemap directory: {src}")
    meta_path = src / "cubemap.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    erp_h = args.erp_height or meta.get("erp_h")
    padding = args.padding if args.padding is not None else meta.get("padding", 0)
    if erp_h is None:
        raise CliError("--erp-height is required when cubemap.json is absent")
    _check_padding(padding, erp_h)
    faces = []
    for name in FACE_NAMES:
        f = src / f"{name}.png"
        if not f.exists():
            raise CliError(f"missing face image: {f}")
        faces.append(dataio.load_face_png(f))
    erp = sphergeo.cubemap_to_erp(faces, erp_h, 2 * erp_h, padding)
    dataio.save_erp_png(erp, args.output)
    return 0


def _config_from_args(args) -> tuple:
    cfg, extras = optim.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "disable_tp", False):
        cfg = replace(cfg, use_tp=False)
    if getattr(args, "disable_op", False):
        cfg = replace(cfg, use_op=False)
    if getattr(args, "disable_cp", False):
        cfg = replace(cfg, use_cp=False)
    return cfg, extras


def cmd_train(args) -> int:
    cfg, extras = _config_from_args(args)
    dataset_dir = args.dataset or extras.get("dataset")
    if not dataset_dir:
        raise CliError("no dataset given (use --dataset or a 'dataset' config key)")
    dataset = dataio.load_dataset(dataset_dir)
    scene, report = optim.train(dataset, cfg)
    out_scene = args.out_scene or extras.get("out_scene")
    if out_scene:
        save_scene(scene, out_scene)
        if args.ply:
            export_ply(scene, Path(out_scene).with_suffix(".ply"))
    report_path = args.report or extras.get("report")
    if report_path:
        report_path = Path(report_path)
        report.write(report_path, report_path.with_suffix(".summary.json"))
    metrics = " ".join(f"{k}={v:.4f}" for k, v in report.final_metrics.items())
    print(f"trained {len(scene)} gaussians; held-out {metrics}")
    return 0


def cmd_render(args) -> int:
    if args.config:
        cfg, _ = _config_from_args(args)
    else:
        cfg = optim.TrainConfig(
            face_res=args.face_res, padding_p=args.padding,
            use_tp=not args.disable_tp, use_cp=not args.disable_cp,
        )
    scene = load_scene(args.scene)
    dataset = dataio.load_dataset(args.dataset)
    if not 0 <= args.frame < len(dataset):
        raise CliError(f"--frame {args.frame} out of range (dataset has {len(dataset)})")
    _, pose = dataset.frames[args.frame]
    pano, _, _ = optim.render_pano(scene, pose, dataset.erp_h, cfg)
    dataio.save_erp_png(pano, args.out)
    return 0


def cmd_eval(args) -> int:
    render_dir = Path(args.render_dir)
    gt_dir = Path(args.gt_dir)
    names = sorted(p.name for p in render_dir.glob("*.png"))
    if not names:
        raise CliError(f"no PNG files in {render_dir}")
    rows = []
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            raise CliError(f"missing ground truth for {name}")
        render = dataio.load_erp_png(render_dir / name)
        gt = dataio.load_erp_png(gt_path)
        if render.shape != gt.shape:
            raise CliError(f"{name}: shape mismatch {render.shape} vs {gt.shape}")
        rows.append((name, quality.psnr(render, gt), quality.ssim(render, gt),
                     quality.seam_score(render)))
    lines = ["frame,psnr,ssim,seam"]
    for name, p, s, m in rows:
        lines.append(f"{name},{p:.17g},{s:.17g},{m:.17g}")
    arr = np.array([[p, s, m] for _, p, s, m in rows])
    mean = arr.mean(axis=0)
    lines.append(f"mean,{mean[0]:.17g},{mean[1]:.17g},{mean[2]:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    gt_scene, dataset = dataio.make_synthetic(
        args.gaussians, args.poses, args.erp_height, args.seed
    )
    dataio.save_dataset(dataset, args.out)
    if args.scene_out:
        save_scene(gt_scene, args.scene_out)
    print(f"wrote {len(dataset)} frames to {args.out}")
    return 0


ABLATION_ROWS = (
    ("baseline", dict(use_tp=False, use_op=False, use_cp=False)),
    ("tp", dict(use_tp=True, use_op=False, use_cp=False)),
    ("tp+op", dict(use_tp=True, use_op=True, use_cp=False)),
    ("tp+op+cp", dict(use_tp=True, use_op=True, use_cp=True)),
)


def cmd_ablate(args) -> int:
    cfg, extras = _config_from_args(args)
    dataset_dir = args.dataset or extras.get("dataset")
    if not dataset_dir:
        raise CliError("no dataset given (use --dataset or a 'dataset' config key)")
    dataset = dataio.load_dataset(dataset_dir)
    lines = ["variant,psnr,ssim,seam"]
    for name, flags in ABLATION_ROWS:
        variant = replace(cfg, **flags)
        _, report = optim.train(dataset, variant)
        m = report.final_metrics
        lines.append(f"{name},{m['psnr']:.17g},{m['ssim']:.17g},{m['seam']:.17g}")
        print(f"{name}: psnr={m['psnr']:.3f} ssim={m['ssim']:.4f} seam={m['seam']:.3f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="panosplat",
        description="Panoramic 3D Gaussian splatting via perspective cube faces",
    )
    ap.add_argument("--threads", type=int, default=None,
                    help="cap the worker thread count of the compute kernels")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="convert between ERP panoramas and cubemaps")
    p.add_argument("--direction", choices=("to-cube", "to-erp"), required=True)
    p.add_argument("--face-res", type=int, default=None,
                   help="face resolution in pixels (default: erp height / 2)")
    p.add_argument("--padding", type=int, default=None,
                   help="padding in ERP pixels per face side (default 0)")
    p.add_argument("--erp-height", type=int, default=None,
                   help="output ERP height for to-erp")
    p.add_argument("input", help="ERP PNG (to-cube) or cubemap directory (to-erp)")
    p.add_argument("output", help="cubemap directory (to-cube) or ERP PNG (to-erp)")
    p.set_defaults(func=cmd_project)

    t = sub.add_parser("train", help="run the two-stage optimization")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", default=None)
    t.add_argument("--out-scene", default=None)
    t.add_argument("--report", default=None, help="per-iteration CSV path")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--ply", action="store_true", help="also export a PLY next to the scene")
    t.add_argument("--disable-tp", action="store_true", help="drop the transition views")
    t.add_argument("--disable-op", action="store_true",
                   help="single-stage per-view training for the full budget")
    t.add_argument("--disable-cp", action="store_true", help="render without cube padding")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a composite panorama from a scene")
    r.add_argument("--scene", required=True)
    r.add_argument("--dataset", required=True, help="dataset supplying the pose")
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--face-res", type=int, default=64)
    r.add_argument("--padding", type=int, default=8)
    r.add_argument("--disable-tp", action="store_true")
    r.add_argument("--disable-cp", action="store_true")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM/seam metrics over matching PNG directories")
    e.add_argument("--render-dir", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--out", default=None, help="CSV output path (default stdout)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic scene and dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--gaussians", type=int, default=16)
    s.add_argument("--poses", type=int, default=8)
    s.add_argument("--erp-height", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scene-out", default=None, help="also write the ground-truth scene")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="train the 4-variant component grid and tabulate metrics")
    a.add_argument("--config", required=True)
    a.add_argument("--dataset", default=None)
    a.add_argument("--out", default=None, help="CSV output path (default stdout)")
    a.add_argument("--seed", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "project" and args.direction == "to-cube" and args.padding is None:
        args.padding = 0
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except Exception:
            pass
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
