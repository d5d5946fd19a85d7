"""Command-line entry point: ``partsplat <subcommand> --config run.toml``.

Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
failures while running.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, apply_env, load_config
from .editor import (MatchTargetProvider, RandomDirectionProvider, ZeroProvider, edit_pipeline,
                     write_loss_log)
from .galp import (Mask3D, SegMap2D, compute_softness, extract_mask3d, optimize_labels,
                   render_mask2d)
from .metrics import miou_3d
from .rasterizer import render
from .scene import LabelPalette
from .sh import constant_block
from .slamp import (LinearFlow, PartialTargetFlow, TargetFlow, default_eta, invert, run_sweep, scheduled_edit,
                    ts_sweep)
from .synth import (camera_rig, corrupt_maps, default_palette, gt_views, make_scene,
                    snap_to_palette)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# Published part-segmentation mIoU on real multi-object scenes, shown for
# context only; nothing here reproduces them.
REFERENCE_MIOU = (("LangSplat", 0.076), ("LeGaussian", 0.288), ("3D-GALP", 0.559))


def _palette(cfg):
    if cfg.palette:
        return LabelPalette.from_json(cfg.palette)
    return default_palette(cfg.scene_spec())


def _rig(cfg):
    r = cfg.rig
    return camera_rig(r.n_ring, r.n_top, r.radius, r.elevation_deg, r.top_elevation_deg,
                      cfg.render.width, cfg.render.height, r.fov_deg)


def _require(path):
    if not Path(path).exists():
        raise ConfigError(f"required input not found: {path}")
    return path


def _load_inputs(cfg):
    scene = io.load_ply(_require(cfg.path("scene", "scene.ply")))
    cams = io.load_cameras(_require(cfg.path("cameras", "cameras.json")))
    return scene, cams


def _heat(values):
    """Scalar per Gaussian -> RGB ramp (dark blue to yellow) after max normalization."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size and v.max() > 0 else 1.0
    x = np.clip(v / top, 0.0, 1.0)[:, None]
    return (1 - x) * np.array([0.1, 0.1, 0.5]) + x * np.array([1.0, 0.9, 0.1])


def cmd_synth(cfg, args):
    out = cfg.output_dir
    maps_dir = cfg.path("maps_dir", "maps")
    maps_dir.mkdir(parents=True, exist_ok=True)
    scene = make_scene(cfg.scene_spec())
    palette = _palette(cfg)
    cams = _rig(cfg)
    gt = gt_views(scene, cams, palette)
    noisy = corrupt_maps(gt, cfg.corruption_spec(), palette)
    io.save_ply(scene, cfg.path("scene", "scene.ply"))
    io.save_cameras(cams, cfg.path("cameras", "cameras.json"))
    io.save_palette(palette, out / "palette.json")
    for i, (g, n) in enumerate(zip(gt, noisy)):
        io.save_png(g.image, maps_dir / f"gt_{i:03d}.png")
        io.save_png(n.image, maps_dir / f"view_{i:03d}.png")
        io.save_png(n.confidence, maps_dir / f"view_{i:03d}_conf.png")
    print(f"wrote {len(scene)} Gaussians, {len(cams)} views to {out}")


def _load_maps(cfg, cams, palette):
    maps_dir = _require(cfg.path("maps_dir", "maps"))
    views = []
    for i, cam in enumerate(cams):
        img_path = _require(maps_dir / f"view_{i:03d}.png")
        conf_path = maps_dir / f"view_{i:03d}_conf.png"
        img = io.load_png(img_path)
        conf = io.load_png(conf_path) if conf_path.exists() else None
        # PNG quantization moves palette colors by < 1/255; snap them back
        views.append((cam, SegMap2D(palette.colors[snap_to_palette(img, palette)], conf)))
    return views


def cmd_segment(cfg, args):
    scene, cams = _load_inputs(cfg)
    palette = _palette(cfg)
    views = _load_maps(cfg, cams, palette)
    result = optimize_labels(scene, views, palette, cfg.galp)
    seg = scene.copy()
    seg.label_sh = result.label_sh
    out = cfg.output_dir
    io.save_ply(seg, out / "segmented.ply")
    mask = extract_mask3d(seg, palette, cfg.edit.target if cfg.edit.target in palette.names else 1)
    (out / "mask3d.json").write_text(json.dumps(mask.to_json()))
    with open(out / "segment_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l_render", "l_galp", "total"])
        for e in result.log:
            w.writerow([e["step"], e["l_render"], e["l_galp"], e["total"]])
    report = compute_softness(seg, palette)
    heat = seg.copy()
    heat.color_sh = constant_block(_heat(report.softness), seg.color_degree, len(seg))
    soft_dir = out / "softness"
    soft_dir.mkdir(exist_ok=True)
    for i, cam in enumerate(cams):
        io.save_png(render(heat, cam, "color", (0.0, 0.0, 0.0)).image, soft_dir / f"softness_{i:03d}.png")
    np.save(out / "softness.npy", report.softness)
    print(f"segmented {len(seg)} Gaussians; target {palette.names[mask.target]!r}: "
          f"{int(mask.selected.sum())} selected")


def _stub_anchor(image, mask2d, recolor, seed, slamp_cfg):
    """SLaMP anchor for one view with analytic stand-in velocity models.

    The edit request is the render with the target region recolored; the
    sampler is driven toward it by :class:`TargetFlow` while the masked
    schedule restores everything outside the region.
    """
    rng = np.random.default_rng(seed)
    target = np.where(mask2d[..., None] > 0, np.asarray(recolor, dtype=np.float64), image)
    noise = rng.standard_normal(image.shape)
    z_inv = invert(image, LinearFlow(image, noise), noise, slamp_cfg.gamma,
                   np.linspace(0.0, 1.0, slamp_cfg.n_steps + 1))
    sched = slamp_cfg.schedule()
    edited = scheduled_edit(z_inv, image, TargetFlow(target), None,
                            np.zeros(len(sched.timesteps)), sched, mask2d)
    return np.clip(edited.grid, 0.0, 1.0), target


def cmd_edit(cfg, args):
    seg_path = cfg.output_dir / "segmented.ply"
    scene = io.load_ply(_require(seg_path))
    cams = io.load_cameras(_require(cfg.path("cameras", "cameras.json")))
    mask = Mask3D.from_json(json.loads(Path(_require(cfg.output_dir / "mask3d.json")).read_text()))
    ec = cfg.edit.to_edit_config(cfg.render.background, cfg.galp.seed)
    views = cams[:cfg.edit.n_views] if cfg.edit.n_views > 0 else cams
    anchors, targets = [], []
    anchor_dir = cfg.output_dir / "anchors"
    anchor_dir.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(views):
        img = render(scene, cam, "color", ec.background).image
        m2 = render_mask2d(scene, mask, cam, ec.mask_threshold)
        a, t = _stub_anchor(img, m2, cfg.edit.recolor, cfg.slamp.seed + i, cfg.slamp)
        anchors.append(a)
        targets.append(t)
        io.save_png(a, anchor_dir / f"anchor_{i:03d}.png")
    provider = {"zero": ZeroProvider(), "match-target": MatchTargetProvider(targets),
                "random": RandomDirectionProvider(cfg.slamp.seed)}[cfg.edit.provider]
    result = edit_pipeline(scene, mask, views, anchors, provider, ec)
    io.save_ply(result.scene, cfg.output_dir / "edited.ply")
    write_loss_log(cfg.output_dir / "edit_log.csv", result.log)
    final = result.log[-1].total if result.log else 0.0
    print(f"edited {int(mask.selected.sum())} Gaussians over {ec.steps} steps; final loss {final:.4f}")


def cmd_render(cfg, args):
    name = args.scene or "scene.ply"
    path = Path(args.scene) if args.scene else cfg.path("scene", "scene.ply")
    scene = io.load_ply(_require(path))
    cams = io.load_cameras(_require(cfg.path("cameras", "cameras.json")))
    mask_path = cfg.output_dir / "mask3d.json"
    mask = None
    if mask_path.exists():
        mask = Mask3D.from_json(json.loads(mask_path.read_text()))
        if len(mask.selected) != len(scene):
            mask = None
    palette = _palette(cfg)
    out = cfg.output_dir / "renders" / Path(name).stem
    out.mkdir(parents=True, exist_ok=True)
    bg = cfg.render.background
    for i, cam in enumerate(cams):
        io.save_png(render(scene, cam, "color", bg).image, out / f"color_{i:03d}.png")
        io.save_png(render(scene, cam, "label", palette.background_color).image, out / f"label_{i:03d}.png")
        if mask is not None:
            io.save_png(render_mask2d(scene, mask, cam), out / f"mask_{i:03d}.png")
    print(f"rendered {len(cams)} views to {out}")


def cmd_eval(cfg, args):
    path = Path(args.scene) if args.scene else cfg.output_dir / "segmented.ply"
    scene = io.load_ply(_require(path))
    if scene.gt_part is None:
        raise ConfigError(f"{path} carries no gt_part property")
    palette = _palette(cfg)
    mask = extract_mask3d(scene, palette, 1)
    report = miou_3d(mask.assignment, scene.gt_part, len(palette))
    data = report.to_json()
    data["labels"] = list(palette.names)
    (cfg.output_dir / "iou.json").write_text(json.dumps(data, indent=1))
    print(f"{'label':<16}IoU")
    for name, v in zip(palette.names, report.per_label):
        print(f"{name:<16}{'n/a' if v is None else f'{v:.4f}'}")
    print(f"miou {report.miou:.4f}")
    print("reference mIoU on real scenes (published, not reproduced by this run):")
    for name, v in REFERENCE_MIOU:
        print(f"  {name:<14}{v:.3f}")


def _demo_latents(cfg):
    s = cfg.slamp
    rng = np.random.default_rng(s.seed)
    h, w, c = s.height, s.width, s.channels
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = np.stack([np.sin(2 * np.pi * (k + 1) * xx + k) * np.cos(2 * np.pi * yy * (k % 3 + 1))
                     for k in range(c)], axis=-1) * 0.5 + 0.5
    mask = np.zeros((h, w))
    mask[h // 4: 3 * h // 4, w // 4: 3 * w // 4] = 1.0
    # the stand-in editor recolors the region and also drifts the rest of the image
    target = np.where(mask[..., None] > 0, rng.uniform(0, 1, size=c), 1.0 - base)
    noise = rng.standard_normal(base.shape)
    return base, mask, target, noise


def cmd_slamp_demo(cfg, args):
    s = cfg.slamp
    base, mask, target, noise = _demo_latents(cfg)
    z_inv = invert(base, LinearFlow(base, noise), noise, s.gamma, np.linspace(0.0, 1.0, s.n_steps + 1))
    sched = s.schedule()
    eta = default_eta(s.n_steps, s.eta_decay_fraction)
    outputs = run_sweep(z_inv, base, PartialTargetFlow(target, 0.5), None, eta, sched, mask,
                         s.candidates)
    sweep = ts_sweep(outputs, base, tol=s.tol)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ts_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "ssim", "selected"])
        for t, v in zip(sweep.ts_values, sweep.ssim):
            w.writerow([t, v, int(t == sweep.selected)])
    plot = {"x": sweep.ts_values, "y": sweep.ssim, "selected": sweep.selected,
            "degenerate": sweep.degenerate, "xlabel": "t_s", "ylabel": "SSIM vs original"}
    (out / "ts_sweep.json").write_text(json.dumps(plot, indent=1))
    io.save_latent(outputs[sweep.selected], out / "edited_latent.bin", t=0.0)
    for t, v in zip(sweep.ts_values, sweep.ssim):
        print(f"t_s={t:<4d} ssim={v:.4f}{'  <- selected' if t == sweep.selected else ''}")


COMMANDS = {
    "synth": (cmd_synth, "write scene, cameras and ground-truth/corrupted label maps"),
    "segment": (cmd_segment, "fit label SH to the maps; write labeled PLY, mask and softness renders"),
    "edit": (cmd_edit, "edit the target part toward stub SLaMP anchors"),
    "render": (cmd_render, "write color, label and mask PNGs per camera"),
    "eval": (cmd_eval, "per-label IoU of the segmented scene against its gt_part labels"),
    "slamp-demo": (cmd_slamp_demo, "t_s sweep of the scheduled latent blend with stub models"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="partsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="run configuration (TOML)")
        p.add_argument("--output-dir", help="override [paths] output_dir")
        if name in ("render", "eval"):
            p.add_argument("--scene", help="PLY to use instead of the configured default")
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:   # argparse: --help exits 0, usage errors exit 2
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = apply_env(load_config(args.config))
        if args.output_dir:
            cfg.paths.output_dir = str(Path(args.output_dir).resolve())
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:   # any failure after configuration is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(cli_main())
