"""Command-line entry point.

Every subcommand writes ``config.txt`` (the resolved run configuration),
``metrics.jsonl`` (one JSON object per line) and its artifacts under
``--out``. Exit codes: 0 success, 2 usage, 3 configuration or data,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
from PIL import Image

from .config import MODES, RunConfig, load_config, parse_config_text
from .errors import ConfigurationError, GH3DError, NumericError

# per-mode defaults, overridden by the config file, then --set, then explicit flags
MODE_DEFAULTS: Dict[str, Dict[str, str]] = {
    "train-toy": {"image_size": "32", "texture_resolution": "16", "iterations": "200", "num_scenes": "2"},
    "fit-hair": {"image_size": "256", "iterations": "500"},
    "sample": {"image_size": "64", "texture_resolution": "16"},
    "edit": {"image_size": "64", "texture_resolution": "16"},
    "cfg-sweep": {"image_size": "64", "texture_resolution": "16"},
}
FLAG_KEYS = ("seed", "iterations", "lr", "lr_d", "image_size", "texture_resolution", "num_views", "num_scenes",
             "pose_swap_prob", "omega")


class Run:
    """Output directory plus metrics log of one CLI invocation."""

    def __init__(self, config: RunConfig, emit_float: bool):
        self.config = config
        self.emit_float = emit_float
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.txt").write_text(config.to_text())
        self._log = open(self.out / "metrics.jsonl", "w")

    def log(self, **values):
        if self._log is None:
            self._log = open(self.out / "metrics.jsonl", "a")
        self._log.write(json.dumps(values, sort_keys=True) + "\n")
        self._log.flush()

    def close(self):
        if self._log is not None:
            self._log.close()
            self._log = None

    def image(self, name: str, array, kind: str):
        """Write an rgb (H, W, 3), mask (H, W) or label image as PNG, or as a float64 .npy dump."""
        a = np.asarray(array.detach().numpy() if isinstance(array, torch.Tensor) else array, dtype=np.float64)
        if self.emit_float:
            np.save(self.out / f"{name}.npy", a)
            return
        if kind == "mask":
            img = Image.fromarray(np.round(np.clip(a, 0, 1) * 65535).astype(np.uint16))
        elif kind == "labels":
            img = Image.fromarray(np.round(np.clip(a * 100.0, 0, 255)).astype(np.uint8))  # label x 100
        else:
            img = Image.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8))
        img.save(self.out / f"{name}.png")


# ------------------------------------------------------------------ subcommands

def _dataset_spec(cfg: RunConfig):
    from .data import DatasetSpec

    return DatasetSpec(num_scenes=cfg.num_scenes, num_views=cfg.num_views, image_size=cfg.image_size,
                       texture_resolution=cfg.texture_resolution)


def _load_or_make_dataset(cfg: RunConfig, data_dir: Optional[str]):
    from .data import load_dataset, make_synthetic_dataset

    if data_dir:
        return load_dataset(data_dir)
    return make_synthetic_dataset(_dataset_spec(cfg), cfg.seed)


def _pick_scene(scenes, index: int):
    if not 0 <= index < len(scenes):
        raise ConfigurationError(f"--scene {index} is out of range for {len(scenes)} scene(s)")
    return scenes[index]


def cmd_gen_data(run: Run, args):
    from .data import save_dataset

    scenes = _load_or_make_dataset(run.config, None)
    save_dataset(run.out / "data", scenes)
    for i, s in enumerate(scenes):
        run.log(scene=i, views=s.num_views, mask_mean=float(s.mask.mean()),
                hair_fraction=float((s.seg_class == 2).mean()))
        for v in range(s.num_views):
            run.image(f"scene_{i:03d}_view_{v}_rgb", s.rgb[v], "rgb")


def cmd_fit_hair(run: Run, args):
    from .hair.family import HairstyleParams, hairstyle
    from .hair.fitting import HairFitConfig, fit_hair_mesh, silhouette_iou
    from .scene.io import save_obj
    from .scene.meshes import hair_cap
    from .scene.types import CameraPose
    from .silhouette import LabeledMeshScene, render_mesh_labels

    cfg = run.config
    template = hair_cap()
    params = HairstyleParams.sample(np.random.default_rng(cfg.seed))
    target = hairstyle(template, params)
    size = (cfg.image_size, cfg.image_size)
    cams = [CameraPose.orbit(y, 10.0) for y in (0.0, 90.0, 180.0, 270.0)]
    targets = [(c, render_mesh_labels(LabeledMeshScene([target]), c, size)) for c in cams]
    result = fit_hair_mesh(template, targets, HairFitConfig(iterations=cfg.budget(500),
                                                            lr=cfg.learning_rate(HairFitConfig.lr)))
    for it, (loss, fg) in enumerate(zip(result.trace, result.foreground)):
        run.log(step=it, loss=loss, foreground=fg)
    save_obj(run.out / "fitted_hair.obj", result.mesh)
    save_obj(run.out / "target_hair.obj", target)
    ious = []
    for k, (cam, img) in enumerate(targets):
        fitted = render_mesh_labels(LabeledMeshScene([result.mesh]), cam, size)
        ious.append(silhouette_iou(fitted, img, 1.0))
        run.image(f"view_{k}_target", img, "labels")
        run.image(f"view_{k}_fitted", fitted, "labels")
    run.log(final_loss=result.loss, iou=ious, iterations=len(result.trace) - 1)


def cmd_build_pca(run: Run, args):
    from .hair.blend import blend_hair_shape, build_blend_model, project_to_coeffs, save_blend_model
    from .hair.family import hairstyle_family
    from .scene.meshes import hair_cap

    template = hair_cap()
    meshes, _ = hairstyle_family(template, args.num_meshes, run.config.seed)
    model = build_blend_model(meshes, args.components)
    save_blend_model(run.out / "blend_model.3dgh", model)
    for i, m in enumerate(meshes):
        recon = blend_hair_shape(model, project_to_coeffs(model, m.vertices))
        rms = float(np.sqrt(np.mean(np.sum((recon - m.vertices) ** 2, axis=1))))
        run.log(mesh=i, reconstruction_rms_over_diag=rms / m.bbox_diagonal())
    run.log(rank=model.rank, sigma=model.sigma, components=model.num_coeffs)


def cmd_fit_gaussians(run: Run, args):
    from .reconstruct import CHANNEL_GROUPS, GaussianFitConfig, fit_gaussians
    from .scene.io import save_table

    cfg = run.config
    scene = _pick_scene(_load_or_make_dataset(cfg, args.data), args.scene)
    fit_cfg = GaussianFitConfig(iterations=cfg.budget(2000), weights=cfg.loss_weights(), seed=cfg.seed,
                                init=args.init)
    if cfg.lr:
        fit_cfg.lr = {g: cfg.lr for g in CHANNEL_GROUPS}
    result = fit_gaussians(scene, fit_cfg, callback=lambda it, values: run.log(step=it, **values))
    save_table(run.out / "textures.3dgh", {"face_texture": result.face_texture, "hair_texture": result.hair_texture})
    for v, m in enumerate(result.final):
        run.log(view=v, psnr=m.psnr, seg_accuracy=m.seg_accuracy, mask_iou=m.mask_iou)
    mean = result.mean()
    run.log(mean_psnr=mean.psnr, mean_seg_accuracy=mean.seg_accuracy, mean_mask_iou=mean.mask_iou)
    _render_scene(run, scene, result.face_texture, result.hair_texture)


def _render_scene(run: Run, scene, face_tex, hair_tex, prefix="view"):
    from .data import scene_gaussians
    from .render.rasterizer import reference_render

    gset = scene_gaussians(scene.face_mesh, scene.hair_mesh, face_tex, hair_tex)
    outs = []
    for v, cam in enumerate(scene.cameras):
        out = reference_render(gset, cam, (scene.image_size, scene.image_size), scene.background)
        run.image(f"{prefix}_{v}_rgb", out.rgb, "rgb")
        run.image(f"{prefix}_{v}_mask", out.mask, "mask")
        run.image(f"{prefix}_{v}_seg", out.seg, "rgb")
        outs.append(out)
    return outs


def cmd_render(run: Run, args):
    from .scene.io import load_table

    if not args.data:
        raise ConfigurationError("render needs --data (a dataset directory written by gen-data)")
    scene = _pick_scene(_load_or_make_dataset(run.config, args.data), args.scene)
    face_tex, hair_tex = scene.face_texture, scene.hair_texture
    if args.textures:
        table = load_table(args.textures)
        face_tex, hair_tex = (np.asarray(table[k], np.float64) for k in ("face_texture", "hair_texture"))
    outs = _render_scene(run, scene, face_tex, hair_tex)
    # stored images are f32, so compare at that precision
    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    for v, out in enumerate(outs):
        run.log(view=v, max_abs_diff_rgb=float(np.abs(f32(out.rgb) - scene.rgb[v]).max()),
                max_abs_diff_mask=float(np.abs(f32(out.mask) - scene.mask[v]).max()))


def _net_config(cfg: RunConfig):
    from .nets.config import SynthesisConfig

    return SynthesisConfig(output_resolution=cfg.texture_resolution, image_resolution=cfg.image_size)


def cmd_train_toy(run: Run, args):
    from dataclasses import asdict

    from .train import TrainConfig, train_toy_gan

    cfg = run.config
    net_cfg = _net_config(cfg)
    dataset = _load_or_make_dataset(cfg, args.data)
    tc = TrainConfig(steps=cfg.budget(200), seed=cfg.seed, lr_g=cfg.learning_rate(TrainConfig.lr_g),
                     lr_d=cfg.lr_d or TrainConfig.lr_d, pose_swap_prob=cfg.pose_swap_prob,
                     weights=cfg.loss_weights(), net=net_cfg, checkpoint_every=args.checkpoint_every)
    run.close()  # the trainer owns metrics.jsonl
    (run.out / "net_config.json").write_text(json.dumps(asdict(net_cfg), sort_keys=True) + "\n")
    result = train_toy_gan(dataset, tc, run.out)
    summary = {"steps": result.steps, "drops": result.drops, "swaps": result.swaps}
    (run.out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")


def _load_generator(path: Optional[str]):
    from .nets.checkpoint import load_checkpoint
    from .nets.config import SynthesisConfig
    from .nets.discriminator import Discriminator
    from .nets.generator import Generator

    if not path:
        raise ConfigurationError("this command needs --checkpoint (written by train-toy)")
    ckpt = Path(path)
    meta = ckpt.parent / "net_config.json"
    if not ckpt.is_file() or not meta.is_file():
        raise ConfigurationError(f"missing checkpoint {ckpt} or its net_config.json")
    values = json.loads(meta.read_text())
    values["channels"] = {int(k): v for k, v in values.get("channels", {}).items()}
    net_cfg = SynthesisConfig(**values)
    gen, disc = Generator(net_cfg), Discriminator(net_cfg)
    load_checkpoint(ckpt, {"generator": gen, "discriminator": disc})
    return gen


def _latent(net, seed: int) -> torch.Tensor:
    return torch.as_tensor(np.random.default_rng(seed).standard_normal(net.cfg.z_dim), dtype=net.dtype)


def _write_edit(run: Run, result, prefix: str):
    from .scene.io import save_table

    for v, img in enumerate(result.images):
        run.image(f"{prefix}_view_{v}_rgb", img.rgb, "rgb")
        run.image(f"{prefix}_view_{v}_mask", img.mask, "mask")
        run.log(set=prefix, view=v, mask_mean=float(img.mask.mean()), rgb_mean=float(img.rgb.mean()))
    out = result.output
    save_table(run.out / f"{prefix}_textures.3dgh", {"hair": out.hair[0].numpy(), "face": out.face[0].numpy(),
                                                      "theta": out.theta[0].numpy()})


def _cond_camera():
    from .pipeline import sweep_cameras

    return sweep_cameras(1)[0]


def cmd_sample(run: Run, args):
    from .pipeline import edit_hairstyle, sweep_cameras

    net = _load_generator(args.checkpoint)
    z = _latent(net, run.config.seed)
    result = edit_hairstyle(net, z, z, _cond_camera(), run.config.omega, cameras=sweep_cameras(args.views),
                            image_size=run.config.image_size)
    _write_edit(run, result, "sample")


def cmd_edit(run: Run, args):
    from .pipeline import edit_hairstyle, sweep_cameras

    net = _load_generator(args.checkpoint)
    result = edit_hairstyle(net, _latent(net, args.face_seed), _latent(net, args.hair_seed), _cond_camera(),
                            run.config.omega, cameras=sweep_cameras(args.views), image_size=run.config.image_size)
    _write_edit(run, result, "edit")


def cmd_cfg_sweep(run: Run, args):
    from .pipeline import cfg_sweep, sweep_cameras

    net = _load_generator(args.checkpoint)
    try:
        omegas = [float(x) for x in args.omegas.split(",")]
    except ValueError:
        raise ConfigurationError(f"cannot parse --omegas {args.omegas!r}") from None
    results = cfg_sweep(net, _latent(net, run.config.seed), _cond_camera(), omegas,
                        cameras=sweep_cameras(args.views), image_size=run.config.image_size)
    for omega, result in zip(omegas, results):
        _write_edit(run, result, f"omega_{omega:g}")


def cmd_check_grads(run: Run, args):
    from .gradcheck import run_suite

    def log(result):
        print(result.line())
        run.log(check=result.name, max_rel_error=result.max_rel_error, tolerance=result.tolerance,
                entries=result.entries, passed=result.passed)

    results = run_suite(renderer_scenes=args.renderer_scenes, include_end_to_end=not args.skip_end_to_end, log=log)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient checks failed: {', '.join(failed)}")


COMMANDS = {
    "gen-data": cmd_gen_data, "fit-hair": cmd_fit_hair, "build-pca": cmd_build_pca,
    "fit-gaussians": cmd_fit_gaussians, "train-toy": cmd_train_toy, "sample": cmd_sample, "edit": cmd_edit,
    "cfg-sweep": cmd_cfg_sweep, "render": cmd_render, "check-grads": cmd_check_grads,
}


# ------------------------------------------------------------------ parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: run)")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--emit-float", action="store_true", help="write images as float64 .npy instead of PNG")
    common.add_argument("--seed", type=int)
    common.add_argument("--iterations", type=int, help="iteration or step budget")
    common.add_argument("--lr", type=float)
    common.add_argument("--lr-d", type=float, help="discriminator learning rate")
    common.add_argument("--image-size", type=int)
    common.add_argument("--texture-resolution", type=int)
    common.add_argument("--num-views", type=int)
    common.add_argument("--num-scenes", type=int)
    common.add_argument("--pose-swap-prob", type=float)
    common.add_argument("--omega", type=float, help="guidance strength")

    parser = argparse.ArgumentParser(prog="gh3d", description="Composable Gaussian head toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate a synthetic multi-view dataset",
        "fit-hair": "fit the hair template to silhouettes of a procedural hairstyle",
        "build-pca": "build a hair blend-shape model from the procedural family",
        "fit-gaussians": "optimize raw Gaussian textures against a synthetic scene",
        "train-toy": "train the toy generator/discriminator pair",
        "sample": "render a sample from a trained generator",
        "edit": "combine the face of one latent with the hair of another",
        "cfg-sweep": "render one sample at several guidance strengths",
        "render": "render a stored scene (optionally with fitted textures)",
        "check-grads": "run the finite-difference gradient suite",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, text in helps.items()}
    for name in ("fit-gaussians", "train-toy", "render"):
        subs[name].add_argument("--data", help="dataset directory (default: generate from the seed)")
    for name in ("fit-gaussians", "render"):
        subs[name].add_argument("--scene", type=int, default=0)
    subs["fit-gaussians"].add_argument("--init", choices=("random", "ground_truth"), default="random")
    subs["render"].add_argument("--textures", help="texture table written by fit-gaussians")
    subs["train-toy"].add_argument("--checkpoint-every", type=int, default=100)
    subs["build-pca"].add_argument("--num-meshes", type=int, default=10)
    subs["build-pca"].add_argument("--components", type=int, default=32)
    for name in ("sample", "edit", "cfg-sweep"):
        subs[name].add_argument("--checkpoint", help="checkpoint.3dgh written by train-toy")
        subs[name].add_argument("--views", type=int, default=5, help="yaw sweep views over 0..180 degrees")
    subs["edit"].add_argument("--face-seed", type=int, default=0)
    subs["edit"].add_argument("--hair-seed", type=int, default=1)
    subs["cfg-sweep"].add_argument("--omegas", default="0,0.5,1")
    subs["check-grads"].add_argument("--renderer-scenes", type=int, default=2)
    subs["check-grads"].add_argument("--skip-end-to-end", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    values: Dict[str, str] = {"mode": args.command, **MODE_DEFAULTS.get(args.command, {})}
    if args.config:
        values.update({k: v for k, v in load_config_values(args.config).items()})
        values["mode"] = args.command
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for key in FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    if args.out is not None:
        values["out_dir"] = args.out
    return RunConfig.from_mapping(values)


def load_config_values(path) -> Dict[str, str]:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) or usage errors (2)
        return int(exc.code or 0)
    run = None
    try:
        config = resolve_config(args)
        torch.manual_seed(config.seed)
        run = Run(config, args.emit_float)
        COMMANDS[args.command](run, args)
        return 0
    except GH3DError as err:
        print(f"error [{type(err).__name__}]: {err}", file=sys.stderr)
        if run is not None:
            run.log(error=type(err).__name__, message=str(err))
        return err.exit_code
    finally:
        if run is not None:
            run.close()


def entry() -> None:
    sys.exit(main())


__all__ = ["main", "entry", "build_parser", "resolve_config", "MODES", "load_config"]
