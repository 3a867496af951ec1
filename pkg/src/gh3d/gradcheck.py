"""Finite-difference checks of every hand-written backward pass.

Each check compares an analytic derivative against central differences
evaluated in double precision and reports the worst relative error over the
entries whose finite-difference magnitude exceeds ``floor``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import torch

from .hair.blend import blend_hair_shape
from .hair.family import hairstyle_family
from .hair.jacobian import operator_for, poisson_solve_torch
from .losses import l_mask, l_pos_reg, l_rgb, l_scale_reg, l_seg, l_seg_mesh, l_uv_tv
from .render.rasterizer import render, render_torch
from .scene.meshes import face_head, hair_cap
from .scene.types import FACE, HAIR, CameraPose, GaussianSet
from .silhouette import render_mesh_labels_torch

PARAMETERS = ("positions", "rotations", "scales", "colors", "opacities")
HEADS = ("rgb", "mask", "seg")


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    entries: int  # entries compared

    @property
    def passed(self) -> bool:
        return self.entries > 0 and self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g}, {self.entries} entries)"


def _rel_errors(analytic, fd, floor: float):
    analytic, fd = np.asarray(analytic, np.float64).ravel(), np.asarray(fd, np.float64).ravel()
    keep = np.abs(fd) > floor
    if not keep.any():
        return 0.0, 0
    return float(np.max(np.abs(analytic[keep] - fd[keep]) / np.abs(fd[keep]))), int(keep.sum())


def random_gaussians(rng: np.random.Generator, count: int, spread: float = 25.0):
    """Parameter arrays (positions, rotations, scales, colors, opacities, labels) near the origin."""
    return [rng.normal(0.0, spread, (count, 3)),
            rng.normal(size=(count, 4)),
            np.exp(rng.uniform(np.log(3.0), np.log(15.0), (count, 3))),
            rng.uniform(0.05, 0.95, (count, 3)),
            rng.uniform(0.1, 0.9, count),
            np.where(rng.random(count)[:, None] < 0.5, FACE, HAIR)]


def check_renderer(seed: int = 0, count: int = 50, size: int = 32, dtype=torch.float32, h: float = 1e-6,
                   tolerance: float = 1e-3, floor: float = 1e-8, order: int = 2) -> CheckResult:
    """Renderer parameter gradients, each output head separately.

    The analytic route runs through the torch interface at ``dtype``; the
    oracle differences the numpy renderer in double precision at the same
    (dtype-rounded) parameters. ``order`` 4 uses the five-point stencil, which
    allows a larger ``h`` and so less roundoff on small derivatives.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    rng = np.random.default_rng(seed)
    params = [torch.as_tensor(p, dtype=dtype).numpy().astype(np.float64) for p in random_gaussians(rng, count)]
    cam = CameraPose.orbit(float(rng.uniform(0, 360)), float(rng.uniform(-20, 20)), 400.0, focal=1.5)
    bg = tuple(rng.uniform(0, 1, 3))
    shape = (size, size)
    weights = {"rgb": rng.normal(size=(size, size, 3)), "mask": rng.normal(size=shape),
               "seg": rng.normal(size=(size, size, 3))}

    tensors = [torch.tensor(p, dtype=dtype, requires_grad=i < len(PARAMETERS)) for i, p in enumerate(params)]
    analytic = {}
    for head_index, head in enumerate(HEADS):
        for t in tensors[:len(PARAMETERS)]:
            t.grad = None
        outs = render_torch(GaussianSet(*tensors), cam, shape, bg)
        (outs[head_index] * torch.as_tensor(weights[head], dtype=dtype)).sum().backward()
        analytic[head] = [t.grad.numpy().astype(np.float64).copy() for t in tensors[:len(PARAMETERS)]]

    def heads(p):
        out = render(GaussianSet(*p), cam, shape, bg)
        return {k: float((weights[k] * getattr(out, k)).sum()) for k in HEADS}

    worst, entries = 0.0, 0
    for pi in range(len(PARAMETERS)):
        fd = {k: np.zeros(params[pi].shape) for k in HEADS}
        for idx in np.ndindex(params[pi].shape):
            step = h * max(1.0, abs(params[pi][idx]))

            def at(offset):
                shifted = [p.copy() for p in params]
                shifted[pi][idx] += offset
                return heads(shifted)

            hp, hm = at(step), at(-step)
            if order == 2:
                for k in HEADS:
                    fd[k][idx] = (hp[k] - hm[k]) / (2 * step)
            else:
                hp2, hm2 = at(2 * step), at(-2 * step)
                for k in HEADS:
                    fd[k][idx] = (8 * (hp[k] - hm[k]) - (hp2[k] - hm2[k])) / (12 * step)
        for k in HEADS:
            err, n = _rel_errors(analytic[k][pi], fd[k], floor)
            worst, entries = max(worst, err), entries + n
    return CheckResult(f"renderer[seed={seed}]", worst, tolerance, entries)


def directional_check(name: str, fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, rng: np.random.Generator,
                      directions: int = 4, h: float = 1e-6, tolerance: float = 1e-5,
                      floor: float = 1e-8) -> CheckResult:
    """Compare <w, J v> from autograd against central differences for random v and w (double precision)."""
    x = x.detach().to(torch.float64)
    out0 = fn(x)
    w = torch.as_tensor(rng.normal(size=tuple(out0.shape)), dtype=torch.float64)
    xr = x.clone().requires_grad_(True)
    (fn(xr) * w).sum().backward()
    grad = xr.grad.detach()
    analytic, fd = [], []
    with torch.no_grad():
        for _ in range(directions):
            v = torch.as_tensor(rng.normal(size=tuple(x.shape)), dtype=torch.float64)
            analytic.append(float((grad * v).sum()))
            fd.append(float(((fn(x + h * v) - fn(x - h * v)) * w).sum()) / (2 * h))
    err, n = _rel_errors(analytic, fd, floor)
    return CheckResult(name, err, tolerance, n)


def check_silhouette(seed: int = 0, size: int = 64) -> CheckResult:
    face, hair = face_head(), hair_cap()
    cam = CameraPose.orbit(30.0, 10.0, 600.0, (0.0, 12.0, 0.0))
    face_v = torch.as_tensor(face.vertices)

    def fn(hv):
        return render_mesh_labels_torch([face_v, hv], [face.faces, hair.faces], [1.0, 2.0], cam, (size, size))

    return directional_check("mesh silhouette", fn, torch.as_tensor(hair.vertices), np.random.default_rng(seed),
                             h=1e-5, tolerance=1e-4)


def check_poisson(seed: int = 0) -> CheckResult:
    hair = hair_cap(n_lon=12, n_rings=6)
    op = operator_for(hair)
    rng = np.random.default_rng(seed)
    j0 = torch.as_tensor(np.eye(3) + 0.1 * rng.normal(size=(op.num_faces, 3, 3)))
    t = torch.zeros(3, dtype=torch.float64)
    return directional_check("poisson solve", lambda j: poisson_solve_torch(j, t, op), j0, rng)


def check_blend(seed: int = 0) -> CheckResult:
    from .hair.blend import build_blend_model

    meshes, _ = hairstyle_family(hair_cap(n_lon=12, n_rings=6), 6, seed)
    model = build_blend_model(meshes, 8)
    rng = np.random.default_rng(seed)
    return directional_check("blend shapes", lambda th: blend_hair_shape(model, th),
                             torch.as_tensor(rng.normal(size=8)), rng)


def check_losses(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    size = 8
    target_rgb = torch.as_tensor(rng.uniform(size=(size, size, 3)))
    target_mask = torch.as_tensor(rng.uniform(size=(size, size)))
    classes = torch.as_tensor(rng.integers(0, 3, (size, size)))
    valid = rng.random((size, size)) < 0.8

    def rand(*shape, low=-1.0, high=1.0):
        return torch.as_tensor(rng.uniform(low, high, shape))

    cases = [
        ("loss rgb", lambda x: l_rgb(x, target_rgb), rand(size, size, 3, low=0.0)),
        ("loss mask", lambda x: l_mask(x, target_mask), rand(size, size, low=0.0)),
        ("loss seg", lambda x: l_seg(torch.softmax(x, -1), classes), rand(size, size, 3)),
        ("loss seg mesh", lambda x: l_seg_mesh(x, classes), rand(size, size, low=0.0, high=2.0)),
        ("loss position", l_pos_reg, rand(20, 3)),
        ("loss scale", l_scale_reg, rand(20, 3, low=0.0, high=7.0)),
        ("loss uv tv", lambda x: l_uv_tv(x, valid), rand(size, size, 14)),
    ]
    return [directional_check(name, fn, x, rng, h=1e-7) for name, fn, x in cases]


def check_end_to_end(seed: int = 0, pixels: int = 8, h: float = 1e-5, tolerance: float = 1e-3,
                     floor: float = 1e-8) -> CheckResult:
    """d(pixel)/d(z) through mapping, synthesis, spawning and rendering on a 16x16 toy configuration.

    The oracle is the full central-difference Jacobian over every entry of z;
    the analytic route backpropagates from ``pixels`` individual pixel values
    (the brightest-gradient foreground pixels of the rgb and mask heads).
    """
    from .nets.config import SynthesisConfig
    from .nets.generator import Generator, generate
    from .pipeline import default_blend_model, render_sample

    cfg = SynthesisConfig(output_resolution=16, image_resolution=16)
    net = Generator(cfg, seed=seed).double()
    model = default_blend_model(num_coeffs=cfg.num_coeffs)
    cam = CameraPose.orbit(20.0, 10.0, 600.0, (0.0, 12.0, 0.0))
    z0 = torch.as_tensor(np.random.default_rng(seed).standard_normal(cfg.z_dim))

    def images(z):
        r = render_sample(generate(net, z, cam, drop=False), model, cam, cfg.image_resolution)
        return torch.cat([r.rgb.reshape(-1), r.mask.reshape(-1)])

    with torch.no_grad():
        base = images(z0)
        jac = np.zeros((base.numel(), cfg.z_dim))
        for i in range(cfg.z_dim):
            dz = torch.zeros(cfg.z_dim, dtype=torch.float64)
            dz[i] = h
            jac[:, i] = ((images(z0 + dz) - images(z0 - dz)) / (2 * h)).numpy()
    chosen = np.argsort(-np.abs(jac).max(axis=1))[:pixels]
    worst, entries = 0.0, 0
    for p in chosen:
        z = z0.clone().requires_grad_(True)
        images(z)[int(p)].backward()
        err, n = _rel_errors(z.grad.numpy(), jac[p], floor)
        worst, entries = max(worst, err), entries + n
    return CheckResult("end to end d(pixel)/d(z)", worst, tolerance, entries)


def run_suite(renderer_scenes: int = 2, include_end_to_end: bool = True,
              log: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    """All checks; ``log`` is called as each result arrives."""
    jobs: List[Callable[[], object]] = [lambda s=s: check_renderer(seed=s) for s in range(renderer_scenes)]
    jobs += [check_silhouette, check_poisson, check_blend, check_losses]
    if include_end_to_end:
        jobs.append(check_end_to_end)
    results: List[CheckResult] = []
    for job in jobs:
        out = job()
        for r in out if isinstance(out, list) else [out]:
            results.append(r)
            if log is not None:
                log(r)
    return results
