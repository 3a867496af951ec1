"""Multi-view silhouette fitting of the hair template through its Jacobian field."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch

from ..errors import ConfigurationError, NumericError, ShapeError
from ..scene.types import CameraPose, TemplateMesh
from ..silhouette import DEFAULT_SOFTNESS, render_mesh_labels_torch
from .jacobian import GradientOperator, JacobianField, operator_for, poisson_solve_torch


@dataclass
class HairFitConfig:
    """Optimizer settings.

    ``lr`` drives the Jacobians and ``lr_translation`` the centroid offset
    (world units, measured from the template's own centroid).
    """

    iterations: int = 500
    lr: float = 1e-2
    lr_translation: float = 1e-2
    betas: Tuple[float, float] = (0.9, 0.999)
    softness: float = DEFAULT_SOFTNESS
    tolerance: float = 1e-10  # stop once the loss is at or below this value

    def __post_init__(self):
        if self.iterations < 0 or self.lr <= 0 or self.lr_translation < 0:
            raise ConfigurationError("iterations must be >= 0 and learning rates positive")


@dataclass
class HairFitResult:
    mesh: TemplateMesh
    loss: float
    trace: List[float]
    field: JacobianField
    foreground: List[int] = field(default_factory=list)  # hard foreground pixels per iteration (all views)


def _label_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"label image must be H x W, got shape {a.shape}")
    return a


def fit_hair_mesh(template: TemplateMesh, targets: Sequence[Tuple[CameraPose, np.ndarray]],
                  config: HairFitConfig | None = None, occluders: Sequence[TemplateMesh] = (),
                  op: GradientOperator | None = None) -> HairFitResult:
    """Deform ``template`` so its label renders match ``targets`` in mean absolute error.

    The loss is the mean over views of the per-pixel L1 distance between the
    rendered and target label values. ``occluders`` are static labelled parts
    (e.g. the head) composited with the hair but not optimized.
    """
    config = config or HairFitConfig()
    if len(targets) == 0:
        raise ConfigurationError("fit_hair_mesh needs at least one target view")
    op = op or operator_for(template)
    views = [(cam, torch.as_tensor(_label_image(img))) for cam, img in targets]
    hair_label = float(template.labels.max())
    occ_v = [torch.as_tensor(m.vertices) for m in occluders]
    occ_f = [m.faces for m in occluders]
    occ_l = [float(m.labels.max()) for m in occluders]

    rest_center = torch.as_tensor(template.vertices.mean(0))
    jac = torch.eye(3, dtype=torch.float64).repeat(template.num_faces, 1, 1).requires_grad_(True)
    offset = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    optim = torch.optim.Adam([{"params": [jac], "lr": config.lr},
                              {"params": [offset], "lr": config.lr_translation}], betas=config.betas)

    def evaluate():
        verts = poisson_solve_torch(jac, rest_center + offset, op)
        total = 0.0
        fg = 0
        for cam, target in views:
            size = (target.shape[1], target.shape[0])
            img = render_mesh_labels_torch([verts] + occ_v, [template.faces] + occ_f, [hair_label] + occ_l, cam,
                                           size, config.softness)
            total = total + (img - target).abs().mean()
            fg += int((img.detach() > 0.5 * hair_label).sum())
        return total / len(views), verts, fg

    trace: List[float] = []
    foreground: List[int] = []
    for it in range(config.iterations + 1):
        loss, verts, fg = evaluate()
        value = float(loss.detach())
        if not np.isfinite(value):
            raise NumericError("non-finite silhouette loss", iteration=it)
        trace.append(value)
        foreground.append(fg)
        if it == config.iterations or value <= config.tolerance:
            break
        optim.zero_grad()
        loss.backward()
        optim.step()

    j = jac.detach().numpy().copy()
    t = (rest_center + offset).detach().numpy().copy()
    return HairFitResult(template.with_vertices(verts.detach().numpy()), trace[-1], trace, JacobianField(j, t),
                         foreground)


def silhouette_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    ma, mb = np.asarray(a) > threshold, np.asarray(b) > threshold
    union = np.logical_or(ma, mb).sum()
    return 1.0 if union == 0 else float(np.logical_and(ma, mb).sum() / union)
