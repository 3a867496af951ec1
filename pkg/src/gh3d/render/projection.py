"""EWA projection of 3D Gaussians to screen-space splats, with its analytic backward."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene.types import CameraPose

NEAR_PLANE = 0.01
DILATION = 0.3
EXTENT_SIGMAS = 3.0


def quat_to_rotmat(qn: np.ndarray) -> np.ndarray:
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    r = np.empty((qn.shape[0], 3, 3), dtype=qn.dtype)
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _rotmat_vjp(qn: np.ndarray, g_r: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the (normalized) quaternion given dL/dR."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = g_r
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


@dataclass
class Projected:
    """Screen-space splats for every input Gaussian; ``visible`` marks the ones kept."""

    means2d: np.ndarray  # (N, 2) pixels
    cov2d: np.ndarray  # (N, 2, 2) after dilation
    conics: np.ndarray  # (N, 3) packed inverse covariance (a, b, c)
    depths: np.ndarray  # (N,)
    radii: np.ndarray  # (N,) pixels
    visible: np.ndarray  # (N,) bool
    # cached intermediates for the backward pass
    qn: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    cov3d: np.ndarray
    cam_points: np.ndarray
    proj: np.ndarray  # (N, 2, 3) J @ W
    qnorm: np.ndarray


def project(positions, quats, scales, camera: CameraPose, image_size, extent_sigmas: float = EXTENT_SIGMAS,
            dtype=np.float64) -> Projected:
    """Project Gaussians; culls splats behind the near plane or whose extent misses the image."""
    width, height = image_size
    p = np.asarray(positions, dtype=np.float64)
    q = np.asarray(quats, dtype=np.float64)
    s = np.asarray(scales, dtype=np.float64)
    n = p.shape[0]
    qnorm = np.linalg.norm(q, axis=1)
    qn = np.where(qnorm[:, None] > 0, q / np.where(qnorm > 0, qnorm, 1.0)[:, None], np.array([1.0, 0, 0, 0]))
    rot = quat_to_rotmat(qn)
    cov3d = np.einsum("nij,nj,nkj->nik", rot, s * s, rot)

    wrot, wtr = camera.rotation, camera.translation
    k = camera.intrinsic
    fx, fy = k[0, 0] * width, k[1, 1] * height
    cx, cy = k[0, 2] * width, k[1, 2] * height
    t = p @ wrot.T + wtr
    z = t[:, 2]
    in_front = z > NEAR_PLANE
    zs = np.where(in_front, z, 1.0)
    x, y = t[:, 0], t[:, 1]
    means = np.stack([fx * x / zs + cx, fy * y / zs + cy], axis=1)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = fx / zs
    jac[:, 0, 2] = -fx * x / zs ** 2
    jac[:, 1, 1] = fy / zs
    jac[:, 1, 2] = -fy * y / zs ** 2
    proj = jac @ wrot
    cov2d = proj @ cov3d @ proj.transpose(0, 2, 1)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = extent_sigmas * np.sqrt(lam)
    on_image = ((means[:, 0] + radii > 0) & (means[:, 0] - radii < width)
                & (means[:, 1] + radii > 0) & (means[:, 1] - radii < height))
    visible = in_front & on_image & np.isfinite(conics).all(1) & (det > 0)
    return Projected(means.astype(dtype), cov2d, conics.astype(dtype), z, radii, visible,
                     qn, rot, s, cov3d, t, proj, qnorm)


def project_backward(pr: Projected, camera: CameraPose, image_size, g_means: np.ndarray,
                     g_conics: np.ndarray, g_depths: Optional[np.ndarray] = None):
    """Chain screen-space gradients back to (positions, raw quaternions, scales)."""
    width, height = image_size
    k = camera.intrinsic
    fx, fy = k[0, 0] * width, k[1, 1] * height
    wrot = camera.rotation
    g_means = np.where(pr.visible[:, None], g_means, 0.0)
    g_conics = np.where(pr.visible[:, None], g_conics, 0.0)

    a, b, c = pr.conics[:, 0].astype(np.float64), pr.conics[:, 1].astype(np.float64), pr.conics[:, 2].astype(np.float64)
    conic = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    g_k = np.stack([np.stack([g_conics[:, 0], 0.5 * g_conics[:, 1]], -1),
                    np.stack([0.5 * g_conics[:, 1], g_conics[:, 2]], -1)], -2)
    g_cov2d = -conic @ g_k @ conic
    tmat = pr.proj
    g_cov3d = tmat.transpose(0, 2, 1) @ g_cov2d @ tmat
    g_t = 2.0 * g_cov2d @ tmat @ pr.cov3d
    g_j = g_t @ wrot.T

    x, y, z = pr.cam_points[:, 0], pr.cam_points[:, 1], np.where(pr.visible, pr.cam_points[:, 2], 1.0)
    gx = g_j[:, 0, 2] * (-fx / z ** 2) + g_means[:, 0] * fx / z
    gy = g_j[:, 1, 2] * (-fy / z ** 2) + g_means[:, 1] * fy / z
    gz = (g_j[:, 0, 0] * (-fx / z ** 2) + g_j[:, 0, 2] * (2 * fx * x / z ** 3)
          + g_j[:, 1, 1] * (-fy / z ** 2) + g_j[:, 1, 2] * (2 * fy * y / z ** 3)
          - g_means[:, 0] * fx * x / z ** 2 - g_means[:, 1] * fy * y / z ** 2)
    if g_depths is not None:
        gz = gz + g_depths
    g_cam = np.stack([gx, gy, gz], axis=1)
    g_pos = g_cam @ wrot

    s = pr.scales
    g_rot = 2.0 * g_cov3d @ pr.rot * (s * s)[:, None, :]
    rtgr = np.einsum("nji,njk,nki->ni", pr.rot, g_cov3d, pr.rot)
    g_scale = 2.0 * s * rtgr
    g_qn = _rotmat_vjp(pr.qn, g_rot)
    qn = pr.qn
    nz = pr.qnorm > 0
    g_q = (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / np.where(nz, pr.qnorm, 1.0)[:, None]
    g_q = np.where(nz[:, None], g_q, 0.0)
    vis = pr.visible[:, None]
    return np.where(vis, g_pos, 0.0), np.where(vis, g_q, 0.0), np.where(vis, g_scale, 0.0)
