from .types import (
    BACKGROUND,
    FACE,
    FACE_MESH_LABEL,
    HAIR,
    HAIR_MESH_LABEL,
    NUM_CHANNELS,
    CameraPose,
    GaussianPrimitive,
    GaussianSet,
    GaussianTextureMap,
    TemplateMesh,
    UvRig,
)
from .rig import FACE_GAMMA, HAIR_GAMMA, build_uv_rig, normalize_quaternion, spawn_gaussians, surface_points
from .meshes import face_head, hair_cap, quad_mesh, uv_sphere

__all__ = [
    "BACKGROUND", "FACE", "HAIR", "FACE_MESH_LABEL", "HAIR_MESH_LABEL", "NUM_CHANNELS",
    "CameraPose", "GaussianPrimitive", "GaussianSet", "GaussianTextureMap", "TemplateMesh", "UvRig",
    "FACE_GAMMA", "HAIR_GAMMA", "build_uv_rig", "normalize_quaternion", "spawn_gaussians", "surface_points",
    "face_head", "hair_cap", "quad_mesh", "uv_sphere",
]
