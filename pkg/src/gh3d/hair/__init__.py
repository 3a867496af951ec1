"""Hair geometry: Jacobian-field deformation, silhouette fitting and the linear shape model."""
from .blend import (NUM_COEFFS, HairBlendModel, blend_hair_shape, build_blend_model, load_blend_model,
                    project_to_coeffs, save_blend_model)
from .family import HairstyleParams, hairstyle, hairstyle_family, hairstyle_vertices
from .fitting import HairFitConfig, HairFitResult, fit_hair_mesh, silhouette_iou
from .jacobian import (GradientOperator, JacobianField, mesh_gradient_operator, operator_for, poisson_solve,
                       poisson_solve_torch)

__all__ = [
    "NUM_COEFFS", "HairBlendModel", "blend_hair_shape", "build_blend_model", "load_blend_model",
    "project_to_coeffs", "save_blend_model", "HairstyleParams", "hairstyle", "hairstyle_family",
    "hairstyle_vertices", "HairFitConfig", "HairFitResult", "fit_hair_mesh", "silhouette_iou",
    "GradientOperator", "JacobianField", "mesh_gradient_operator", "operator_for", "poisson_solve",
    "poisson_solve_torch",
]
