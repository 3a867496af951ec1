from .projection import DILATION, NEAR_PLANE
from .rasterizer import (
    T_MIN,
    RenderFrame,
    RenderOutput,
    Splat2D,
    project_gaussian,
    reference_render,
    render,
    render_backward,
    render_torch,
)

__all__ = ["DILATION", "NEAR_PLANE", "T_MIN", "RenderFrame", "RenderOutput", "Splat2D", "project_gaussian",
           "reference_render", "render", "render_backward", "render_torch"]
