"""Dual-branch generator, discriminator and their configuration."""
from .config import (CAMERA_DIM, SynthesisConfig, discriminator_parameter_count, generator_parameter_count,
                     parameter_count)
from .discriminator import Discriminator, discriminator_forward, pack_images
from .generator import (FACE, HAIR, Generator, GeneratorOutput, WCode, camera_features, draw_drop, generate,
                        generate_from_w, generate_textures, geometry_mapping, mapping_forward, synthesis_block)
from .layers import CrossAttention, ModulatedConv, cfg_blend, cross_attention
from .checkpoint import load_checkpoint, named_parameters, save_checkpoint

__all__ = [
    "CAMERA_DIM", "SynthesisConfig", "discriminator_parameter_count", "generator_parameter_count",
    "parameter_count", "Discriminator", "discriminator_forward", "pack_images", "FACE", "HAIR", "Generator",
    "GeneratorOutput", "WCode", "camera_features", "draw_drop", "generate", "generate_from_w", "generate_textures",
    "geometry_mapping", "mapping_forward", "synthesis_block", "CrossAttention", "ModulatedConv", "cfg_blend",
    "cross_attention", "load_checkpoint", "named_parameters", "save_checkpoint",
]
