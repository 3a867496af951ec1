"""Named-tensor checkpoints for generator and discriminator."""
from __future__ import annotations

from typing import Dict

import numpy as np
import torch
from torch import nn

from ..errors import DataError
from ..scene.io import load_table, save_table


def named_parameters(modules: Dict[str, nn.Module]) -> Dict[str, torch.Tensor]:
    """Stable ``prefix.name`` keys over every trainable tensor."""
    out = {}
    for prefix, module in modules.items():
        for name, p in module.named_parameters():
            out[f"{prefix}.{name}"] = p
    return out


def save_checkpoint(path, modules: Dict[str, nn.Module]) -> None:
    save_table(path, {k: v.detach().cpu().numpy() for k, v in named_parameters(modules).items()})


def load_checkpoint(path, modules: Dict[str, nn.Module]) -> None:
    table = load_table(path)
    params = named_parameters(modules)
    missing = sorted(set(params) - set(table))
    extra = sorted(set(table) - set(params))
    if missing or extra:
        raise DataError(f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    with torch.no_grad():
        for k, p in params.items():
            value = np.asarray(table[k])
            if tuple(value.shape) != tuple(p.shape):
                raise DataError(f"checkpoint tensor {k} has shape {value.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.as_tensor(value, dtype=p.dtype))
