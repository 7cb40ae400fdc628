"""Single-file checkpoints: safetensors layout (8-byte header length, JSON
header, raw tensor bytes) with the run metadata stored as JSON text under
the ``charvoc`` header key.

Tensor naming:
    ``generator.<param>``, ``discriminators.<param>``, ``recognizer.<param>``
    for module weights, and ``optim.<name>.<index>.<field>`` for AdamW state.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import torch
from safetensors import safe_open
from safetensors.torch import save_file

META_KEY = "charvoc"
FORMAT_VERSION = 1


def _optimizer_tensors(name: str, opt: torch.optim.Optimizer) -> Tuple[Dict[str, torch.Tensor], dict]:
    sd = opt.state_dict()
    tensors = {}
    for idx, state in sd["state"].items():
        for field, value in state.items():
            t = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            tensors[f"optim.{name}.{idx}.{field}"] = t.detach().clone().contiguous()
    return tensors, {"param_groups": sd["param_groups"]}


def save_checkpoint(
    path,
    modules: Dict[str, torch.nn.Module],
    meta: dict,
    optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
) -> None:
    tensors = {}
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    meta["modules"] = sorted(modules)
    for prefix, module in modules.items():
        for k, v in module.state_dict().items():
            tensors[f"{prefix}.{k}"] = v.detach().clone().contiguous()
    opt_meta = {}
    for name, opt in (optimizers or {}).items():
        t, m = _optimizer_tensors(name, opt)
        tensors.update(t)
        opt_meta[name] = m
    meta["optimizers"] = opt_meta
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(path), metadata={META_KEY: json.dumps(meta, sort_keys=True)})


def read_checkpoint(path) -> Tuple[dict, Dict[str, torch.Tensor]]:
    """Return (metadata, flat tensor dict)."""
    with safe_open(str(path), framework="pt") as f:
        header = f.metadata() or {}
        if META_KEY not in header:
            raise ValueError(f"{path}: not a charvoc checkpoint")
        meta = json.loads(header[META_KEY])
        tensors = {k: f.get_tensor(k) for k in f.keys()}
    return meta, tensors


def module_state(tensors: Dict[str, torch.Tensor], prefix: str) -> Dict[str, torch.Tensor]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in tensors.items() if k.startswith(p)}


def restore_optimizer(opt: torch.optim.Optimizer, name: str, meta: dict, tensors) -> None:
    info = meta["optimizers"][name]
    prefix = f"optim.{name}."
    state: Dict[int, dict] = {}
    for k, v in tensors.items():
        if k.startswith(prefix):
            idx, field = k[len(prefix):].split(".", 1)
            state.setdefault(int(idx), {})[field] = v
    opt.load_state_dict({"state": state, "param_groups": info["param_groups"]})
