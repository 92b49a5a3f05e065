"""Model checkpoints: a JSON manifest plus one float64 parameter blob.

``params.bin`` holds every parameter in ``state_dict`` order, C-contiguous,
little-endian float64. The manifest records names, shapes and offsets, the
architecture, the normalisation statistics and the dataset hash.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from ..oracle import NormStats
from .model import ArchConfig, OperatorModel

__all__ = ["save_checkpoint", "load_checkpoint"]

FORMAT = "pinocde-model/1"


def save_checkpoint(model: OperatorModel, stats: NormStats, path: str | Path,
                    dataset_hash: str = "", extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, t in model.state_dict().items():
        a = np.ascontiguousarray(t.detach().cpu().double().numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    blob = b"".join(chunks)
    (path / "params.bin").write_bytes(blob)
    manifest = {
        "format": FORMAT,
        "arch": model.arch.model_dump(),
        "n_in": model.n_in, "n_out": model.n_out, "n_t": model.n_t,
        "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
        "tensors": entries,
        "norm": stats.to_dict(),
        "dataset_hash": dataset_hash,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path: str | Path, dataset_hash: str | None = None) -> tuple[OperatorModel, NormStats, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    if dataset_hash is not None and manifest["dataset_hash"] and manifest["dataset_hash"] != dataset_hash:
        raise ValueError("checkpoint was trained on a different dataset")
    blob = (path / "params.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError("checksum mismatch in params.bin")
    flat = np.frombuffer(blob, dtype="<f8")
    model = OperatorModel(ArchConfig(**manifest["arch"]), manifest["n_in"], manifest["n_out"], manifest["n_t"])
    dtype = getattr(torch, manifest["dtype"])
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=int))
        state[e["name"]] = torch.as_tensor(flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy())
    model = model.double()
    model.load_state_dict(state)
    return model.to(dtype).eval(), NormStats.from_dict(manifest["norm"]), manifest
