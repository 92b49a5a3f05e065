"""Fourier neural operator over the time axis with a per-step dense head.

Input encoding: physical parameters repeated along time, the excitation
channels, and a time coordinate on [0, 1], all stacked per time step.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

__all__ = ["ArchConfig", "SpectralConv1d", "OperatorModel", "init_model", "spectral_conv",
           "encode_inputs", "parameter_count"]

_ACTIVATIONS = {
    "gelu": F.gelu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


class ArchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    width: int = Field(default=36, ge=1)
    depth: int = Field(default=3, ge=1)
    k_modes: int = Field(default=16, ge=1)
    fc_depth: int = Field(default=2, ge=1)
    fc_width: int = Field(default=64, ge=1)
    activation: str = "gelu"


class SpectralConv1d(nn.Module):
    """Multiply the lowest ``k_modes`` Fourier bins by learned complex matrices."""

    def __init__(self, width: int, k_modes: int):
        super().__init__()
        self.width = width
        self.k_modes = k_modes
        self.weight_re = nn.Parameter(torch.zeros(k_modes, width, width))
        self.weight_im = nn.Parameter(torch.zeros(k_modes, width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n_t = x.shape[-2]
        n_f = n_t // 2 + 1
        if self.k_modes > n_f:
            raise ValueError(f"{self.k_modes} modes exceed the {n_f} bins of a {n_t}-point grid")
        X = torch.fft.rfft(x.transpose(-1, -2), dim=-1)[..., : self.k_modes]
        W = torch.complex(self.weight_re, self.weight_im)
        Y = torch.einsum("...ik,kio->...ok", X, W)
        Y = F.pad(Y, (0, n_f - self.k_modes))
        return torch.fft.irfft(Y, n=n_t, dim=-1).transpose(-1, -2)


def spectral_conv(layer: SpectralConv1d, x: torch.Tensor) -> torch.Tensor:
    return layer(x)


class OperatorModel(nn.Module):
    def __init__(self, arch: ArchConfig, n_in: int, n_out: int, n_t: int):
        super().__init__()
        if arch.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {arch.activation!r}")
        if arch.k_modes > n_t // 2 + 1:
            raise ValueError(f"k_modes={arch.k_modes} too large for a {n_t}-point grid")
        self.arch = arch
        self.n_in, self.n_out, self.n_t = n_in, n_out, n_t
        w = arch.width
        self.lift = nn.Linear(n_in, w)
        self.spectral = nn.ModuleList(SpectralConv1d(w, arch.k_modes) for _ in range(arch.depth))
        self.pointwise = nn.ModuleList(nn.Linear(w, w) for _ in range(arch.depth))
        dims = [w] + [arch.fc_width] * (arch.fc_depth - 1) + [n_out]
        self.head = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self._act = _ACTIVATIONS[arch.activation]

    def shared_parameters(self) -> list[nn.Parameter]:
        """Parameters of the last spectral block (GradNorm measures gradients here)."""
        return list(self.spectral[-1].parameters()) + list(self.pointwise[-1].parameters())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] != self.n_t or x.shape[-1] != self.n_in:
            raise ValueError(f"expected (..., {self.n_t}, {self.n_in}) input, got {tuple(x.shape)}")
        h = self.lift(x)
        for spec, pw in zip(self.spectral, self.pointwise):
            # pointwise term first keeps the sum contiguous (much faster activation backward)
            h = self._act(pw(h) + spec(h))
        for layer in self.head[:-1]:
            h = self._act(layer(h))
        return self.head[-1](h)


def parameter_count(arch: ArchConfig, n_in: int, n_out: int) -> int:
    """Closed-form number of scalar parameters."""
    w, h = arch.width, arch.fc_width
    lift = n_in * w + w
    blocks = arch.depth * (2 * arch.k_modes * w * w + w * w + w)
    if arch.fc_depth == 1:
        head = w * n_out + n_out
    else:
        head = w * h + h + (arch.fc_depth - 2) * (h * h + h) + h * n_out + n_out
    return lift + blocks + head


def init_model(arch: ArchConfig, n_in: int, n_out: int, n_t: int, seed: int,
               dtype: torch.dtype = torch.float32) -> OperatorModel:
    """Deterministically initialised model.

    Dense layers draw weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    spectral weights from U(0, 1) scaled by 1/(width*width).
    """
    model = OperatorModel(arch, n_in, n_out, n_t)
    gen = torch.Generator().manual_seed(int(seed) % (2**63))
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                mod.bias.copy_(torch.rand(mod.bias.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
            elif isinstance(mod, SpectralConv1d):
                scale = 1.0 / (mod.width * mod.width)
                for p in (mod.weight_re, mod.weight_im):
                    p.copy_(scale * torch.rand(p.shape, generator=gen, dtype=torch.float64))
    return model.to(dtype)


def encode_inputs(p_n: np.ndarray, f_n: np.ndarray) -> np.ndarray:
    """Stack ``[p (repeated), f, t]`` per time step: (B, n_t, n_p + n_ch + 1)."""
    p_n = np.asarray(p_n, dtype=float)
    f_n = np.asarray(f_n, dtype=float)
    B, n_t, _ = f_n.shape
    t = np.broadcast_to(np.linspace(0.0, 1.0, n_t)[None, :, None], (B, n_t, 1))
    p = np.broadcast_to(p_n[:, None, :], (B, n_t, p_n.shape[1]))
    return np.concatenate([p, f_n, t], axis=-1)
