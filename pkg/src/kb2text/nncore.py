"""Shared numerical substrate for the two trainable models.

Parameters live in a ParamSet of named float64 torch tensors.  Forward code
elsewhere builds autograd graphs over those tensors; the optimizer step and
the finite-difference gradient checker here are hand-rolled so training is
fully deterministic and verifiable.  Everything runs on CPU in 64-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import torch

from .errors import ConfigError, NumericalError

_CKPT_MAGIC = "kb2text-ckpt-v1"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive (omit clipping with None)")


class ParamSet:
    """Named float64 tensors plus a step counter and Adam moment buffers."""

    def __init__(self, arrays: dict[str, torch.Tensor], step: int = 0):
        self.arrays = dict(arrays)
        self.step = step
        self._m: dict[str, torch.Tensor] = {}
        self._v: dict[str, torch.Tensor] = {}

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    def requires_grad_(self, flag: bool = True) -> "ParamSet":
        for t in self.arrays.values():
            t.requires_grad_(flag)
        return self

    def zero_grads(self) -> None:
        for t in self.arrays.values():
            t.grad = None

    def collect_grads(self) -> dict[str, torch.Tensor]:
        """Gradients from the last backward pass; missing grads count as zeros."""
        out = {}
        for name, t in self.arrays.items():
            out[name] = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        return out

    def clone(self) -> "ParamSet":
        return ParamSet(
            {k: v.detach().clone() for k, v in self.arrays.items()}, step=self.step
        )


def init_params(spec: Iterable[tuple[str, tuple[int, ...]]], seed: int) -> ParamSet:
    """Scaled-uniform initialization; *.gamma starts at 1 and *.beta/*.bias at 0."""
    gen = torch.Generator().manual_seed(seed)
    arrays: dict[str, torch.Tensor] = {}
    for name, shape in spec:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"non-positive dimension in {name}: {shape}")
        if name.endswith(".gamma"):
            t = torch.ones(shape, dtype=torch.float64)
        elif name.endswith((".beta", ".bias")):
            t = torch.zeros(shape, dtype=torch.float64)
        else:
            fan_in = shape[-1]
            fan_out = shape[0]
            bound = (6.0 / (fan_in + fan_out)) ** 0.5
            t = (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound
        arrays[name] = t.requires_grad_(True)
    return ParamSet(arrays)


def adam_step(params: ParamSet, grads: dict[str, torch.Tensor], cfg: TrainConfig) -> ParamSet:
    """One Adam update with bias correction, applied in place.

    Gradients are first clipped to `cfg.clip_norm` by global norm.  Raises
    NumericalError on any non-finite gradient entry.
    """
    if set(grads) != set(params.arrays):
        raise ValueError("gradient names do not match parameter names")
    sq_norm = 0.0
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name}")
        sq_norm += float((g.double() ** 2).sum())
    scale = 1.0
    if cfg.clip_norm is not None:
        norm = sq_norm ** 0.5
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm

    t = params.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    with torch.no_grad():
        for name, tensor in params.arrays.items():
            g = grads[name].double() * scale
            m = params._m.get(name)
            v = params._v.get(name)
            if m is None:
                m = torch.zeros_like(tensor)
                v = torch.zeros_like(tensor)
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            params._m[name] = m
            params._v[name] = v
            tensor -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
    params.step = t
    return params


def grad_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    analytic: dict[str, torch.Tensor],
    h: float = 1e-4,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between `analytic` and central finite differences.

    Checks at most `max_coords` coordinates, sampled uniformly across all
    arrays when there are more.  Relative error per coordinate is
    |a - f| / max(|a|, |f|, 1e-8).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    coords: list[tuple[str, int]] = []
    for name in params.names():
        coords.extend((name, i) for i in range(params[name].numel()))
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(idx)]

    worst = 0.0
    for name, flat in coords:
        tensor = params[name]
        with torch.no_grad():
            orig = float(tensor.view(-1)[flat])
            tensor.view(-1)[flat] = orig + h
        f_plus = float(loss_fn(params))
        with torch.no_grad():
            tensor.view(-1)[flat] = orig - h
        f_minus = float(loss_fn(params))
        with torch.no_grad():
            tensor.view(-1)[flat] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[name].reshape(-1)[flat])
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: a JSON header line followed by raw little-endian float64 data.
# No timestamps anywhere, so identical runs produce identical bytes.


def save_checkpoint(path, params: ParamSet, config: dict, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name in params.names():
        arr = params[name].detach().numpy().astype("<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format": _CKPT_MAGIC,
        "step": params.step,
        "config": config,
        "meta": meta or {},
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ParamSet, dict, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        arrays: dict[str, torch.Tensor] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            arrays[entry["name"]] = torch.from_numpy(arr).requires_grad_(True)
    params = ParamSet(arrays, step=header["step"])
    return params, header["config"], header["meta"]
