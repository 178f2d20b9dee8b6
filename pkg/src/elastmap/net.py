"""Swish networks with an optional Fourier input map and the five FCNN arrangements.

Spatial derivatives are propagated forward through every layer alongside the
values (value, first and second derivatives w.r.t. (x, y) in one batched
matmul per layer), so a single reverse pass gives exact parameter gradients
of losses that contain those derivatives.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

torch.set_default_dtype(torch.float64)

FCNN_KINDS = ("I", "II", "III", "IV", "V")
OUTPUTS = ("ux", "uy", "E", "P11", "P12", "P21", "P22")
N_FOURIER_MODES = 5

# jet slots: value, d/dx, d/dy, d2/dx2, d2/dy2, d2/dxdy
VAL, DX, DY, DXX, DYY, DXY = range(6)


@dataclass(frozen=True)
class NetworkSpec:
    fcnn: str = "II"
    fourier: bool = False
    seed: int = 0
    fcnn3_trunk_width: int = 25
    fcnn5_depth: int = 5
    fcnn5_width: int = 75

    def __post_init__(self):
        if self.fcnn not in FCNN_KINDS:
            raise ValueError(f"unknown FCNN arrangement {self.fcnn!r}; expected one of {FCNN_KINDS}")

    @property
    def has_stress_head(self) -> bool:
        return self.fcnn in ("I", "II")

    @property
    def n_outputs(self) -> int:
        return 7 if self.has_stress_head else 3

    @property
    def input_dim(self) -> int:
        return 2 + 2 * N_FOURIER_MODES if self.fourier else 2

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    def layout(self):
        """List of subnetworks as ``(trunk widths, [(branch widths, output names), ...])``."""
        p = ["E", "P11", "P12", "P21", "P22"]
        if self.fcnn == "I":
            return [
                ([50, 50], [([50, 50], ["ux"]), ([50, 50], ["uy"])]),
                ([], [([75] * 5, p)]),
            ]
        if self.fcnn == "II":
            return [([], [([75] * 5, ["ux", "uy"])]), ([], [([75] * 5, p)])]
        if self.fcnn == "III":
            w = self.fcnn3_trunk_width
            return [([w, w], [([25] * 3, ["ux"]), ([25] * 3, ["uy"]), ([25] * 3, ["E"])])]
        if self.fcnn == "IV":
            return [([], [([25] * 5, [name])]) for name in ("ux", "uy", "E")]
        return [([], [([self.fcnn5_width] * self.fcnn5_depth, ["ux", "uy", "E"])])]


def swish(z):
    """z * sigmoid(z)."""
    if isinstance(z, torch.Tensor):
        return z * torch.sigmoid(z)
    z = np.asarray(z, dtype=float)
    return z / (1.0 + np.exp(-z))


def fourier_features(x, y):
    """(x, y, sin(k pi x) for k=1..5, sin(k pi y) for k=1..5)."""
    k = np.arange(1, N_FOURIER_MODES + 1)
    x, y = np.asarray(x, float), np.asarray(y, float)
    return np.concatenate(
        [np.stack([x, y], -1), np.sin(np.multiply.outer(x, k) * np.pi), np.sin(np.multiply.outer(y, k) * np.pi)],
        axis=-1,
    )


def input_jet(xy: torch.Tensor, fourier: bool, order: int) -> torch.Tensor:
    """Jet of the input map, shape (slots, B, input_dim)."""
    x, y = xy[:, 0:1], xy[:, 1:2]
    one, zero = torch.ones_like(x), torch.zeros_like(x)
    slots = [torch.cat([x, y], 1), torch.cat([one, zero], 1), torch.cat([zero, one], 1)]
    if order >= 2:
        slots += [torch.cat([zero, zero], 1)] * 3
    if not fourier:
        return torch.stack(slots)
    kp = torch.arange(1, N_FOURIER_MODES + 1, dtype=xy.dtype) * math.pi
    sx, cx = torch.sin(x * kp), torch.cos(x * kp)
    sy, cy = torch.sin(y * kp), torch.cos(y * kp)
    z = torch.zeros_like(sx)
    extra = [torch.cat([sx, sy], 1), torch.cat([kp * cx, z], 1), torch.cat([z, kp * cy], 1)]
    if order >= 2:
        extra += [torch.cat([-kp**2 * sx, z], 1), torch.cat([z, -kp**2 * sy], 1), torch.cat([z, z], 1)]
    return torch.cat([torch.stack(slots), torch.stack(extra)], dim=2)


class _BiasSwishJet1(torch.autograd.Function):
    """Bias add + swish on a first-order jet stored as (3, B, n), fused forward/backward.

    ``pre`` holds W·value, W·d/dx, W·d/dy; the bias only enters the value slot.
    """

    @staticmethod
    def forward(ctx, pre, bias):
        z = pre[VAL] + bias
        s = torch.sigmoid(z)
        d1 = s * (1 + z * (1 - s))
        out = torch.empty_like(pre)
        torch.mul(z, s, out=out[VAL])
        torch.mul(pre[1:], d1, out=out[1:])
        ctx.save_for_backward(pre, z, s, d1)
        return out

    @staticmethod
    def backward(ctx, grad):
        pre, z, s, d1 = ctx.saved_tensors
        d2 = s * (1 - s) * (2 + z * (1 - 2 * s))
        gz = grad[VAL] * d1 + (grad[DX] * pre[DX] + grad[DY] * pre[DY]) * d2
        gpre = torch.empty_like(pre)
        gpre[VAL] = gz
        torch.mul(grad[1:], d1, out=gpre[1:])
        return gpre, gz.sum(0)


def _swish_jet2(jet: torch.Tensor) -> torch.Tensor:
    z = jet[VAL]
    s = torch.sigmoid(z)
    d1 = s * (1 + z * (1 - s))
    d2 = s * (1 - s) * (2 + z * (1 - 2 * s))
    dx, dy = jet[DX], jet[DY]
    return torch.stack(
        [
            z * s,
            d1 * dx,
            d1 * dy,
            d2 * dx * dx + d1 * jet[DXX],
            d2 * dy * dy + d1 * jet[DYY],
            d2 * dx * dy + d1 * jet[DXY],
        ]
    )


def _dense_jet(jet: torch.Tensor, layer: nn.Linear, activate: bool) -> torch.Tensor:
    """Affine layer (optionally followed by swish) applied to a jet of any order."""
    n_slots = jet.shape[0]
    if n_slots == 1:
        z = torch.addmm(layer.bias, jet[0], layer.weight.T)
        return (z * torch.sigmoid(z) if activate else z)[None]
    pre = torch.matmul(jet, layer.weight.T)
    if activate and n_slots == 3:
        return _BiasSwishJet1.apply(pre, layer.bias)
    bias = torch.zeros((n_slots, 1, 1), dtype=pre.dtype)
    bias[VAL] = 1.0
    pre = pre + bias * layer.bias
    return _swish_jet2(pre) if activate else pre


class _Stack(nn.Module):
    def __init__(self, in_dim: int, widths: list[int], out_dim: int | None):
        super().__init__()
        dims = [in_dim] + list(widths)
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(dims[-1], out_dim) if out_dim else None
        self.width = dims[-1]

    def jet(self, j: torch.Tensor) -> torch.Tensor:
        for layer in self.hidden:
            j = _dense_jet(j, layer, activate=True)
        if self.out is not None:
            j = _dense_jet(j, self.out, activate=False)
        return j


class _Subnet(nn.Module):
    def __init__(self, in_dim: int, trunk: list[int], branches):
        super().__init__()
        self.trunk = _Stack(in_dim, trunk, None)
        self.branches = nn.ModuleList(_Stack(self.trunk.width, w, len(names)) for w, names in branches)
        self.names = [n for _, names in branches for n in names]

    def jet(self, j: torch.Tensor) -> torch.Tensor:
        h = self.trunk.jet(j)
        return torch.cat([b.jet(h) for b in self.branches], dim=2)


class FieldNetwork(nn.Module):
    """Maps (x, y) to raw outputs (N_ux, N_uy, N_E[, N_P11, N_P12, N_P21, N_P22])."""

    def __init__(self, spec: NetworkSpec, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.subnets = nn.ModuleList(_Subnet(spec.input_dim, t, b) for t, b in spec.layout())
        names = [n for s in self.subnets for n in s.names]
        self.output_names = OUTPUTS[: spec.n_outputs]
        self._perm = [names.index(n) for n in self.output_names]
        glorot_init_(self, spec.seed)
        self.to(dtype)

    def jet(self, xy, order: int = 0) -> torch.Tensor:
        """Outputs and their spatial derivatives, shape (slots, B, n_outputs).

        ``order`` 0 gives values only, 1 adds d/dx, d/dy, 2 adds d2/dx2, d2/dy2, d2/dxdy.
        """
        xy = torch.as_tensor(xy, dtype=self.dtype)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError(f"points must have shape (B, 2), got {tuple(xy.shape)}")
        j = input_jet(xy, self.spec.fourier, max(order, 1))
        if order == 0:
            j = j[:1]
        out = torch.cat([s.jet(j) for s in self.subnets], dim=2)
        return out[..., self._perm]

    def forward(self, xy) -> torch.Tensor:
        return self.jet(xy, 0)[VAL]


def glorot_init_(net: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Linear):
                bound = math.sqrt(6.0 / (m.in_features + m.out_features))
                m.weight.copy_((torch.rand(m.weight.shape, generator=gen) * 2 - 1) * bound)
                m.bias.zero_()


def build_network(spec: NetworkSpec) -> FieldNetwork:
    return FieldNetwork(spec)


def get_flat(net: nn.Module) -> torch.Tensor:
    return nn.utils.parameters_to_vector(net.parameters()).detach().clone().to(torch.float64)


def set_flat(net: nn.Module, flat) -> None:
    flat = torch.as_tensor(flat, dtype=next(net.parameters()).dtype)
    n = sum(p.numel() for p in net.parameters())
    if flat.numel() != n:
        raise ValueError(f"parameter vector has {flat.numel()} entries, network needs {n}")
    with torch.no_grad():
        nn.utils.vector_to_parameters(flat, net.parameters())


def spatial_derivatives(net: FieldNetwork, xy) -> dict:
    """Values and exact first/second spatial derivatives of every output."""
    j = net.jet(xy, order=2)
    keys = ("value", "dx", "dy", "dxx", "dyy", "dxy")
    return {k: j[i] for i, k in enumerate(keys)}


def loss_gradient(net: FieldNetwork, loss_fn) -> torch.Tensor:
    """Flat gradient of ``loss_fn(net)`` (a scalar tensor) w.r.t. all parameters."""
    params = list(net.parameters())
    loss = loss_fn(net)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)])


_MAGIC = "elastmap-checkpoint v1"


def save_checkpoint(path: str | Path, net: FieldNetwork, iteration: int) -> None:
    """Text header terminated by ``end_header\\n`` then little-endian float64 parameters."""
    flat = get_flat(net).numpy().astype("<f8")
    header = (
        f"{_MAGIC}\nspec {json.dumps(asdict(net.spec), sort_keys=True)}\nspec_hash {net.spec.digest()}\n"
        f"seed {net.spec.seed}\niteration {iteration}\nn_params {flat.size}\nend_header\n"
    )
    Path(path).write_bytes(header.encode() + flat.tobytes())


def load_checkpoint(path: str | Path) -> tuple[FieldNetwork, int]:
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    cut = data.index(marker) + len(marker)
    lines = data[:cut].decode().splitlines()
    if lines[0] != _MAGIC:
        raise ValueError(f"{path}: not an elastmap checkpoint")
    fields = dict(line.split(" ", 1) for line in lines[1:-1])
    spec = NetworkSpec(**json.loads(fields["spec"]))
    if spec.digest() != fields["spec_hash"]:
        raise ValueError(f"{path}: spec hash mismatch")
    flat = np.frombuffer(data[cut:], dtype="<f8")
    if flat.size != int(fields["n_params"]):
        raise ValueError(f"{path}: truncated parameter block")
    net = FieldNetwork(spec)
    set_flat(net, flat.copy())
    return net, int(fields["iteration"])
