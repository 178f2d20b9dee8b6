"""PINN variants A-D: output transforms, the three loss terms, Adam training, metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ._dual import Dual
from .fem import BoundaryLoad
from .geometry import Mesh
from .materials import MaterialModel, green_lagrange_components, pk_components
from .net import DX, DXX, DXY, DY, DYY, VAL, FieldNetwork, NetworkSpec

log = logging.getLogger(__name__)

VARIANTS = {
    # name: (fourier, hard boundary constraint)
    "A": (False, True),
    "B": (False, False),
    "C": (True, True),
    "D": (True, False),
}
LOG_FLOOR = 1e-8
E_LOW, E_SPAN = 1.0, 4.0


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, losses: dict):
        self.iteration = iteration
        self.losses = losses
        super().__init__(f"non-finite loss at iteration {iteration}: {losses}")


@dataclass
class PinnConfig:
    variant: str = "B"
    fcnn: str = "II"
    load: BoundaryLoad = field(default_factory=BoundaryLoad)
    material: MaterialModel = field(default_factory=MaterialModel)
    w_pde: float = 1.0
    w_const: float | str = "E2"  # "E2": pointwise (E*)^2, detached; a number: fixed scalar
    w_data: float = 100.0
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    lr_decay: float | None = None  # optional per-iteration exponential factor
    iterations: int = 20000
    seed: int = 0
    log_stride: int = 100
    precision: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        NetworkSpec(fcnn=self.fcnn)  # validates the arrangement name
        if self.w_pde <= 0 or self.w_data <= 0:
            raise ValueError("loss weights must be positive")
        if isinstance(self.w_const, str):
            if self.w_const != "E2":
                raise ValueError(f"w_const must be 'E2' or a positive number, got {self.w_const!r}")
        elif self.w_const <= 0:
            raise ValueError("loss weights must be positive")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.iterations < 0 or self.log_stride < 1:
            raise ValueError("iterations must be >= 0 and log_stride >= 1")

    @property
    def fourier(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def hard_bc(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(fcnn=self.fcnn, fourier=self.fourier, seed=self.seed)


@dataclass(frozen=True)
class TransformStats:
    u_mean: tuple
    u_std: tuple

    @classmethod
    def from_displacements(cls, u) -> "TransformStats":
        u = np.asarray(u, dtype=float)
        std = u.std(axis=0)
        # a degenerate (e.g. unloaded) reference keeps unit scaling
        std = np.where(std > 0, std, 1.0)
        return cls(u_mean=tuple(u.mean(axis=0).tolist()), u_std=tuple(std.tolist()))


@dataclass
class TrainHistory:
    iteration: list = field(default_factory=list)
    l_pde: list = field(default_factory=list)
    l_const: list = field(default_factory=list)
    l_data: list = field(default_factory=list)
    total: list = field(default_factory=list)
    e_l2_pct: list = field(default_factory=list)
    clamp_count: int = 0  # points hit by the log(J) floor, summed over iterations
    final_clamped: int = 0  # points at the floor in the final evaluation

    def append(self, it, losses, e_err):
        self.iteration.append(it)
        for k in ("l_pde", "l_const", "l_data", "total"):
            getattr(self, k).append(float(losses[k]))
        self.e_l2_pct.append(float("nan") if e_err is None else float(e_err))

    def write_csv(self, path: str | Path) -> None:
        lines = ["iteration,l_pde,l_const,l_data,total,e_l2_pct"]
        for row in zip(self.iteration, self.l_pde, self.l_const, self.l_data, self.total, self.e_l2_pct):
            lines.append(f"{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:]))
        Path(path).write_text("\n".join(lines) + "\n")


def modulus_transform(n_e):
    """E* = 4 / (1 + exp(-N_E)) + 1, strictly inside (1, 5)."""
    if isinstance(n_e, torch.Tensor):
        return E_SPAN * torch.sigmoid(n_e) + E_LOW
    n_e = np.asarray(n_e, dtype=float)
    return E_SPAN / (1.0 + np.exp(-n_e)) + E_LOW


def _scaled(jet_col, std, mean):
    out = jet_col * std
    out[VAL] = out[VAL] + mean
    return out


def displacement_jet(raw: torch.Tensor, xy: torch.Tensor, stats: TransformStats, hard_bc: bool, d: float):
    """(u*_x jet, u*_y jet) from the raw jet (slots, B, K); slot layout as FieldNetwork.jet."""
    comps = []
    for i in range(2):
        g = _scaled(raw[:, :, i], stats.u_std[i], stats.u_mean[i])
        if not hard_bc:
            comps.append(g)
            continue
        s = xy[:, i]
        q, dq = s * (1 - s), 1 - 2 * s
        dn = DX if i == 0 else DY  # derivative along the constrained coordinate
        dt = DY if i == 0 else DX
        dnn = DXX if i == 0 else DYY
        dtt = DYY if i == 0 else DXX
        slots = [d * (2 * s - 1) + q * g[VAL]]
        if raw.shape[0] > 1:
            deriv = [None] * raw.shape[0]
            deriv[dn] = 2 * d + dq * g[VAL] + q * g[dn]
            deriv[dt] = q * g[dt]
            if raw.shape[0] == 6:
                deriv[dnn] = -2 * g[VAL] + 2 * dq * g[dn] + q * g[dnn]
                deriv[dtt] = q * g[dtt]
                deriv[DXY] = dq * g[dt] + q * g[DXY]
            slots += deriv[1:]
        comps.append(torch.stack(slots))
    return comps[0], comps[1]


def modulus_jet(raw: torch.Tensor):
    """Jet (val, dx, dy) of E* from the raw N_E jet."""
    n = raw[:, :, 2]
    s = torch.sigmoid(n[VAL])
    ds = E_SPAN * s * (1 - s)
    slots = [E_SPAN * s + E_LOW]
    if raw.shape[0] > 1:
        slots += [ds * n[DX], ds * n[DY]]
    return torch.stack(slots)


def transform_outputs(raw, xy, stats: TransformStats, variant: str, load: BoundaryLoad):
    """Transformed (u*_x, u*_y, E*) values at ``xy`` from raw (N_ux, N_uy, N_E, ...)."""
    raw = torch.as_tensor(raw, dtype=torch.float64)
    xy = torch.as_tensor(xy, dtype=torch.float64)
    ux, uy = displacement_jet(raw[None], xy, stats, VARIANTS[variant][1], load.d)
    return ux[VAL], uy[VAL], modulus_jet(raw[None])[VAL]


def divergence_rows(p11, p12, p21, p22, dx, dy):
    """Div P with P_iJ the derivative w.r.t. F_iJ: contracts the reference (second) index."""
    return dx(p11) + dy(p12), dx(p21) + dy(p22)


def pde_residual_from_stress_jet(raw: torch.Tensor):
    """Divergence of the network stress head N_P (first derivatives of its jet)."""
    p = [raw[:, :, k] for k in range(3, 7)]
    return divergence_rows(*p, dx=lambda t: t[DX], dy=lambda t: t[DY])


def _deformation_values(ux, uy):
    return 1.0 + ux[DX], ux[DY], uy[DX], 1.0 + uy[DY]


class LossEvaluator:
    """Callable computing the loss terms on a fixed point set."""

    def __init__(self, config: PinnConfig, xy, strain_ref, stats: TransformStats):
        self.config = config
        self.xy = torch.tensor(np.asarray(xy), dtype=config.dtype)
        ref = np.asarray(strain_ref, dtype=float)
        if ref.ndim == 3:
            ref = np.column_stack([ref[:, 0, 0], ref[:, 1, 1], ref[:, 0, 1]])
        self.strain_ref = torch.tensor(ref, dtype=config.dtype)
        self.stats = stats
        self.model = config.material
        self.stress_head = config.network_spec().has_stress_head
        self.clamped = 0

    def _floor_hits(self, f11, f12, f21, f22):
        if self.model.mode is None:
            return 0
        J = f11 * f22 - f12 * f21
        return int((J <= LOG_FLOOR).sum())

    def __call__(self, net: FieldNetwork) -> dict:
        cfg = self.config
        order = 1 if self.stress_head else 2
        raw = net.jet(self.xy, order=order)
        ux, uy = displacement_jet(raw, self.xy, self.stats, cfg.hard_bc, cfg.load.d)
        E = modulus_jet(raw)
        f = _deformation_values(ux, uy)
        exx, exy, eyy = green_lagrange_components(*f)
        eps = torch.stack([exx, eyy, exy], dim=1)
        l_data = torch.mean((eps - self.strain_ref) ** 2)
        with torch.no_grad():
            self.clamped = self._floor_hits(*f)
        if self.stress_head:
            r1, r2 = pde_residual_from_stress_jet(raw)
            p_model = pk_components(self.model, *f, E[VAL], log_floor=LOG_FLOOR)
            diff = torch.stack([raw[VAL, :, 3 + k] - p_model[k] for k in range(4)], dim=1)
            if cfg.w_const == "E2":
                weight = E[VAL].detach() ** 2
            else:
                weight = torch.full_like(E[VAL], float(cfg.w_const))
            l_const = torch.mean(weight * torch.sum(diff**2, dim=1))
        else:
            # F and E as duals carrying (d/dx, d/dy) so the stress jet gives its divergence
            fd = (
                Dual(f[0], torch.stack([ux[DXX], ux[DXY]])),
                Dual(f[1], torch.stack([ux[DXY], ux[DYY]])),
                Dual(f[2], torch.stack([uy[DXX], uy[DXY]])),
                Dual(f[3], torch.stack([uy[DXY], uy[DYY]])),
            )
            e_dual = Dual(E[VAL], torch.stack([E[DX], E[DY]]))
            p = pk_components(self.model, *fd, e_dual, log_floor=LOG_FLOOR)
            r1, r2 = divergence_rows(*p, dx=lambda t: t.der[0], dy=lambda t: t.der[1])
            l_const = torch.zeros((), dtype=self.xy.dtype)
        l_pde = torch.mean(r1**2 + r2**2)
        total = cfg.w_pde * l_pde + cfg.w_data * l_data
        if self.stress_head:
            total = total + l_const
        return {"l_pde": l_pde, "l_const": l_const, "l_data": l_data, "total": total}


def nodal_modulus(net: FieldNetwork, xy) -> np.ndarray:
    with torch.no_grad():
        raw = net.jet(torch.tensor(np.asarray(xy), dtype=net.dtype), order=0)
        return modulus_jet(raw)[VAL].double().numpy()


def element_average(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    return np.asarray(nodal)[mesh.elements].mean(axis=1)


def l2_relative_error(pred, ref) -> float:
    """100 * ||pred - ref|| / ||ref|| over flattened values."""
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    nref = np.linalg.norm(ref)
    if nref == 0:
        raise ValueError("reference has zero norm")
    return float(100.0 * np.linalg.norm(pred - ref) / nref)


@dataclass
class TrainResult:
    net: FieldNetwork
    history: TrainHistory
    initial_params: torch.Tensor


def train(
    config: PinnConfig,
    mesh: Mesh,
    strain_ref,
    stats: TransformStats,
    ground_truth_E=None,
    callback=None,
) -> TrainResult:
    """Full-batch Adam on the weighted loss, collocation and data points = mesh nodes."""
    torch.manual_seed(config.seed)
    net = FieldNetwork(config.network_spec(), dtype=config.dtype)
    init = torch.nn.utils.parameters_to_vector(net.parameters()).detach().clone()
    evaluator = LossEvaluator(config, mesh.nodes, strain_ref, stats)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr, betas=tuple(config.betas), eps=config.eps)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, config.lr_decay) if config.lr_decay else None
    history = TrainHistory()

    def e_error():
        if ground_truth_E is None:
            return None
        return l2_relative_error(element_average(mesh, nodal_modulus(net, mesh.nodes)), ground_truth_E)

    def record(it, losses):
        vals = {k: float(v.detach()) for k, v in losses.items()}
        if not all(np.isfinite(list(vals.values()))):
            raise TrainingDiverged(it, vals)
        history.append(it, vals, e_error())
        if callback is not None:
            callback(it, vals)

    for it in range(config.iterations):
        opt.zero_grad(set_to_none=True)
        losses = evaluator(net)
        history.clamp_count += evaluator.clamped
        if it % config.log_stride == 0:
            record(it, losses)
        elif not torch.isfinite(losses["total"]):
            raise TrainingDiverged(it, {k: float(v.detach()) for k, v in losses.items()})
        losses["total"].backward()
        opt.step()
        if sched is not None:
            sched.step()
    final = evaluator(net)
    history.final_clamped = evaluator.clamped
    if evaluator.clamped:
        log.warning("%d collocation points still at the log(J) floor after training", evaluator.clamped)
    record(config.iterations, final)
    return TrainResult(net=net, history=history, initial_params=init)


@dataclass
class FieldReport:
    E_nodes: np.ndarray
    E_elements: np.ndarray
    u: np.ndarray  # (N, 2)
    strain: np.ndarray  # (N, 3) exx, eyy, exy
    abs_err_u: np.ndarray | None
    abs_err_strain: np.ndarray | None
    abs_err_E: np.ndarray | None  # per element
    l2: dict

    def write_csv(self, nodes_path: str | Path, elements_path: str | Path, mesh: Mesh) -> None:
        n = mesh.n_nodes
        nan2 = np.full((n, 2), np.nan)
        nan3 = np.full((n, 3), np.nan)
        eu = self.abs_err_u if self.abs_err_u is not None else nan2
        es = self.abs_err_strain if self.abs_err_strain is not None else nan3
        cols = np.column_stack([mesh.nodes, self.u, self.strain, self.E_nodes, eu, es])
        head = "node,x,y,ux,uy,exx,eyy,exy,E,err_ux,err_uy,err_exx,err_eyy,err_exy"
        _write_rows(nodes_path, head, cols)
        ee = self.abs_err_E if self.abs_err_E is not None else np.full(mesh.n_elements, np.nan)
        cols = np.column_stack([mesh.centroids(), self.E_elements, ee])
        _write_rows(elements_path, "element,x,y,E,err_E", cols)


def _write_rows(path, header, cols):
    lines = [header]
    for k, row in enumerate(cols.tolist()):
        lines.append(f"{k}," + ",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate_fields(
    net: FieldNetwork,
    config: PinnConfig,
    mesh: Mesh,
    stats: TransformStats,
    E_truth=None,
    u_truth=None,
    strain_truth=None,
) -> FieldReport:
    """Transformed fields at all nodes with pointwise absolute errors and L2 errors."""
    xy = torch.tensor(mesh.nodes, dtype=net.dtype)
    with torch.no_grad():
        raw = net.jet(xy, order=1)
        ux, uy = displacement_jet(raw, xy, stats, config.hard_bc, config.load.d)
        E = modulus_jet(raw)[VAL].double().numpy()
        exx, exy, eyy = green_lagrange_components(*_deformation_values(ux, uy))
    u = np.column_stack([ux[VAL].double().numpy(), uy[VAL].double().numpy()])
    strain = np.column_stack([exx.double().numpy(), eyy.double().numpy(), exy.double().numpy()])
    E_el = element_average(mesh, E)
    l2, eu, es, ee = {}, None, None, None
    if E_truth is not None:
        E_truth = np.asarray(E_truth, float)
        ee = np.abs(E_el - E_truth)
        l2["E"] = l2_relative_error(E_el, E_truth)
    if u_truth is not None:
        u_truth = np.asarray(u_truth, float)
        eu = np.abs(u - u_truth)
        l2["u"] = l2_relative_error(u, u_truth)
    if strain_truth is not None:
        st = np.asarray(strain_truth, float)
        if st.ndim == 3:
            st = np.column_stack([st[:, 0, 0], st[:, 1, 1], st[:, 0, 1]])
        es = np.abs(strain - st)
        l2["strain"] = l2_relative_error(strain, st)
    return FieldReport(E, E_el, u, strain, eu, es, ee, l2)
