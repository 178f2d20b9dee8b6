"""Hyperelastic constitutive laws in 2D.

The formulas are written once, component-wise, so the same code runs on
numpy arrays (FE data generation), dual numbers (FE tangent) and torch
tensors (PINN losses).  A deformation gradient is passed around either as a
``(..., 2, 2)`` array or as the four components ``(F11, F12, F21, F22)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("neo_hookean_plane_strain", "neo_hookean_plane_stress", "mooney_rivlin", "gent")


class DomainError(ValueError):
    """Deformation outside the admissible set of a constitutive law."""


@dataclass(frozen=True)
class MaterialModel:
    kind: str = "neo_hookean_plane_strain"
    nu: float = 0.3
    mu2: float = 0.2
    Jm: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown material kind {self.kind!r}; expected one of {KINDS}")
        if self.kind.startswith("neo_hookean") and not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson's ratio must be in [0, 0.5), got {self.nu}")
        if self.Jm <= 0:
            raise ValueError(f"Jm must be positive, got {self.Jm}")
        if self.mu2 < 0:
            raise ValueError(f"mu2 must be non-negative, got {self.mu2}")

    @property
    def mode(self) -> str | None:
        if self.kind == "neo_hookean_plane_strain":
            return "plane_strain"
        if self.kind == "neo_hookean_plane_stress":
            return "plane_stress"
        return None


@dataclass(frozen=True)
class Kinematics:
    """Derived kinematic quantities of a deformation gradient ``F`` (..., 2, 2)."""

    F: np.ndarray
    J: np.ndarray
    C: np.ndarray
    I1: np.ndarray
    I2: np.ndarray

    @classmethod
    def from_F(cls, F) -> "Kinematics":
        F = np.asarray(F, dtype=float)
        C = np.swapaxes(F, -1, -2) @ F
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1**2 - np.trace(C @ C, axis1=-2, axis2=-1))
        return cls(F=F, J=np.linalg.det(F), C=C, I1=I1, I2=I2)

    @classmethod
    def from_displacement_gradient(cls, grad_u) -> "Kinematics":
        return cls.from_F(np.eye(2) + np.asarray(grad_u, dtype=float))


def _log(x):
    # torch tensors and Dual both expose .log(); numpy arrays and floats do not
    return x.log() if hasattr(x, "log") else np.log(x)


def _clamp_min(x, floor):
    if hasattr(x, "clamp_min"):
        return x.clamp_min(floor)
    return np.maximum(x, floor)


def lame_parameters(E, nu: float, mode: str = "plane_strain"):
    """Return ``(lambda, mu)``; under plane stress lambda becomes 2*lambda*mu/(lambda + 2*mu)."""
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must be in [0, 0.5), got {nu}")
    if mode not in ("plane_strain", "plane_stress"):
        raise ValueError(f"unknown mode {mode!r}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    if mode == "plane_stress":
        lam = 2.0 * lam * mu / (lam + 2.0 * mu)
    return lam, mu


def _invariants(f11, f12, f21, f22):
    J = f11 * f22 - f12 * f21
    c11 = f11 * f11 + f21 * f21
    c22 = f12 * f12 + f22 * f22
    c12 = f11 * f12 + f21 * f22
    I1 = c11 + c22
    I2 = 0.5 * (I1 * I1 - (c11 * c11 + 2.0 * c12 * c12 + c22 * c22))
    return J, c11, c12, c22, I1, I2


def energy_components(model: MaterialModel, f11, f12, f21, f22, theta):
    """Strain energy density from the four components of F (no domain checks)."""
    J, _, _, _, I1, I2 = _invariants(f11, f12, f21, f22)
    if model.mode is not None:
        lam, mu = lame_parameters(theta, model.nu, model.mode)
        logJ = _log(J)
        return 0.5 * lam * logJ * logJ - mu * logJ + 0.5 * mu * (I1 - 2.0)
    if model.kind == "mooney_rivlin":
        return 0.5 * theta * (I1 - 2.0) + 0.5 * model.mu2 * (I2 - 2.0)
    # gent
    return -0.5 * theta * model.Jm * _log(1.0 - (I1 - 2.0) / model.Jm)


def pk_components(model: MaterialModel, f11, f12, f21, f22, theta, log_floor=None):
    """First Piola-Kirchhoff stress components ``(P11, P12, P21, P22)``.

    ``P[i][J] = dPsi/dF[i][J]``.  With ``log_floor`` set, J (Neo-Hookean) or the
    Gent denominator is clamped from below so training never sees log of a
    non-positive number.
    """
    if model.mode is not None:
        lam, mu = lame_parameters(theta, model.nu, model.mode)
        J = f11 * f22 - f12 * f21
        if log_floor is not None:
            J = _clamp_min(J, log_floor)
        s = (lam * _log(J) - mu) / J
        # F^{-T} = cof(F) / J with cof(F) = [[F22, -F21], [-F12, F11]]
        return (
            mu * f11 + s * f22,
            mu * f12 - s * f21,
            mu * f21 - s * f12,
            mu * f22 + s * f11,
        )
    J, c11, c12, c22, I1, _ = _invariants(f11, f12, f21, f22)
    if model.kind == "mooney_rivlin":
        mu2 = model.mu2
        # P = mu1 F + mu2 (I1 F - F C)
        fc11 = f11 * c11 + f12 * c12
        fc12 = f11 * c12 + f12 * c22
        fc21 = f21 * c11 + f22 * c12
        fc22 = f21 * c12 + f22 * c22
        return (
            theta * f11 + mu2 * (I1 * f11 - fc11),
            theta * f12 + mu2 * (I1 * f12 - fc12),
            theta * f21 + mu2 * (I1 * f21 - fc21),
            theta * f22 + mu2 * (I1 * f22 - fc22),
        )
    denom = model.Jm - (I1 - 2.0)
    if log_floor is not None:
        denom = _clamp_min(denom, log_floor * model.Jm)
    g = theta * model.Jm / denom
    return g * f11, g * f12, g * f21, g * f22


def check_admissible(model: MaterialModel, F) -> None:
    """Raise :class:`DomainError` if any F in the batch is outside the model's domain."""
    F = np.asarray(F, dtype=float)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(J <= 0) or not np.all(np.isfinite(J)):
        raise DomainError(f"non-positive Jacobian (min J = {np.min(J):.3e})")
    if model.kind == "gent":
        I1 = np.sum(F * F, axis=(-2, -1))
        if np.any(I1 - 2.0 >= model.Jm):
            raise DomainError(f"Gent lock-up: I1 - 2 >= Jm = {model.Jm}")


def _as_F(kin) -> np.ndarray:
    return kin.F if isinstance(kin, Kinematics) else np.asarray(kin, dtype=float)


def strain_energy(model: MaterialModel, kin, theta):
    """Strain energy density for F given as :class:`Kinematics` or a (..., 2, 2) array."""
    F = _as_F(kin)
    check_admissible(model, F)
    return energy_components(model, F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1], theta)


def first_pk_stress(model: MaterialModel, kin, theta) -> np.ndarray:
    """First Piola-Kirchhoff stress as a (..., 2, 2) array."""
    F = _as_F(kin)
    check_admissible(model, F)
    p11, p12, p21, p22 = pk_components(
        model, F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1], theta
    )
    return np.stack([np.stack([p11, p12], -1), np.stack([p21, p22], -1)], -2)


def green_lagrange(F) -> np.ndarray:
    """Green-Lagrange strain 0.5 (F^T F - I); symmetric bit-for-bit."""
    F = np.asarray(F, dtype=float)
    e11, e12, e22 = green_lagrange_components(F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1])
    return np.stack([np.stack([e11, e12], -1), np.stack([e12, e22], -1)], -2)


def green_lagrange_components(f11, f12, f21, f22):
    """Return ``(eps_xx, eps_xy, eps_yy)``."""
    return (
        0.5 * (f11 * f11 + f21 * f21 - 1.0),
        0.5 * (f11 * f12 + f21 * f22),
        0.5 * (f12 * f12 + f22 * f22 - 1.0),
    )
