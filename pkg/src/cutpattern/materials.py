"""Membrane constitutive models.

Stresses are membrane stress resultants (kN/m) and strains are engineering
strains, both ordered (x, y, shear) in the material principal axes. Every
model exposes the same vectorised interface used by the FE core:

* ``energy_density(eps)``  strain energy per unit reference area
* ``energy_gradient(eps)`` derivative of the energy density w.r.t. strain
* ``stress(eps)``          stress reported to the user
* ``strain_for_stress(sig)`` inverse map used when removing stress

All functions accept arrays of shape (..., 3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class MaterialError(ValueError):
    pass


# quadratic form of the plane-stress von Mises measure: sigma_eq^2 = s^T M s
_VON_MISES = np.array([[1.0, -0.5, 0.0],
                       [-0.5, 1.0, 0.0],
                       [0.0, 0.0, 3.0]])


def equivalent_stress(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    sx, sy, t = s[..., 0], s[..., 1], s[..., 2]
    return np.sqrt(np.maximum(sx * sx - sx * sy + sy * sy + 3.0 * t * t, 0.0))


@dataclass(frozen=True)
class OrthotropicElastic:
    """Linear orthotropic fabric (warp x, weft y)."""

    E_x: float
    E_y: float
    G: float
    nu_xy: float
    nu_yx: Optional[float] = None

    def __post_init__(self):
        if min(self.E_x, self.E_y, self.G) <= 0:
            raise MaterialError("E_x, E_y and G must be positive")
        beta = self.E_x / self.E_y
        if 1.0 - beta * self.nu_xy ** 2 <= 0:
            raise MaterialError("1 - (E_x/E_y) nu_xy^2 must be positive")
        if self.nu_yx is not None:
            # with D as assembled below, uniaxial x-loading has Poisson ratio nu_xy * E_x / E_y
            implied = self.nu_xy * beta
            if abs(self.nu_yx - implied) > 0.02:
                raise MaterialError(
                    f"nu_yx={self.nu_yx} is inconsistent with nu_xy*E_x/E_y={implied:.4f}")

    @property
    def D(self) -> np.ndarray:
        return constitutive_matrix(self)

    @property
    def stiffness_scale(self) -> float:
        return float(np.mean(np.diag(self.D)))

    def energy_density(self, eps):
        eps = np.asarray(eps, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", eps, self.D, eps)

    def energy_gradient(self, eps):
        return np.asarray(eps, dtype=float) @ self.D.T

    def stress(self, eps):
        return self.energy_gradient(eps)

    def strain_for_stress(self, sigma):
        return np.linalg.solve(self.D, np.asarray(sigma, dtype=float)[..., None])[..., 0]


def constitutive_matrix(mat: OrthotropicElastic) -> np.ndarray:
    beta = mat.E_x / mat.E_y
    kappa = mat.G / mat.E_y
    nu = mat.nu_xy
    det = 1.0 - beta * nu * nu
    D = mat.E_y / det * np.array([[beta, beta * nu, 0.0],
                                  [beta * nu, 1.0, 0.0],
                                  [0.0, 0.0, kappa * det]])
    if np.linalg.eigvalsh(D).min() <= 0:
        raise MaterialError("constitutive matrix is not positive definite")
    return D


@dataclass(frozen=True)
class EtfeBilinear:
    """ETFE film as a bilinear nonlinear-elastic material under monotonic loading.

    Below the von Mises yield stress the response is linear with D1; beyond it
    the stiffness drops to (H/E) D1 along the radial strain path.
    """

    E: float
    H: float
    G_e: float
    nu: float
    sigma_Y: float
    eps_Y_uni: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.H < self.E:
            raise MaterialError("hardening coefficient must satisfy 0 < H < E")
        if self.sigma_Y <= 0:
            raise MaterialError("yield stress must be positive")
        if not -1.0 < self.nu < 0.5:
            raise MaterialError("Poisson ratio must lie in (-1, 0.5)")
        g_iso = self.E / (2.0 * (1.0 + self.nu))
        if abs(self.G_e - g_iso) / self.G_e > 0.02:
            raise MaterialError(f"G_e={self.G_e} is inconsistent with E/(2(1+nu))={g_iso:.3f}")
        if self.eps_Y_uni is not None and abs(self.sigma_Y / self.E - self.eps_Y_uni) > 0.02 * self.eps_Y_uni:
            raise MaterialError("eps_Y_uni is inconsistent with sigma_Y / E")

    @property
    def D(self) -> np.ndarray:
        return etfe_elastic_matrix(self)

    @property
    def hardening_ratio(self) -> float:
        return self.H / self.E

    @property
    def stiffness_scale(self) -> float:
        return float(np.mean(np.diag(self.D)))

    def energy_density(self, eps):
        return etfe_energy_density(eps, self)

    def energy_gradient(self, eps):
        return etfe_energy_gradient(eps, self)

    def stress(self, eps):
        return etfe_stress(eps, self)[0]

    def strain_for_stress(self, sigma):
        return etfe_strain_for_stress(sigma, self)


def etfe_elastic_matrix(mat: EtfeBilinear) -> np.ndarray:
    c = mat.E / (1.0 - mat.nu ** 2)
    return np.array([[c, c * mat.nu, 0.0],
                     [c * mat.nu, c, 0.0],
                     [0.0, 0.0, mat.G_e]])


def _trial(eps, mat):
    eps = np.asarray(eps, dtype=float)
    D1 = mat.D
    trial = eps @ D1.T
    return eps, D1, trial, equivalent_stress(trial)


def etfe_stress(eps, mat: EtfeBilinear):
    """Return (stress, yielded) for strain ``eps``.

    The trial stress D1 eps is scaled back to the yield surface to find the
    yield strain; the excess strain is carried with the reduced stiffness.
    """
    eps, D1, trial, q = _trial(eps, mat)
    yielded = q > mat.sigma_Y
    r = mat.hardening_ratio
    t = np.where(yielded, mat.sigma_Y / np.where(yielded, q, 1.0), 1.0)
    eps_y = t[..., None] * eps
    sigma = (1.0 - r) * (eps_y @ D1.T) + r * trial
    sigma = np.where(yielded[..., None], sigma, trial)
    if sigma.ndim == 1:
        return sigma, bool(yielded)
    return sigma, yielded


def etfe_energy_density(eps, mat: EtfeBilinear):
    """Energy under the bilinear radial path: 1/2 [eY.sY + (e - eY).(s + sY)]."""
    eps, D1, trial, q = _trial(eps, mat)
    elastic = 0.5 * np.sum(eps * trial, axis=-1)
    yielded = q > mat.sigma_Y
    t = np.where(yielded, mat.sigma_Y / np.where(yielded, q, 1.0), 1.0)
    eps_y = t[..., None] * eps
    sig_y = eps_y @ D1.T
    sigma = etfe_stress(eps, mat)[0]
    plastic = 0.5 * (np.sum(eps_y * sig_y, axis=-1) + np.sum((eps - eps_y) * (sigma + sig_y), axis=-1))
    return np.where(yielded, plastic, elastic)


def etfe_energy_gradient(eps, mat: EtfeBilinear):
    """Exact derivative of :func:`etfe_energy_density`.

    Writing s = e.D1.e, q = equivalent trial stress and t = sigma_Y / q, the
    yielded energy is s/2 [r + (1 - r)(2t - t^2)]. Its gradient agrees with
    :func:`etfe_stress` whenever D1 e is parallel to D1 M D1 e (e.g. equal
    biaxial strain) and differs by (1-r) t (1-t) [D1 e - s/q^2 D1 M D1 e]
    otherwise.
    """
    eps, D1, trial, q = _trial(eps, mat)
    yielded = q > mat.sigma_Y
    if not np.any(yielded):
        return trial
    r = mat.hardening_ratio
    qs = np.where(yielded, q, 1.0)
    t = (mat.sigma_Y / qs)[..., None]
    s = np.sum(eps * trial, axis=-1)[..., None]
    q_grad = trial @ _VON_MISES.T @ D1.T  # D1 M D1 eps (both symmetric)
    grad = r * trial + (1.0 - r) * ((2.0 * t - t * t) * trial - t * (1.0 - t) * s / qs[..., None] ** 2 * q_grad)
    return np.where(yielded[..., None], grad, trial)


def etfe_strain_for_stress(sigma, mat: EtfeBilinear):
    """Invert the radial bilinear law: strain that produces stress ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    D1inv = np.linalg.inv(mat.D)
    q = equivalent_stress(sigma)
    over = q > mat.sigma_Y
    t = np.where(over, mat.sigma_Y / np.where(over, q, 1.0), 1.0)[..., None]
    sig_y = t * sigma
    eps = sig_y @ D1inv.T + (sigma - sig_y) @ D1inv.T / mat.hardening_ratio
    return np.where(over[..., None], eps, sigma @ D1inv.T)


PVC_MODEL1 = dict(E_x=243.0, E_y=227.0, G=24.2, nu_xy=0.51, nu_yx=0.55)
ETFE_MODEL2 = dict(E=160.0, H=10.4, G_e=55.2, nu=0.45, sigma_Y=3.2, eps_Y_uni=0.02)


def make_material(kind: str, **params):
    """Build a material from a config block (``kind`` is 'orthotropic' or 'etfe')."""
    kinds = {"orthotropic": OrthotropicElastic, "etfe": EtfeBilinear}
    try:
        cls = kinds[kind]
    except KeyError:
        raise MaterialError(f"unknown material type '{kind}' (expected one of {sorted(kinds)})") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise MaterialError(f"bad parameters for {kind} material: {exc}") from None
