"""Photoluminescence response models and per-emitter field recovery.

Dimensionless forms used for fitting:
  ODMR  gamma = (omega - Omega0) / Delta, phi = Omega_k / Delta,
        I = 1 - chi/2 [L(gamma - phi) + L(gamma + phi)], L(u) = 1 / (1 + u^2)
  Rabi  gamma = Omega0 t / 2, phi = Omega_k / Omega0,
        I = cos^2(phi gamma) / phi^2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

MU_B = 9.2740100783e-24  # J/T
HBAR = 1.054571817e-34  # J s


@dataclass(frozen=True)
class OdmrModel:
    chi: float = 0.5
    omega0: float = 2.87e9 * 2 * np.pi
    linewidth: float = 1.0e7 * 2 * np.pi
    g: float = 2.0
    strain: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.chi < 1.0:
            raise ValueError("chi must lie in (0, 1)")
        if self.linewidth <= 0:
            raise ValueError("linewidth must be positive")


def lorentzian(omega, shift, model: OdmrModel):
    return 1.0 / (1.0 + ((omega - model.omega0 - shift) / model.linewidth) ** 2)


def odmr_intensity(omega, omega_k, model: OdmrModel):
    return 1.0 - 0.5 * model.chi * (lorentzian(omega, -omega_k, model) + lorentzian(omega, omega_k, model))


def odmr_dimensionless(gamma, phi, chi: float):
    gamma = np.asarray(gamma, float)
    return 1.0 - 0.5 * chi * (1.0 / (1.0 + (gamma - phi) ** 2) + 1.0 / (1.0 + (gamma + phi) ** 2))


def zeeman_from_field(b_field, model: OdmrModel):
    return np.sqrt((model.g * MU_B * np.asarray(b_field, float) / HBAR) ** 2 + model.strain**2)


def field_from_zeeman(omega, model: OdmrModel):
    omega = np.asarray(omega, float)
    if np.any(omega < model.strain):
        raise ValueError("splitting below the strain floor")
    return HBAR * np.sqrt(omega**2 - model.strain**2) / (model.g * MU_B)


def rabi_intensity(t, omega_k, omega0):
    if np.any(np.asarray(omega_k) < omega0) or omega0 <= 0:
        raise ValueError("need Omega_k >= Omega0 > 0")
    return (omega0 / np.asarray(omega_k, float)) ** 2 * np.cos(np.asarray(omega_k) * np.asarray(t, float) / 2) ** 2


def rabi_dimensionless(gamma, phi):
    gamma = np.asarray(gamma, float)
    return np.cos(phi * gamma) ** 2 / phi**2


def brightness_from_intensities(intensities) -> np.ndarray:
    i = np.asarray(intensities, float)
    if np.any(i <= 0):
        raise ValueError("intensities must be positive")
    return i / i.sum(axis=-1, keepdims=True)


@dataclass
class BrightnessTrace:
    """Brightness estimates over a modulation sweep; rows of ``b_hat`` follow ``gammas``."""

    gammas: np.ndarray
    b_hat: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, float)
        self.b_hat = np.atleast_2d(np.asarray(self.b_hat, float))
        self.budgets = np.asarray(self.budgets, float)
        if self.b_hat.shape[0] != self.gammas.size or self.budgets.size != self.gammas.size:
            raise ValueError("trace arrays disagree in length")

    @property
    def intensities(self) -> np.ndarray:
        return self.budgets[:, None] * self.b_hat


@dataclass
class FieldFit:
    phi: np.ndarray
    scale: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    rank_deficient: np.ndarray


def model_curve(kind: str, gamma, phi, chi: float = 0.5):
    if kind == "odmr":
        return odmr_dimensionless(gamma, phi, chi)
    if kind == "rabi":
        return rabi_dimensionless(gamma, phi)
    raise ValueError(f"unknown model kind {kind!r}")


def _default_phi_grid(kind, gammas):
    if kind == "odmr":
        return np.linspace(0.0, np.abs(gammas).max(), 241)
    return np.linspace(1.0, 3.0, 401)


def fit_field(trace, kind: str, chi: float = 0.5, phi_grid=None, init=None) -> FieldFit:
    """Per-emitter least-squares fit of c * I(gamma | phi) to the intensity trace.

    Each emitter gets a coarse scan over ``phi_grid`` (scale solved in closed
    form) followed by Levenberg-Marquardt refinement of (phi, c).
    """
    if isinstance(trace, BrightnessTrace):
        gammas, data = trace.gammas, trace.intensities
    else:
        gammas, data = trace
        gammas, data = np.asarray(gammas, float), np.atleast_2d(np.asarray(data, float))
    if data.shape[0] != gammas.size:
        data = data.T
    n_emit = data.shape[1]
    if gammas.size < 6:
        raise ValueError("need at least 3x the parameter count in modulation points")
    grid = _default_phi_grid(kind, gammas) if phi_grid is None else np.asarray(phi_grid, float)
    curves = np.array([model_curve(kind, gammas, p, chi) for p in grid])  # (n_phi, G)
    norms = (curves**2).sum(axis=1)

    phis, scales, resid = np.empty(n_emit), np.empty(n_emit), np.empty(n_emit)
    conv = np.zeros(n_emit, bool)
    rank_def = np.zeros(n_emit, bool)
    for k in range(n_emit):
        y = data[:, k]
        if init is not None:
            p0 = float(np.asarray(init)[k])
            f0 = model_curve(kind, gammas, p0, chi)
            c0 = (f0 @ y) / (f0 @ f0)
        else:
            c = (curves @ y) / norms
            sse = ((y[None, :] - c[:, None] * curves) ** 2).sum(axis=1)
            j = int(np.argmin(sse))
            p0, c0 = grid[j], c[j]

        def res(v):
            return v[1] * model_curve(kind, gammas, v[0], chi) - y

        sol = least_squares(res, [p0, c0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        jac_rank = np.linalg.matrix_rank(sol.jac, tol=1e-10 * max(np.abs(sol.jac).max(), 1e-300))
        phis[k] = abs(sol.x[0]) if kind == "odmr" else sol.x[0]
        scales[k] = sol.x[1]
        resid[k] = float(np.linalg.norm(sol.fun))
        conv[k] = sol.status > 0
        rank_def[k] = jac_rank < 2
    return FieldFit(phis, scales, resid, conv, rank_def)


def field_rmse(phi_true, phi_est) -> float:
    a, b = np.asarray(phi_true, float), np.asarray(phi_est, float)
    return float(np.sqrt(np.mean((a - b) ** 2)))
