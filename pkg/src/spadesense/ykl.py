"""Minimum-error (YKL) projective measurements by descent on the unitary group.

The cost P_e(U) = 1 - sum_k b_k |<u_k|psi_k>|^2 is minimized with a
Riemannian Newton method, a QR retraction and Armijo backtracking. Several starts
are tried and the lowest cost wins (ties go to the earliest start).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import unitary_group

from .scene import EigenbasisRep, EmitterEnsemble, cross_gram, eigenbasis_representation, gram_matrix


@dataclass(frozen=True)
class YklMeasurement:
    """K projectors plus a bucket; column k of ``unitary`` announces emitter k.

    Columns are coordinates in the eigenbasis of the design-time density
    operator, whose states are the columns of ``psi``.
    """

    unitary: np.ndarray
    design_positions: np.ndarray
    design_priors: np.ndarray
    min_error: float
    psi: np.ndarray
    converged: bool = True
    grad_norm: float = 0.0
    iterations: int = 0

    @property
    def K(self) -> int:
        return self.unitary.shape[0]


def ykl_cost(u: np.ndarray, psi: np.ndarray, priors: np.ndarray) -> float:
    # sum of off-diagonal weight instead of 1 - sum of diagonal: no cancellation
    p = np.abs(u.conj().T @ psi) ** 2
    return float(np.sum(priors * (p.sum(axis=0) - np.diag(p))))


def _skew_basis(k: int) -> np.ndarray:
    """Orthonormal basis of the skew-Hermitian K x K matrices (real inner product)."""
    basis = []
    for i in range(k):
        e = np.zeros((k, k), complex)
        e[i, i] = 1j
        basis.append(e)
    for i in range(k):
        for j in range(i + 1, k):
            e = np.zeros((k, k), complex)
            e[i, j], e[j, i] = 1.0, -1.0
            basis.append(e / np.sqrt(2))
            e = np.zeros((k, k), complex)
            e[i, j] = e[j, i] = 1j
            basis.append(e / np.sqrt(2))
    return np.array(basis)


def _local_model(u, psi, priors, basis):
    """Gradient and Hessian of X -> P_e(U exp(X)) at X = 0 in ``basis`` coordinates."""
    a = u.conj().T @ psi
    adiag = np.diag(a)
    xa = basis @ a  # (n, K, K)
    dia = np.einsum("akk->ak", xa)
    grad = 2.0 * np.real(dia * (priors * adiag.conj())[None, :]).sum(axis=1)
    w = priors * adiag.conj()
    t = np.einsum("akm,bmk,k->ab", basis, xa, w)
    hess = -(2.0 * np.real((dia.conj() * priors) @ dia.T) + np.real(t + t.T))
    return grad, 0.5 * (hess + hess.T)


def _retract(u, xi):
    q, r = np.linalg.qr(u + xi)
    d = np.diag(r)
    ph = np.where(np.abs(d) > 0, d / np.abs(d), 1.0)
    return q * ph[None, :]


def _descend(u, psi, priors, tol, max_iter, c1=1e-4, shrink=0.5):
    """Riemannian Newton with an eigenvalue-modified Hessian and Armijo backtracking.

    The tangent vector U X is retracted by QR of U + U X. When cost differences
    drop below rounding the line search accepts steps that shrink the gradient.
    """
    basis = _skew_basis(u.shape[0])
    f = ykl_cost(u, psi, priors)
    g, h = _local_model(u, psi, priors, basis)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn >= tol and it < max_iter:
        ev, vec = np.linalg.eigh(h)
        floor = max(1e-8, 1e-6 * np.abs(ev).max())
        ev = np.maximum(np.abs(ev), floor)
        step = -vec @ ((vec.T @ g) / ev)
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -gn**2
        t = 1.0
        while True:
            u_new = _retract(u, u @ np.tensordot(t * step, basis, axes=1))
            f_new = ykl_cost(u_new, psi, priors)
            if f_new <= f + c1 * t * slope:
                break
            if abs(f_new - f) <= 1e-13 * max(f, 1e-300):
                g_try, _ = _local_model(u_new, psi, priors, basis)
                if np.linalg.norm(g_try) < gn:
                    break
            if t < 1e-12:
                break
            t *= shrink
        if t < 1e-12 and f_new > f:
            break
        u, f = u_new, f_new
        g, h = _local_model(u, psi, priors, basis)
        gn = float(np.linalg.norm(g))
        it += 1
    return u, f, gn, it


def pretty_good_unitary(rep: EigenbasisRep) -> np.ndarray | None:
    """Square-root measurement Lambda^-1/2 Psi B^1/2, unitary whenever rho is full rank."""
    lam = rep.eigenvalues
    if lam.min() < 1e-14:
        return None
    x = rep.psi * np.sqrt(rep.priors)[None, :] / np.sqrt(lam)[:, None]
    q, r = np.linalg.qr(x)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph[None, :]


def _fix_phase(u):
    out = u.copy()
    for k in range(out.shape[1]):
        j = np.argmax(np.abs(out[:, k]))
        c = out[j, k]
        out[:, k] *= np.conj(c) / abs(c)
    return out


def solve_ykl(
    rep: EigenbasisRep,
    restarts: int = 8,
    tol: float = 1e-9,
    max_iter: int = 5000,
    seed: int = 0,
    design_positions=None,
) -> YklMeasurement:
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    psi, b = rep.psi, rep.priors
    k = rep.K
    starts = [np.eye(k, dtype=complex)]
    pgm = pretty_good_unitary(rep)
    if pgm is not None:
        starts.append(pgm)
    if len(starts) < restarts and k > 1:
        rng = np.random.default_rng(seed)
        for _ in range(restarts - len(starts)):
            starts.append(unitary_group.rvs(k, random_state=rng).reshape(k, k))
    starts = starts[:restarts]

    best = None
    for u0 in starts:
        u, f, gn, it = _descend(u0, psi, b, tol, max_iter)
        if best is None or f < best[1] - 1e-15:
            best = (u, f, gn, it)
    u, f, gn, it = best
    u = _fix_phase(u)
    pos = np.zeros((k, 2)) if design_positions is None else np.asarray(design_positions, float).reshape(k, 2)
    return YklMeasurement(
        unitary=u,
        design_positions=pos,
        design_priors=np.asarray(b, float).copy(),
        min_error=max(f, 0.0),
        psi=psi,
        converged=bool(gn < tol),
        grad_norm=float(gn),
        iterations=int(it),
    )


def design_ykl(positions, priors, **kwargs) -> YklMeasurement:
    """YKL measurement for states at ``positions`` with prior weights ``priors``."""
    ens = EmitterEnsemble(positions, priors)
    rep = eigenbasis_representation(gram_matrix(ens), ens.brightnesses)
    return solve_ykl(rep, design_positions=ens.positions, **kwargs)


def ykl_amplitudes(meas: YklMeasurement, true_positions) -> np.ndarray:
    """<upsilon_k|psi(r_j)> for true positions r_j, shape (K, J)."""
    design = meas.design_positions
    g = cross_gram(design, design)
    c = cross_gram(design, true_positions)
    coords = meas.psi @ np.linalg.solve(g, c)
    return meas.unitary.conj().T @ coords


def ykl_outcome_probabilities(meas: YklMeasurement, true_ensemble: EmitterEnsemble) -> np.ndarray:
    """q_k for the K projectors followed by the bucket."""
    return ykl_probabilities_at(meas, true_ensemble.positions, true_ensemble.brightnesses)


def ykl_probabilities_at(meas: YklMeasurement, positions, brightnesses) -> np.ndarray:
    amp = ykl_amplitudes(meas, positions)
    q = (np.abs(amp) ** 2) @ np.asarray(brightnesses, float)
    bucket = 1.0 - q.sum()
    if bucket < 0:
        if bucket < -1e-9:
            raise FloatingPointError(f"YKL outcome probabilities exceed 1 by {-bucket:.3e}")
        bucket = 0.0
        q = q / q.sum()
    return np.append(q, bucket)


def ykl_mode_coefficients(meas: YklMeasurement, k: int) -> np.ndarray:
    """Coefficients c with upsilon_k = sum_j c_j psi(design_j)."""
    return np.linalg.solve(meas.psi, meas.unitary[:, k])
