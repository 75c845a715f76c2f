"""Emitter ensembles, Gaussian PSF overlaps and the density-operator eigenbasis.

Lengths are carried in units of the PSF width internally; ``sigma`` only
enters when an ensemble is read from or written to disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIMPLEX_TOL = 1e-12
DEGENERATE_TOL = 1e-9
RANK_TOL = 1e-12


class DegeneratePositionsError(ValueError):
    """Two emitters sit on top of each other; their states are not independent."""


class NumericalRankError(ValueError):
    """A Gram or density matrix is numerically rank deficient."""


@dataclass(frozen=True)
class EmitterEnsemble:
    """K point emitters with positions (K x 2, units of sigma) and brightnesses."""

    positions: np.ndarray
    brightnesses: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        b = np.array(self.brightnesses, dtype=float).ravel()
        if pos.shape[0] != b.size:
            raise ValueError(f"{pos.shape[0]} positions but {b.size} brightnesses")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if np.any(b <= 0) or abs(b.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("brightnesses must be strictly positive and sum to 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "brightnesses", b)

    @property
    def K(self) -> int:
        return self.positions.shape[0]

    def with_brightnesses(self, brightnesses) -> "EmitterEnsemble":
        return EmitterEnsemble(self.positions, brightnesses, self.sigma)

    def to_json(self) -> dict:
        return {
            "sigma": float(self.sigma),
            "positions": (self.positions * self.sigma).tolist(),
            "brightnesses": self.brightnesses.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EmitterEnsemble":
        sigma = float(obj.get("sigma", 1.0))
        pos = np.asarray(obj["positions"], dtype=float) / sigma
        return cls(pos, np.asarray(obj["brightnesses"], dtype=float), sigma)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "EmitterEnsemble":
        return cls.from_json(json.loads(Path(path).read_text()))


def uniform_ensemble(positions, sigma: float = 1.0) -> EmitterEnsemble:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    k = positions.shape[0]
    return EmitterEnsemble(positions, np.full(k, 1.0 / k), sigma)


def cross_gram(positions_a, positions_b, sigma: float = 1.0) -> np.ndarray:
    """Overlaps <psi(a_j)|psi(b_k)> = exp(-|a_j - b_k|^2 / 8 sigma^2)."""
    a = np.asarray(positions_a, dtype=float).reshape(-1, 2)
    b = np.asarray(positions_b, dtype=float).reshape(-1, 2)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / (8.0 * sigma**2))


def min_pairwise_separation(positions) -> float:
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if pos.shape[0] < 2:
        raise ValueError("minimum separation needs at least two emitters")
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1))
    iu = np.triu_indices(pos.shape[0], k=1)
    return float(d[iu].min())


def gram_matrix(ensemble: EmitterEnsemble) -> np.ndarray:
    """Gram matrix of the emitter states (positions are already in sigma units)."""
    if ensemble.K >= 2 and min_pairwise_separation(ensemble.positions) < DEGENERATE_TOL:
        raise DegeneratePositionsError("coincident emitter positions give a singular Gram matrix")
    return cross_gram(ensemble.positions, ensemble.positions)


def _fix_sign(vectors: np.ndarray) -> np.ndarray:
    # first nonzero component of every eigenvector made positive real
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size:
            c = col[nz[0]]
            out[:, j] = col * (np.conj(c) / abs(c))
    return out


def _eigh_desc(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(mat)
    order = np.argsort(w)[::-1]
    return w[order], _fix_sign(v[:, order])


@dataclass(frozen=True)
class EigenbasisRep:
    """Emitter states expressed in the eigenbasis of rho = sum_k b_k |psi_k><psi_k|.

    Column k of ``psi`` holds the coordinates of state k; ``eigenvalues`` are
    the (descending) spectrum of rho and ``priors`` the mixing weights.
    """

    psi: np.ndarray
    eigenvalues: np.ndarray
    priors: np.ndarray

    @property
    def K(self) -> int:
        return self.psi.shape[1]

    @property
    def gram(self) -> np.ndarray:
        return self.psi.conj().T @ self.psi

    @property
    def rho(self) -> np.ndarray:
        return (self.psi * self.priors) @ self.psi.conj().T


def eigenbasis_representation(gram: np.ndarray, priors) -> EigenbasisRep:
    """Represent the states behind ``gram`` in the eigenbasis of the mixed state.

    G = U D U^H, S = D^1/2 U^H B U D^1/2 = W Lambda W^H and Psi = W^H D^1/2 U^H.
    Then Psi^H Psi = G and Psi B Psi^H = Lambda.
    """
    gram = np.asarray(gram)
    b = np.asarray(priors, dtype=float).ravel()
    if gram.shape != (b.size, b.size):
        raise ValueError("Gram matrix and priors disagree in size")
    if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("priors must lie on the probability simplex")
    d, u = _eigh_desc(gram)
    if d[-1] < RANK_TOL * max(d[0], 1.0):
        raise NumericalRankError(f"smallest Gram eigenvalue {d[-1]:.3e} below rank threshold")
    sqrt_d = np.sqrt(d)
    a = sqrt_d[:, None] * u.conj().T * np.sqrt(b)[None, :]
    s = a @ a.conj().T
    s = 0.5 * (s + s.conj().T)
    lam, w = _eigh_desc(s)
    lam = np.clip(lam, 0.0, None)
    psi = w.conj().T @ (sqrt_d[:, None] * u.conj().T)
    return EigenbasisRep(psi=psi.astype(complex), eigenvalues=lam, priors=b)


def ensemble_representation(ensemble: EmitterEnsemble) -> EigenbasisRep:
    return eigenbasis_representation(gram_matrix(ensemble), ensemble.brightnesses)
