"""Direct imaging, Hermite-Gauss (PAD) mode sorting and binary Helstrom projectors.

Mode probabilities are closed-form overlaps of Gaussian states with
Hermite-Gauss modes; spatial grids are only used for rendering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import eval_hermite, gammainc, gammaln, xlogy

from .scene import EmitterEnsemble


@dataclass(frozen=True)
class PadSpadeConfig:
    """Hermite-Gauss sorter aligned at ``origin`` sorting every mode with n + m <= max_total_order.

    Outcome order: the sorted modes in ``mode_indices`` order, then the bucket.
    """

    origin: tuple[float, float] = (0.0, 0.0)
    max_total_order: int = 10

    def __post_init__(self):
        if self.max_total_order < 0:
            raise ValueError("max_total_order must be nonnegative")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_modes(self) -> int:
        q = self.max_total_order
        return (q + 1) * (q + 2) // 2

    @property
    def mode_indices(self) -> np.ndarray:
        return hg_mode_indices(self.max_total_order)


def hg_mode_indices(max_total_order: int) -> np.ndarray:
    """(n, m) pairs ordered by total order, then by n descending."""
    idx = [(t - m, m) for t in range(max_total_order + 1) for m in range(t + 1)]
    return np.array(idx, dtype=int)


@dataclass
class PhotonData:
    """Raw records of one stage: DI arrival positions and sorter counts."""

    di_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    spade_counts: np.ndarray | None = None

    def __post_init__(self):
        self.di_positions = np.asarray(self.di_positions, dtype=float).reshape(-1, 2)
        if self.spade_counts is not None:
            self.spade_counts = np.asarray(self.spade_counts, dtype=np.int64)
            if np.any(self.spade_counts < 0):
                raise ValueError("counts must be nonnegative")

    @property
    def n_di(self) -> int:
        return self.di_positions.shape[0]

    @property
    def n_spade(self) -> int:
        return 0 if self.spade_counts is None else int(self.spade_counts.sum())

    @property
    def n_total(self) -> int:
        return self.n_di + self.n_spade


def _poisson_pmf_table(mu: np.ndarray, order: int) -> np.ndarray:
    """P_n(mu) = exp(-mu) mu^n / n! for n = 0..order, shape mu.shape + (order+1,)."""
    mu = np.asarray(mu, dtype=float)[..., None]
    n = np.arange(order + 1)
    return np.exp(xlogy(n, mu) - mu - gammaln(n + 1))


def pad_overlaps(displacements, config: PadSpadeConfig) -> np.ndarray:
    """|<psi_nm|psi(d)>|^2 for each displacement (rows) and sorted mode (columns)."""
    d = np.asarray(displacements, dtype=float).reshape(-1, 2)
    mux = (d[:, 0] / 2.0) ** 2
    muy = (d[:, 1] / 2.0) ** 2
    q = config.max_total_order
    px = _poisson_pmf_table(mux, q)
    py = _poisson_pmf_table(muy, q)
    nm = config.mode_indices
    return px[:, nm[:, 0]] * py[:, nm[:, 1]]


def pad_bucket(displacements, config: PadSpadeConfig) -> np.ndarray:
    """Per-emitter bucket probability; n + m is Poisson(mux + muy) so this is a Poisson tail."""
    d = np.asarray(displacements, dtype=float).reshape(-1, 2)
    mu = (d**2).sum(axis=1) / 4.0
    return gammainc(config.max_total_order + 1, mu)


def pad_probabilities(ensemble: EmitterEnsemble, config: PadSpadeConfig) -> np.ndarray:
    """Outcome probabilities of the HG sorter, bucket last."""
    return pad_probabilities_at(ensemble.positions, ensemble.brightnesses, config)


def pad_probabilities_at(positions, brightnesses, config: PadSpadeConfig) -> np.ndarray:
    d = np.asarray(positions, dtype=float).reshape(-1, 2) - np.asarray(config.origin)
    b = np.asarray(brightnesses, dtype=float)
    sorted_p = b @ pad_overlaps(d, config)
    bucket = b @ pad_bucket(d, config)
    return np.append(sorted_p, bucket)


def bspade_probabilities(positions, brightnesses, origin=(0.0, 0.0)) -> np.ndarray:
    """Binary sorter: the PSF mode at ``origin`` and its complement."""
    return pad_probabilities_at(positions, brightnesses, PadSpadeConfig(origin, 0))


def sample_direct_imaging(ensemble: EmitterEnsemble, n_photons: int, rng) -> np.ndarray:
    """Photon arrival positions drawn from sum_k b_k N(r_k, sigma^2 I), in sigma units."""
    rng = np.random.default_rng(rng)
    if n_photons < 0:
        raise ValueError("n_photons must be nonnegative")
    counts = rng.multinomial(n_photons, ensemble.brightnesses)
    centers = np.repeat(ensemble.positions, counts, axis=0)
    pts = centers + rng.standard_normal((n_photons, 2))
    return pts[rng.permutation(n_photons)]


def sample_multinomial(probs, n: int, rng) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must lie on the simplex")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(rng)
    return rng.multinomial(int(n), p)


def helstrom_binary(b1: float, b2: float, overlap: float):
    """Minimum-error projectors for two pure states with real overlap ``overlap``.

    Returns ``(vectors, p_error)``. ``vectors`` is 2x2 in the (e+, e-) basis,
    e+- = (psi_2 +- psi_1)/sqrt(2(1 +- overlap)); column 0 is the projector that
    announces state 1 and column 1 the one that announces state 2.
    """
    if b1 <= 0 or b2 <= 0 or abs(b1 + b2 - 1.0) > 1e-12:
        raise ValueError("priors must be positive and sum to 1")
    phi = float(overlap)
    if not 0.0 <= phi < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    kappa = 0.5 * (b2 - b1)
    tau = 1.0 - 4.0 * kappa**2
    c = np.sqrt(1.0 - phi**2)
    root = np.sqrt(1.0 - tau * phi**2)
    # eigenvectors [x, 1] of the Helstrom operator b2|psi2><psi2| - b1|psi1><psi1|
    v_state2 = np.array([(2 * kappa * phi + root) / c, 1.0])
    v_state1 = np.array([(2 * kappa * phi - root) / c, 1.0])
    vecs = np.column_stack([v_state1, v_state2])
    vecs /= np.linalg.norm(vecs, axis=0)
    # orient each projector to overlap positively with its target state
    psi1 = np.array([np.sqrt((1 + phi) / 2), -np.sqrt((1 - phi) / 2)])
    psi2 = np.array([np.sqrt((1 + phi) / 2), np.sqrt((1 - phi) / 2)])
    for j, target in enumerate((psi1, psi2)):
        if vecs[:, j] @ target < 0:
            vecs[:, j] *= -1
    p_error = 0.5 * (1.0 - np.sqrt(1.0 - 4.0 * b1 * b2 * phi**2))
    return vecs, float(p_error)


def two_state_basis(overlap: float) -> np.ndarray:
    """Coordinates of psi_1, psi_2 (columns) in the (e+, e-) basis."""
    phi = overlap
    a, c = np.sqrt((1 + phi) / 2), np.sqrt((1 - phi) / 2)
    return np.array([[a, a], [-c, c]])


# ---------------------------------------------------------------- rendering


@dataclass(frozen=True)
class GridSpec:
    extent: float = 6.0
    spacing: float = 1.0 / 32

    def __post_init__(self):
        if self.extent <= 0 or self.spacing <= 0:
            raise ValueError("grid extent and spacing must be positive")

    @property
    def axis(self) -> np.ndarray:
        n = int(round(2 * self.extent / self.spacing))
        return np.linspace(-self.extent, self.extent, n + 1)

    def mesh(self):
        ax = self.axis
        return np.meshgrid(ax, ax, indexing="xy")


def psf_field(x, y, center=(0.0, 0.0)) -> np.ndarray:
    """Square-normalized Gaussian PSF exp(-|x|^2/4) / sqrt(2 pi) (sigma = 1)."""
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return np.exp(-r2 / 4.0) / np.sqrt(2.0 * np.pi)


def hg_field(n: int, m: int, x, y, origin=(0.0, 0.0)) -> np.ndarray:
    u = (x - origin[0]) / np.sqrt(2.0)
    v = (y - origin[1]) / np.sqrt(2.0)
    norm = np.exp(-0.5 * (n + m) * np.log(2.0) - 0.5 * (gammaln(n + 1) + gammaln(m + 1)))
    return norm * eval_hermite(n, u) * eval_hermite(m, v) * psf_field(x, y, origin)


def render_mode(coefficients, grid: GridSpec, positions=None, origin=(0.0, 0.0)) -> np.ndarray:
    """Sample a mode on a square grid.

    With ``positions`` the mode is sum_j c_j psi(x - r_j); otherwise
    ``coefficients`` maps (n, m) Hermite-Gauss indices to amplitudes.
    """
    x, y = grid.mesh()
    out = np.zeros_like(x, dtype=complex)
    if positions is not None:
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        for c, r in zip(np.asarray(coefficients).ravel(), pos):
            out += c * psf_field(x, y, r)
    else:
        for (n, m), c in dict(coefficients).items():
            out += c * hg_field(n, m, x, y, origin)
    return out


def grid_norm(field_values: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt((np.abs(field_values) ** 2).sum() * grid.spacing**2))


def export_mode_csv(path, field_values: np.ndarray, grid: GridSpec) -> None:
    x, y = grid.mesh()
    data = np.column_stack([x.ravel(), y.ravel(), field_values.real.ravel(), field_values.imag.ravel()])
    np.savetxt(path, data, delimiter=",", header="x,y,re,im", comments="", fmt="%.17g")


def export_mode_binary(path, field_values: np.ndarray, grid: GridSpec) -> None:
    """Row-major float64 (re, im) pairs plus a JSON sidecar with the grid geometry."""
    path = Path(path)
    interleaved = np.stack([field_values.real, field_values.imag], axis=-1).astype("<f8")
    interleaved.tofile(path)
    sidecar = {
        "shape": list(field_values.shape),
        "dtype": "float64-le",
        "layout": "row-major, (re, im) interleaved, rows = y, cols = x",
        "extent": grid.extent,
        "spacing": grid.spacing,
        "x0": float(grid.axis[0]),
        "y0": float(grid.axis[0]),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
