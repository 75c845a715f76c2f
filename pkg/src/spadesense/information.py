"""Quantum and classical Fisher information for emitter scenes.

Two-source quantities use the parameters (x0, s, kappa): midpoint,
half-separation and brightness bias, with emitters at x0 -+ s on the x axis
and brightnesses 1/2 -+ kappa. Lengths are in units of the PSF width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .measurements import two_state_basis
from .scene import RANK_TOL, EigenbasisRep, NumericalRankError


@dataclass(frozen=True)
class TwoSourceParams:
    x0: float = 0.0
    s: float = 0.5
    kappa: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("half-separation must be positive")
        if not abs(self.kappa) < 0.5:
            raise ValueError("brightness bias must lie in (-1/2, 1/2)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def overlap(self) -> float:
        return float(np.exp(-0.5 * (self.s / self.sigma) ** 2))

    @property
    def tau(self) -> float:
        return 1.0 - 4.0 * self.kappa**2

    @property
    def brightnesses(self) -> np.ndarray:
        return np.array([0.5 - self.kappa, 0.5 + self.kappa])

    @property
    def positions(self) -> np.ndarray:
        return np.array([[self.x0 - self.s, 0.0], [self.x0 + self.s, 0.0]])


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    labels: tuple
    kind: str = "quantum"

    def __getitem__(self, key):
        i, j = key
        if isinstance(i, str):
            i = self.labels.index(i)
        if isinstance(j, str):
            j = self.labels.index(j)
        return self.matrix[i, j]

    def block(self, labels) -> np.ndarray:
        idx = [self.labels.index(l) for l in labels]
        return self.matrix[np.ix_(idx, idx)]


# ---------------------------------------------------------------- two sources


def qfim_two_source(p: TwoSourceParams) -> FisherMatrix:
    sig, s, k = p.sigma, p.s, p.kappa
    phi = p.overlap
    tau = p.tau
    h = (s * phi / sig) ** 2
    q = np.array(
        [
            [1.0 - h * tau, 2 * k, 2 * s * phi**2],
            [2 * k, 1.0, 0.0],
            [2 * s * phi**2, 0.0, 4 * sig**2 * (1 - phi**2) / tau],
        ]
    ) / sig**2
    return FisherMatrix(q, ("x0", "s", "kappa"), "quantum")


def two_source_rho(p: TwoSourceParams) -> np.ndarray:
    """Density matrix in the (e+, e-) basis."""
    psi = two_state_basis(p.overlap)
    b = p.brightnesses
    return (psi * b) @ psi.T


def sld_brightness_two_source(p: TwoSourceParams):
    """SLD for kappa in the (e+, e-) basis and its eigenvectors.

    Eigenvector columns follow ``helstrom_binary``: column 0 is the
    negative-eigenvalue vector (announces emitter 1), column 1 emitter 2.
    """
    phi, k, tau = p.overlap, p.kappa, p.tau
    c = np.sqrt(1.0 - phi**2)
    sld = (2.0 / tau) * np.array([[-2 * k * (1 - phi), c], [c, -2 * k * (1 + phi)]])
    ev, vec = np.linalg.eigh(sld)
    psi = two_state_basis(phi)
    for j in range(2):
        if vec[:, j] @ psi[:, j] < 0:
            vec[:, j] *= -1
    return sld, vec


def lyapunov_residual(sld: np.ndarray, rho: np.ndarray, drho: np.ndarray) -> float:
    return float(np.abs(drho - 0.5 * (sld @ rho + rho @ sld)).max())


# ---------------------------------------------------------------- K sources


def brightness_slds(rep: EigenbasisRep):
    """SLDs for b_1..b_{K-1} (b_K eliminated) in the eigenbasis of rho."""
    lam = rep.eigenvalues
    if lam.min() < RANK_TOL:
        raise NumericalRankError(f"density operator eigenvalue {lam.min():.3e} below threshold")
    psi = rep.psi
    k = rep.K
    last = np.outer(psi[:, -1], psi[:, -1].conj())
    denom = lam[:, None] + lam[None, :]
    drhos, slds = [], []
    for i in range(k - 1):
        d = np.outer(psi[:, i], psi[:, i].conj()) - last
        drhos.append(d)
        slds.append(2.0 * d / denom)
    return drhos, slds


def qfim_brightness_block(rep: EigenbasisRep) -> FisherMatrix:
    drhos, slds = brightness_slds(rep)
    n = len(drhos)
    q = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            q[i, j] = np.real(np.trace(drhos[i] @ slds[j]))
    q = 0.5 * (q + q.T)
    return FisherMatrix(q, tuple(f"b{i + 1}" for i in range(n)), "quantum")


def brightness_imprecision(qfim) -> float:
    m = qfim.matrix if isinstance(qfim, FisherMatrix) else np.atleast_2d(np.asarray(qfim, float))
    if np.linalg.cond(m) > 1e14:
        raise np.linalg.LinAlgError("Fisher matrix is singular")
    return float(np.trace(np.linalg.inv(m)))


def multinomial_fisher(b) -> np.ndarray:
    """Classical Fisher matrix of one multinomial draw in the chart b_1..b_{K-1}."""
    b = np.asarray(b, float)
    return np.diag(1.0 / b[:-1]) + 1.0 / b[-1]


# ---------------------------------------------------------------- classical


def cfim(model, theta, labels, step: float = 1e-5, kind: str = "classical", floor: float = 1e-14) -> FisherMatrix:
    """sum_k dp_k dp_k / p_k with central differences; tiny outcomes are skipped."""
    theta = np.asarray(theta, float)

    def checked(t):
        p = np.asarray(model(t), float)
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-8:
            raise ValueError("outcome model left the probability simplex")
        return p

    p = checked(theta)
    jac = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        jac.append((checked(theta + e) - checked(theta - e)) / (2 * step))
    jac = np.array(jac)
    keep = p > floor
    f = (jac[:, keep] / p[keep]) @ jac[:, keep].T
    return FisherMatrix(0.5 * (f + f.T), tuple(labels), kind)


def di_grid(extent: float, spacing: float):
    n = int(np.ceil(2 * extent / spacing))
    ax = (np.arange(n) + 0.5) * spacing - n * spacing / 2
    x, y = np.meshgrid(ax, ax)
    return np.column_stack([x.ravel(), y.ravel()]), spacing**2


def di_pixel_probabilities(positions, brightnesses, pixels, area) -> np.ndarray:
    r = np.asarray(positions, float).reshape(-1, 2)
    d2 = ((pixels[:, None, :] - r[None, :, :]) ** 2).sum(axis=-1)
    dens = np.exp(-0.5 * d2) / (2 * np.pi)
    return dens @ np.asarray(brightnesses, float) * area


def two_source_model(kind: str, origin=(0.0, 0.0), max_total_order: int = 10, spacing: float = 0.05, radius: float = 2.0):
    """Outcome-probability function of (x0, s, kappa) for 'di', 'hg' or 'binary'."""
    from .measurements import PadSpadeConfig, pad_probabilities_at

    if kind == "di":
        pixels, area = di_grid(6.0 + radius, spacing)

        def model(t):
            p = TwoSourceParams(t[0], t[1], t[2])
            return di_pixel_probabilities(p.positions, p.brightnesses, pixels, area)

        return model
    order = 0 if kind == "binary" else max_total_order
    cfg = PadSpadeConfig(origin, order)

    def model(t):
        p = TwoSourceParams(t[0], t[1], t[2])
        return pad_probabilities_at(p.positions, p.brightnesses, cfg)

    return model


def two_source_cfim(kind: str, p: TwoSourceParams, step: float = 1e-5, **kw) -> FisherMatrix:
    model = two_source_model(kind, radius=abs(p.x0) + p.s + 0.5, **kw)
    return cfim(model, [p.x0, p.s, p.kappa], ("x0", "s", "kappa"), step)


def binary_spade_cfi_s(s: float) -> float:
    """Aligned binary sorter, balanced pair: CFI for s is mu / (e^mu - 1), mu = (s/2)^2."""
    mu = (s / 2.0) ** 2
    return float(mu / np.expm1(mu)) if mu > 0 else 1.0


# ---------------------------------------------------------------- bounds and allocation


def nuisance_qcrb(fisher: FisherMatrix, targets) -> np.ndarray:
    targets = list(targets)
    nuis = [l for l in fisher.labels if l not in targets]
    qbb = fisher.block(targets)
    if not nuis:
        return np.linalg.inv(qbb)
    ib = [fisher.labels.index(l) for l in targets]
    ir = [fisher.labels.index(l) for l in nuis]
    m = fisher.matrix
    qrr = m[np.ix_(ir, ir)]
    if np.linalg.cond(qrr) > 1e14:
        raise np.linalg.LinAlgError("nuisance block is singular")
    qbr = m[np.ix_(ib, ir)]
    schur = qbb - qbr @ np.linalg.solve(qrr, qbr.T)
    return np.linalg.inv(schur)


def allocation_quartic(beta, kappa: float):
    nu = 4.0 * kappa**2
    return nu**2 * beta**4 - 2 * nu * beta**2 - 2 * (1 - nu) * beta + 1


def optimal_allocation(kappa: float) -> float:
    """Root in [0, 1] of nu^2 b^4 - 2 nu b^2 - 2(1 - nu) b + 1 with nu = 4 kappa^2."""
    if not abs(kappa) < 0.5:
        raise ValueError("brightness bias must lie in (-1/2, 1/2)")
    nu = 4.0 * kappa**2
    if nu == 0.0:
        return 0.5
    f = lambda b: allocation_quartic(b, kappa)
    beta = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        df = 4 * nu**2 * beta**3 - 4 * nu * beta - 2 * (1 - nu)
        beta -= f(beta) / df
    return float(beta)


def allocated_brightness_qcrb(p: TwoSourceParams, beta: float, total: float, approx: bool = False) -> float:
    """Closed-form bound on var(kappa) for a split of ``total`` photons.

    ``beta`` enters exactly as in the closed form; see ``schur_brightness_bound``
    for the direct numerical construction with an explicit calibration fraction.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    nu = 4.0 * p.kappa**2
    ratio = (p.s / p.sigma) ** 2
    if approx:
        inner = 1.0 / (beta * (1 - nu)) - 1.0 / (1 - nu * beta**2)
        return float((1.0 / total) * (1.0 / ratio) / (4 * beta**2) / inner)
    phi2 = p.overlap**2
    h = ratio * phi2
    num = (1 - nu) * (1 - nu * beta**2 - h * (1 - nu * beta))
    den = 4 * beta * ((1 - nu * beta**2) * (1 - phi2) - h * (1 - nu * beta - (1 - beta) * phi2))
    return float(num / den / total)


def schur_brightness_bound(p: TwoSourceParams, calibration_fraction: float, total: float) -> float:
    """[Q_bb - Q_br Q_rr^-1 Q_rb]^-1 for beta Q~(theta0) + (1 - beta) Q(theta), beta = calibration share."""
    beta = calibration_fraction
    q0 = qfim_two_source(TwoSourceParams(p.x0, p.s, 0.0, p.sigma)).matrix.copy()
    q0[2, :] = 0.0
    q0[:, 2] = 0.0
    q = beta * q0 + (1 - beta) * qfim_two_source(p).matrix
    f = FisherMatrix(total * q, ("x0", "s", "kappa"))
    return float(nuisance_qcrb(f, ["kappa"])[0, 0])
