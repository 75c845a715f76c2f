"""Shared independent oracles for the test suite."""

import numpy as np

from spadesense.measurements import helstrom_binary
from spadesense.scene import cross_gram
from spadesense.ykl import ykl_mode_coefficients


def helstrom_psf_coefficients(b1, b2, phi):
    """Helstrom vectors as coefficients over (psi_1, psi_2), via e+- = (psi_2 +- psi_1)/n+-."""
    vecs, pe = helstrom_binary(b1, b2, phi)
    n_plus, n_minus = np.sqrt(2 * (1 + phi)), np.sqrt(2 * (1 - phi))
    to_psf = np.array([[1 / n_plus, -1 / n_minus], [1 / n_plus, 1 / n_minus]])
    return to_psf @ vecs, pe


def mode_fidelity(ca, cb, positions):
    g = cross_gram(positions, positions)
    return float(abs(ca.conj() @ g @ cb) ** 2)


def ykl_helstrom_fidelities(meas, b1, b2, s):
    pos = meas.design_positions
    phi = np.exp(-0.5 * s**2)
    ch, pe = helstrom_psf_coefficients(b1, b2, phi)
    fids = [mode_fidelity(ykl_mode_coefficients(meas, k), ch[:, k], pos) for k in range(2)]
    return fids, pe
