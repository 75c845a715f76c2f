import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import ykl_helstrom_fidelities
from spadesense.measurements import helstrom_binary
from spadesense.scene import EmitterEnsemble, eigenbasis_representation, uniform_ensemble
from spadesense.ykl import (
    design_ykl,
    solve_ykl,
    ykl_cost,
    ykl_mode_coefficients,
    ykl_outcome_probabilities,
)


def test_orthogonal_states_zero_error():
    rep = eigenbasis_representation(np.eye(3), [0.2, 0.3, 0.5])
    meas = solve_ykl(rep)
    assert meas.min_error < 1e-12
    m = np.abs(meas.unitary.conj().T @ rep.psi)
    assert np.allclose(np.sort(m, axis=1)[:, -1], 1.0, atol=1e-8)


def test_balanced_pair_one_sigma():
    meas = design_ykl([[-1.0, 0], [1.0, 0]], [0.5, 0.5])
    _, pe = helstrom_binary(0.5, 0.5, np.exp(-0.5))
    assert meas.min_error == pytest.approx(pe, abs=1e-6)
    assert meas.converged


def test_far_equilateral_triangle():
    side = 10.0
    pos = [[0, 0], [side, 0], [side / 2, side * np.sqrt(3) / 2]]
    assert design_ykl(pos, np.full(3, 1 / 3)).min_error < 1e-6


def test_exact_design_has_empty_bucket():
    ens = uniform_ensemble([[-0.5, 0], [0.5, 0]])
    meas = design_ykl(ens.positions, ens.brightnesses)
    q = ykl_outcome_probabilities(meas, ens)
    assert q[-1] == pytest.approx(0.0, abs=1e-12)
    # success probability sum_k b_k q(k | k) equals 1 - P_e
    from spadesense.ykl import ykl_amplitudes

    amp2 = np.abs(ykl_amplitudes(meas, ens.positions)) ** 2
    assert 1 - (0.5 * amp2[0, 0] + 0.5 * amp2[1, 1]) == pytest.approx(meas.min_error, abs=1e-12)


def test_far_design_bucket_fills():
    meas = design_ykl([[-0.5, 0], [0.5, 0]], [0.5, 0.5])
    q = ykl_outcome_probabilities(meas, uniform_ensemble([[30, 0], [31, 0]]))
    assert q[-1] == pytest.approx(1.0, abs=1e-12)


def test_restarts_validation():
    rep = eigenbasis_representation(np.eye(2), [0.5, 0.5])
    with pytest.raises(ValueError):
        solve_ykl(rep, restarts=0)


def test_mode_coefficients_orthonormal():
    pos = np.array([[0.1, 0.0], [-0.2, 0.15], [0.05, -0.2]])
    meas = design_ykl(pos, [0.2, 0.3, 0.5])
    from spadesense.scene import cross_gram

    g = cross_gram(pos, pos)
    c = np.column_stack([ykl_mode_coefficients(meas, k) for k in range(3)])
    assert np.allclose(c.conj().T @ g @ c, np.eye(3), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-0.45, 0.45))
def test_two_source_matches_helstrom(s, kappa):
    b1, b2 = 0.5 - kappa, 0.5 + kappa
    meas = design_ykl([[-s, 0], [s, 0]], [b1, b2])
    fids, pe = ykl_helstrom_fidelities(meas, b1, b2, s)
    assert meas.min_error == pytest.approx(pe, abs=1e-6)
    assert min(fids) >= 1 - 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10**6))
def test_solution_is_stationary_and_unitary(k, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.5, 0.5, (k, 2))
    from spadesense.scene import min_pairwise_separation

    if min_pairwise_separation(pos) < 0.1:
        return
    b = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
    meas = design_ykl(pos, b)
    u = meas.unitary
    assert np.allclose(u.conj().T @ u, np.eye(k), atol=1e-10)
    assert meas.min_error == pytest.approx(ykl_cost(u, meas.psi, meas.design_priors), abs=1e-12)
    # no random unitary does better
    from scipy.stats import unitary_group

    for _ in range(5):
        v = unitary_group.rvs(k, random_state=rng)
        assert ykl_cost(v, meas.psi, meas.design_priors) >= meas.min_error - 1e-12
    q = ykl_outcome_probabilities(meas, EmitterEnsemble(pos, b))
    assert q.sum() == pytest.approx(1.0, abs=1e-12) and np.all(q >= 0)
