"""Acceptance criteria 1-10, each reported as one PASS/FAIL line in the terminal summary."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import ykl_helstrom_fidelities
from spadesense import cli
from spadesense.bayes import (
    SeparationPosterior,
    build_priors_from_di,
    difference_operator_modes,
    psf_mode_probability,
)
from spadesense.harness import (
    ExperimentConfig,
    _pair_di_1d,
    generate_random_scene,
    run_bayes_demo,
    run_fisher_sweep,
    run_monte_carlo,
    run_sensing_experiment,
)
from spadesense.information import (
    TwoSourceParams,
    allocation_quartic,
    multinomial_fisher,
    optimal_allocation,
    qfim_brightness_block,
    qfim_two_source,
    sld_brightness_two_source,
)
from spadesense.measurements import PadSpadeConfig, helstrom_binary, hg_field, pad_probabilities
from spadesense.scene import EmitterEnsemble, eigenbasis_representation, ensemble_representation
from spadesense.ykl import design_ykl, ykl_mode_coefficients, ykl_outcome_probabilities

pytestmark = pytest.mark.acceptance
ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


def report(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_helstrom_ykl_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_pe, worst_fid = 0.0, 1.0
    for _ in range(100):
        s = rng.uniform(1 / 20, 2.0)
        kappa = rng.uniform(-0.45, 0.45)
        b1, b2 = 0.5 - kappa, 0.5 + kappa
        meas = design_ykl([[-s, 0.0], [s, 0.0]], [b1, b2])
        fids, pe = ykl_helstrom_fidelities(meas, b1, b2, s)
        worst_pe = max(worst_pe, abs(meas.min_error - pe))
        worst_fid = min(worst_fid, min(fids))
    dt = time.perf_counter() - t0
    report(1, worst_pe < 1e-6 and worst_fid >= 1 - 1e-8 and dt < 60,
           f"max |P_e - closed form| = {worst_pe:.2e}, min fidelity = 1 - {1 - worst_fid:.2e}, {dt:.1f} s")


def test_criterion_02_sld_equals_helstrom():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        p = TwoSourceParams(0.0, rng.uniform(0.01, 3.0), rng.uniform(-0.49, 0.49))
        _, vec = sld_brightness_two_source(p)
        hv, _ = helstrom_binary(0.5 - p.kappa, 0.5 + p.kappa, p.overlap)
        worst = max(worst, np.abs(vec - hv).max())
    report(2, worst < 1e-10, f"max |SLD eigvec - Helstrom| = {worst:.2e} over 200 instances")


def test_criterion_03_qfim_consistency():
    rng = np.random.default_rng(3)
    worst_k = 0.0
    for _ in range(50):
        p = TwoSourceParams(0.0, rng.uniform(0.02, 2.0), rng.uniform(-0.45, 0.45))
        rep = ensemble_representation(EmitterEnsemble(p.positions, p.brightnesses))
        # b1 = 1/2 - kappa: the Jacobian squared is 1
        q = qfim_brightness_block(rep).matrix[0, 0] * (-1.0) ** 2
        worst_k = max(worst_k, abs(q - qfim_two_source(p)["kappa", "kappa"]))
    worst_o = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 7))
        b = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
        q = qfim_brightness_block(eigenbasis_representation(np.eye(k), b)).matrix
        worst_o = max(worst_o, np.abs(q - multinomial_fisher(b)).max())
    report(3, worst_k < 1e-8 and worst_o < 1e-8, f"K=2 vs Q_kk max err {worst_k:.2e}; orthogonal vs multinomial max err {worst_o:.2e}")


def _grid(extent=10.0, h=0.04):
    ax = np.arange(-extent, extent + h / 2, h)
    x, y = np.meshgrid(ax, ax, indexing="xy")
    return x, y, h


def _psf(x, y, r):
    return np.exp(-((x - r[0]) ** 2 + (y - r[1]) ** 2) / 4) / np.sqrt(2 * np.pi)


def test_criterion_04_mode_probability_oracle():
    rng = np.random.default_rng(4)
    x, y, h = _grid()
    worst_pad, worst_ykl = 0.0, 0.0
    for i in range(50):
        k = int(rng.integers(2, 6))
        truth = generate_random_scene(k, float(rng.uniform(0.15, 0.4)), np.random.default_rng([4, i]))
        truth = truth.with_brightnesses(rng.dirichlet(np.ones(k)))
        psfs = [_psf(x, y, r) for r in truth.positions]
        origin = tuple(truth.positions.mean(axis=0) + rng.normal(0, 0.02, 2))
        cfg = PadSpadeConfig(origin, 10)
        p = pad_probabilities(truth, cfg)
        sorted_q = []
        for n, m in cfg.mode_indices:
            mode = hg_field(n, m, x, y, origin)
            sorted_q.append(sum(b * ((mode * f).sum() * h * h) ** 2 for b, f in zip(truth.brightnesses, psfs)))
        sorted_q = np.array(sorted_q)
        oracle = np.append(sorted_q, 1 - sorted_q.sum())
        worst_pad = max(worst_pad, np.abs(p - oracle).max())
        design = truth.positions + rng.normal(0, 0.02, truth.positions.shape)
        meas = design_ykl(design, rng.dirichlet(np.ones(k)) * 0.8 + 0.2 / k)
        q = ykl_outcome_probabilities(meas, truth)
        qo = []
        for j in range(k):
            c = ykl_mode_coefficients(meas, j)
            mode = sum(cj * _psf(x, y, r) for cj, r in zip(c, design))
            qo.append(sum(b * abs((mode.conj() * f).sum() * h * h) ** 2 for b, f in zip(truth.brightnesses, psfs)))
        qo = np.array(qo)
        worst_ykl = max(worst_ykl, np.abs(q - np.append(qo, 1 - qo.sum())).max())
    report(4, worst_pad < 1e-6 and worst_ykl < 1e-6, f"PAD max err {worst_pad:.2e}, YKL max err {worst_ykl:.2e} on 50 scenes")


def test_criterion_05_fisher_sweep():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(kind="fisher")
    header, rows = run_fisher_sweep(cfg)["fisher_separation.csv"]
    col = {h: i for i, h in enumerate(header)}
    rows = np.array(rows)
    s = rows[:, col["s"]]
    qfi_const = bool(np.all(rows[:, col["qfi_s"]] == 1.0))
    low = s <= 0.5
    bspade_min = rows[low, col["cfi_bspade_s"]].min()
    hg_min = rows[low, col["cfi_hg_s"]].min()
    hg_x0 = np.abs(rows[:, col["cfi_hg_x0"]]).max()
    di_gap = max(
        (rows[:, col[f"cfi_di_{l}"]] - rows[:, col[f"qfi_{l}"]]).max() for l in ("x0", "s", "kappa")
    )
    dt = time.perf_counter() - t0
    ok = qfi_const and bspade_min >= 0.99 and hg_x0 == pytest.approx(0, abs=1e-8) and di_gap <= 1e-6 and dt < 300
    report(5, ok, f"QFI_s==1: {qfi_const}; min binary B-SPADE CFI_s (s<=1/2) = {bspade_min:.4f} "
                  f"(HG sorter {hg_min:.6f}); max |HG CFI_x0| = {hg_x0:.1e}; max DI-QFI = {di_gap:.1e}; {dt:.0f} s")


def test_criterion_06_allocation():
    exact = optimal_allocation(0.0) == 0.5
    ks = np.linspace(-0.25, 0.25, 51)
    betas = np.array([optimal_allocation(k) for k in ks])
    resid = max(abs(allocation_quartic(b, k)) for b, k in zip(betas, ks))
    in_band = bool(np.all((betas >= 0.45) & (betas <= 0.55)))
    report(6, exact and in_band and resid < 1e-10,
           f"beta*(0)=0.5: {exact}; beta* range on |kappa|<=1/4 = [{betas.min():.4f}, {betas.max():.4f}]; max residual {resid:.1e}")


@pytest.mark.slow
def test_criterion_07_monte_carlo():
    ARTIFACTS.mkdir(exist_ok=True)
    cfg = ExperimentConfig(kind="monte-carlo", seed=7, trials=100, d_min_bins=[0.1, 0.0625], K_values=[3, 4, 5],
                           M=10**5, M1=10**4, N=10**5, N1=10**4, pad_order=10)
    t0 = time.perf_counter()
    rows, summary = run_monte_carlo(cfg)
    dt = time.perf_counter() - t0
    cli._write_csv(ARTIFACTS / "monte_carlo.csv", ["trial", "K", "d_min", "pipeline", "eps_r", "eps_b", "seed"], rows)
    (ARTIFACTS / "monte_carlo_summary.json").write_text(json.dumps(summary, indent=2))
    ratios_r = [b["ratio_eps_r"] for b in summary["bins"]]
    ratios_b = [b["ratio_eps_b"] for b in summary["bins"]]
    pear = {k: summary["pooled"][k]["pearson"] for k in ("spade", "di")}
    ok = (min(ratios_r) >= 3 and min(ratios_b) >= 1.5 and all(0.3 <= v <= 0.8 for v in pear.values()) and dt <= 4 * 3600)
    report(7, ok, "DI/SPADE eps_r ratios " + ", ".join(f"{r:.2f}" for r in ratios_r)
           + "; eps_b ratios " + ", ".join(f"{r:.2f}" for r in ratios_b)
           + f"; pearson spade {pear['spade']:.2f}, di {pear['di']:.2f}; {dt / 60:.0f} min")


@pytest.mark.slow
def test_criterion_08_odmr_rabi_ordering():
    ARTIFACTS.mkdir(exist_ok=True)
    wins = {"odmr": 0, "rabi": 0}
    table = []
    seeds = range(20)
    for seed in seeds:
        cal = {}
        for kind in ("odmr", "rabi"):
            cfg = ExperimentConfig(kind=kind, seed=seed, K=4, d_min=0.125, chi=0.5,
                                   M=10**6, M1=10**5, N=10**6, N1=10**5)
            res = run_sensing_experiment(kind, cfg, calibrations=cal)
            win = res.rmse["spade"] < res.rmse["baseline"]
            wins[kind] += win
            table.append({"seed": seed, "kind": kind, "rmse_spade": res.rmse["spade"], "rmse_di": res.rmse["baseline"],
                          "eps_r_spade": res.eps_r["spade"], "eps_r_di": res.eps_r["baseline"]})
    (ARTIFACTS / "sensing_ordering.json").write_text(json.dumps(table, indent=2))
    frac = {k: v / len(seeds) for k, v in wins.items()}
    report(8, min(frac.values()) >= 0.8, f"SPADE RMSE < DI RMSE in ODMR {frac['odmr']:.0%}, Rabi {frac['rabi']:.0%} of 20 seeds")


@pytest.mark.slow
def test_criterion_09_bayesian_suite():
    rng = np.random.default_rng(9)
    x = _pair_di_1d(0.25, 0.0, 5000, rng)
    pr = build_priors_from_di(x)
    xi = psf_mode_probability(0.25, -pr.x0_hat)
    blocks = [(int(rng.binomial(m, xi)), m) for m in (500, 1500, 3000)]
    seq = SeparationPosterior(pr)
    for q, m in blocks:
        seq = seq.update(q, m)
    batch = SeparationPosterior(pr).update(sum(q for q, _ in blocks), sum(m for _, m in blocks))
    norm_err = abs(seq.marginal().mass - 1.0)
    batch_err = np.abs(seq.marginal().density - batch.marginal().density).max()

    fractions = []
    for seed in range(100):
        cfg = ExperimentConfig(kind="bayes", seed=seed, M=10**4, s_true=0.05, constraint="II")
        fractions.append(run_bayes_demo(cfg, with_sensing=False).switch_fraction)
    mean_frac = float(np.mean(fractions))

    s = 0.5
    w, modes, grid = difference_operator_modes(-s, s, 1e-4, 0.5, 0.5)
    h = grid[1] - grid[0]
    from test_bayes import _helstrom_on_grid

    ref = _helstrom_on_grid(grid, s, 0.5, 0.5)
    errs = []
    for idx, target in ((np.argmax(w[:2]), ref[0]), (np.argmin(w[:2]), ref[1])):
        m = modes[:, idx]
        errs.append(min(np.sqrt(h * ((m - target) ** 2).sum()), np.sqrt(h * ((m + target) ** 2).sum())))
    ok = norm_err < 1e-6 and batch_err < 1e-8 and 0.35 <= mean_frac <= 0.65 and max(errs) < 1e-3
    report(9, ok, f"normalization err {norm_err:.1e}; batch/sequential {batch_err:.1e}; "
                  f"Type-II mean switch fraction {mean_frac:.3f} (s=1/20, 100 seeds); difference-operator mode err {max(errs):.1e}")


def test_criterion_10_cli_determinism(tmp_path):
    small = {"M": 4000, "M1": 1000, "N": 4000, "N1": 1000, "K": 3, "d_min": 0.2, "trials": 2,
             "d_min_bins": [0.2], "K_values": [3], "n_gamma": 9, "s_values": [0.1, 0.3],
             "misalignments": [0.0, 0.1], "kappa_values": [0.0, 0.2], "bayes_checks": 10, "grid_spacing": 0.25}
    cfgp = tmp_path / "cfg.json"
    cfgp.write_text(json.dumps(small))
    mismatched = []
    commands = ["scene", "protocol", "monte-carlo", "odmr", "rabi", "fisher", "bayes", "ykl-modes"]
    for c in commands:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{c}_{rep}"
            code = cli.main([c, "--config", str(cfgp), "--seed", "12", "--out", str(out)])
            assert code == 0, c
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        if not outs[0] or outs[0] != outs[1]:
            mismatched.append(c)
    report(10, not mismatched, f"{len(commands) - len(mismatched)}/{len(commands)} commands bit-identical on rerun"
           + (f"; mismatched: {mismatched}" if mismatched else ""))
