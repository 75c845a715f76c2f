"""Experiment orchestration: configs, seeded streams, protocol runs and sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bayes
from .estimation import (
    align_permutation,
    brightness_error,
    brightness_pre_estimate,
    error_correlation,
    estimate_brightness_mle,
    estimate_centroid,
    estimate_positions_mle,
    localization_error,
)
from .information import (
    TwoSourceParams,
    binary_spade_cfi_s,
    optimal_allocation,
    qfim_two_source,
    two_source_cfim,
)
from .measurements import (
    PadSpadeConfig,
    PhotonData,
    pad_probabilities,
    sample_direct_imaging,
    sample_multinomial,
)
from .scene import DegeneratePositionsError, EmitterEnsemble, NumericalRankError
from .sensing_models import fit_field, field_rmse, model_curve
from .ykl import design_ykl, ykl_outcome_probabilities

KINDS = ("scene", "protocol", "monte-carlo", "odmr", "rabi", "fisher", "bayes", "ykl-modes")
PRIOR_FLOOR = 1e-3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    kind: str = "protocol"
    seed: int = 0
    K: int = 4
    d_min: float = 0.125
    scene: dict | None = None
    M: int = 100_000
    M1: int = 10_000
    N: int = 100_000
    N1: int | None = 10_000
    pad_order: int = 10
    ykl_restarts: int = 8
    ykl_tol: float = 1e-9
    n_random_starts: int = 6
    sensing_brightness: list | None = None
    baseline: bool = False
    trials: int = 100
    d_min_bins: list = field(default_factory=lambda: [0.1, 0.0625])
    K_values: list = field(default_factory=lambda: [3, 4, 5])
    threads: int = 1
    # sensing experiments
    chi: float = 0.5
    n_gamma: int = 31
    field_center: float | None = None
    field_gradient: float | None = None
    # fisher sweep
    s_values: list = field(default_factory=lambda: list(np.round(np.linspace(0.02, 1.0, 50), 4)))
    kappa: float = 0.0
    misalignments: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    kappa_values: list = field(default_factory=lambda: list(np.round(np.linspace(-0.45, 0.45, 19), 4)))
    # bayes demo
    constraint: str = "II"
    s_true: float = 0.25
    bayes_checks: int = 50
    variance_threshold: float = 1e-5
    bspade_block: int = 1000
    # rendering
    grid_extent: float = 6.0
    grid_spacing: float = 1.0 / 32

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def n1(self) -> int:
        return int(math.ceil(math.sqrt(self.N))) if self.N1 is None else int(self.N1)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for name in ("M", "M1", "N"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError(f"{name} must be a nonnegative integer")
        if self.N1 is not None and (not isinstance(self.N1, (int, np.integer)) or self.N1 < 0):
            raise ConfigError("N1 must be a nonnegative integer")
        if self.M1 > self.M:
            raise ConfigError("M1 cannot exceed M")
        if self.n1() > self.N:
            raise ConfigError("N1 cannot exceed N")
        if self.K < 1:
            raise ConfigError("K must be positive")
        if self.trials < 2 and self.kind == "monte-carlo":
            raise ConfigError("monte-carlo needs at least two trials")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.constraint not in ("I", "II"):
            raise ConfigError("constraint must be 'I' or 'II'")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- RNG


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based stream for (seed, trial, stage, ...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


STAGE_SCENE, STAGE_CAL_DI, STAGE_CAL_PAD, STAGE_CAL_EXTRA, STAGE_OPT, STAGE_SENSE = range(6)


# ---------------------------------------------------------------- scenes


def generate_random_scene(k: int, d_min: float, seed=0, max_tries: int = 2_000_000) -> EmitterEnsemble:
    """Equal-brightness scene inside the sub-diffraction disk with d_min in [d, 1.05 d]."""
    if k < 2:
        raise ValueError("need K >= 2")
    if not 0 < d_min < 1:
        raise ValueError("d_min must lie in (0, sigma)")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), 0, STAGE_SCENE)
    batch = 4096
    tries = 0
    while tries < max_tries:
        rad = 0.5 * np.sqrt(rng.uniform(size=(batch, k)))
        ang = rng.uniform(0.0, 2 * np.pi, size=(batch, k))
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        pts -= pts.mean(axis=1, keepdims=True)
        inside = (np.linalg.norm(pts, axis=-1) < 0.5).all(axis=1)
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(k, 1)
        dm = dist[:, iu[0], iu[1]].min(axis=1)
        ok = inside & (dm >= d_min) & (dm <= 1.05 * d_min)
        if ok.any():
            p = pts[np.flatnonzero(ok)[0]]
            return EmitterEnsemble(p, np.full(k, 1.0 / k))
        tries += batch
    raise RuntimeError("rejection budget exceeded; packing infeasible")


def scene_from_config(cfg: ExperimentConfig, trial: int = 0) -> EmitterEnsemble:
    if cfg.scene is not None:
        return EmitterEnsemble.from_json(cfg.scene)
    return generate_random_scene(cfg.K, cfg.d_min, stream(cfg.seed, trial, STAGE_SCENE))


# ---------------------------------------------------------------- protocol


@dataclass
class StageResult:
    positions: np.ndarray
    brightness: list
    eps_r: float
    eps_b: list
    permutation: np.ndarray


@dataclass
class ProtocolResult:
    truth_positions: np.ndarray
    truth_brightness: list
    spade: StageResult | None
    baseline: StageResult | None
    seed: int
    config_hash: str
    wall_clock: float = 0.0

    def to_json(self) -> dict:
        def stage(s):
            if s is None:
                return None
            return {
                "positions": np.asarray(s.positions).tolist(),
                "brightness": [np.asarray(b).tolist() for b in s.brightness],
                "eps_r": s.eps_r,
                "eps_b": list(s.eps_b),
                "permutation": np.asarray(s.permutation).tolist(),
            }

        return {
            "truth": {
                "positions": np.asarray(self.truth_positions).tolist(),
                "brightness": [np.asarray(b).tolist() for b in self.truth_brightness],
            },
            "spade": stage(self.spade),
            "baseline": stage(self.baseline),
            "seed": self.seed,
            "config_hash": self.config_hash,
        }


def _floored(b, floor=PRIOR_FLOOR):
    b = np.clip(np.asarray(b, float), floor, None)
    return b / b.sum()


def calibrate(truth: EmitterEnsemble, cfg: ExperimentConfig, trial: int, spade: bool):
    """Calibration stage on the equal-brightness state; returns (positions, photon data)."""
    k = truth.K
    theta0 = truth.with_brightnesses(np.full(k, 1.0 / k))
    x = sample_direct_imaging(theta0, cfg.M1, stream(cfg.seed, trial, STAGE_CAL_DI))
    opt_rng = stream(cfg.seed, trial, STAGE_OPT, int(spade))
    if spade:
        origin = estimate_centroid(x) if cfg.M1 > 0 else np.zeros(2)
        pad = PadSpadeConfig(tuple(origin), cfg.pad_order)
        counts = sample_multinomial(pad_probabilities(theta0, pad), cfg.M - cfg.M1, stream(cfg.seed, trial, STAGE_CAL_PAD))
        data = PhotonData(x, counts)
        est = estimate_positions_mle(data, k, pad, n_random_starts=cfg.n_random_starts, rng=opt_rng)
    else:
        extra = sample_direct_imaging(theta0, cfg.M - cfg.M1, stream(cfg.seed, trial, STAGE_CAL_EXTRA))
        data = PhotonData(np.vstack([x, extra]))
        est = estimate_positions_mle(data, k, None, n_random_starts=cfg.n_random_starts, rng=opt_rng)
    return est.positions, data


def sense(truth_b: EmitterEnsemble, r_est, cfg: ExperimentConfig, trial: int, gamma_index: int, spade: bool, n_total=None, n1=None):
    """Sensing stage at one modulation value; returns the brightness estimate."""
    n_total = cfg.N if n_total is None else n_total
    n1 = cfg.n1() if n1 is None else n1
    x = sample_direct_imaging(truth_b, n1, stream(cfg.seed, trial, STAGE_SENSE, gamma_index, 0))
    if not spade:
        extra = sample_direct_imaging(truth_b, n_total - n1, stream(cfg.seed, trial, STAGE_SENSE, gamma_index, 1))
        return brightness_pre_estimate(np.vstack([x, extra]), r_est)
    pre = brightness_pre_estimate(x, r_est)
    try:
        meas = design_ykl(r_est, _floored(pre), restarts=cfg.ykl_restarts, tol=cfg.ykl_tol)
        q = ykl_outcome_probabilities(meas, truth_b)
    except (NumericalRankError, DegeneratePositionsError):
        # estimated emitters too close for a well-posed design; sort HG modes instead
        meas = PadSpadeConfig(tuple(np.mean(r_est, axis=0)), cfg.pad_order)
        q = pad_probabilities(truth_b, meas)
    counts = sample_multinomial(q, n_total - n1, stream(cfg.seed, trial, STAGE_SENSE, gamma_index, 2))
    est = estimate_brightness_mle(PhotonData(x, counts), r_est, meas, pre_estimate=pre)
    return est.brightnesses


def _score(truth: EmitterEnsemble, r_est, b_list, b_true_list):
    perm = align_permutation(truth.positions, r_est)
    r_al = np.asarray(r_est)[perm]
    eps_r = localization_error(truth.positions, r_al)
    eps_b = [brightness_error(bt, np.asarray(bh)[perm]) for bt, bh in zip(b_true_list, b_list)]
    return StageResult(r_al, [np.asarray(b)[perm] for b in b_list], eps_r, eps_b, perm)


def sensing_states(truth: EmitterEnsemble, cfg: ExperimentConfig, trial: int):
    if cfg.sensing_brightness is not None:
        bs = np.atleast_2d(np.asarray(cfg.sensing_brightness, float))
    else:
        bs = stream(cfg.seed, trial, STAGE_SENSE, 999).dirichlet(np.ones(truth.K))[None, :]
        bs = _floored(bs[0], 1e-6)[None, :]
    return [np.asarray(b) for b in bs]


def run_protocol(cfg: ExperimentConfig, trial: int = 0, truth: EmitterEnsemble | None = None, pipelines=("spade", "baseline")) -> ProtocolResult:
    if cfg.M <= 0 or cfg.N <= 0:
        raise ConfigError("photon budgets must be positive")
    t0 = time.perf_counter()
    truth = scene_from_config(cfg, trial) if truth is None else truth
    b_true = sensing_states(truth, cfg, trial)
    out = {}
    for name in pipelines:
        spade = name == "spade"
        r_est, _ = calibrate(truth, cfg, trial, spade)
        b_est = [sense(truth.with_brightnesses(b), r_est, cfg, trial, g, spade) for g, b in enumerate(b_true)]
        out[name] = _score(truth, r_est, b_est, b_true)
    return ProtocolResult(
        truth.positions, b_true, out.get("spade"), out.get("baseline"), cfg.seed, cfg.hash(),
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- monte carlo


def _mc_trial(args):
    cfg_dict, bin_index, trial_index, global_index = args
    cfg = ExperimentConfig(**cfg_dict)
    d_min = cfg.d_min_bins[bin_index]
    k = cfg.K_values[trial_index % len(cfg.K_values)]
    truth = generate_random_scene(k, d_min, stream(cfg.seed, global_index, STAGE_SCENE))
    pipelines = ("baseline",) if cfg.baseline else ("spade", "baseline")
    res = run_protocol(cfg, global_index, truth, pipelines)
    rows = []
    for name, st in (("spade", res.spade), ("di", res.baseline)):
        if st is not None:
            rows.append((global_index, k, d_min, name, st.eps_r, st.eps_b[0], cfg.seed))
    return rows


def run_monte_carlo(cfg: ExperimentConfig, progress=None):
    """Rows (trial, K, d_min, pipeline, eps_r, eps_b, seed) ordered by trial index, plus a summary."""
    jobs = []
    g = 0
    for bi in range(len(cfg.d_min_bins)):
        for t in range(cfg.trials):
            jobs.append((cfg.to_dict(), bi, t, g))
            g += 1
    rows = []
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            for r in ex.map(_mc_trial, jobs):
                rows.extend(r)
                if progress:
                    progress(len(rows))
    else:
        for j in jobs:
            rows.extend(_mc_trial(j))
            if progress:
                progress(len(rows))
    return rows, summarize_monte_carlo(rows)


def summarize_monte_carlo(rows) -> dict:
    arr = {
        "trial": np.array([r[0] for r in rows]),
        "K": np.array([r[1] for r in rows]),
        "d_min": np.array([r[2] for r in rows], float),
        "pipeline": np.array([r[3] for r in rows]),
        "eps_r": np.array([r[4] for r in rows], float),
        "eps_b": np.array([r[5] for r in rows], float),
    }
    out = {"bins": [], "pooled": {}}

    def stats(mask):
        er, eb = arr["eps_r"][mask], arr["eps_b"][mask]
        n = er.size
        d = {
            "n": int(n),
            "mean_eps_r": float(er.mean()),
            "sem_eps_r": float(er.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
            "mean_eps_b": float(eb.mean()),
            "sem_eps_b": float(eb.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        }
        try:
            d["pearson"], d["slope"] = error_correlation(er, eb)
        except ValueError:
            d["pearson"] = d["slope"] = float("nan")
        return d

    for dm in sorted(set(arr["d_min"].tolist()), reverse=True):
        entry = {"d_min": dm}
        for name in ("spade", "di"):
            m = (arr["d_min"] == dm) & (arr["pipeline"] == name)
            if m.any():
                entry[name] = stats(m)
        if "spade" in entry and "di" in entry:
            entry["ratio_eps_r"] = entry["di"]["mean_eps_r"] / entry["spade"]["mean_eps_r"]
            entry["ratio_eps_b"] = entry["di"]["mean_eps_b"] / entry["spade"]["mean_eps_b"]
        out["bins"].append(entry)
    for name in ("spade", "di"):
        m = arr["pipeline"] == name
        if m.any():
            out["pooled"][name] = stats(m)
    if "spade" in out["pooled"] and "di" in out["pooled"]:
        p = out["pooled"]
        out["pooled"]["ratio_eps_r"] = p["di"]["mean_eps_r"] / p["spade"]["mean_eps_r"]
        out["pooled"]["ratio_eps_b"] = p["di"]["mean_eps_b"] / p["spade"]["mean_eps_b"]
    return out


# ---------------------------------------------------------------- ODMR / Rabi


def gamma_grid(kind: str, n: int) -> np.ndarray:
    if kind == "odmr":
        return np.linspace(-6.0, 6.0, n)
    return np.linspace(0.0, 2.0 * np.pi, n)


def field_values(kind: str, truth: EmitterEnsemble, cfg: ExperimentConfig, trial: int) -> np.ndarray:
    """Linear field map over the scene in a seeded random direction."""
    ang = stream(cfg.seed, trial, STAGE_SENSE, 998).uniform(0, 2 * np.pi)
    u = np.array([np.cos(ang), np.sin(ang)])
    proj = truth.positions @ u
    if kind == "odmr":
        c = 2.5 if cfg.field_center is None else cfg.field_center
        g = 3.0 if cfg.field_gradient is None else cfg.field_gradient
    else:
        c = 1.5 if cfg.field_center is None else cfg.field_center
        g = 1.0 if cfg.field_gradient is None else cfg.field_gradient
    phi = c + g * proj
    if kind == "rabi":
        phi = np.maximum(phi, 1.0)
    return phi


@dataclass
class SensingExperimentResult:
    kind: str
    gammas: np.ndarray
    phi_true: np.ndarray
    budgets: np.ndarray
    intensities_true: np.ndarray
    traces: dict
    fits: dict
    rmse: dict
    eps_r: dict
    seed: int
    config_hash: str
    chi: float = 0.5

    def rows(self):
        out = []
        for name, trace in self.traces.items():
            fit = self.fits[name]
            for gi, gam in enumerate(self.gammas):
                for k in range(self.phi_true.size):
                    i_fit = fit.scale[k] * model_curve(self.kind, gam, fit.phi[k], self.chi)
                    out.append((float(gam), k, float(trace[gi, k]), float(i_fit), name))
        return out


def run_sensing_experiment(kind: str, cfg: ExperimentConfig, trial: int = 0, pipelines=("spade", "baseline"), calibrations=None):
    """Calibrate once, sweep the modulation, fit each emitter's trace per pipeline.

    The per-gamma photon number follows the total intensity (fixed exposure):
    N(gamma) = N * I0(gamma) / max I0, with the DI share N1/N kept fixed.
    ``calibrations`` maps pipeline name to previously estimated positions for
    the same (config, seed, trial); it is filled in place when given empty.
    """
    truth = scene_from_config(cfg, trial)
    phi = field_values(kind, truth, cfg, trial)
    gam = gamma_grid(kind, cfg.n_gamma)
    inten = np.array([model_curve(kind, g, phi, cfg.chi) for g in gam])  # (G, K)
    inten = np.clip(inten, 1e-9, None)
    i0 = inten.sum(axis=1)
    budgets = np.maximum(np.round(cfg.N * i0 / i0.max()).astype(int), 10)
    share = cfg.n1() / cfg.N
    traces, fits, rmse, eps_r = {}, {}, {}, {}
    for name in pipelines:
        spade = name == "spade"
        if calibrations is not None and name in calibrations:
            r_est = calibrations[name]
        else:
            r_est, _ = calibrate(truth, cfg, trial, spade)
            if calibrations is not None:
                calibrations[name] = r_est
        perm = align_permutation(truth.positions, r_est)
        r_al = np.asarray(r_est)[perm]
        eps_r[name] = localization_error(truth.positions, r_al)
        b_hat = np.empty_like(inten)
        for gi in range(gam.size):
            b_true = inten[gi] / i0[gi]
            n_tot = int(budgets[gi])
            n1 = int(round(share * n_tot))
            if spade:
                n1 = min(max(n1, 1), n_tot - 1)
            b_hat[gi] = sense(truth.with_brightnesses(b_true), r_al, cfg, trial, gi, spade, n_tot, n1)
        trace = budgets[:, None] * b_hat
        fit = fit_field((gam, trace), kind, chi=cfg.chi)
        traces[name] = trace
        fits[name] = fit
        rmse[name] = field_rmse(phi, fit.phi)
    return SensingExperimentResult(kind, gam, phi, budgets, inten, traces, fits, rmse, eps_r, cfg.seed, cfg.hash(), cfg.chi)


# ---------------------------------------------------------------- Fisher sweep


def run_fisher_sweep(cfg: ExperimentConfig) -> dict:
    """Tables: separation sweep, misalignment sweep, binary-sorter closed form, allocation curve."""
    labels = ("x0", "s", "kappa")
    sep_rows = []
    for s in cfg.s_values:
        p = TwoSourceParams(0.0, float(s), cfg.kappa)
        q = np.diag(qfim_two_source(p).matrix)
        di = np.diag(two_source_cfim("di", p).matrix)
        hg = np.diag(two_source_cfim("hg", p, max_total_order=cfg.pad_order).matrix)
        bs = np.diag(two_source_cfim("binary", p).matrix)
        sep_rows.append([float(s), *q, *di, *hg, *bs, binary_spade_cfi_s(float(s)) if cfg.kappa == 0 else float("nan")])
    sep_header = ["s"] + [f"{m}_{l}" for m in ("qfi", "cfi_di", "cfi_hg", "cfi_bspade") for l in labels] + ["cfi_bspade_s_closed"]
    mis_rows = []
    for x0 in cfg.misalignments:
        for s in cfg.s_values:
            p = TwoSourceParams(float(x0), float(s), cfg.kappa)
            hg = np.diag(two_source_cfim("hg", p, max_total_order=cfg.pad_order).matrix)
            mis_rows.append([float(x0), float(s), *hg])
    mis_header = ["x0", "s"] + [f"cfi_hg_{l}" for l in labels]
    alloc_rows = [[float(k), optimal_allocation(float(k))] for k in cfg.kappa_values]
    return {
        "fisher_separation.csv": (sep_header, sep_rows),
        "fisher_misalignment.csv": (mis_header, mis_rows),
        "allocation.csv": (["kappa", "beta_opt"], alloc_rows),
    }


# ---------------------------------------------------------------- Bayes demo


def _pair_di_1d(s, kappa, n, rng, x0=0.0):
    right = rng.uniform(size=n) < 0.5 + kappa
    return x0 + np.where(right, s, -s) + rng.standard_normal(n)


@dataclass
class BayesDemoResult:
    constraint: str
    switch_fraction: float
    m1: int
    m2: int
    trajectory: list
    events: list
    s_posterior: bayes.PosteriorGrid
    kappa_posterior: bayes.PosteriorGrid
    kappa_hat: float
    capped: bool
    initial_var: float


def run_bayes_demo(cfg: ExperimentConfig, trial: int = 0, constraint: str | None = None, with_sensing: bool = True) -> BayesDemoResult:
    """Two-emitter Bayesian protocol with Type-I or Type-II switching."""
    constraint = cfg.constraint if constraint is None else constraint
    s, kappa, total = cfg.s_true, cfg.kappa, cfg.M
    rng_di = stream(cfg.seed, trial, 10)
    rng_bs = stream(cfg.seed, trial, 11)
    events, trajectory = [], []
    x_all = _pair_di_1d(s, 0.0, total, rng_di)
    capped = False

    if constraint == "II":
        step = max(total // cfg.bayes_checks, 2)
        v_hist = []
        m1 = total
        for t in range(1, cfg.bayes_checks + 1):
            n = t * step
            if n >= total:
                break
            pr = bayes.build_priors_from_di(x_all[:n])
            v = bayes.expected_posterior_variance(pr, total - n)
            v_hist.append(v)
            events.append({"step": t, "m1": int(n), "expected_var": v})
            if bayes.switch_type2(v_hist):
                m1 = n
                events.append({"step": t, "event": "switch", "m1": int(n)})
                break
        else:
            capped = True
        if m1 >= total:
            capped = True
            m1 = total - step
        prior = bayes.build_priors_from_di(x_all[:m1])
        post = bayes.SeparationPosterior(prior)
        initial_var = post.marginal().var
        m2 = total - m1
        eps_true = 0.0 - prior.x0_hat
        q = int(rng_bs.binomial(m2, bayes.psf_mode_probability(s, eps_true)))
        post = post.update(q, m2)
        trajectory.append((0, post.marginal()))
    else:
        block = max(cfg.M1 // 10, 2)
        m1 = block
        while m1 < cfg.M1 and not bayes.switch_type1(x_all[:m1]):
            m1 += block
        events.append({"event": "switch", "m1": int(m1), "criterion_met": bayes.switch_type1(x_all[:m1])})
        prior = bayes.build_priors_from_di(x_all[:m1])
        post = bayes.SeparationPosterior(prior)
        initial_var = post.marginal().var
        eps_true = 0.0 - prior.x0_hat
        m2 = 0
        step = 0
        cap = max(total - m1, cfg.bspade_block)
        while True:
            q = int(rng_bs.binomial(cfg.bspade_block, bayes.psf_mode_probability(s, eps_true)))
            post = post.update(q, cfg.bspade_block)
            m2 += cfg.bspade_block
            step += 1
            marg = post.marginal()
            trajectory.append((step, marg))
            if marg.var < cfg.variance_threshold:
                events.append({"event": "threshold", "m2": int(m2), "var": marg.var})
                break
            if m2 >= cap:
                capped = True
                events.append({"event": "cap", "m2": int(m2), "var": marg.var})
                break
    s_post = post.marginal()
    if with_sensing:
        x_sense = _pair_di_1d(s, kappa, cfg.N, stream(cfg.seed, trial, 12))
        k_post, k_hat = bayes.brightness_posterior(x_sense, s_post, prior)
    else:
        k_post, k_hat = bayes.PosteriorGrid(prior.kappa_grid, prior.kappa_density.copy()), 0.0
    return BayesDemoResult(constraint, m1 / total if constraint == "II" else m1 / (m1 + m2), int(m1), int(m2),
                           trajectory, events, s_post, k_post, float(k_hat), capped, float(initial_var))
