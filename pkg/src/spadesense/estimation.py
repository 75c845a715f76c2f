"""Maximum-likelihood estimators for both protocol stages and the error metrics.

Everything is in units of the PSF width. The DI likelihood is a Gaussian
mixture evaluated with log-sum-exp; mode-sorter terms are multinomial.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize
from scipy.special import gammainc, softmax

from .measurements import PadSpadeConfig, PhotonData, _poisson_pmf_table
from .scene import min_pairwise_separation
from .ykl import YklMeasurement, ykl_amplitudes

LOG_2PI = np.log(2.0 * np.pi)
COLLAPSE_TOL = 1e-6


@dataclass
class CalibrationEstimate:
    centroid: np.ndarray
    positions: np.ndarray
    log_likelihood: float
    iterations: int = 0
    converged: bool = True
    n_starts: int = 0
    start_log_likelihoods: list = field(default_factory=list)


@dataclass
class SensingEstimate:
    pre_estimate: np.ndarray
    brightnesses: np.ndarray
    log_likelihood: float
    fallback: bool = False


# ---------------------------------------------------------------- centroid


def estimate_centroid(di_positions) -> np.ndarray:
    x = np.asarray(di_positions, dtype=float).reshape(-1, 2)
    if x.shape[0] == 0:
        raise ValueError("centroid needs at least one photon")
    return x.mean(axis=0)


# ---------------------------------------------------------------- likelihood pieces


def di_log_likelihood(positions, brightnesses, di_positions, grad=False):
    """sum_i log sum_k b_k N(x_i; r_k, I) and optionally its gradient in r."""
    r = np.asarray(positions, dtype=float).reshape(-1, 2)
    x = np.asarray(di_positions, dtype=float).reshape(-1, 2)
    logb = np.log(np.clip(np.asarray(brightnesses, float), 1e-300, None))
    d2 = (x[:, 0:1] - r[:, 0]) ** 2 + (x[:, 1:2] - r[:, 1]) ** 2
    logc = (logb - LOG_2PI) - 0.5 * d2
    top = logc.max(axis=1, keepdims=True)
    e = np.exp(logc - top)
    s = e.sum(axis=1, keepdims=True)
    val = float(np.sum(np.log(s) + top))
    if not grad:
        return val
    resp = e / s
    g = resp.T @ x - resp.sum(axis=0)[:, None] * r
    return val, g


def pad_log_likelihood(positions, brightnesses, counts, config: PadSpadeConfig, grad=False):
    """sum_q m_q log p_q(r) for the HG sorter, optionally with the gradient in r."""
    r = np.asarray(positions, dtype=float).reshape(-1, 2)
    b = np.asarray(brightnesses, float)
    m = np.asarray(counts, float)
    q = config.max_total_order
    d = r - np.asarray(config.origin)
    mux, muy = (d[:, 0] / 2) ** 2, (d[:, 1] / 2) ** 2
    px = _poisson_pmf_table(mux, q + 1)
    py = _poisson_pmf_table(muy, q + 1)
    nm = config.mode_indices
    ov = px[:, nm[:, 0]] * py[:, nm[:, 1]]  # (K, Q)
    mu = mux + muy
    bucket_k = gammainc(q + 1, mu)
    p = np.append(b @ ov, b @ bucket_k)
    p_safe = np.clip(p, 1e-300, None)
    val = float(np.sum(np.where(m > 0, m * np.log(p_safe), 0.0)))
    if not grad:
        return val
    w = np.where(m > 0, m / p_safe, 0.0)
    # dP_n/dmu = P_{n-1} - P_n
    dpx = np.concatenate([-px[:, :1], px[:, :-1] - px[:, 1:]], axis=1)
    dpy = np.concatenate([-py[:, :1], py[:, :-1] - py[:, 1:]], axis=1)
    dov_dmux = dpx[:, nm[:, 0]] * py[:, nm[:, 1]]
    dov_dmuy = px[:, nm[:, 0]] * dpy[:, nm[:, 1]]
    # d/dmu of the regularized lower gamma P(q+1, mu) is the Poisson pmf at q
    dbucket = _poisson_pmf_table(mu, q)[:, q]
    gx = b * (dov_dmux @ w[:-1] + dbucket * w[-1]) * d[:, 0] / 2
    gy = b * (dov_dmuy @ w[:-1] + dbucket * w[-1]) * d[:, 1] / 2
    return val, np.column_stack([gx, gy])


# ---------------------------------------------------------------- calibration MLE


def _moment_start(di_positions, centroid, k):
    x = np.asarray(di_positions).reshape(-1, 2)
    if x.shape[0] < 3:
        return np.tile(centroid, (k, 1))
    cov = np.cov(x.T) - np.eye(2)
    ev, vec = np.linalg.eigh(cov)
    spread = np.sqrt(max(ev[-1], 1e-4))
    t = np.linspace(-1.0, 1.0, k)
    t = t / max(t.std(), 1e-12) if k > 1 else t
    return centroid + np.outer(t * spread, vec[:, -1])


def _disk_starts(centroid, k, n, rng):
    starts = []
    for _ in range(n):
        rad = 0.5 * np.sqrt(rng.uniform(size=k))
        ang = rng.uniform(0, 2 * np.pi, size=k)
        starts.append(centroid + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]))
    return starts


def calibration_objective(photon_data, k, pad_config):
    b = np.full(k, 1.0 / k)
    x = photon_data.di_positions
    counts = photon_data.spade_counts

    def fun(theta):
        r = theta.reshape(k, 2)
        val, g = (0.0, np.zeros((k, 2)))
        if x.shape[0]:
            v, gg = di_log_likelihood(r, b, x, grad=True)
            val, g = val + v, g + gg
        if counts is not None and counts.sum() > 0:
            v, gg = pad_log_likelihood(r, b, counts, pad_config, grad=True)
            val, g = val + v, g + gg
        return -val, -g.ravel()

    return fun


def estimate_positions_mle(
    photon_data,
    k: int,
    pad_config: PadSpadeConfig | None = None,
    n_random_starts: int = 6,
    rng=None,
    starts=None,
    max_iter: int = 500,
    screen_photons: int = 10_000,
    n_polish: int = 2,
) -> CalibrationEstimate:
    """Joint DI + PAD maximum-likelihood positions for an equal-brightness scene.

    Starts: ``n_random_starts`` draws in the disk of radius 1/2 around the DI
    centroid plus one moment-matched start along the principal DI axis. With
    more than ``screen_photons`` DI photons every start is first optimized on
    a random subsample and only the ``n_polish`` best are refined on all data.
    """
    rng = np.random.default_rng(rng)
    if photon_data.n_di == 0 and pad_config is not None:
        centroid = np.asarray(pad_config.origin, float)
    else:
        centroid = estimate_centroid(photon_data.di_positions)
    if pad_config is None:
        pad_config = PadSpadeConfig(tuple(centroid))
    fun = calibration_objective(photon_data, k, pad_config)
    if starts is None:
        starts = [_moment_start(photon_data.di_positions, centroid, k)]
        starts += _disk_starts(centroid, k, n_random_starts, rng)
    starts = [np.asarray(s0, float).reshape(k, 2) for s0 in starts]
    start_vals = [-fun(s0.ravel())[0] for s0 in starts]

    def local(objective, x0):
        res = _run_lbfgs(objective, x0.ravel(), max_iter)
        r = res.x.reshape(k, 2)
        if k > 1 and min_pairwise_separation(r) < COLLAPSE_TOL:
            res = _run_lbfgs(objective, (r + 1e-3 * rng.standard_normal(r.shape)).ravel(), max_iter)
        return res

    total_it = 0
    candidates = starts
    n_di = photon_data.n_di
    if n_di > screen_photons and len(starts) > n_polish:
        sub = photon_data.di_positions[rng.choice(n_di, screen_photons, replace=False)]
        screen = calibration_objective(PhotonData(sub, photon_data.spade_counts), k, pad_config)
        runs = [local(screen, s0) for s0 in starts]
        total_it += sum(r.nit for r in runs)
        order = np.argsort([r.fun for r in runs], kind="stable")[:n_polish]
        candidates = [runs[i].x.reshape(k, 2) for i in order]

    best = None
    for s0 in candidates:
        f0 = fun(s0.ravel())[0]
        res = local(fun, s0)
        total_it += res.nit
        if res.fun > f0:
            res.x, res.fun = s0.ravel(), f0
        if best is None or res.fun < best.fun:
            best = res
    return CalibrationEstimate(
        centroid=centroid,
        positions=best.x.reshape(k, 2),
        log_likelihood=float(-best.fun),
        iterations=total_it,
        converged=bool(best.success),
        n_starts=len(starts),
        start_log_likelihoods=start_vals,
    )


def _run_lbfgs(fun, x0, max_iter):
    return minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": 1e-8, "ftol": 1e-14})


# ---------------------------------------------------------------- brightness


def _gaussian_densities(positions, di_positions):
    r = np.asarray(positions, float).reshape(-1, 2)
    x = np.asarray(di_positions, float).reshape(-1, 2)
    d2 = ((x[:, None, :] - r[None, :, :]) ** 2).sum(axis=-1)
    return -0.5 * d2 - LOG_2PI  # log densities, (N, K)


def _simplex_mle(log_dens, mix_matrix=None, counts=None, warm=None, max_newton=60):
    """argmax_b sum_i log(sum_k b_k f_ik) + sum_q n_q log((T b)_q) over the simplex.

    Both terms are concave in b, so Newton steps on the affine hull (with a
    step cap keeping b positive) converge fast. Softmax L-BFGS is the fallback
    when the optimum sits on the boundary and Newton stalls.
    """
    k = log_dens.shape[1] if log_dens is not None else mix_matrix.shape[1]
    have_di = log_dens is not None and log_dens.shape[0] > 0
    if have_di:
        shift = log_dens.max(axis=1, keepdims=True)
        f = np.exp(log_dens - shift)
    have_m = mix_matrix is not None and counts is not None and np.sum(counts) > 0
    if have_m:
        keep = np.asarray(counts, float) > 0
        tm, nq = mix_matrix[keep], np.asarray(counts, float)[keep]

    def loglik(b):
        val = 0.0
        if have_di:
            val += np.sum(np.log(np.clip(f @ b, 1e-300, None)) + shift[:, 0])
        if have_m:
            val += np.sum(nq * np.log(np.clip(tm @ b, 1e-300, None)))
        return val

    def grad_hess(b):
        g, h = np.zeros(k), np.zeros((k, k))
        if have_di:
            w = f / np.clip(f @ b, 1e-300, None)[:, None]
            g += w.sum(axis=0)
            h -= w.T @ w
        if have_m:
            w = tm / np.clip(tm @ b, 1e-300, None)[:, None]
            g += nq @ w
            h -= (w * nq[:, None]).T @ w
        return g, h

    b = np.full(k, 1.0 / k) if warm is None else np.clip(np.asarray(warm, float), 1e-6, None)
    b = b / b.sum()
    cur = loglik(b)
    converged = False
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, k] = kkt[k, :k] = 1.0
    for _ in range(max_newton):
        g, h = grad_hess(b)
        kkt[:k, :k] = h
        try:
            step = np.linalg.solve(kkt, np.append(-g, 0.0))[:k]
        except np.linalg.LinAlgError:
            break
        neg = step < 0
        t = min(1.0, 0.95 * np.min(-b[neg] / step[neg])) if neg.any() else 1.0
        while t > 1e-12:
            trial = b + t * step
            new = loglik(trial)
            if new >= cur:
                break
            t *= 0.5
        else:
            break
        b, gain, cur = trial / trial.sum(), new - cur, new
        if gain < 1e-11 * max(1.0, abs(cur)) and t == 1.0:
            converged = True
            break

    if not converged:
        def negll(z):
            bb = softmax(np.append(z, 0.0))
            val = 0.0
            gb = np.zeros(k)
            if have_di:
                fb = np.clip(f @ bb, 1e-300, None)
                val += np.sum(np.log(fb) + shift[:, 0])
                gb += (f / fb[:, None]).sum(axis=0)
            if have_m:
                tb = np.clip(tm @ bb, 1e-300, None)
                val += np.sum(nq * np.log(tb))
                gb += (tm * (nq / tb)[:, None]).sum(axis=0)
            # chain rule through softmax: dL/dz_j = b_j (g_j - b.g)
            gz = bb * (gb - bb @ gb)
            return -val, -gz[:-1]

        z0 = np.log(np.clip(b, 1e-12, None))
        z0 = z0[:-1] - z0[-1]
        res = minimize(negll, z0, jac=True, method="L-BFGS-B",
                       bounds=[(-40, 40)] * (k - 1), options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-15})
        bb = softmax(np.append(res.x, 0.0))
        if loglik(bb) > cur:
            b = bb
    b = np.clip(b, 0.0, None)
    return b / b.sum(), float(loglik(b))


def brightness_pre_estimate(di_positions, positions, return_flag=False):
    """DI mixture-weight MLE with the component means fixed at ``positions``."""
    r = np.asarray(positions, float).reshape(-1, 2)
    x = np.asarray(di_positions, float).reshape(-1, 2)
    k = r.shape[0]
    if x.shape[0] == 0:
        warnings.warn("no DI photons; returning uniform brightness", RuntimeWarning, stacklevel=2)
        out = np.full(k, 1.0 / k)
        return (out, True) if return_flag else out
    b, _ = _simplex_mle(_gaussian_densities(r, x))
    return (b, False) if return_flag else b


def ykl_mixing_matrix(meas: YklMeasurement, positions) -> np.ndarray:
    """T with q = T b: rows are YKL outcomes then the bucket, columns emitters."""
    amp2 = np.abs(ykl_amplitudes(meas, positions)) ** 2
    t = np.vstack([amp2, np.clip(1.0 - amp2.sum(axis=0), 0.0, None)])
    return t / t.sum(axis=0, keepdims=True)


def pad_mixing_matrix(config: PadSpadeConfig, positions) -> np.ndarray:
    """T with q = T b for the Hermite-Gauss sorter, bucket last."""
    from .measurements import pad_bucket, pad_overlaps

    d = np.asarray(positions, float).reshape(-1, 2) - np.asarray(config.origin)
    return np.vstack([pad_overlaps(d, config).T, pad_bucket(d, config)[None, :]])


def estimate_brightness_mle(photon_data, positions, meas, pre_estimate=None) -> SensingEstimate:
    """Joint sorter multinomial + DI mixture brightness MLE at fixed positions.

    ``meas`` is a YklMeasurement, a PadSpadeConfig, or None for DI only.
    """
    r = np.asarray(positions, float).reshape(-1, 2)
    x = photon_data.di_positions
    pre = pre_estimate if pre_estimate is not None else brightness_pre_estimate(x, r)
    counts = photon_data.spade_counts
    log_dens = _gaussian_densities(r, x) if x.shape[0] else None
    fallback = False
    if meas is None or counts is None or counts.sum() == 0:
        mix, counts = None, None
    else:
        mix = pad_mixing_matrix(meas, r) if isinstance(meas, PadSpadeConfig) else ykl_mixing_matrix(meas, r)
        if counts[:-1].sum() == 0:
            warnings.warn("all sorter photons landed in the bucket; using DI only", RuntimeWarning, stacklevel=2)
            mix, counts, fallback = None, None, True
    if log_dens is None and mix is None:
        return SensingEstimate(pre, pre.copy(), 0.0, True)
    b, ll = _simplex_mle(log_dens, mix, counts, warm=pre)
    return SensingEstimate(np.asarray(pre), b, ll, fallback)


# ---------------------------------------------------------------- metrics


def align_permutation(r_true, r_est) -> np.ndarray:
    """perm such that r_est[perm] is matched to r_true, minimizing mean distance."""
    a = np.asarray(r_true, float).reshape(-1, 2)
    b = np.asarray(r_est, float).reshape(-1, 2)
    if a.shape != b.shape:
        raise ValueError("position arrays differ in size")
    k = a.shape[0]
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    if k <= 8:
        best, best_cost = None, np.inf
        idx = np.arange(k)
        for perm in itertools.permutations(range(k)):
            c = dist[idx, perm].sum()
            if c < best_cost - 1e-15:
                best, best_cost = perm, c
        return np.array(best)
    _, col = linear_sum_assignment(dist)
    return col


def localization_error(r_true, r_est) -> float:
    a = np.asarray(r_true, float).reshape(-1, 2)
    b = np.asarray(r_est, float).reshape(-1, 2)
    if a.shape[0] < 2:
        raise ValueError("localization error needs K >= 2")
    return float(np.linalg.norm(a - b, axis=1).mean() / min_pairwise_separation(a))


def brightness_error(b_true, b_est) -> float:
    a, b = np.asarray(b_true, float), np.asarray(b_est, float)
    if a.shape != b.shape:
        raise ValueError("brightness vectors differ in length")
    return float(0.5 * np.abs(a - b).sum())


def error_correlation(eps_r, eps_b):
    """Pearson coefficient and OLS slope of eps_b on eps_r."""
    x, y = np.asarray(eps_r, float), np.asarray(eps_b, float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("need at least three paired samples")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance in one coordinate")
    pearson = float((dx @ dy) / np.sqrt(sxx * syy))
    slope = float((dx @ dy) / sxx)
    return pearson, slope
