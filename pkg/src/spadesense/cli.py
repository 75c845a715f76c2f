"""Command-line entry point: ``spadesense <command> [--config cfg.json] [--seed N] --out DIR``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .bayes import GridResolutionError
from .measurements import GridSpec, export_mode_binary, export_mode_csv, grid_norm, render_mode
from .scene import DegeneratePositionsError, NumericalRankError
from .ykl import design_ykl, ykl_mode_coefficients

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"


class OutputConflict(harness.ConfigError):
    pass


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _prepare_out(out: Path, cfg_hash: str, force: bool):
    out.mkdir(parents=True, exist_ok=True)
    man = out / MANIFEST
    if man.exists() and not force:
        try:
            old = json.loads(man.read_text()).get("config_hash")
        except json.JSONDecodeError:
            old = None
        if old != cfg_hash:
            raise OutputConflict(f"{out} holds results for config {old}; rerun with --force to overwrite")


def load_config(args) -> harness.ExperimentConfig:
    obj = {}
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise harness.ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(obj, dict):
            raise harness.ConfigError("config must be a JSON object")
    obj["kind"] = args.command
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.trials is not None:
        obj["trials"] = args.trials
    if args.threads is not None:
        obj["threads"] = args.threads
    if args.baseline:
        obj["baseline"] = True
    try:
        return harness.ExperimentConfig.from_dict(obj)
    except TypeError as exc:
        raise harness.ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- commands


def cmd_scene(cfg, out):
    ens = harness.scene_from_config(cfg)
    _write_json(out / "scene.json", ens.to_json())
    _write_csv(out / "scene.csv", ["emitter", "x", "y", "b"],
               [(k, *ens.positions[k], ens.brightnesses[k]) for k in range(ens.K)])
    return ["scene.json", "scene.csv"]


def cmd_protocol(cfg, out):
    pipelines = ("baseline",) if cfg.baseline else ("spade", "baseline")
    res = harness.run_protocol(cfg, 0, pipelines=pipelines)
    body = res.to_json()
    _write_json(out / "protocol.json", body)
    rows = []
    for name, st in (("spade", res.spade), ("di", res.baseline)):
        if st is None:
            continue
        for g, eb in enumerate(st.eps_b):
            rows.append((name, g, st.eps_r, eb))
    _write_csv(out / "protocol.csv", ["pipeline", "gamma_index", "eps_r", "eps_b"], rows)
    return ["protocol.json", "protocol.csv"]


def cmd_monte_carlo(cfg, out):
    rows, summary = harness.run_monte_carlo(cfg)
    _write_csv(out / "monte_carlo.csv", ["trial", "K", "d_min", "pipeline", "eps_r", "eps_b", "seed"], rows)
    _write_json(out / "summary.json", summary)
    return ["monte_carlo.csv", "summary.json"]


def _cmd_sensing(kind, cfg, out):
    pipelines = ("baseline",) if cfg.baseline else ("spade", "baseline")
    res = harness.run_sensing_experiment(kind, cfg, pipelines=pipelines)
    rows = [(g, k, ih, ifit, "di" if p == "baseline" else p) for g, k, ih, ifit, p in res.rows()]
    _write_csv(out / f"{kind}.csv", ["gamma", "emitter", "I_hat", "I_fit", "pipeline"], rows)
    table = []
    for k in range(res.phi_true.size):
        entry = {"emitter": k, "phi_true": res.phi_true[k]}
        for name, fit in res.fits.items():
            tag = "di" if name == "baseline" else name
            entry[f"phi_{tag}"] = fit.phi[k]
            entry[f"rank_deficient_{tag}"] = bool(fit.rank_deficient[k])
        table.append(entry)
    rmse = {("di" if k == "baseline" else k): v for k, v in res.rmse.items()}
    _write_csv(out / f"{kind}_fit.csv", list(table[0].keys()), [list(e.values()) for e in table])
    _write_json(out / f"{kind}_fit.json", {"emitters": table, "rmse": rmse, "config_hash": res.config_hash})
    return [f"{kind}.csv", f"{kind}_fit.csv", f"{kind}_fit.json"]


def cmd_fisher(cfg, out):
    tables = harness.run_fisher_sweep(cfg)
    for name, (header, rows) in tables.items():
        _write_csv(out / name, header, rows)
    return list(tables)


def cmd_bayes(cfg, out):
    res = harness.run_bayes_demo(cfg)
    rows = []
    for step, post in res.trajectory:
        rows.extend((step, s, d) for s, d in zip(post.grid, post.density))
    _write_csv(out / "bayes_separation.csv", ["step", "s", "density"], rows)
    _write_csv(out / "bayes_kappa.csv", ["kappa", "density"], zip(res.kappa_posterior.grid, res.kappa_posterior.density))
    _write_json(out / "bayes_events.json", {
        "constraint": res.constraint,
        "events": res.events,
        "m1": res.m1,
        "m2": res.m2,
        "switch_fraction": res.switch_fraction,
        "capped": res.capped,
        "s_mean": res.s_posterior.mean,
        "s_var": res.s_posterior.var,
        "initial_var": res.initial_var,
        "kappa_hat": res.kappa_hat,
        "kappa_flagged": res.kappa_posterior.flagged,
    })
    return ["bayes_separation.csv", "bayes_kappa.csv", "bayes_events.json"]


def cmd_ykl_modes(cfg, out):
    ens = harness.scene_from_config(cfg)
    if cfg.sensing_brightness is not None:
        ens = ens.with_brightnesses(np.asarray(cfg.sensing_brightness, float).ravel())
    meas = design_ykl(ens.positions, ens.brightnesses, restarts=cfg.ykl_restarts, tol=cfg.ykl_tol)
    grid = GridSpec(cfg.grid_extent, cfg.grid_spacing)
    coeffs = np.column_stack([ykl_mode_coefficients(meas, k) for k in range(meas.K)])
    files, norms = [], []
    for k in range(meas.K):
        # mode k as a superposition of the design-position PSFs
        field = render_mode(coeffs[:, k], grid, positions=meas.design_positions)
        export_mode_csv(out / f"ykl_mode_{k}.csv", field, grid)
        export_mode_binary(out / f"ykl_mode_{k}.bin", field, grid)
        files += [f"ykl_mode_{k}.csv", f"ykl_mode_{k}.bin", f"ykl_mode_{k}.bin.json"]
        norms.append(grid_norm(field, grid))
    _write_json(out / "ykl_modes.json", {
        "positions": ens.positions,
        "priors": ens.brightnesses,
        "min_error": meas.min_error,
        "converged": meas.converged,
        "grid_norms": norms,
        "psf_coefficients": [[c.real, c.imag] for c in coeffs.ravel()],
    })
    return files + ["ykl_modes.json"]


COMMANDS = {
    "scene": cmd_scene,
    "protocol": cmd_protocol,
    "monte-carlo": cmd_monte_carlo,
    "odmr": lambda c, o: _cmd_sensing("odmr", c, o),
    "rabi": lambda c, o: _cmd_sensing("rabi", c, o),
    "fisher": cmd_fisher,
    "bayes": cmd_bayes,
    "ykl-modes": cmd_ykl_modes,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spadesense", description="Sub-diffraction emitter sensing simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, required=True, help="output directory")
        sp.add_argument("--baseline", action="store_true", help="DI pipeline only")
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--force", action="store_true", help="overwrite results from a different config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args)
        out = Path(args.out)
        _prepare_out(out, cfg.hash(), args.force)
        t0 = time.perf_counter()
        files = COMMANDS[args.command](cfg, out)
        _write_json(out / MANIFEST, {
            "command": args.command,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "files": files,
        })
        print(f"{args.command}: wrote {len(files)} files to {out} in {time.perf_counter() - t0:.1f} s")
        return EXIT_OK
    except (NumericalRankError, DegeneratePositionsError, GridResolutionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (harness.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
