"""ks-insense command line: simulate, control, verify, audit.

Exit codes: 0 success, 1 configuration error, 2 CG did not converge,
3 numerical degeneracy (singular matrix, degenerate observation, failed
eigen or parameter search).
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .errors import (CgStalled, ConfigError, DegenerateObservation, EigFailed, SearchFailed,
                     SingularMatrix)
from .hum import HumConfig, HumResult, gramian_norm, solve_hum
from .io import (columns_to_field, field_columns, read_csv, read_json, write_csv, write_json,
                 write_manifest)
from .observability import carleman_ratio, estimate_observability
from .sentinel import SentinelConfig, verify_insensitivity
from .solvers import solve_cascade, solve_forward
from .weights import (audit_good_sign, audit_weight_estimates, check_source_admissibility,
                      good_sign_threshold)

log = logging.getLogger("ks_insense")

EXIT_OK, EXIT_CONFIG, EXIT_STALLED, EXIT_DEGENERATE = 0, 1, 2, 3
SWEEP_KEYS = ("epsilon", "alpha")


def worker_count() -> int:
    raw = os.environ.get("KS_INSENSE_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"KS_INSENSE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"KS_INSENSE_THREADS must be a positive integer, got {raw!r}")
    return n


def parse_sweep(items: Optional[list[str]]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for item in items or []:
        key, sep, vals = item.partition("=")
        if not sep or key not in SWEEP_KEYS:
            raise ConfigError(f"--sweep expects KEY=v1,v2,... with KEY in {SWEEP_KEYS}, got {item!r}")
        try:
            out[key] = [float(v) for v in vals.split(",") if v]
        except ValueError:
            raise ConfigError(f"--sweep values for {key} must be numbers, got {vals!r}") from None
        if not out[key]:
            raise ConfigError(f"--sweep {key} has no values")
    return out


def sweep_points(cfg: ExperimentConfig, sweep: dict[str, list[float]]):
    """(label, epsilon, alpha) for the cartesian product of the sweep lists."""
    eps_list = sweep.get("epsilon", [cfg.hum.epsilon])
    alpha_list = sweep.get("alpha", list(cfg.sentinel.alphas or [cfg.physics.alpha]))
    points = []
    for eps, alpha in itertools.product(eps_list, alpha_list):
        parts = []
        if "epsilon" in sweep:
            parts.append(f"epsilon_{eps:g}")
        if "alpha" in sweep or len(alpha_list) > 1:
            parts.append(f"alpha_{alpha:g}")
        points.append(("__".join(parts), eps, alpha))
    return points


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out if args.out else cfg.raw["output"]["dir"])


# simulate

def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    sys_ = cfg.system()
    xi1, xi2 = cfg.sources()
    files = []
    if args.cascade:
        cs = solve_cascade(sys_, None, None, None, None, xi1, xi2)
        cols = field_columns(cfg.time.t, cfg.grid.x, y=cs.y, z=cs.z, p=cs.p, q=cs.q)
    else:
        y, z = solve_forward(sys_, None, None, xi1, xi2)
        cols = field_columns(cfg.time.t, cfg.grid.x, y=y, z=z)
    files.append(write_csv(out / "fields.csv", cols))
    write_manifest(out, "simulate", cfg.raw, files, {"cascade": bool(args.cascade)})
    return EXIT_OK


# control

def _write_hum(path: Path, cfg: ExperimentConfig, res: HumResult, alpha: float) -> list[Path]:
    files = [
        write_csv(path / "controls.csv", field_columns(cfg.time.t, cfg.grid.x, h1=res.h1, h2=res.h2)),
        write_csv(path / "adjoint_data.csv", {
            "x": cfg.grid.x, "zeta0": res.zeta0_star, "theta0": res.theta0_star,
            "p0": res.p0, "q0": res.q0, "p_hat0": res.p_hat0, "q_hat0": res.q_hat0}),
        write_json(path / "hum.json", {"alpha": alpha, **res.diagnostics()}),
    ]
    return files


def _run_hum(cfg: ExperimentConfig, eps: float, alpha: float, lam_norms: dict):
    sys_ = cfg.system(alpha)
    xi1, xi2 = cfg.sources()
    hc = HumConfig(eps, cfg.hum.cg_tol, cfg.hum.cg_max_iter, cfg.hum.absolute_epsilon)
    try:
        return solve_hum(sys_, xi1, xi2, hc, lam_norm=lam_norms.get(alpha)), True
    except CgStalled as e:
        log.warning("epsilon=%g alpha=%g: %s", eps, alpha, e)
        return e.result, False


def _lam_norms(cfg: ExperimentConfig, alphas) -> dict:
    if cfg.hum.absolute_epsilon:
        return {}
    return {a: gramian_norm(cfg.system(a)) for a in sorted(set(alphas))}


def _warn_admissibility(cfg: ExperimentConfig) -> None:
    """Controls are still computed for inadmissible sources; only warn."""
    if cfg.raw["sources"]["kind"] == "zero":
        return
    try:
        ws = cfg.weights()
    except SearchFailed as e:
        log.warning("skipping source admissibility check: %s", e)
        return
    adm = check_source_admissibility(*cfg.sources(), ws, cfg.time)
    if not adm.admissible:
        log.warning("sources exceed the rho-weighted admissibility cap (log norms %.4g, %.4g)",
                    *adm.log_norms)


def cmd_control(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    _warn_admissibility(cfg)
    points = sweep_points(cfg, parse_sweep(args.sweep))
    lam_norms = _lam_norms(cfg, [p[2] for p in points])

    def run(point):
        label, eps, alpha = point
        res, ok = _run_hum(cfg, eps, alpha, lam_norms)
        return label, alpha, res, ok

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, points))
    files, all_ok, summary = [], True, []
    for label, alpha, res, ok in results:
        files += _write_hum(out / label if label else out, cfg, res, alpha)
        all_ok &= ok
        summary.append({"label": label, "epsilon": res.epsilon, "alpha": alpha,
                        "residual_norm": res.residual_norm, "free_residual_norm": res.free_residual_norm,
                        "converged": ok})
    write_manifest(out, "control", cfg.raw, files, {"runs": summary})
    return EXIT_OK if all_ok else EXIT_STALLED


# verify

def _load_controls(cfg: ExperimentConfig, path: Path):
    meta = read_json(path / "hum.json")
    cols = read_csv(path / "controls.csv")
    M1, n = cfg.time.M + 1, cfg.grid.n_interior
    return (float(meta["alpha"]), meta.get("epsilon"), columns_to_field(cols, "h1", M1, n),
            columns_to_field(cols, "h2", M1, n))


def _verify_one(cfg: ExperimentConfig, alpha: float, eps, h1, h2, seed: int):
    sys_ = cfg.system(alpha)
    xi1, xi2 = cfg.sources()
    sc = SentinelConfig(alpha, cfg.sentinel.tau_steps, cfg.sentinel.n_perturbations, seed)
    return verify_insensitivity(sys_, h1, h2, xi1, xi2, sc, eps)


def _write_report(path: Path, rep) -> list[Path]:
    rows = rep.per_perturbation
    return [
        write_json(path / "insensitivity.json", rep.to_dict()),
        write_csv(path / "insensitivity.csv", {
            "perturbation": list(range(len(rows))),
            "fd": [r["fd"] for r in rows],
            "fd_richardson": [r["fd_richardson"] for r in rows],
            "analytic": [r["analytic"] for r in rows],
            "bound": [r["bound"] for r in rows]}),
    ]


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    seed = cfg.sentinel.rng_seed
    files, code, summary = [], EXIT_OK, []
    if args.controls:
        src = Path(args.controls)
        if not (src / "hum.json").exists():
            raise ConfigError(f"no control output in {src} (expected hum.json and controls.csv)")
        alpha, eps, h1, h2 = _load_controls(cfg, src)
        rep = _verify_one(cfg, alpha, eps, h1, h2, seed)
        files += _write_report(out, rep)
        summary.append({"label": "", "alpha": alpha, "max_abs_derivative": rep.max_abs_derivative})
    else:
        _warn_admissibility(cfg)
        points = sweep_points(cfg, parse_sweep(args.sweep))
        lam_norms = _lam_norms(cfg, [p[2] for p in points])

        def run(point):
            label, eps, alpha = point
            res, ok = _run_hum(cfg, eps, alpha, lam_norms)
            rep = _verify_one(cfg, alpha, eps, res.h1, res.h2, seed)
            return label, alpha, res, ok, rep

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(run, points))
        for label, alpha, res, ok, rep in results:
            target = out / label if label else out
            files += _write_hum(target, cfg, res, alpha) + _write_report(target, rep)
            if not ok:
                code = EXIT_STALLED
            summary.append({"label": label, "alpha": alpha, "epsilon": res.epsilon,
                            "max_abs_derivative": rep.max_abs_derivative,
                            "cauchy_schwarz_ok": rep.cauchy_schwarz_ok})
    write_manifest(out, "verify", cfg.raw, files, {"runs": summary})
    return code


# audit

def cmd_audit(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    au = cfg.raw["audit"]
    ws = cfg.weights()
    prm = ws.params
    p = int(cfg.raw["carleman"]["p"])
    files = []
    summary = {"m": prm.m, "k": prm.k, "s": prm.s, "lambda": prm.lam,
               "k_auto": cfg.k_auto, "k_min": cfg.k_min, "k_threshold": good_sign_threshold(prm.m, prm.lam, p)}

    if au["weights"]:
        reps = [audit_weight_estimates(ws, float(b), cfg.time) for b in au["b_list"]]
        files.append(write_csv(out / "weight_estimates.csv", {
            "b": [r.b for r in reps], "ratio_x": [r.ratio_x for r in reps],
            "ratio_t": [r.ratio_t for r in reps],
            "ratio_t_m": [np.nan if r.ratio_t_m is None else r.ratio_t_m for r in reps],
            "time_deri": [np.nan if r.time_deri is None else r.time_deri for r in reps]}))
    if au["good_sign"]:
        summary["good_sign"] = [vars(audit_good_sign(ws, q)) for q in sorted({2, p})]
    if au["admissibility"]:
        xi1, xi2 = cfg.sources()
        adm = check_source_admissibility(xi1, xi2, ws, cfg.time)
        summary["admissibility"] = {"weighted_norms": adm.weighted_norms, "log_norms": adm.log_norms,
                                    "admissible": adm.admissible}
    if au["carleman"]:
        sys_ = cfg.system()
        _, _, omega0 = cfg.masks()
        rng = np.random.default_rng(cfg.sentinel.rng_seed)
        n = cfg.grid.n_interior
        cols = {k: [] for k in ("draw_index", "regime", "lhs", "rhs", "ratio", "log_lhs", "log_rhs",
                                "log_ratio", "underflow", "overflow")}
        for i in range(int(au["n_draws"])):
            zeta0, theta0 = rng.standard_normal(n), rng.standard_normal(n)
            for regime in au["regimes"]:
                if regime == "interior" and not 0 < cfg.physics.alpha < 1:
                    continue
                r = carleman_ratio(regime, zeta0, theta0, sys_, ws, omega0)
                for k, v in (("draw_index", i), ("regime", regime), ("lhs", r.lhs), ("rhs", r.rhs),
                             ("ratio", r.ratio), ("log_lhs", r.log_lhs), ("log_rhs", r.log_rhs),
                             ("log_ratio", r.log_ratio), ("underflow", r.underflow),
                             ("overflow", r.overflow)):
                    cols[k].append(v)
        files.append(write_csv(out / "carleman.csv", cols))
    if au["observability"]:
        est = estimate_observability(cfg.system(), ws, [float(m) for m in au["mu_list"]])
        files.append(write_csv(out / "observability.csv",
                               {"mu": est.mu, "c_obs": est.c_obs, "log_c_obs": est.log_c_obs}))
        summary["observability_iterations"] = est.iterations
    files.append(write_json(out / "audit.json", summary))
    write_manifest(out, "audit", cfg.raw, files)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "control": cmd_control, "verify": cmd_verify, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ks-insense",
                                     description="Insensitizing controls for a coupled KS/heat system.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--sweep", action="append", metavar="KEY=V1,V2",
                        help="sweep epsilon or alpha; repeatable")
        sp.add_argument("--seed", type=int, help="overrides sentinel.rng_seed")
        if name == "simulate":
            sp.add_argument("--cascade", action="store_true", help="also solve the backward (p, q) pair")
        if name == "verify":
            sp.add_argument("--controls", help="directory written by 'control' to verify")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_overrides(sentinel={"rng_seed": args.seed})
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CgStalled as e:
        print(f"solver did not converge: {e}", file=sys.stderr)
        return EXIT_STALLED
    except (SingularMatrix, DegenerateObservation, EigFailed, SearchFailed) as e:
        print(f"numerical degeneracy: {e}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
