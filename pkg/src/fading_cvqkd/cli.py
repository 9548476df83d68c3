"""Command line front end.

Subcommands: simulate, estimate, keyrate, optimize, reproduce, ingest.
Configuration precedence: JSON config file, then FADING_CVQKD_*
environment variables, then command line flags.  --paper-scale bumps
the default package count/size to publication scale; explicit --n/--m
beat it.  All outputs are CSV tables plus JSON reports; nothing plots
in-process.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering, estimation, security, storage
from .channel import ProtocolParams, simulate_run
from .distributions import Empirical, from_descriptor
from .errors import FadingCVQKDError, ValidationError
from .storage import ESTIMATES_CSV, RUN_CSV, RUN_JSON, TRUE_T_CSV

FIGURES = ("fig6", "fig7", "fig8", "fig9")

_ENV_KEYS = {
    "FADING_CVQKD_SEED": ("seed", int),
    "FADING_CVQKD_N": ("n", int),
    "FADING_CVQKD_M": ("m", int),
    "FADING_CVQKD_CLUSTERS": ("clusters", int),
    "FADING_CVQKD_Z_CONF": ("z_conf", float),
    "FADING_CVQKD_OUT": ("out", str),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a command needs, merged from defaults, config file,
    environment and flags.  A scenario plus its seed reproduces a run
    bit for bit."""

    dist: dict
    protocol: dict
    n: int = 1000
    m: int = 1000
    seed: int = 1234
    clusters: int = 2
    out: str | None = None
    dist_file: str | None = None
    blind: bool = False
    analytic: bool = True
    paper_scale: bool = False

    def make_dist(self):
        if self.dist_file:
            return from_descriptor(storage.read_json(self.dist_file))
        return from_descriptor(self.dist)

    def make_protocol(self) -> ProtocolParams:
        return storage.protocol_from_descriptor(self.protocol)


def _merge_config(args) -> ScenarioConfig:
    cfg = {
        "dist": {"variant": "truncated_normal", "mean": 0.5, "std": 0.1},
        "protocol": {},
        "dist_file": None,
    }
    if getattr(args, "config", None):
        file_cfg = storage.read_json(args.config)
        for key in ("dist", "dist_file", "n", "m", "seed", "clusters", "out"):
            if key in file_cfg:
                cfg[key] = file_cfg[key]
        cfg["protocol"].update(file_cfg.get("protocol", {}))
    for env_key, (name, conv) in _ENV_KEYS.items():
        raw = os.environ.get(env_key)
        if raw is None:
            continue
        try:
            val = conv(raw)
        except ValueError:
            raise ValidationError(f"{env_key} is not a valid {conv.__name__}: {raw!r}")
        if name == "z_conf":
            cfg["protocol"]["z_conf"] = val
        else:
            cfg[name] = val
    if getattr(args, "paper_scale", False):
        cfg["paper_scale"] = True
        cfg["n"], cfg["m"] = 100_000, 1000
    for name in ("seed", "n", "m", "clusters", "out"):
        val = getattr(args, name, None)
        if val is not None:
            cfg[name] = val
    if getattr(args, "z_conf", None) is not None:
        cfg["protocol"]["z_conf"] = args.z_conf
    if getattr(args, "blind", False):
        cfg["blind"] = True
    return ScenarioConfig(**cfg)


def _require_out(cfg: ScenarioConfig, command: str) -> Path:
    if not cfg.out:
        raise ValidationError(f"{command} needs --out (or 'out' in the config)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args) -> int:
    cfg = _merge_config(args)
    out = _require_out(cfg, "simulate")
    run = simulate_run(cfg.make_dist(), cfg.n, cfg.m, cfg.make_protocol(), cfg.seed)
    storage.write_run(run, out)
    mean_T = float(np.mean(run.true_transmittances()))
    print(f"simulated {run.m} packages x {run.n} states (seed {run.seed}), "
          f"mean true T {mean_T:.4f}")
    print(f"wrote {out / RUN_CSV}, {out / TRUE_T_CSV}, {out / RUN_JSON}")
    return 0


def _ml_sqrt_slope(pkg, k: int) -> float:
    """Least-squares slope of B on M, the scale-free diagnostic that
    nulls exactly on noiseless data (unlike the protocol estimator,
    which divides by the known modulation variance)."""
    M, B = pkg.M[:k], pkg.B[:k]
    return float(np.dot(M, B) / np.dot(M, M))


def _write_residuals(run, estimates, path) -> None:
    rows = []
    for i, (pkg, est) in enumerate(zip(run.packages, estimates)):
        root = math.sqrt(pkg.true_T)
        rows.append((i, pkg.true_T, est.sqrtT_hat,
                     est.sqrtT_hat - root,
                     _ml_sqrt_slope(pkg, est.k) - root))
    storage.write_table(path, ["package", "T_true", "sqrtT_hat",
                               "resid", "resid_ml"], rows)


def _cmd_estimate(args) -> int:
    cfg = _merge_config(args)
    run_dir = Path(args.data)
    run = storage.read_run(run_dir)
    estimates = estimation.estimate_run(run)
    storage.write_estimates(estimates, run_dir / ESTIMATES_CSV)
    stats = estimation.aggregate(estimates, run.protocol)
    wc = estimation.worst_case(stats, run.protocol)
    rect = estimation.worst_case_rectangular(stats, run.protocol)
    report = {"aggregate": stats, "worst_case": wc, "worst_case_rectangular": rect}
    storage.write_json(report, run_dir / "estimate.json")
    wrote = [str(run_dir / ESTIMATES_CSV), str(run_dir / "estimate.json")]
    if not cfg.blind:
        _write_residuals(run, estimates, run_dir / "residuals.csv")
        wrote.append(str(run_dir / "residuals.csv"))
    print(f"estimated {stats.m_used} packages: <sqrtT> {stats.mean_sqrtT_hat:.5f}, "
          f"X1 {stats.X1_hat:.3e}, X2 {stats.X2_hat:.5f}")
    print(f"worst case: T_eff_low {wc.T_eff_low:.5f}, eps_eff_up {wc.eps_eff_up:.5f}")
    print(f"wrote {', '.join(wrote)}")
    return 0


def _cmd_keyrate(args) -> int:
    cfg = _merge_config(args)
    if args.data:
        run_dir = Path(args.data)
        sidecar = storage.read_json(run_dir / RUN_JSON)
        protocol = storage.protocol_from_descriptor(sidecar["protocol"])
        est_path = run_dir / ESTIMATES_CSV
        if est_path.exists():
            estimates = storage.read_estimates(est_path)
        else:
            estimates = estimation.estimate_run(storage.read_run(run_dir))
        stats = estimation.aggregate(estimates, protocol)
        wc = estimation.worst_case(stats, protocol)
        N = int(sidecar["n"]) * int(sidecar["m"])
        report = security.key_rate(wc, N, protocol)
        dest = run_dir / "keyrate.json"
    else:
        protocol = cfg.make_protocol()
        plan = clustering.total_key_rate(cfg.make_dist(), (-math.inf, math.inf),
                                         cfg.n, cfg.m, protocol)
        wc = plan.per_cluster[0].wc
        N = cfg.n * cfg.m
        report = security.key_rate(wc, N, protocol)
        dest = Path(cfg.out) / "keyrate.json" if cfg.out else None
        if dest is not None:
            dest.parent.mkdir(parents=True, exist_ok=True)
    print(f"I_AB {report.I_AB:.5f}  S_BE {report.S_BE:.5f}  "
          f"K_inf {report.K_inf:.5f} bits/state")
    print(f"finite size (N = {N}, key states {report.N_used}): "
          f"delta {report.delta:.3e}, K {report.K:.5f} bits/state")
    if report.squeezed_surrogate:
        print("note: V_S < 1, Holevo bound uses the symmetric purification surrogate")
    if dest is not None:
        storage.write_json({"worst_case": wc, "keyrate": report, "N_total": N}, dest)
        print(f"wrote {dest}")
    return 0


def _cmd_optimize(args) -> int:
    cfg = _merge_config(args)
    dist = cfg.make_dist()
    protocol = cfg.make_protocol()
    result = clustering.optimize(dist, cfg.clusters, cfg.n, cfg.m, protocol,
                                 threads=args.threads)
    plan = result.plan
    print(f"optimized {cfg.clusters} cluster(s): r {result.r:.4f}, "
          f"V {result.V:.3f}, total rate {result.total_rate:.5f} bits/state")
    for rep in plan.per_cluster:
        lo, hi = rep.interval
        print(f"  [{lo:.4f}, {hi:.4f}): mass {rep.mass:.4f}, K {rep.K_c:.5f}")
    if result.diagnostic:
        print(f"note: {result.diagnostic}")
    if cfg.out:
        out = _require_out(cfg, "optimize")
        storage.write_json({
            "clusters": cfg.clusters,
            "protocol": storage.protocol_descriptor(result.protocol),
            "plan": plan,
            "r": result.r,
            "V": result.V,
            "evaluations": result.evaluations,
            "diagnostic": result.diagnostic,
        }, out / "plan.json")
        print(f"wrote {out / 'plan.json'}")
    return 0


# ---- figure reproduction ---------------------------------------------

def _m_ladder(m_max: int, points: int = 7) -> list[int]:
    grid = np.geomspace(10, m_max, points)
    out: list[int] = []
    for v in grid:
        iv = int(round(v))
        if not out or iv > out[-1]:
            out.append(iv)
    return out


def _pooled_sweep(cfg: ScenarioConfig, n: int, m_max: int, points: int):
    """Optimize the pooled (C=0) protocol at each block count; the key
    rate and the optimal (r, V) it is attained at, per total size N."""
    dist = cfg.make_dist()
    protocol = cfg.make_protocol()
    rows = []
    for m in _m_ladder(m_max, points):
        result = clustering.optimize(dist, 0, n, m, protocol)
        wc = result.plan.per_cluster[0].wc
        K_inf = security.key_rate(wc, None, result.protocol).K_inf if wc else 0.0
        if result.total_rate > 0.0:
            r_opt, V_opt = result.r, result.V
        else:
            # no setting yields a key at this block count, so there is
            # no meaningful optimum to report
            r_opt = V_opt = math.nan
        rows.append((n, m, n * m, result.total_rate, max(0.0, K_inf),
                     r_opt, V_opt))
    return rows


def _fig6(cfg: ScenarioConfig, out: Path) -> Path:
    """Pooled key rate vs total states N at per-N optimal (r, V), one
    series per package size; K_inf is the asymptote of each point."""
    n_series = (10_000, 100_000) if cfg.paper_scale else (500, 1000)
    m_max = 10_000 if cfg.paper_scale else 1000
    rows = []
    for n in n_series:
        rows.extend(_pooled_sweep(cfg, n, m_max, points=6))
    path = out / "fig6.csv"
    storage.write_table(path, ["n", "m", "N", "K", "K_inf", "r_opt", "V_opt"],
                        rows)
    return path


def _fig7(cfg: ScenarioConfig, out: Path) -> Path:
    """Optimal disclosure fraction r vs total states N at fixed n."""
    n = cfg.n
    m_max = 10_000 if cfg.paper_scale else 1000
    rows = [(n, m, N, r, V, K)
            for (n, m, N, K, _, r, V) in _pooled_sweep(cfg, n, m_max, points=6)]
    path = out / "fig7.csv"
    storage.write_table(path, ["n", "m", "N", "r_opt", "V_opt", "K"], rows)
    return path


def _fig8(cfg: ScenarioConfig, out: Path, C: int = 3) -> Path:
    """Optimal C-cluster layout with conditional moments per cluster."""
    dist = cfg.make_dist()
    protocol = cfg.make_protocol()
    result = clustering.optimize(dist, C, cfg.n, cfg.m, protocol)
    rows = []
    for idx, rep in enumerate(result.plan.per_cluster):
        mom = rep.cond_moments
        wc = rep.wc
        rows.append((idx, rep.interval[0], rep.interval[1], rep.mass,
                     mom.mean_T if mom else math.nan,
                     mom.mean_sqrtT if mom else math.nan,
                     mom.var_sqrtT if mom else math.nan,
                     wc.T_eff_low if wc else math.nan,
                     wc.eps_eff_up if wc else math.nan,
                     rep.K_c))
    path = out / "fig8.csv"
    storage.write_table(path, ["cluster", "t_lo", "t_hi", "mass", "mean_T",
                               "mean_sqrtT", "var_sqrtT", "T_eff_low",
                               "eps_eff_up", "K_c"], rows)
    storage.write_json({"r": result.r, "V": result.V,
                        "total_rate": result.total_rate,
                        "plan": result.plan}, out / "fig8.json")
    return path


def _fig9(cfg: ScenarioConfig, out: Path) -> Path:
    """Best total key rate vs cluster count C = 0..C_max."""
    dist = cfg.make_dist()
    protocol = cfg.make_protocol()
    rows = []
    for C in range(cfg.clusters + 1):
        result = clustering.optimize(dist, C, cfg.n, cfg.m, protocol)
        rows.append((C, result.total_rate, result.r, result.V,
                     result.plan.kept_mass))
    path = out / "fig9.csv"
    storage.write_table(path, ["C", "K", "r_opt", "V_opt", "kept_mass"], rows)
    return path


def _cmd_reproduce(args) -> int:
    cfg = _merge_config(args)
    figure = args.figure
    if figure not in FIGURES:
        raise ValidationError(f"unknown figure id {figure!r}; choose from {FIGURES}")
    if figure in ("fig8", "fig9") and not (getattr(args, "config", None)
                                           or cfg.dist_file):
        # the clusterization studies default to the flat fading law,
        # where splitting matters most
        cfg = dataclasses.replace(cfg, dist={"variant": "uniform",
                                             "lo": 0.0, "hi": 1.0})
    if figure == "fig9" and getattr(args, "clusters", None) is None:
        cfg = dataclasses.replace(cfg, clusters=3)
    out = _require_out(cfg, "reproduce")
    fn = {"fig6": _fig6, "fig7": _fig7, "fig8": _fig8, "fig9": _fig9}[figure]
    path = fn(cfg, out)
    storage.write_json(cfg, out / f"{figure}.scenario.json")
    print(f"wrote {path} and {out / (figure + '.scenario.json')}")
    return 0


def _cmd_ingest(args) -> int:
    cfg = _merge_config(args)
    out = _require_out(cfg, "ingest")
    trace = storage.read_trace(args.trace)
    dist = Empirical(trace, bin_width=args.bin_width)
    mom = dist.moments()
    storage.write_json(dist.descriptor(), out / "dist.json")
    print(f"ingested {trace.size} samples: <T> {mom.mean_T:.5f}, "
          f"<sqrtT> {mom.mean_sqrtT:.5f}, Var(sqrtT) {mom.var_sqrtT:.3e}")
    print(f"wrote {out / 'dist.json'} (use it via 'dist_file' in a config)")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n", type=int, help="states per package")
    p.add_argument("--m", type=int, help="number of packages")
    p.add_argument("--clusters", type=int, help="cluster count")
    p.add_argument("--z-conf", dest="z_conf", type=float,
                   help="confidence multiplier for worst-case bounds")
    p.add_argument("--paper-scale", action="store_true",
                   help="use publication-scale block sizes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fading-cvqkd",
        description="Simulate, estimate and secure a CV QKD protocol over a fading channel")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a run and write it to --out")
    _add_common(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("estimate", help="estimate channel parameters of a stored run")
    p.add_argument("data", help="run directory written by simulate")
    p.add_argument("--blind", action="store_true",
                   help="skip the residual comparison against true T values")
    _add_common(p)
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("keyrate", help="secret key rate from a run or a config")
    p.add_argument("data", nargs="?", help="run directory (omit to use the model)")
    _add_common(p)
    p.set_defaults(fn=_cmd_keyrate)

    p = sub.add_parser("optimize", help="optimize r, V and cluster boundaries")
    _add_common(p)
    p.add_argument("--threads", type=int,
                   help="worker threads (default: FADING_CVQKD_THREADS or 1)")
    p.set_defaults(fn=_cmd_optimize)

    p = sub.add_parser("reproduce",
                       help="emit the x/y series behind a study figure as CSV")
    p.add_argument("figure", help=f"one of {', '.join(FIGURES)}")
    _add_common(p)
    p.set_defaults(fn=_cmd_reproduce)

    p = sub.add_parser("ingest", help="turn a measured T trace into a distribution file")
    p.add_argument("trace", help="CSV file with a single T column")
    p.add_argument("--bin-width", type=float, help="histogram bin width override")
    _add_common(p)
    p.set_defaults(fn=_cmd_ingest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FadingCVQKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
