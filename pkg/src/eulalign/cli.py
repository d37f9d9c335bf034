"""Command-line entry point: ``eulalign <subcommand> ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(including a verification that does not meet its bound).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import coulomb_identity_residual
from .errors import ConfigError, NumericalError
from .flow import VelocityField, lipschitz_flow_check, stability_inequality_check
from .harness import DensitySpec, StudySpec, build_sim_config, epsilon_sweep, load_config, well_prepared_init
from .io import _json_safe, read_point_cloud, sha256_file, write_energy_csv, write_json, write_trajectory_csv
from .limit import simulate_limit, velocity_bounds_report
from .particles import energy_balance_residual, simulate
from .transport import wasserstein_1d, wasserstein_assignment, wasserstein_inf

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _print(obj) -> None:
    print(json.dumps(_json_safe(obj), sort_keys=True))


def _write_manifest(out: Path, files: list, extra: dict | None = None) -> None:
    manifest = {"version": __version__, "written": datetime.now(timezone.utc).isoformat(),
                "files": {f: sha256_file(out / f) for f in files}}
    manifest.update(extra or {})
    write_json(manifest, out / "manifest.json")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(args):
    conf = load_config(args.config)
    cfg = build_sim_config(conf, getattr(args, "epsilon", None))
    return conf, cfg


def cmd_simulate(args) -> int:
    conf, cfg = _setup(args)
    init, _ = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    traj = simulate(cfg, init)
    out = _outdir(args.out)
    tag = repr(float(cfg.epsilon))
    files = [write_trajectory_csv(traj, out / f"traj_eps_{tag}.csv").name,
             write_energy_csv(traj.energy_ledger, out / f"energy_{tag}.csv").name]
    _write_manifest(out, files, {"seed": cfg.seed, "epsilon": cfg.epsilon})
    _print({"steps": cfg.n_steps, "snapshots": len(traj.snapshots),
            "max_energy_residual": float(np.max(energy_balance_residual(traj)))})
    return EXIT_OK


def cmd_limit(args) -> int:
    conf, cfg = _setup(args)
    _, x0 = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    traj = simulate_limit(cfg, x0)
    report = velocity_bounds_report(traj, cfg)
    out = _outdir(args.out)
    write_trajectory_csv(traj, out / "traj_limit.csv")
    (out / "bounds.json").write_text(report.to_json() + "\n")
    _write_manifest(out, ["traj_limit.csv", "bounds.json"], {"seed": cfg.seed})
    _print({"snapshots": len(traj.snapshots), "bounds_hold": report.holds,
            "max_solver_residual": max(s.residual for s in traj.snapshots)})
    return EXIT_OK if report.holds else EXIT_NUMERICAL


def cmd_sweep(args) -> int:
    conf = load_config(args.config)
    if args.workers is not None:
        conf["study.workers"] = args.workers
    study = StudySpec.from_config(conf, output_dir=args.out)
    report = epsilon_sweep(study)
    _print({k: v.get("slope") for k, v in report.slopes.items()})
    return EXIT_OK


def cmd_metrics(args) -> int:
    mu, nu = read_point_cloud(args.a), read_point_cloud(args.b)
    p = math.inf if args.p.lower() in ("inf", "infinity") else float(args.p)
    if math.isinf(p):
        dist = wasserstein_inf(mu, nu)
    elif mu.dim == 1:
        dist = wasserstein_1d(mu, nu, p)
    else:
        dist = wasserstein_assignment(mu, nu, p)
    print(json.dumps({"p": "inf" if math.isinf(p) else p, "distance": dist}))
    return EXIT_OK


def cmd_verify_energy(args) -> int:
    conf, cfg = _setup(args)
    tol = args.tol if args.tol is not None else conf.get("verify.energy_tol", 1e-6)
    init, _ = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    traj = simulate(cfg, init)
    res = energy_balance_residual(traj)
    ok = bool(np.max(res) <= tol)
    _print({"max_residual": float(np.max(res)), "mean_residual": float(np.mean(res)), "steps": len(res),
            "bound": tol, "pass": ok})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_verify_coulomb_identity(args) -> int:
    conf, cfg = _setup(args)
    min_ratio = conf.get("verify.coulomb_identity_min_ratio", 1.8)
    if cfg.kernel.family != "coulomb_1d":
        raise ConfigError("verify-lemma51 needs kernel.family = coulomb_1d")
    init, x0 = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    maxima = []
    for dt in (cfg.dt, 0.5 * cfg.dt):
        c = cfg.with_(dt=dt, snapshot_every=1)
        res = coulomb_identity_residual(simulate(c, init, record_energy=False), simulate_limit(c, x0))
        maxima.append(float(np.max(res)))
    ratio = maxima[0] / maxima[1] if maxima[1] > 0 else math.inf
    ok = ratio >= min_ratio or max(maxima) <= 1e-14
    _print({"max_residual": maxima[0], "max_residual_half_dt": maxima[1], "ratio": ratio, "pass": ok})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_verify_flow(args) -> int:
    conf, cfg = _setup(args)
    p = args.p if args.p is not None else conf.get("verify.flow_p", 2.0)
    n_pairs = conf.get("verify.flow_pairs", 100)
    init, x0 = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    traj_limit = simulate_limit(cfg, x0)
    traj_eps = simulate(cfg, init, record_energy=False)
    field = VelocityField.from_trajectory(traj_limit, cfg)
    rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, cfg.N, (n_pairs, 2))
    pairs = np.stack([x0[idx[:, 0]], x0[idx[:, 1]] + rng.normal(0, 0.05, x0[idx[:, 1]].shape)], axis=1)
    lip = lipschitz_flow_check(field, pairs, cfg.t_final)
    stab = stability_inequality_check(traj_eps, None, field, p)
    report = stab.to_dict()
    report["max_ratio_lipschitz"] = max(lip.max_ratio, stab.max_ratio_lipschitz)
    report["lipschitz_bound"] = lip.bound
    report["pass"] = lip.holds and math.isfinite(stab.C_min_feasible)
    if args.out:
        out = _outdir(args.out)
        write_json(report, out / "flow_report.json")
        _write_manifest(out, ["flow_report.json"], {"seed": cfg.seed})
    _print(report)
    return EXIT_OK if report["pass"] else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eulalign", description="Damped alignment dynamics and their large-friction limit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, help_, out_required=False, epsilon=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="flat key = value configuration file")
        sp.add_argument("--out", required=out_required, help="output directory")
        if epsilon:
            sp.add_argument("--epsilon", type=float, help="override sim.epsilon")
        return sp

    with_config("simulate", "integrate the particle system", True).set_defaults(func=cmd_simulate)
    with_config("limit", "integrate the limit dynamics and check velocity bounds", True).set_defaults(func=cmd_limit)
    sp = with_config("sweep", "epsilon convergence study", True, epsilon=False)
    sp.add_argument("--workers", type=int, help="override study.workers")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("metrics", help="Wasserstein distance between two point clouds")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--p", default="2", help="order p >= 1 or 'inf'")
    sp.set_defaults(func=cmd_metrics)

    sp = with_config("verify-energy", "check the discrete energy identity")
    sp.add_argument("--tol", type=float, help="override verify.energy_tol")
    sp.set_defaults(func=cmd_verify_energy)
    with_config("verify-lemma51", "check the modulated Coulomb energy identity").set_defaults(func=cmd_verify_coulomb_identity)
    sp = with_config("verify-flow", "flow-map Lipschitz and stability checks")
    sp.add_argument("--p", type=float, help="override verify.flow_p")
    sp.set_defaults(func=cmd_verify_flow)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> None:
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
