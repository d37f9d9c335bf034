"""Convergence studies in epsilon: configuration, well-prepared data, sweeps and rate fits."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import breakdown_series
from .errors import ConfigError, EulalignError
from .io import sha256_file, write_energy_csv, write_json, write_rates_svg, write_trajectory_csv
from .kernels import CommWeight, Domain, InteractionKernel
from .limit import LimitField, simulate_limit, solve_velocity
from .particles import ParticleState, SimConfig, Trajectory, simulate
from .transport import EmpiricalMeasure, cramer_energy_1d, cramer_energy_1d_linear, wasserstein_1d, \
    wasserstein_assignment

FUNCTIONALS = ("rel_kinetic_sup", "rel_kinetic_timeint", "wass_sup", "coulomb_energy_sup", "coulomb_energy_timeint")
DENSITIES = ("gaussian", "uniform", "two_cluster")

# ---------------------------------------------------------------- config file

_SCALAR_KEYS = {
    "sim.epsilon": float, "sim.gamma": float, "sim.N": int, "sim.t_final": float, "sim.dt": float,
    "sim.scheme": str, "sim.seed": int, "sim.snapshot_every": int,
    "domain.kind": str, "domain.dim": int, "domain.period": float,
    "kernel.family": str, "comm.family": str, "comm.K": float, "comm.beta": float,
    "init.density": str, "init.center": float, "init.spread": float, "init.separation": float,
    "study.epsilons": "floats", "study.p": float, "study.functionals": "strs", "study.workers": int,
    "study.coulomb_mode": str, "study.entropy": "bool",
    "verify.energy_tol": float, "verify.coulomb_identity_min_ratio": float, "verify.flow_p": float, "verify.flow_pairs": int,
}


def _convert(key: str, raw: str, kind):
    try:
        if kind == "floats":
            return [float(s) for s in raw.replace(",", " ").split()]
        if kind == "strs":
            return [s for s in raw.replace(",", " ").split()]
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw, 0)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config(text: str) -> dict:
    """Parse flat ``section.key = value`` lines; ``#`` starts a comment.

    Unknown keys and duplicates are errors. ``kernel.params.<name>`` entries are
    collected as floats and validated by the kernel itself.
    """
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        if key.startswith("kernel.params.") and len(key) > len("kernel.params."):
            out[key] = _convert(key, raw, float)
        elif key in _SCALAR_KEYS:
            out[key] = _convert(key, raw, _SCALAR_KEYS[key])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def build_sim_config(conf: dict, epsilon: float | None = None) -> SimConfig:
    params = {k[len("kernel.params."):]: v for k, v in conf.items() if k.startswith("kernel.params.")}
    domain = Domain(conf.get("domain.kind", "euclidean"), conf.get("domain.dim", 1), conf.get("domain.period"))
    kernel = InteractionKernel(conf.get("kernel.family", "gaussian"), params)
    comm = CommWeight(conf.get("comm.family", "cucker_smale"), conf.get("comm.K", 1.0), conf.get("comm.beta", 1.0))
    eps = epsilon if epsilon is not None else conf.get("sim.epsilon", 0.1)
    for key in ("sim.gamma", "sim.N"):
        if key not in conf:
            raise ConfigError(f"missing required key {key}")
    return SimConfig(eps, conf["sim.gamma"], conf["sim.N"], domain, kernel, comm, conf.get("sim.t_final", 1.0),
                     conf.get("sim.dt", 1e-3), conf.get("sim.scheme", "imex_exact_damping"), conf.get("sim.seed", 0),
                     conf.get("sim.snapshot_every"))


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class DensitySpec:
    kind: str = "two_cluster"
    center: float = 0.0
    spread: float = 0.25
    separation: float = 2.0

    def __post_init__(self):
        if self.kind not in DENSITIES:
            raise ConfigError(f"unknown density {self.kind!r}; choose from {DENSITIES}")
        if not self.spread > 0:
            raise ConfigError("density spread must be positive")

    @classmethod
    def from_config(cls, conf: dict) -> "DensitySpec":
        return cls(conf.get("init.density", "two_cluster"), conf.get("init.center", 0.0),
                   conf.get("init.spread", 0.25), conf.get("init.separation", 2.0))


def sample_positions(density: DensitySpec, N: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c = density.center
    if density.kind == "gaussian":
        return rng.normal(c, density.spread, (N, dim))
    if density.kind == "uniform":
        return rng.uniform(c - density.spread, c + density.spread, (N, dim))
    n_left = N // 2
    shift = np.zeros(dim)
    shift[0] = 0.5 * density.separation
    left = rng.normal(c, density.spread, (n_left, dim)) - shift
    right = rng.normal(c, density.spread, (N - n_left, dim)) + shift
    return np.concatenate([left, right])


def well_prepared_init(density: DensitySpec, N: int, seed: int, cfg: SimConfig):
    """Shared initial positions; eps-run velocities solve the limit velocity relation.

    Returns ``(ParticleState, positions)``; both runs then start with zero
    Wasserstein gap and zero relative kinetic energy.
    """
    if N != cfg.N:
        raise ConfigError(f"N = {N} does not match the configuration ({cfg.N})")
    x = cfg.domain.wrap(sample_positions(density, N, cfg.domain.dim, seed))
    v = solve_velocity(x, cfg).velocities
    return ParticleState(0.0, x.copy(), v), x.copy()


# ---------------------------------------------------------------- rate fitting


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    status: str = "fit"  # "fit" or "exact" (every value zero)
    n_points: int = 0


def fit_rate(points) -> RateFit:
    """Least-squares line through ``(log eps, log value)``, dropping exact zeros."""
    pts = [(float(e), float(v)) for e, v in points]
    if any(e <= 0 for e, _ in pts):
        raise ConfigError("epsilons must be positive")
    if any(v < 0 or not math.isfinite(v) for _, v in pts):
        raise ConfigError("values must be finite and non-negative")
    nz = [(e, v) for e, v in pts if v > 0]
    if not nz and pts:
        return RateFit(math.nan, math.nan, 0.0, "exact", 0)
    if len(nz) < 2:
        raise ConfigError("rate fit needs at least two nonzero values")
    le, lv = np.log([e for e, _ in nz]), np.log([v for _, v in nz])
    if np.ptp(le) == 0:
        raise ConfigError("rate fit needs at least two distinct epsilons")
    A = np.stack([le, np.ones_like(le)], axis=1)
    coef, *_ = np.linalg.lstsq(A, lv, rcond=None)
    res = float(np.sqrt(np.sum((A @ coef - lv) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), res, "fit", len(nz))


# ---------------------------------------------------------------- sweeps


@dataclass
class StudySpec:
    base: SimConfig
    epsilons: tuple
    p: float = 2.0
    functionals: tuple = ("rel_kinetic_sup", "rel_kinetic_timeint", "wass_sup")
    output_dir: str | None = None
    density: DensitySpec = field(default_factory=DensitySpec)
    workers: int = 1
    coulomb_mode: str = "linear"
    entropy: bool = True

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 3:
            raise ConfigError("a sweep needs at least three epsilons")
        if any(not 0 < e < 1 for e in eps):
            raise ConfigError("every epsilon must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilons must be strictly decreasing")
        self.epsilons = eps
        if not 1.0 <= self.p <= 2.0:
            raise ConfigError(f"p must lie in [1, 2], got {self.p!r}")
        unknown = set(self.functionals) - set(FUNCTIONALS)
        if unknown:
            raise ConfigError(f"unknown functionals {sorted(unknown)}")
        self.functionals = tuple(self.functionals)
        coulomb = [f for f in self.functionals if f.startswith("coulomb")]
        if coulomb and self.base.kernel.family != "coulomb_1d":
            raise ConfigError(f"{coulomb} need the coulomb_1d kernel")
        if self.coulomb_mode not in ("linear", "empirical"):
            raise ConfigError(f"unknown coulomb_mode {self.coulomb_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_config(cls, conf: dict, output_dir=None) -> "StudySpec":
        if "study.epsilons" not in conf:
            raise ConfigError("missing required key study.epsilons")
        base = build_sim_config(conf, epsilon=conf["study.epsilons"][0])
        default = ["rel_kinetic_sup", "rel_kinetic_timeint", "wass_sup"]
        if base.kernel.family == "coulomb_1d":
            default += ["coulomb_energy_sup", "coulomb_energy_timeint"]
        return cls(base, tuple(conf["study.epsilons"]), conf.get("study.p", 2.0),
                   tuple(conf.get("study.functionals", default)), output_dir, DensitySpec.from_config(conf),
                   conf.get("study.workers", 1), conf.get("study.coulomb_mode", "linear"),
                   conf.get("study.entropy", True))

    def describe(self) -> dict:
        d = asdict(self)
        d.pop("output_dir")
        d.pop("workers")  # does not change results
        return d


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RateReport:
    rows: list
    slopes: dict
    manifest: dict

    def rates_dict(self) -> dict:
        """Deterministic part of the report (no timestamps)."""
        return {"rows": self.rows, "slopes": self.slopes, "config_hash": self.manifest.get("config_hash"),
                "seed": self.manifest.get("seed"), "version": self.manifest.get("version"),
                "snapshot_cadence": self.manifest.get("snapshot_cadence")}

    def to_json(self) -> str:
        from .io import _json_safe

        return json.dumps(_json_safe(self.rates_dict()), indent=2, sort_keys=True)


def _distance(a: np.ndarray, b: np.ndarray, p: float, domain: Domain) -> float:
    mu, nu = EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b)
    if domain.dim == 1 and not domain.is_torus:
        return wasserstein_1d(mu, nu, p)
    return wasserstein_assignment(mu, nu, p, domain)


def _trapezoid(values, times) -> float:
    values, times = np.asarray(values), np.asarray(times)
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def evaluate_pair(traj_eps: Trajectory, traj_limit: Trajectory, cfg: SimConfig, p: float = 2.0,
                  coulomb_mode: str = "linear") -> dict:
    """Per-snapshot error series between an eps-run and the limit run."""
    times = traj_eps.times
    if len(times) != len(traj_limit.times) or not np.allclose(times, traj_limit.times, rtol=0, atol=1e-12):
        raise ConfigError("eps-run and limit run have different snapshot grids")
    coulomb = cfg.kernel.family == "coulomb_1d"
    series = {"t": times, "rel_kinetic": [], "wass_p2": [], "position_error": []}
    if coulomb:
        series["coulomb_energy"] = []
        series["coulomb_energy_atomic"] = []
        series["rel_kinetic_atomic"] = []
    for a, b in zip(traj_eps.snapshots, traj_limit.snapshots):
        mode = coulomb_mode if coulomb else "empirical"
        u = LimitField(b.positions, b.velocities, cfg, mode)
        w = a.velocities - u(a.positions)
        series["rel_kinetic"].append(float(np.mean(np.sum(w * w, axis=1))))
        series["wass_p2"].append(_distance(a.positions, b.positions, p, cfg.domain) ** 2)
        gap = cfg.domain.displacement(a.positions, b.positions)
        series["position_error"].append(float(np.max(np.linalg.norm(gap, axis=1))))
        if coulomb:
            mu, nu = EmpiricalMeasure.uniform(a.positions), EmpiricalMeasure.uniform(b.positions)
            atomic = cramer_energy_1d(mu, nu)
            series["coulomb_energy_atomic"].append(atomic)
            series["coulomb_energy"].append(cramer_energy_1d_linear(mu, nu) if coulomb_mode == "linear" else atomic)
            u_atomic = LimitField(b.positions, b.velocities, cfg, "empirical")
            wa = a.velocities - u_atomic(a.positions)
            series["rel_kinetic_atomic"].append(float(np.mean(np.sum(wa * wa, axis=1))))
    return {k: np.asarray(v, dtype=float) for k, v in series.items()}


def summarize(series: dict) -> dict:
    """Sup-in-time and time-integrated functionals of one run pair."""
    t = series["t"]
    rk, w2 = series["rel_kinetic"], series["wass_p2"]
    row = {
        "rel_kinetic_sup": float(np.max(rk)),
        "rel_kinetic_timeint": _trapezoid(rk, t),
        "wass_sup": float(np.max(w2)),
        "combined_sup": float(np.max(rk + w2)),
        "combined_timeint": _trapezoid(rk, t) + float(np.max(w2)),
        "position_error_sup": float(np.max(series["position_error"])),
    }
    if "coulomb_energy" in series:
        ce = series["coulomb_energy"]
        row.update({
            "coulomb_energy_sup": float(np.max(ce)),
            "coulomb_energy_timeint": _trapezoid(ce, t),
            "coulomb_combined_timeint": _trapezoid(rk, t) + float(np.max(ce)),
            "coulomb_energy_atomic_sup": float(np.max(series["coulomb_energy_atomic"])),
            "rel_kinetic_atomic_sup": float(np.max(series["rel_kinetic_atomic"])),
        })
    return row


def _run_epsilon(base: SimConfig, eps: float, init: ParticleState, traj_limit: Trajectory, p: float,
                 coulomb_mode: str, entropy: bool):
    cfg = base.with_(epsilon=eps)
    traj = simulate(cfg, init)
    series = evaluate_pair(traj, traj_limit, cfg, p, coulomb_mode)
    breakdown = None
    if entropy:
        mode = coulomb_mode if cfg.kernel.family == "coulomb_1d" else "empirical"
        breakdown = [b.to_dict() for b in breakdown_series(traj, traj_limit, cfg, coulomb_mode=mode)]
    return traj, series, breakdown


def _eps_tag(eps: float) -> str:
    return repr(float(eps))


def epsilon_sweep(study: StudySpec) -> RateReport:
    """Run the eps-runs and the (eps-independent) limit run; fit log-log slopes."""
    base = study.base
    init, x0 = well_prepared_init(study.density, base.N, base.seed, base)
    traj_limit = simulate_limit(base, x0)
    out = Path(study.output_dir) if study.output_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    desc = study.describe()
    manifest = {
        "config_hash": config_hash(desc), "seed": base.seed, "version": __version__,
        "snapshot_cadence": {"steps": base.cadence, "dt": base.step_size},
        "started": datetime.now(timezone.utc).isoformat(), "python": platform.python_version(),
        "numpy": np.__version__, "study": desc, "files": {},
    }
    rows: list = []
    files: list = []

    def persist(error: str | None = None):
        report = RateReport(rows, _slopes(rows, study) if len(rows) >= 2 else {}, manifest)
        if out is None:
            return report
        rates = report.rates_dict()
        if error:
            rates["error"] = error
        names = [n for n in ("rates.json", "rates.svg") if n not in files]
        write_json(rates, out / "rates.json")
        if len(rows) >= 2:
            write_rates_svg(rows, ["combined_sup", "combined_timeint"] + list(study.functionals), out / "rates.svg")
        manifest["finished"] = datetime.now(timezone.utc).isoformat()
        manifest["files"] = {n: sha256_file(out / n) for n in files + names if (out / n).exists()}
        write_json(manifest, out / "manifest.json")
        return report

    def record(eps, result):
        traj, series, breakdown = result
        row = {"epsilon": eps}
        row.update(summarize(series))
        rows.append(row)
        if out:
            tag = _eps_tag(eps)
            write_trajectory_csv(traj, out / f"traj_eps_{tag}.csv")
            write_energy_csv(traj.energy_ledger, out / f"energy_{tag}.csv")
            files.extend([f"traj_eps_{tag}.csv", f"energy_{tag}.csv"])
            if breakdown is not None:
                write_json(breakdown, out / f"entropy_{tag}.json")
                files.append(f"entropy_{tag}.json")

    args = [(base, eps, init, traj_limit, study.p, study.coulomb_mode, study.entropy) for eps in study.epsilons]
    try:
        if study.workers > 1:
            with ProcessPoolExecutor(max_workers=study.workers) as pool:
                futures = [pool.submit(_run_epsilon, *a) for a in args]
                for eps, fut in zip(study.epsilons, futures):
                    record(eps, fut.result())
        else:
            for a in args:
                record(a[1], _run_epsilon(*a))
    except EulalignError as exc:
        persist(error=f"{type(exc).__name__}: {exc}")
        raise
    return persist()


def _slopes(rows: list, study: StudySpec) -> dict:
    names = ["combined_sup", "combined_timeint", "position_error_sup"] + list(study.functionals)
    if study.base.kernel.family == "coulomb_1d":
        names += ["coulomb_combined_timeint", "coulomb_energy_atomic_sup", "rel_kinetic_atomic_sup"]
    slopes = {}
    for name in dict.fromkeys(names):
        try:
            slopes[name] = asdict(fit_rate([(r["epsilon"], r[name]) for r in rows]))
        except ConfigError as exc:
            slopes[name] = {"slope": None, "status": f"unfit: {exc}"}
    return slopes


def tikhonov_position_error(cfg: SimConfig, density: DensitySpec, epsilons) -> list:
    """``max_{i, t} |x_i^eps(t) - x_i(t)|`` for each epsilon from shared well-prepared data."""
    init, x0 = well_prepared_init(density, cfg.N, cfg.seed, cfg)
    traj_limit = simulate_limit(cfg, x0)
    out = []
    for eps in epsilons:
        traj = simulate(cfg.with_(epsilon=eps), init, record_energy=False)
        err = max(float(np.max(np.linalg.norm(cfg.domain.displacement(a.positions, b.positions), axis=1)))
                  for a, b in zip(traj.snapshots, traj_limit.snapshots))
        out.append((float(eps), err))
    return out
