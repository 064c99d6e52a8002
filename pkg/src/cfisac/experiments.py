"""Experiment runner wiring the library modules into named case studies.

Each experiment produces a ResultTable whose metadata records the fully
resolved configuration. Per-(sweep value, topology) tasks carry seeds derived
from (master seed, sweep index, topology index), and results are assembled in
task order, so output is byte-identical for any worker-thread count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, rng
from .beamforming import PrecoderSet, mrt_precoders, steering_vector
from .channel import hardening_stats, favorable_propagation_stats, sample_channels
from .link_performance import (
    UserChannelStats,
    ergodic_se_monte_carlo,
    evaluate_performance,
    leakage_se,
    uatf_se,
    user_channel_stats,
)
from .optimizer import (
    DesignProblem,
    InfeasibleProblemError,
    bearings_from_geometry,
    maximize_sum_se,
    maximize_sum_se_secure,
)
from .scenario import (
    ConfigError,
    SystemConfig,
    dbm_to_watts,
    noise_power_watts,
    parse_config,
    place_entities,
)
from .sensing_metrics import angle_grid, beampattern_profile
from .tables import ResultTable

EXPERIMENT_NAMES = (
    "hardening",
    "cf_vs_colocated",
    "perf_sweep",
    "opt_sweep",
    "beampattern_heatmap",
    "cf_colocated_se",
    "beampattern_compare",
    "secure_sweep",
    "secure_beampattern",
)

# experiments whose Monte-Carlo trial counts are meaningful
_MC_EXPERIMENTS = {"hardening", "cf_vs_colocated", "perf_sweep", "cf_colocated_se"}
_OPTIMIZER_EXPERIMENTS = {"opt_sweep", "secure_sweep"}

# per-AP target bearing sets of the resource-allocation heatmap study (degrees)
HEATMAP_ANGLES_DEG = (
    (-60.0, 20.0, 40.0),
    (25.0, -70.0, -10.0),
    (25.0, -45.0, 75.0),
    (-20.0, 30.0, 60.0),
)
# two-AP distributed vs one co-located array comparison sets (degrees)
COMPARE_CF_ANGLES_DEG = ((-60.0, 20.0, 40.0), (45.0, -50.0, -10.0))
COMPARE_COLOCATED_ANGLES_DEG = ((-50.0, 10.0, 40.0),)


@dataclass(frozen=True)
class ExperimentSpec:
    """A named experiment with its sweep, averaging, and output settings."""

    name: str
    base_config: SystemConfig
    sweep_parameter: str | None = None
    sweep_values: tuple = ()
    topologies: int = 20
    trials: int = 20_000
    seed: int = 0
    output_path: str | None = None
    threads: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise ConfigError(
                f"unknown experiment {self.name!r}; expected one of {EXPERIMENT_NAMES}"
            )
        if self.topologies < 1:
            raise ConfigError("topologies must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.name in _MC_EXPERIMENTS and self.trials < 100:
            raise ConfigError("trials must be >= 100 for Monte-Carlo experiments")
        if self.sweep_parameter is not None:
            if self.sweep_parameter not in SystemConfig.__dataclass_fields__:
                raise ConfigError(f"unknown sweep parameter {self.sweep_parameter!r}")
            if not self.sweep_values:
                raise ConfigError("sweep_values must be non-empty when sweeping")
            for v in self.sweep_values:
                self.config_at(v)  # validates each point

    def config_at(self, value) -> SystemConfig:
        if self.sweep_parameter is None:
            return self.base_config
        kwargs = {self.sweep_parameter: value}
        if self.sweep_parameter == "M" and self.base_config.N > 0:
            # performance studies sweep M and N together
            if self.options.get("lock_n_to_m", True):
                kwargs["N"] = value
        return replace(self.base_config, **kwargs)

    def metadata(self) -> dict:
        return {
            "experiment": self.name,
            "config": asdict(self.base_config),
            "sweep": {
                "parameter": self.sweep_parameter,
                "values": list(self.sweep_values),
            },
            "topologies": self.topologies,
            "trials": self.trials,
            "seed": self.seed,
            "options": self.options,
            "version": __version__,
        }


def load_spec(path: str | Path) -> ExperimentSpec:
    """Read an experiment spec file (JSON): config keys plus experiment fields."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: spec must be a JSON object")
    return spec_from_dict(data)


def spec_from_dict(data: dict) -> ExperimentSpec:
    data = dict(data)
    try:
        name = data.pop("experiment")
    except KeyError:
        raise ConfigError("spec is missing the 'experiment' field") from None
    config, rcs_overrides = parse_config(data.pop("config", {}))
    sweep = data.pop("sweep", None) or {}
    options = dict(data.pop("options", {}))
    if rcs_overrides is not None:
        options.setdefault("target_rcs_m2", rcs_overrides)
    spec = ExperimentSpec(
        name=name,
        base_config=config,
        sweep_parameter=sweep.get("parameter"),
        sweep_values=tuple(sweep.get("values", ())),
        topologies=int(data.pop("topologies", 20)),
        trials=int(data.pop("trials", 20_000)),
        seed=int(data.pop("seed", config.seed)),
        output_path=data.pop("out", None),
        threads=int(data.pop("threads", 1)),
        options=options,
    )
    if data:
        raise ConfigError(f"unknown spec fields: {sorted(data)}")
    return spec


def _ordered_map(fn, args_list, threads: int) -> list:
    """Apply fn over argument tuples, preserving order regardless of threads."""
    if threads <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda args: fn(*args), args_list))


def _geometry_for(spec: ExperimentSpec, config: SystemConfig, topo: int):
    cfg = replace(config, seed=rng.derive_seed(spec.seed, 101, topo))
    return place_entities(cfg, target_rcs_m2=spec.options.get("target_rcs_m2"))


# --- individual experiments -------------------------------------------------------


def _run_hardening(spec: ExperimentSpec) -> ResultTable:
    values = spec.sweep_values or (1, 10, 100)
    table = ResultTable(
        columns=[
            "L", "mean_cv", "var_cv", "var_cv_times_L",
            "fp_mean_abs2", "fp_mean_abs2_times_L", "trials",
        ],
        metadata=spec.metadata(),
    )
    for i, L in enumerate(values):
        L = int(L)
        seed = rng.derive_seed(spec.seed, 1, i)
        hs = hardening_stats(L, beta=1.0, trials=spec.trials, seed=seed)
        fp = favorable_propagation_stats(
            L, 1.0, 1.0, trials=spec.trials, seed=rng.derive_seed(spec.seed, 2, i)
        )
        table.append({
            "L": L,
            "mean_cv": hs.mean_cv,
            "var_cv": hs.var_cv,
            "var_cv_times_L": hs.var_cv * L,
            "fp_mean_abs2": fp.mean_abs2,
            "fp_mean_abs2_times_L": fp.mean_abs2 * L,
            "trials": spec.trials,
        })
    return table


def _perf_point(spec: ExperimentSpec, sweep_idx: int, value, topo: int):
    config = spec.config_at(value)
    geometry = _geometry_for(spec, config, topo)
    report = evaluate_performance(
        geometry,
        trials=spec.trials,
        seed=rng.derive_seed(spec.seed, 3, sweep_idx, topo),
    )
    return report


def _run_perf_sweep(spec: ExperimentSpec) -> ResultTable:
    values = spec.sweep_values or (spec.base_config.L,)
    tasks = [
        (spec, i, value, topo)
        for i, value in enumerate(values)
        for topo in range(spec.topologies)
    ]
    reports = _ordered_map(_perf_point, tasks, spec.threads)
    table = ResultTable(
        columns=["value", "M", "N", "K", "T", "L", "metric",
                 "closed", "mc", "stderr", "z_max"],
        metadata=spec.metadata(),
    )
    per_value = len(range(spec.topologies))
    for i, value in enumerate(values):
        config = spec.config_at(value)
        chunk = reports[i * per_value : (i + 1) * per_value]
        for metric, closed_key, mc_key, err_key in (
            ("comm_se", "comm_se_closed", "comm_se_mc", "comm_se_stderr"),
            ("sens_se", "sens_se_closed", "sens_se_mc", "sens_se_stderr"),
        ):
            closed = np.concatenate([np.ravel(getattr(r, closed_key)) for r in chunk])
            mc = np.concatenate([np.ravel(getattr(r, mc_key)) for r in chunk])
            err = np.concatenate([np.ravel(getattr(r, err_key)) for r in chunk])
            if closed.size == 0:
                continue
            z_max = float(np.max(np.abs(closed - mc) / np.maximum(err, 1e-300)))
            table.append({
                "value": value,
                "M": config.M, "N": config.N, "K": config.K,
                "T": config.T, "L": config.L,
                "metric": metric,
                "closed": float(np.mean(closed)),
                "mc": float(np.mean(mc)),
                "stderr": float(np.sqrt(np.sum(err**2)) / err.size),
                "z_max": z_max,
            })
    return table


def _design_problem(spec: ExperimentSpec, geometry, channels) -> DesignProblem:
    cfg = geometry.config
    gamma_dbm = float(spec.options.get("gamma_th_dbm", 10.0))
    delta = spec.options.get("delta_max_bps_hz")
    return DesignProblem(
        channels=channels,
        target_angles=bearings_from_geometry(geometry),
        gamma_th_watts=dbm_to_watts(gamma_dbm),
        p_max_watts=cfg.p_max_watts,
        sigma2_watts=noise_power_watts(cfg),
        delta_max_bps_hz=None if delta is None else float(delta),
    )


def _opt_point(spec: ExperimentSpec, sweep_idx: int, value, topo: int, secure: bool):
    config = spec.config_at(value)
    geometry = _geometry_for(spec, config, topo)
    channels = sample_channels(
        geometry, rng.derive_seed(spec.seed, 4, sweep_idx, topo)
    )
    problem = _design_problem(spec, geometry, channels)
    row = {
        "value": value, "topology": topo,
        "M": config.M, "L": config.L, "K": config.K, "T": config.T,
    }
    try:
        report = maximize_sum_se_secure(problem) if secure else maximize_sum_se(problem)
    except InfeasibleProblemError:
        row.update({
            "sum_se": "", "max_leak_se": "", "iterations": 0,
            "converged": 0, "feasible": 0,
        })
        return row
    leak = leakage_se(channels, report.precoders, problem.sigma2_watts)
    row.update({
        "sum_se": float(report.objective_trace[-1]),
        "max_leak_se": float(np.max(leak.per_target_max, initial=0.0)),
        "iterations": report.iterations,
        "converged": int(report.converged),
        "feasible": int(report.feasibility.ok(problem)),
    })
    return row


def _run_opt_sweep(spec: ExperimentSpec, secure: bool) -> ResultTable:
    values = spec.sweep_values or (spec.base_config.M,)
    tasks = [
        (spec, i, value, topo, secure)
        for i, value in enumerate(values)
        for topo in range(spec.topologies)
    ]
    rows = _ordered_map(_opt_point, tasks, spec.threads)
    table = ResultTable(
        columns=["value", "topology", "M", "L", "K", "T",
                 "sum_se", "max_leak_se", "iterations", "converged", "feasible"],
        metadata=spec.metadata(),
    )
    for row in rows:
        table.append(row)
    return table


def _steered_precoders(channels, angles_rad, p_max: float, sensing_fraction: float):
    """Sensing beams steered at given bearings plus conjugate user beams.

    Every AP spends sensing_fraction of its power on steering-aligned beams
    (equal split across targets) and the rest on conjugate user beams.
    """
    M, _, K, T, L = channels.shape
    s = np.zeros((M, T, L), dtype=complex)
    for m in range(M):
        for t in range(T):
            s[m, t] = math.sqrt(sensing_fraction * p_max / max(T, 1) / L) * steering_vector(
                L, angles_rad[m][t]
            )
    w = np.zeros((M, K, L), dtype=complex)
    if K:
        comm_power = (1.0 - sensing_fraction) * p_max
        for m in range(M):
            norm = float(np.sum(np.abs(channels.h[m]) ** 2))
            if norm > 0:
                w[m] = math.sqrt(comm_power / norm) * channels.h[m]
    return PrecoderSet(w=w, s=s)


def _profile_rows(table: ResultTable, system: str, precoders, grid, extra: dict):
    for ap in range(precoders.n_aps):
        prof = beampattern_profile(precoders, ap, grid)
        for row in prof.rows():
            record = {"system": system, **extra, **row}
            table.append(record)


def _run_beampattern_heatmap(spec: ExperimentSpec) -> ResultTable:
    angles_deg = spec.options.get("angles_deg", [list(a) for a in HEATMAP_ANGLES_DEG])
    cfg = replace(
        spec.base_config,
        M=len(angles_deg),
        T=len(angles_deg[0]),
    )
    geometry = _geometry_for(spec, cfg, 0)
    channels = sample_channels(geometry, rng.derive_seed(spec.seed, 5))
    angles_rad = [[math.radians(a) for a in row] for row in angles_deg]
    sensing_fraction = float(spec.options.get("sensing_fraction", 0.9))
    precoders = _steered_precoders(
        channels, angles_rad, cfg.p_max_watts, sensing_fraction
    )
    grid = angle_grid(float(spec.options.get("grid_step_deg", 1.0)))
    table = ResultTable(
        columns=["system", "ap", "angle_deg", "gain_linear", "gain_db"],
        metadata=spec.metadata(),
    )
    _profile_rows(table, "cf", precoders, grid, {})
    return table


def _run_beampattern_compare(spec: ExperimentSpec) -> ResultTable:
    grid = angle_grid(float(spec.options.get("grid_step_deg", 1.0)))
    table = ResultTable(
        columns=["system", "ap", "angle_deg", "gain_linear", "gain_db"],
        metadata=spec.metadata(),
    )
    p_max = spec.base_config.p_max_watts

    def steering_only(L, angle_sets):
        M, T = len(angle_sets), len(angle_sets[0])
        s = np.zeros((M, T, L), dtype=complex)
        for m in range(M):
            for t in range(T):
                s[m, t] = math.sqrt(p_max / T / L) * steering_vector(
                    L, math.radians(angle_sets[m][t])
                )
        return PrecoderSet(w=np.zeros((M, 0, L), dtype=complex), s=s)

    cf_angles = spec.options.get("cf_angles_deg", [list(a) for a in COMPARE_CF_ANGLES_DEG])
    co_angles = spec.options.get(
        "colocated_angles_deg", [list(a) for a in COMPARE_COLOCATED_ANGLES_DEG]
    )
    cf_L = int(spec.options.get("cf_antennas", 16))
    co_L = int(spec.options.get("colocated_antennas", 32))
    _profile_rows(table, "cf", steering_only(cf_L, cf_angles), grid, {})
    _profile_rows(table, "colocated", steering_only(co_L, co_angles), grid, {})
    return table


def _uatf_point(spec: ExperimentSpec, sweep_idx: int, arch: str, config, topo: int):
    geometry = _geometry_for(spec, config, topo)
    stats = user_channel_stats(geometry)
    seed = rng.derive_seed(spec.seed, 6, sweep_idx, topo)
    p_total = dbm_to_watts(config.p_max_dbm)
    sigma2 = noise_power_watts(config)
    bound = uatf_se(stats, sigma2, spec.trials, seed, p_total_watts=p_total)
    ergodic = ergodic_se_monte_carlo(stats, sigma2, spec.trials, seed, p_total_watts=p_total)
    return {
        "arch": arch,
        "M": config.M,
        "L": config.L,
        "topology": topo,
        "uatf_sum_se": float(np.sum(bound)),
        "uatf_per_user_se": float(np.mean(bound)) if bound.size else 0.0,
        "ergodic_sum_se": float(np.sum(ergodic)),
    }


def _run_cf_vs_colocated(spec: ExperimentSpec) -> ResultTable:
    # distributed single-antenna APs versus one co-located array, wide area
    base = replace(
        spec.base_config,
        area_side_m=float(spec.options.get("area_side_m", 1000.0)),
        N=0,
        T=0,
    )
    n_antennas = int(spec.options.get("total_antennas", 100))
    configs = [
        ("cf", replace(base, M=n_antennas, L=1)),
        ("colocated", replace(base, M=1, L=n_antennas)),
    ]
    tasks = [
        (spec, i, arch, cfg, topo)
        for i, (arch, cfg) in enumerate(configs)
        for topo in range(spec.topologies)
    ]
    rows = _ordered_map(_uatf_point, tasks, spec.threads)
    table = ResultTable(
        columns=["arch", "M", "L", "topology",
                 "uatf_sum_se", "uatf_per_user_se", "ergodic_sum_se"],
        metadata=spec.metadata(),
    )
    for row in rows:
        table.append(row)
    return table


def _run_cf_colocated_se(spec: ExperimentSpec) -> ResultTable:
    # fixed total antennas M * L, sweeping the number of APs
    total = int(spec.options.get("total_antennas", 64))
    values = spec.sweep_values or (1, 4, 16, 64)
    configs = []
    for M in values:
        M = int(M)
        if total % M:
            raise ConfigError(f"total antennas {total} not divisible by M={M}")
        arch = "colocated" if M == 1 else "cf"
        configs.append((arch, replace(spec.base_config, M=M, L=total // M, N=0, T=0)))
    tasks = [
        (spec, i, arch, cfg, topo)
        for i, (arch, cfg) in enumerate(configs)
        for topo in range(spec.topologies)
    ]
    rows = _ordered_map(_uatf_point, tasks, spec.threads)
    table = ResultTable(
        columns=["arch", "M", "L", "topology",
                 "uatf_sum_se", "uatf_per_user_se", "ergodic_sum_se"],
        metadata=spec.metadata(),
    )
    for row in rows:
        table.append(row)
    return table


def _run_secure_beampattern(spec: ExperimentSpec) -> ResultTable:
    angles_deg = spec.options.get("angles_deg", [list(a) for a in HEATMAP_ANGLES_DEG])
    cfg = replace(spec.base_config, M=len(angles_deg), T=len(angles_deg[0]))
    geometry = _geometry_for(spec, cfg, 0)
    channels = sample_channels(geometry, rng.derive_seed(spec.seed, 7))
    angles_rad = np.array([[math.radians(a) for a in row] for row in angles_deg])
    problem = DesignProblem(
        channels=channels,
        target_angles=angles_rad,
        gamma_th_watts=dbm_to_watts(float(spec.options.get("gamma_th_dbm", 10.0))),
        p_max_watts=cfg.p_max_watts,
        sigma2_watts=noise_power_watts(cfg),
        delta_max_bps_hz=float(spec.options.get("delta_max_bps_hz", 0.5)),
    )
    report = maximize_sum_se_secure(problem)
    grid = angle_grid(float(spec.options.get("grid_step_deg", 1.0)))
    table = ResultTable(
        columns=["system", "ap", "angle_deg", "gain_linear", "gain_db"],
        metadata=spec.metadata(),
    )
    _profile_rows(table, "cf_secure", report.precoders, grid, {})
    return table


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Execute a named experiment and return its result table."""
    if spec.name == "hardening":
        return _run_hardening(spec)
    if spec.name == "perf_sweep":
        return _run_perf_sweep(spec)
    if spec.name == "opt_sweep":
        return _run_opt_sweep(spec, secure=False)
    if spec.name == "secure_sweep":
        opts = dict(spec.options)
        opts.setdefault("delta_max_bps_hz", 0.5)
        return _run_opt_sweep(replace(spec, options=opts), secure=True)
    if spec.name == "beampattern_heatmap":
        return _run_beampattern_heatmap(spec)
    if spec.name == "beampattern_compare":
        return _run_beampattern_compare(spec)
    if spec.name == "cf_vs_colocated":
        return _run_cf_vs_colocated(spec)
    if spec.name == "cf_colocated_se":
        return _run_cf_colocated_se(spec)
    if spec.name == "secure_beampattern":
        return _run_secure_beampattern(spec)
    raise ConfigError(f"unknown experiment {spec.name!r}")  # pragma: no cover


def all_rows_infeasible(table: ResultTable) -> bool:
    """True when an optimizer experiment produced no feasible instance."""
    if "feasible" not in table.columns:
        return False
    flags = table.column("feasible")
    return bool(flags) and not any(flags)
