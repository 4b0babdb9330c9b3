"""Seeded experiment sweeps: run the algorithms, verify every policy, write CSVs.

Each (seed, sweep point) pair is an independent task. Tasks run in a
process pool whose size comes from ``SWIPT_NUM_THREADS``; the parent
process is the only writer.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import baseline_colocated, baseline_full_cooperation, baseline_no_energy_share, colocated_scenario
from .conic import verify_policy
from .errors import (
    InstanceInfeasible, NumericalFailure, RecoveryFailed, RoundedPatternInfeasible, RoundingViolatesBackhaul,
    StructuralError,
)
from .gbd import RunTrace, run_gbd
from .model import Policy, Scenario, harvested_energy
from .sca import run_sca
from .scenario import SystemParams, TopologyConfig, apply_csi_error, generate_scenario
from .units import watt_to_dbm

__all__ = [
    "EXPERIMENTS", "ALGORITHMS", "RESULT_COLUMNS", "SUMMARY_COLUMNS", "ExperimentSpec", "PointResult",
    "run_point", "run_experiment", "summarize", "harvested_total",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("convergence", "power_vs_antennas", "power_vs_csi_error", "harvested_vs_antennas",
               "harvested_vs_csi_error")
ALGORITHMS = ("gbd", "sca", "full_coop", "full_coop_no_energy_share", "colocated")
RESULT_COLUMNS = ("seed", "algorithm", "sweep_param", "sweep_value", "objective_w", "objective_dbm",
                  "harvested_total_w", "iterations", "status")
SUMMARY_COLUMNS = ("algorithm", "sweep_param", "sweep_value", "n_seeds", "objective_w", "objective_dbm",
                   "harvested_total_w", "harvested_total_dbm")
OK_STATUSES = ("optimal", "converged", "max-iter", "repeated-pattern", "solved")

_SWEEP_PARAM = {
    "convergence": "none",
    "power_vs_antennas": "total_antennas",
    "harvested_vs_antennas": "total_antennas",
    "power_vs_csi_error": "sigma_est_sq",
    "harvested_vs_csi_error": "sigma_est_sq",
}


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    seeds: tuple[int, ...]
    algorithms: tuple[str, ...] = ("gbd", "sca")
    sweep_values: tuple[float, ...] | None = None
    output_dir: str = "results"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    params: SystemParams = field(default_factory=SystemParams)
    kappa: float = 1e-3
    phi: float | None = None
    max_iter: int | None = None
    solver_tol: float = 1e-6

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise StructuralError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.seeds:
            raise StructuralError("at least one seed is required")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad or not self.algorithms:
            raise StructuralError(f"unknown algorithms {sorted(bad)}; choose from {ALGORITHMS}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.sweep_values is None:
            object.__setattr__(self, "sweep_values", self.default_sweep())
        values = tuple(float(v) for v in self.sweep_values)
        if not values or any(v < 0 or not np.isfinite(v) for v in values):
            raise StructuralError("sweep values must be finite and nonnegative")
        if self.sweep_param == "total_antennas":
            for v in values:
                if v <= 0 or v % self.params.L:
                    raise StructuralError(f"total antenna count {v:g} is not a positive multiple of L={self.params.L}")
        object.__setattr__(self, "sweep_values", values)
        if self.kappa < 0 or (self.max_iter is not None and self.max_iter < 1):
            raise StructuralError("kappa must be >= 0 and max_iter >= 1")
        if self.phi is not None and self.phi <= 0:
            raise StructuralError("phi must be positive")

    @property
    def sweep_param(self) -> str:
        return _SWEEP_PARAM[self.experiment]

    def default_sweep(self) -> tuple[float, ...]:
        if self.sweep_param == "total_antennas":
            return tuple(float(self.params.L * nt) for nt in (2, 3))
        if self.sweep_param == "sigma_est_sq":
            return (0.0, 0.025, 0.05)
        return (0.0,)

    def scenario(self, seed: int, value: float) -> Scenario:
        """Instance for one seed and sweep point."""
        params = self.params
        if self.sweep_param == "total_antennas":
            params = replace(params, Nt=int(round(value)) // params.L)
        scen = generate_scenario(self.topology, params, seed)
        if self.sweep_param == "sigma_est_sq":
            scen = apply_csi_error(scen, value)
        return scen


@dataclass
class PointResult:
    seed: int
    algorithm: str
    sweep_param: str
    sweep_value: float
    objective_w: float
    harvested_total_w: float
    iterations: int
    status: str
    message: str = ""
    trace: RunTrace | None = None

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES

    def row(self) -> list[str]:
        dbm = watt_to_dbm(self.objective_w) if self.ok and self.objective_w > 0 else float("nan")
        return [str(self.seed), self.algorithm, self.sweep_param, repr(self.sweep_value), repr(float(self.objective_w)),
                repr(float(dbm)), repr(float(self.harvested_total_w)), str(self.iterations), self.status]


def harvested_total(policy: Policy, scen: Scenario) -> float:
    """Harvested power summed over the ERs at the estimated channels."""
    return float(sum(harvested_energy(policy, scen.g_hat[m], scen.mu) for m in range(scen.M)))


def _solve(spec: ExperimentSpec, algo: str, scen: Scenario):
    """Return (policy, scenario the policy lives in, status, iterations, check_backhaul, energy, trace)."""
    kw = {} if spec.max_iter is None else {"max_iter": spec.max_iter}
    if algo == "gbd":
        policy, _, tr = run_gbd(scen, kappa=spec.kappa, tol=spec.solver_tol, **kw)
        return policy, scen, tr.status, tr.iterations, True, None, tr
    if algo == "sca":
        policy, _, tr = run_sca(scen, phi=spec.phi, solver_tol=spec.solver_tol, **kw)
        return policy, scen, tr.status, tr.iterations, True, None, tr
    if algo == "full_coop":
        policy, _, _ = baseline_full_cooperation(scen, tol=spec.solver_tol)
        return policy, scen, "solved", 1, False, "pooled" if scen.energy_limited else "none", None
    if algo == "full_coop_no_energy_share":
        policy, _, _ = baseline_no_energy_share(scen, tol=spec.solver_tol)
        return policy, scen, "solved", 1, False, "per_rrh", None
    if algo == "colocated":
        policy, _, _ = baseline_colocated(scen, tol=spec.solver_tol)
        return policy, colocated_scenario(scen), "solved", 1, False, "none", None
    raise StructuralError(f"unknown algorithm {algo!r}")


_FAILURES = (
    (InstanceInfeasible, "infeasible"),
    (RoundingViolatesBackhaul, "rounding-violates-backhaul"),
    (RoundedPatternInfeasible, "rounded-pattern-infeasible"),
    (RecoveryFailed, "recovery-failed"),
    (NumericalFailure, "numerical-failure"),
)


def run_point(spec: ExperimentSpec, seed: int, value: float) -> list[PointResult]:
    """Run every requested algorithm on one instance and verify the returned policies."""
    scen = spec.scenario(seed, value)
    out = []
    for algo in spec.algorithms:
        base = dict(seed=seed, algorithm=algo, sweep_param=spec.sweep_param, sweep_value=value)
        try:
            policy, pscen, status, iters, backhaul, energy, tr = _solve(spec, algo, scen)
        except tuple(e for e, _ in _FAILURES) as exc:
            status = next(name for e, name in _FAILURES if isinstance(exc, e))
            log.info("seed %d %s=%g %s: %s", seed, spec.sweep_param, value, algo, exc)
            out.append(PointResult(**base, objective_w=np.nan, harvested_total_w=np.nan, iterations=0,
                                   status=status, message=str(exc)))
            continue
        report = verify_policy(policy, pscen, energy, tol=10 * spec.solver_tol, check_backhaul=backhaul)
        if not report.ok:
            msg = "; ".join(f"{n}{i}={v:.3g}" for n, i, v in report.violations()[:5])
            log.warning("seed %d %s failed verification: %s", seed, algo, msg)
            out.append(PointResult(**base, objective_w=np.nan, harvested_total_w=np.nan, iterations=iters,
                                   status="verification-failed", message=msg))
            continue
        out.append(PointResult(**base, objective_w=policy.total_power(),
                               harvested_total_w=harvested_total(policy, pscen), iterations=iters,
                               status=status, trace=tr))
    return out


def _task(args):
    spec, seed, value = args
    return run_point(spec, seed, value)


def num_workers(n_tasks: int) -> int:
    env = os.environ.get("SWIPT_NUM_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError as exc:
        raise StructuralError(f"SWIPT_NUM_THREADS must be an integer, got {env!r}") from exc
    if cap < 1:
        raise StructuralError("SWIPT_NUM_THREADS must be >= 1")
    return max(1, min(cap, n_tasks))


def summarize(results: list[PointResult]) -> list[dict]:
    """Seed averages per algorithm and sweep point over matched seeds.

    A seed counts for an algorithm only if that algorithm succeeded on it at
    every sweep point, so each curve averages the same instances.
    """
    rows = []
    for algo in dict.fromkeys(r.algorithm for r in results):
        mine = [r for r in results if r.algorithm == algo]
        values = sorted({r.sweep_value for r in mine})
        seeds = sorted({r.seed for r in mine})
        matched = [s for s in seeds if all(r.ok for r in mine if r.seed == s)]
        for v in values:
            pts = [r for r in mine if r.sweep_value == v and r.seed in matched]
            if pts:
                obj = float(np.mean([r.objective_w for r in pts]))
                har = float(np.mean([r.harvested_total_w for r in pts]))
            else:
                obj = har = float("nan")
            rows.append(dict(algorithm=algo, sweep_param=mine[0].sweep_param, sweep_value=v, n_seeds=len(pts),
                             objective_w=obj, objective_dbm=float(watt_to_dbm(obj)) if obj > 0 else float("nan"),
                             harvested_total_w=har,
                             harvested_total_dbm=float(watt_to_dbm(har)) if har > 0 else float("nan")))
    return rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_experiment(spec: ExperimentSpec, plots: bool = True) -> dict:
    """Run the sweep, write results.csv, summary.csv, traces, figures and manifest.json.

    Returns the manifest. Failed seeds are listed there; the run continues past them.
    """
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(spec, s, v) for v in spec.sweep_values for s in spec.seeds]
    workers = num_workers(len(tasks))
    if workers == 1:
        chunks = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_task, tasks))
    results = sorted((r for c in chunks for r in c),
                     key=lambda r: (r.sweep_value, r.seed, ALGORITHMS.index(r.algorithm)))

    files = ["results.csv", "summary.csv"]
    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, [r.row() for r in results])
    summary = summarize(results)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS,
               [[repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in SUMMARY_COLUMNS]
                for row in summary])
    traces = {}
    for r in results:
        if r.trace is not None and spec.experiment == "convergence":
            name = f"trace_{r.algorithm}_seed{r.seed}.csv"
            r.trace.write_csv(out_dir / name)
            files.append(name)
            traces[(r.algorithm, r.seed)] = r.trace
    if plots:
        from .plotting import plot_convergence, plot_summary
        if spec.experiment == "convergence":
            files += plot_convergence(traces, out_dir)
        else:
            files.append(plot_summary(summary, spec.experiment, out_dir))

    failures = [dict(seed=r.seed, algorithm=r.algorithm, sweep_value=r.sweep_value, status=r.status,
                     message=r.message) for r in results if not r.ok]
    manifest = dict(
        experiment=spec.experiment, sweep_param=spec.sweep_param, sweep_values=list(spec.sweep_values),
        seeds=list(spec.seeds), algorithms=list(spec.algorithms), kappa=spec.kappa, phi=spec.phi,
        max_iter=spec.max_iter, workers=workers, failures=failures, files=files + ["manifest.json"],
    )
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
