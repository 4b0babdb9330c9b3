"""Suboptimal selection by a difference-of-convex penalty and successive convex approximation.

The binary constraint on s is replaced by ``0 <= s <= 1`` together with the
concave penalty ``phi * sum(s - s^2)`` in the objective. Each iteration
replaces the penalty by its tangent upper model at the previous selection
(:func:`linearized_penalty`) and solves the resulting convex program, so the
penalized objective can only go down.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conic import (
    FALLBACK_CHAIN, PrimalOutcome, build_sca, linearized_penalty, rank_one_recovery, solve_fixed,
    solve_with_fallback,
)
from .errors import (
    InstanceInfeasible, NumericalFailure, RoundedPatternInfeasible, RoundingViolatesBackhaul, StructuralError,
)
from .gbd import IterationRecord, RunTrace, backhaul_ok, bitstring
from .model import BeamVectors, Policy, Scenario, block_power

__all__ = [
    "ScaState", "linearized_penalty", "sca_step", "run_sca", "round_selection", "default_phi", "exact_penalty",
]

log = logging.getLogger(__name__)


@dataclass
class ScaState:
    s_relaxed: np.ndarray
    penalty_phi: float
    iter: int = 0
    objective_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        s = np.asarray(self.s_relaxed, float)
        if np.any(s < 0) or np.any(s > 1):
            raise StructuralError("relaxed selection must lie in [0, 1]")
        if self.penalty_phi < 0:
            raise StructuralError("penalty factor must be nonnegative")
        self.s_relaxed = s

    def binary_gap(self) -> float:
        return float(np.max(np.abs(self.s_relaxed - np.round(self.s_relaxed)), initial=0.0))


def default_phi(scen: Scenario) -> float:
    """Ten times the largest per-RRH power limit."""
    P = scen.P_tx_max[np.isfinite(scen.P_tx_max)]
    if not P.size:
        raise StructuralError("the penalty scale needs at least one finite power limit")
    return 10.0 * float(P.max())


def exact_penalty(s, phi: float) -> float:
    s = np.asarray(s, float)
    return float(phi * np.sum(s - s ** 2))


def sca_step(scen: Scenario, s_anchor, phi: float, *, energy: str | None = None, tol: float = 1e-6,
             backends=FALLBACK_CHAIN) -> PrimalOutcome:
    """Solve the convex program with the penalty linearized at ``s_anchor``."""
    return solve_with_fallback(build_sca(scen, s_anchor, phi, energy), tol, backends)


def round_selection(s_relaxed, scen: Scenario, policy: Policy | None = None) -> tuple[np.ndarray, list, list]:
    """Threshold at 0.5, then repair backhaul overloads and unserved IRs.

    1. Overloaded RRHs switch off their weakest assignment until the cap
       holds: smallest block power in ``policy`` (smallest relaxed value
       without a policy), preferring IRs that another RRH still serves.
    2. An IR left without any RRH is assigned the RRH with the largest
       relaxed value that can make room, evicting only IRs served elsewhere.

    Returns the pattern and the (l, k) entries removed and added. Raises
    :class:`RoundingViolatesBackhaul` when either step cannot complete.
    """
    s_relaxed = np.asarray(s_relaxed, float)
    s = (s_relaxed >= 0.5).astype(int)
    if policy is not None:
        weight = np.array([[block_power(policy.W[k], scen, l) for k in range(scen.K)] for l in range(scen.L)])
    else:
        weight = s_relaxed
    cap = scen.C_backhaul_max * (1 + 1e-12) + 1e-12
    removed, added = [], []
    for l in range(scen.L):
        while s[l] @ scen.R_backhaul > cap[l]:
            on = np.flatnonzero(s[l])
            spare = on[s[:, on].sum(axis=0) > 1]
            pool = spare if spare.size else on
            k = int(pool[np.argmin(weight[l, pool])])
            s[l, k] = 0
            removed.append((l, k))
    R = scen.R_backhaul
    for k in np.flatnonzero(s.sum(axis=0) == 0):
        for l in np.argsort(-s_relaxed[:, k], kind="stable"):
            trial, evicted = s[l].copy(), []
            while trial @ R + R[k] > cap[l]:
                on = np.flatnonzero(trial)
                spare = on[(s[:, on].sum(axis=0) - s[l, on] + trial[on]) > 1]
                if not spare.size:
                    break
                j = int(spare[np.argmin(weight[l, spare])])
                trial[j] = 0
                evicted.append((int(l), j))
            if trial @ R + R[k] <= cap[l]:
                s[l] = trial
                s[l, k] = 1
                removed.extend(evicted)
                added.append((int(l), int(k)))
                break
        else:
            raise RoundingViolatesBackhaul(f"IR {k} lost every RRH and no backhaul link has room for it")
    if not backhaul_ok(s, scen):
        raise RoundingViolatesBackhaul(f"repaired pattern {bitstring(s)} still breaks a backhaul cap")
    return s, removed, added


def run_sca(scen: Scenario, phi: float | None = None, max_iter: int = 30, tol: float = 1e-4, *,
            energy: str | None = None, solver_tol: float = 1e-6,
            backends=FALLBACK_CHAIN) -> tuple[Policy, BeamVectors, RunTrace]:
    """Penalized successive convex approximation, rounding and a final fixed-selection solve.

    Iteration 0 solves the continuous relaxation (no penalty). Penalized
    iterations stop once the relative change of the penalized objective is at
    most ``tol`` or after ``max_iter`` of them. The trace records, per
    iteration, the penalized objective (``UB``), the transmit power part
    (``LB``) and the rounded pattern; ``trace.extra["binary_gap_history"]``
    holds max|s - round(s)| after iteration 0 and each penalized iteration.
    """
    phi = default_phi(scen) if phi is None else float(phi)
    if phi <= 0 or max_iter < 1 or tol < 0:
        raise StructuralError("phi must be positive, max_iter >= 1 and tol >= 0")
    L, K = scen.L, scen.K
    trace = RunTrace("sca")

    def step(anchor, weight):
        out = sca_step(scen, anchor, weight, energy=energy, tol=solver_tol, backends=backends)
        if out.status == "infeasible":
            raise InstanceInfeasible("the continuous relaxation of the selection is infeasible")
        if not out.optimal:
            raise NumericalFailure(f"SCA subproblem failed ({out.backend}: {out.solver_status})")
        return out

    out = step(np.zeros((L, K)), 0.0)
    state = ScaState(out.s_relaxed, phi)
    penalized = out.objective + exact_penalty(state.s_relaxed, phi)
    state.objective_history.append(penalized)
    gaps = [state.binary_gap()]
    trace.records.append(IterationRecord(0, np.round(state.s_relaxed).astype(int), out.status, penalized,
                                         penalized, out.objective))
    status = "max-iter"
    for it in range(1, max_iter + 1):
        out = step(state.s_relaxed, phi)
        state.s_relaxed = out.s_relaxed
        state.iter = it
        new = out.objective + exact_penalty(state.s_relaxed, phi)
        state.objective_history.append(new)
        gaps.append(state.binary_gap())
        trace.records.append(IterationRecord(it, np.round(state.s_relaxed).astype(int), out.status, new,
                                             new, out.objective))
        log.debug("sca it=%d penalized=%.8g gap=%.3g", it, new, state.binary_gap())
        if abs(penalized - new) <= tol * max(abs(penalized), 1e-12):
            status = "converged"
            break
        penalized = new

    s_bin, removed, added = round_selection(state.s_relaxed, scen, out.policy)
    if removed or added:
        log.info("rounding repair switched off %s and on %s", removed, added)
    final = solve_fixed(scen, s_bin, energy, solver_tol, backends)
    if final.status == "infeasible":
        raise RoundedPatternInfeasible(f"rounded pattern {bitstring(s_bin)} admits no feasible policy")
    if not final.optimal:
        raise NumericalFailure(f"final fixed-selection solve failed ({final.backend}: {final.solver_status})")
    policy, beams = rank_one_recovery(final, tol=solver_tol)
    trace.status = status
    trace.objective = policy.total_power()
    trace.extra.update(s=bitstring(s_bin), repair_removed=removed, repair_added=added, binary_gap=state.binary_gap(),
                       binary_gap_history=gaps,
                       penalized_history=list(state.objective_history), phi=phi,
                       s_relaxed=state.s_relaxed.copy())
    return policy, beams, trace
