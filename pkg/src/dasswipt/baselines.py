"""Reference schemes: full cooperation, no energy sharing, and a co-located antenna array.

All three fix the selection to all-ones and ignore the backhaul caps, so a
single relaxed solve plus rank-one recovery is enough.
"""
from __future__ import annotations

import numpy as np

from .conic import FALLBACK_CHAIN, rank_one_recovery, solve_fixed
from .errors import InstanceInfeasible, NumericalFailure, StructuralError
from .model import BeamVectors, Policy, Scenario

__all__ = ["baseline_full_cooperation", "baseline_no_energy_share", "baseline_colocated", "colocated_scenario"]


def _solve_all_ones(scen: Scenario, energy: str, tol: float, backends) -> tuple[Policy, BeamVectors, float]:
    out = solve_fixed(scen, np.ones((scen.L, scen.K), int), energy, tol, backends)
    if out.status == "infeasible":
        raise InstanceInfeasible(f"baseline with energy model {energy!r} is infeasible")
    if not out.optimal:
        raise NumericalFailure(f"baseline solve failed ({out.backend}: {out.solver_status})")
    policy, beams = rank_one_recovery(out, tol=tol)
    return policy, beams, policy.total_power()


def baseline_full_cooperation(scen: Scenario, tol: float = 1e-6, backends=FALLBACK_CHAIN):
    """Every RRH serves every IR and the micro-grid pools energy; backhaul caps are ignored."""
    energy = "pooled" if scen.energy_limited else "none"
    return _solve_all_ones(scen, energy, tol, backends)


def baseline_no_energy_share(scen: Scenario, tol: float = 1e-6, backends=FALLBACK_CHAIN):
    """Full cooperation, but each RRH must run on its own harvest: P_c_l + rho * tx_l <= E_max[l]."""
    if not np.all(np.isfinite(scen.E_max[:scen.L])):
        raise StructuralError("per-RRH energy budgets need finite supplies")
    return _solve_all_ones(scen, "per_rrh", tol, backends)


def colocated_scenario(scen: Scenario) -> Scenario:
    """One array of Nt*L antennas at the RRH centroid, unlimited power and energy, no backhaul.

    Channels reuse the small-scale fading of ``scen`` with the large-scale gain
    recomputed from the centroid; the ER uncertainty radii keep their
    normalized size.
    """
    geo = scen.geometry
    if geo is None:
        raise StructuralError("the co-located baseline needs the scenario geometry")
    center = geo.rrh_pos.mean(axis=0)

    def gain(pos):
        d = max(float(np.linalg.norm(pos - center)), geo.min_distance)
        return np.sqrt(geo.path_gain_ref * d ** (-geo.path_loss_exponent))

    h = np.array([gain(geo.ir_pos[k]) * geo.ir_fading[k] for k in range(scen.K)]).reshape(scen.K, scen.n)
    g = np.array([gain(geo.er_pos[m]) * geo.er_fading[m] for m in range(scen.M)]).reshape(scen.M, scen.n)
    norm_old = np.sum(np.abs(scen.g_hat) ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(norm_old > 0, scen.eps ** 2 / norm_old, 0.0)
    eps = np.sqrt(ratio * np.sum(np.abs(g) ** 2, axis=1))
    return Scenario(
        L=1, K=scen.K, M=scen.M, Nt=scen.n, h=h, g_hat=g,
        Xi=np.broadcast_to(np.eye(scen.n), (scen.M, scen.n, scen.n)), eps=eps,
        gamma_req=scen.gamma_req, gamma_tol=scen.gamma_tol,
        sigma_ir_sq=scen.sigma_ir_sq, sigma_er_sq=scen.sigma_er_sq, sigma_s_sq=scen.sigma_s_sq,
        C_backhaul_max=np.array([np.inf]), P_tx_max=np.array([np.inf]), P_min_er=scen.P_min_er,
        E_max=np.array([np.inf, np.inf]), B=np.eye(2) * float(np.max(np.diag(scen.B))),
        P_c_cp=scen.P_c_cp, P_c_rrh=np.array([scen.P_c_rrh[0]]), rho=scen.rho, mu=scen.mu,
        R_backhaul=scen.R_backhaul, geometry=None, meta={**scen.meta, "baseline": "colocated"},
    )


def baseline_colocated(scen: Scenario, tol: float = 1e-6, backends=FALLBACK_CHAIN):
    """Relaxed solve on :func:`colocated_scenario`; returns the policy of that scenario."""
    return _solve_all_ones(colocated_scenario(scen), "none", tol, backends)
