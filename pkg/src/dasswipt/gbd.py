"""Generalized Benders decomposition over the RRH-to-IR selection pattern.

The primal side solves the relaxed fixed-selection problem (or its l1
feasibility variant when it is infeasible) and turns the duals of the
selection-coupling rows ``Tr(W_k R_l) <= s_{l,k} P_l`` into affine cuts in s.
The master is a small pure-binary program: minimize mu over all cuts and the
backhaul knapsacks, solved exactly by enumeration or by branch-and-bound on
LP relaxations.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .conic import (
    FALLBACK_CHAIN, L1_INFEASIBLE_TOL, PrimalOutcome, build_l1_feasibility, rank_one_recovery,
    solve_fixed, solve_with_fallback,
)
from .errors import InstanceInfeasible, NumericalFailure, StructuralError
from .model import BeamVectors, Policy, Scenario

log = logging.getLogger(__name__)

ENUMERATION_LIMIT = 16  # L*K at or below which the master enumerates every pattern
CUT_FEAS_TOL = 1e-7  # slack granted to feasibility cuts (Watts) against solver inexactness


@dataclass(frozen=True)
class Cut:
    """Affine cut in s: optimality ``mu >= constant + <coeff, s>``, feasibility ``0 >= constant + <coeff, s>``."""

    kind: str
    constant: float
    coeff: np.ndarray  # (L, K)
    origin_iter: int = 0

    def __post_init__(self):
        if self.kind not in ("optimality", "feasibility"):
            raise StructuralError(f"unknown cut kind {self.kind!r}")

    def evaluate(self, s) -> float:
        return float(self.constant + np.sum(self.coeff * np.asarray(s, float)))


def _coupling_prices(outcome: PrimalOutcome, scen: Scenario) -> np.ndarray:
    if outcome.duals is None:
        raise StructuralError("cut generation needs dual multipliers")
    P = np.where(np.isfinite(scen.P_tx_max), scen.P_tx_max, 0.0)
    return np.maximum(outcome.duals.beta, 0.0) * P[:, None]


def optimality_cut(outcome: PrimalOutcome, s_t, scen: Scenario, origin_iter: int = 0) -> Cut:
    """mu >= f(t) + sum beta_{l,k} P_l (s_t - s).

    Blocks switched off in s_t have no finite multiplier: the optimal power
    falls like the square root of any power leaked onto them. Their price is
    set to the smallest value that makes the cut vanish once any of them is
    switched on, which is valid because the objective is nonnegative.
    """
    if not outcome.optimal or outcome.program.kind != "primal":
        raise StructuralError("optimality cuts come from optimal primal solves")
    bp = _coupling_prices(outcome, scen)
    s_t = np.asarray(s_t, float)
    off = s_t < 0.5
    bp[off] = 0.0
    constant = outcome.objective + float(np.sum(bp * s_t))
    bp[off] = max(constant, 0.0)
    return Cut("optimality", constant, -bp, origin_iter)


def feasibility_cut(outcome: PrimalOutcome, s_t, scen: Scenario, origin_iter: int = 0) -> Cut:
    """0 >= sum alpha(t) + sum beta~_{l,k} P_l (s_t - s); violated by s_t itself."""
    if not outcome.optimal or outcome.program.kind != "l1":
        raise StructuralError("feasibility cuts come from optimal l1 solves")
    if outcome.l1_violation <= 0:
        raise StructuralError("zero violation: the pattern is feasible, generate an optimality cut instead")
    bp = _coupling_prices(outcome, scen)
    s_t = np.asarray(s_t, float)
    return Cut("feasibility", outcome.l1_violation + float(np.sum(bp * s_t)), -bp, origin_iter)


def backhaul_ok(s, scen: Scenario) -> bool:
    load = np.asarray(s, float) @ scen.R_backhaul
    cap = scen.C_backhaul_max
    return bool(np.all(load <= cap * (1 + 1e-12) + 1e-12))


# --- master -----------------------------------------------------------------

@dataclass
class MasterResult:
    s: np.ndarray
    mu: float
    nodes: int = 0


def _all_patterns(N: int) -> np.ndarray:
    # row i holds the bits of i, most significant first: ascending rows = lexicographic order
    idx = np.arange(2 ** N)[:, None]
    return ((idx >> np.arange(N - 1, -1, -1)) & 1).astype(float)


def _stack(cuts, kind, N):
    sel = [c for c in cuts if c.kind == kind]
    if not sel:
        return np.zeros((0, N)), np.zeros(0)
    return np.array([c.coeff.ravel() for c in sel]), np.array([c.constant for c in sel])


def _knapsack(scen: Scenario):
    L, K = scen.L, scen.K
    rows, rhs = [], []
    for l in range(L):
        if np.isfinite(scen.C_backhaul_max[l]):
            r = np.zeros((L, K))
            r[l] = scen.R_backhaul
            rows.append(r.ravel())
            rhs.append(scen.C_backhaul_max[l])
    N = L * K
    return (np.array(rows).reshape(-1, N), np.array(rhs))


def _tie_tol(mu: float) -> float:
    return 1e-12 * max(1.0, abs(mu)) if np.isfinite(mu) else 0.0


def master_enumerate(cuts, scen: Scenario) -> MasterResult | None:
    N = scen.L * scen.K
    S = _all_patterns(N)
    Ak, bk = _knapsack(scen)
    ok = np.all(S @ Ak.T <= bk * (1 + 1e-12) + 1e-12, axis=1) if len(bk) else np.ones(len(S), bool)
    Af, cf = _stack(cuts, "feasibility", N)
    if len(cf):
        ok &= np.all(S @ Af.T + cf <= CUT_FEAS_TOL, axis=1)
    if not ok.any():
        return None
    Ao, co = _stack(cuts, "optimality", N)
    mu = (S @ Ao.T + co).max(axis=1) if len(co) else np.full(len(S), -np.inf)
    mu = np.where(ok, mu, np.inf)
    best = mu.min()
    i = int(np.flatnonzero(mu <= best + _tie_tol(best))[0])
    return MasterResult(S[i].reshape(scen.L, scen.K).astype(int), float(best), nodes=len(S))


class _BranchAndBound:
    """Depth-first branch-and-bound on the LP relaxation (HiGHS via scipy)."""

    def __init__(self, cuts, scen: Scenario):
        N = self.N = scen.L * scen.K
        Ak, bk = _knapsack(scen)
        Af, cf = _stack(cuts, "feasibility", N)
        self.Ao, self.co = _stack(cuts, "optimality", N)
        self.has_mu = len(self.co) > 0
        # pure-s rows: knapsacks and feasibility cuts
        self.As = np.vstack([Ak, Af]).reshape(-1, N)
        self.bs = np.concatenate([bk * (1 + 1e-12) + 1e-12, CUT_FEAS_TOL - cf])
        # LP in [s, mu]
        rows = [np.hstack([self.As, np.zeros((len(self.bs), 1))])]
        rhs = [self.bs]
        if self.has_mu:
            rows.append(np.hstack([self.Ao, -np.ones((len(self.co), 1))]))
            rhs.append(-self.co)
        self.A = np.vstack(rows)
        self.b = np.concatenate(rhs)
        self.cost = np.zeros(N + 1)
        self.cost[N] = 1.0 if self.has_mu else 0.0
        self.nodes = 0

    def _lp(self, lo, hi):
        self.nodes += 1
        bounds = [(lo[j], hi[j]) for j in range(self.N)] + [(None, None) if self.has_mu else (0.0, 0.0)]
        kw = dict(A_ub=self.A, b_ub=self.b) if len(self.b) else {}
        res = linprog(self.cost, bounds=bounds, method="highs", **kw)
        if res.status == 2:
            return None
        if res.status != 0:
            raise NumericalFailure(f"master LP relaxation failed: {res.message}")
        return res

    def mu_of(self, s) -> float:
        return float(np.max(self.Ao @ s + self.co)) if self.has_mu else -np.inf

    def feasible(self, s) -> bool:
        return bool(np.all(self.As @ s <= self.bs)) if len(self.bs) else True

    def minimize(self, lo=None, hi=None) -> tuple[np.ndarray, float] | None:
        """Optimal (s, mu) with lo <= s <= hi, or None when no binary point fits."""
        lo = np.zeros(self.N) if lo is None else lo
        hi = np.ones(self.N) if hi is None else hi
        best: list = [None, np.inf]

        def recurse(lo, hi):
            if best[0] is not None and not self.has_mu:
                return  # pure feasibility: any point will do
            res = self._lp(lo, hi)
            if res is None:
                return
            bound = res.fun if self.has_mu else -np.inf
            if best[0] is not None and bound >= best[1] - _tie_tol(best[1]):
                return
            x = res.x[:self.N]
            frac = np.abs(x - np.round(x))
            if frac.max() <= 1e-9:
                s = np.round(x)
                if self.feasible(s):
                    mu = self.mu_of(s)
                    if best[0] is None or mu < best[1]:
                        best[0], best[1] = s, mu
                    return
            free = np.flatnonzero(lo != hi)
            if not free.size:
                return
            j = int(np.argmax(frac)) if frac.max() > 1e-9 else int(free[0])
            for v in (0.0, 1.0):
                lo2, hi2 = lo.copy(), hi.copy()
                lo2[j] = hi2[j] = v
                recurse(lo2, hi2)

        recurse(lo, hi)
        return None if best[0] is None else (best[0], best[1])

    def lexicographic(self, mu_star: float) -> np.ndarray:
        """Lexicographically smallest pattern whose mu is within tolerance of mu_star."""
        lo, hi = np.zeros(self.N), np.ones(self.N)
        cap = mu_star + _tie_tol(mu_star)
        for j in range(self.N):
            hi[j] = 0.0
            found = self.minimize(lo, hi)
            if found is not None and (not self.has_mu or found[1] <= cap):
                continue
            hi[j] = lo[j] = 1.0
        return lo.copy()


def master_branch_and_bound(cuts, scen: Scenario) -> MasterResult | None:
    bb = _BranchAndBound(cuts, scen)
    found = bb.minimize()
    if found is None:
        return None
    _, mu = found
    s = bb.lexicographic(mu)
    mu_s = bb.mu_of(s)
    return MasterResult(s.reshape(scen.L, scen.K).astype(int), float(mu_s), nodes=bb.nodes)


def solve_master(cuts, scen: Scenario, method: str = "auto") -> MasterResult | None:
    """Exact minimizer of mu over the cuts and backhaul caps; None if no pattern survives.

    Ties are broken towards the lexicographically smallest pattern (row-major
    over (l, k)). With no optimality cut yet, mu is reported as -inf.
    """
    if method not in ("auto", "enumerate", "bnb"):
        raise StructuralError(f"unknown master method {method!r}")
    if method == "enumerate" or (method == "auto" and scen.L * scen.K <= ENUMERATION_LIMIT):
        return master_enumerate(cuts, scen)
    return master_branch_and_bound(cuts, scen)


# --- driver -----------------------------------------------------------------

@dataclass
class IterationRecord:
    iter: int
    s: np.ndarray
    primal_status: str
    value: float  # objective (optimal) or l1 violation (infeasible)
    UB: float
    LB: float


@dataclass
class RunTrace:
    algorithm: str = "gbd"
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    cuts: list[Cut] = field(default_factory=list)
    objective: float = np.nan
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "UB", "LB", "status", "s"])
            for r in self.records:
                w.writerow([r.iter, _fmt(r.UB), _fmt(r.LB), r.primal_status, bitstring(r.s)])


def _fmt(x: float) -> str:
    return "inf" if x == np.inf else "-inf" if x == -np.inf else repr(float(x))


def bitstring(s) -> str:
    return "".join(str(int(v)) for v in np.asarray(s).ravel())


def run_gbd(
    scen: Scenario, kappa: float = 1e-3, max_iter: int = 100, *, absolute: bool = False,
    s0=None, init_seed: int | None = None, master: str = "auto", tol: float = 1e-6,
    backends=FALLBACK_CHAIN, energy: str | None = None,
) -> tuple[Policy, BeamVectors, RunTrace]:
    """Globally optimal selection and beamforming for the relaxed problem.

    ``kappa`` is the stopping gap, relative to the first finite upper bound
    unless ``absolute`` is set. The start pattern is all-ones unless ``s0`` is
    given or ``init_seed`` asks for a random one. Raises
    :class:`InstanceInfeasible` when no pattern is feasible; an exhausted
    iteration budget returns the best policy found with status ``max-iter``.
    """
    if kappa < 0 or max_iter < 1:
        raise StructuralError("kappa must be >= 0 and max_iter >= 1")
    L, K = scen.L, scen.K
    if s0 is not None:
        s = np.asarray(s0).astype(int)
    elif init_seed is not None:
        s = np.random.default_rng(init_seed).integers(0, 2, size=(L, K))
    else:
        s = np.ones((L, K), int)
    if s.shape != (L, K):
        raise StructuralError(f"initial pattern must be {(L, K)}")
    trace = RunTrace("gbd")
    UB, LB = np.inf, -np.inf
    best: tuple[PrimalOutcome, np.ndarray] | None = None
    visited_opt: set[str] = set()
    gap_tol = None if not absolute else kappa

    for it in range(1, max_iter + 1):
        out = solve_fixed(scen, s, energy, tol, backends)
        if out.status == "numerical-failure":
            raise NumericalFailure(f"primal solve failed at iteration {it} for s={bitstring(s)}")
        if out.optimal:
            trace.cuts.append(optimality_cut(out, s, scen, it))
            visited_opt.add(bitstring(s))
            value = out.objective
            if backhaul_ok(s, scen) and out.objective < UB:
                UB = out.objective
                best = (out, s.copy())
        else:
            l1 = solve_with_fallback(build_l1_feasibility(scen, s, energy), tol, backends)
            if l1.status == "infeasible":
                raise InstanceInfeasible("constraints not involving the selection admit no point")
            if not l1.optimal:
                raise NumericalFailure(f"l1 feasibility solve failed at iteration {it}")
            if l1.l1_violation <= L1_INFEASIBLE_TOL:
                # the two solves disagree; trust neither
                raise NumericalFailure(
                    f"primal reported infeasible but l1 violation is {l1.l1_violation:.3g} for s={bitstring(s)}")
            trace.cuts.append(feasibility_cut(l1, s, scen, it))
            value = l1.l1_violation
        if gap_tol is None and np.isfinite(UB):
            gap_tol = kappa * abs(UB)
        res = solve_master(trace.cuts, scen, master)
        if res is None:
            trace.records.append(IterationRecord(it, s.copy(), out.status, value, UB, LB))
            if best is None:
                trace.status = "infeasible"
                raise InstanceInfeasible("every selection pattern is excluded by backhaul caps or feasibility cuts")
            trace.status = "optimal"
            LB = UB
            break
        LB = max(LB, res.mu)
        trace.records.append(IterationRecord(it, s.copy(), out.status, value, UB, LB))
        log.debug("gbd it=%d s=%s status=%s UB=%.6g LB=%.6g", it, bitstring(s), out.status, UB, LB)
        if best is not None and UB - LB <= (gap_tol or 0.0):
            trace.status = "optimal"
            break
        if bitstring(res.s) in visited_opt:
            trace.status = "repeated-pattern"
            break
        s = res.s
    else:
        trace.status = "max-iter"

    if best is None:
        if trace.status == "max-iter":
            raise InstanceInfeasible("iteration budget exhausted before any feasible pattern was found")
        raise InstanceInfeasible("no feasible selection pattern")
    out, s_best = best
    policy, beams = rank_one_recovery(out, tol=tol)
    trace.objective = policy.total_power()
    trace.extra.update(UB=UB, LB=LB, s=bitstring(s_best))
    return policy, beams, trace


def enumerate_patterns(scen: Scenario, tol: float = 1e-6, energy: str | None = None, backends=FALLBACK_CHAIN):
    """Per-pattern relaxed optima for every selection (exponential; tiny instances only).

    Returns a dict mapping the bitstring to the objective (inf when primal
    infeasible) and a second dict with the outcomes.
    """
    L, K = scen.L, scen.K
    values, outcomes = {}, {}
    for bits in itertools.product((0, 1), repeat=L * K):
        s = np.array(bits, int).reshape(L, K)
        out = solve_fixed(scen, s, energy, tol, backends)
        if out.status == "numerical-failure":
            raise NumericalFailure(f"enumeration solve failed for s={bitstring(s)}")
        key = bitstring(s)
        values[key] = out.objective if out.optimal else np.inf
        outcomes[key] = out
    return values, outcomes


def enumeration_optimum(scen: Scenario, values: dict) -> tuple[float, str | None]:
    """Minimum over backhaul-feasible patterns of the per-pattern optimum."""
    best, arg = np.inf, None
    for key, v in values.items():
        s = np.array([int(c) for c in key]).reshape(scen.L, scen.K)
        if backhaul_ok(s, scen) and v < best:
            best, arg = v, key
    return best, arg
