"""Semidefinite relaxation of the fixed-selection problem, its l1 feasibility variant, and rank-one recovery.

Complex Hermitian blocks are carried through the real embedding of
:mod:`dasswipt.embedding` and handed to a conic solver via cvxpy (Clarabel by
default, CVXOPT or SCS as independent second opinions). Channels are divided
by the square root of the ER noise power before modeling so that the SINR
rows are O(1); duals are mapped back to physical units on extraction.

Compiled cvxpy problems are cached per scenario object with the selection
pattern (or SCA anchor) as a parameter, so repeated solves inside GBD/SCA
only pay for the numerical solve.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import IO

import cvxpy as cp
import numpy as np

from .embedding import dual_to_complex, skew_basis, trace_inner
from .errors import NumericalFailure, RecoveryFailed, StructuralError
from .model import (
    BeamVectors, ConstraintReport, Policy, Scenario, block_power, check_deterministic_constraints,
)
from .robust import build_c2_lmi, build_c7_lmi, verify_policy_robust

DEFAULT_BACKEND = "CLARABEL"
SECOND_BACKEND = "CVXOPT"
L1_INFEASIBLE_TOL = 1e-6
DEFAULT_RANK_TOL = 1e-6
# relative tightening of every modeled inequality, so that solutions returned at
# the backend's reduced accuracy still satisfy the exact constraints
FEAS_MARGIN = 1e-6

_SOLVER_OPTS = {
    "CLARABEL": dict(tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8, max_iter=300),
    "CVXOPT": dict(kktsolver="robust", max_iters=300),
    "SCS": dict(eps_abs=1e-9, eps_rel=1e-9, max_iters=20_000),
}

KINDS = ("primal", "l1", "sca")
ENERGY_MODES = ("pooled", "per_rrh", "none")


@dataclass
class DualCertificate:
    """Lagrange multipliers in physical units.

    Each constraint is written as ``g(x) >= 0`` (or ``S(x) >= 0`` for LMIs)
    and enters the Lagrangian as ``- multiplier * g(x)``.
    """

    alpha: np.ndarray  # (K,) IR SINR
    D_c2: np.ndarray  # (M, K, n+1, n+1) ER SINR LMIs
    D_c7: np.ndarray  # (M, n+1, n+1) harvested-power LMIs
    varrho: np.ndarray  # (1,) pooled energy balance, or (L,) per-RRH budgets
    tau: np.ndarray  # (L+1,) supply caps (0 where uncapped)
    chi: np.ndarray  # (L+1,) supply nonnegativity
    gamma: np.ndarray  # (L,) per-RRH power limits (0 where unlimited)
    beta: np.ndarray  # (L, K) selection coupling Tr(W_k R_l) <= s P
    Z: np.ndarray  # (K, n, n) PSD duals of W_k
    Y: np.ndarray  # (n, n) PSD dual of V
    lam: np.ndarray  # (M, K) delta >= 0
    theta: np.ndarray  # (M,) nu >= 0
    xi: np.ndarray | None = None  # (L, K) alpha >= 0 in the l1 program
    s_lower: np.ndarray | None = None  # (L, K) s >= 0 in the SCA program
    s_upper: np.ndarray | None = None  # (L, K) s <= 1
    backhaul: np.ndarray | None = None  # (L,) backhaul rows in the SCA program
    support: np.ndarray | None = None  # (L, K) blocks of W_k present in the program; beta is 0 elsewhere

    def min_scalar(self) -> float:
        parts = [self.alpha, self.varrho, self.tau, self.chi, self.gamma, self.beta, self.lam, self.theta]
        return float(min((np.min(p) for p in parts if np.size(p)), default=0.0))


@dataclass
class PrimalOutcome:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    program: "ConicProgram"
    policy: Policy | None = None
    duals: DualCertificate | None = None
    objective: float = np.nan  # sum Tr(W_k) + Tr(V) in Watts, or sum alpha for l1 programs
    l1_violation: float = 0.0
    penalized_objective: float = np.nan  # SCA programs only
    delta: np.ndarray | None = None  # (M, K)
    nu: np.ndarray | None = None  # (M,)
    slack: np.ndarray | None = None  # (L, K) alpha of the l1 program
    s_relaxed: np.ndarray | None = None  # (L, K) SCA selection
    backend: str = DEFAULT_BACKEND
    solver_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# --- model construction -----------------------------------------------------

_CACHE: "weakref.WeakKeyDictionary[Scenario, dict]" = weakref.WeakKeyDictionary()


def _default_energy(scen: Scenario) -> str:
    return "pooled" if scen.energy_limited else "none"


class _Model:
    """cvxpy problem for one (scenario, kind, energy mode).

    The l1 program takes the selection as a parameter. The primal program is
    built per selection pattern: antenna blocks of W_k belonging to RRHs that
    do not serve IR k are removed from the variable instead of being pinned to
    zero by a coupling row, which keeps the program strictly feasible.
    """

    def __init__(self, scen: Scenario, kind: str, energy: str, support: np.ndarray | None = None):
        self.scen, self.kind, self.energy = scen, kind, energy
        L, K, M, n = scen.L, scen.K, scen.M, scen.n
        ref = scen.sigma_s_sq
        self.ref = ref
        h = scen.h / np.sqrt(ref)
        g = scen.g_hat / np.sqrt(ref)
        eps = scen.eps / np.sqrt(ref)
        self.support = np.ones((L, K), int) if support is None else np.asarray(support, int)
        self.active = [np.flatnonzero(np.repeat(self.support[:, k], scen.Nt)) for k in range(K)]

        def herm_var(name, idx=None):
            m = n if idx is None else idx.size
            T = skew_basis(m)
            A = cp.Variable((m, m), symmetric=True, name=f"{name}_re")
            if m > 1:
                B = cp.reshape(T @ cp.Variable(T.shape[1], name=f"{name}_im"), (m, m), order="F")
            else:
                B = cp.Constant(np.zeros((1, 1)))
            if m == n:
                return A, B, A, B
            P = np.eye(n)[:, idx]
            return A, B, P @ A @ P.T, P @ B @ P.T

        cons: dict[str, list] = {}

        def psd(A, B):
            E = cp.bmat([[A, -B], [B, A]])
            return 0.5 * (E + E.T) >> 0

        self.WA, self.WB, cons["Z"] = [], [], []
        for k in range(K):
            a, b, A, B = herm_var(f"W{k}", self.active[k])
            self.WA.append(A)
            self.WB.append(B)
            cons["Z"].append(psd(a, b))
        self.VA, self.VB, _, _ = herm_var("V")
        cons["Y"] = [psd(self.VA, self.VB)]

        H = [np.outer(h[k], h[k].conj()) for k in range(K)]
        self.H = H
        rx = [[trace_inner(H[k], self.WA[j], self.WB[j]) for j in range(K)] for k in range(K)]
        rxV = [trace_inner(H[k], self.VA, self.VB) for k in range(K)]
        sig_ir = scen.sigma_ir_sq / ref
        cons["C1"] = [
            rx[k][k] / scen.gamma_req[k]
            - sum(rx[k][j] for j in range(K) if j != k) - rxV[k] - sig_ir[k] * (1 + FEAS_MARGIN) >= 0
            for k in range(K)
        ]

        self.delta = cp.Variable((M, K), name="delta") if M and K else None
        self.nu = cp.Variable(M, name="nu") if M else None
        cons["C2"], cons["C7"] = [], []
        # with a zero radius the S-procedure multiplier is unidentified and only
        # the nominal constraint (the LMI corner at multiplier 0) remains
        self.nominal = np.asarray(scen.eps) == 0
        sig_s = scen.sigma_s_sq / ref * (1 - FEAS_MARGIN)
        WsumA = sum(self.WA) if K else 0
        WsumB = sum(self.WB) if K else 0
        for m in range(M):
            p, q = g[m].real, g[m].imag
            G = np.outer(g[m], g[m].conj())
            Xi = scen.Xi[m]
            for k in range(K):
                A = self.VA - self.WA[k] / scen.gamma_tol
                B = self.VB - self.WB[k] / scen.gamma_tol
                if self.nominal[m]:
                    cons["C2"].append(trace_inner(G, A, B) + sig_s >= 0)
                    continue
                corner = trace_inner(G, A, B) - self.delta[m, k] * eps[m] ** 2 + sig_s
                cons["C2"].append(_lmi(A, B, p, q, corner, self.delta[m, k], Xi))
            A = self.VA + WsumA
            B = self.VB + WsumB
            need = scen.P_min_er[m] / scen.mu / ref * (1 + FEAS_MARGIN)
            if self.nominal[m]:
                cons["C7"].append(trace_inner(G, A, B) - need >= 0)
                continue
            corner = trace_inner(G, A, B) - self.nu[m] * eps[m] ** 2 - need
            cons["C7"].append(_lmi(A, B, p, q, corner, self.nu[m], Xi))
        cons["C14d"] = [self.delta >= 0] if self.delta is not None else []
        cons["C14n"] = [self.nu >= 0] if self.nu is not None else []

        # per-RRH transmit power and per-(l, k) block powers
        bp = [[cp.trace(self.WA[k][scen.block(l), scen.block(l)]) for k in range(K)] for l in range(L)]
        txV = [cp.trace(self.VA[scen.block(l), scen.block(l)]) for l in range(L)]
        tx = [sum(bp[l]) + txV[l] for l in range(L)]
        self.bp = bp
        finiteP = np.isfinite(scen.P_tx_max)
        self.c6_rows = np.flatnonzero(finiteP)
        cons["C6"] = [tx[l] <= scen.P_tx_max[l] * (1 - FEAS_MARGIN) for l in self.c6_rows]

        self.e = None
        cons["C4"], cons["C5"], cons["C8"] = [], [], []
        if energy == "pooled":
            self.e = cp.Variable(L + 1, name="e_s")
            demand = scen.P_c_cp + float(np.sum(scen.P_c_rrh)) + scen.rho * sum(tx)
            cons["C4"] = [cp.sum(self.e) - cp.quad_form(self.e, cp.psd_wrap(scen.B)) - demand * (1 + FEAS_MARGIN) >= 0]
            self.c5_rows = np.flatnonzero(np.isfinite(scen.E_max))
            if self.c5_rows.size:
                cons["C5"] = [self.e[self.c5_rows] <= scen.E_max[self.c5_rows] * (1 - FEAS_MARGIN)]
            cons["C8"] = [self.e >= 0]
        elif energy == "per_rrh":
            self.c5_rows = np.array([], int)
            cons["C4"] = [scen.E_max[l] * (1 - FEAS_MARGIN) - scen.P_c_rrh[l] - scen.rho * tx[l] >= 0
                          for l in range(L)]
        else:
            self.c5_rows = np.array([], int)

        # selection coupling; rows of removed blocks are absent
        self.s_param = cp.Parameter((L, K), nonneg=True, name="s") if kind == "l1" else None
        self.s_var = cp.Variable((L, K), name="s") if kind == "sca" else None
        s_expr = self.s_param if self.s_param is not None else self.s_var
        self.alpha = cp.Variable((L, K), name="alpha") if kind == "l1" else None
        cons["C11"] = []
        self.c11_cols = []
        for l in range(L):
            cols = np.flatnonzero(self.support[l]) if finiteP[l] else np.array([], int)
            self.c11_cols.append(cols)
            if not cols.size:
                cons["C11"].append(None)
                continue
            lhs = cp.hstack([bp[l][k] for k in cols])
            rhs = scen.P_tx_max[l] * (1 - FEAS_MARGIN) * (np.ones(cols.size) if s_expr is None else s_expr[l, cols])
            if self.alpha is not None:
                rhs = rhs + self.alpha[l, cols]
            cons["C11"].append(lhs <= rhs)
        if self.alpha is not None:
            cons["C15"] = [self.alpha >= 0]
        if self.s_var is not None:
            cons["s_lo"] = [self.s_var >= 0]
            cons["s_hi"] = [self.s_var <= 1]
            self.c3_rows = np.flatnonzero(np.isfinite(scen.C_backhaul_max))
            cons["C3"] = [self.s_var[l, :] @ scen.R_backhaul <= scen.C_backhaul_max[l] for l in self.c3_rows]
            if not finiteP.all():
                raise StructuralError("the SCA program needs finite per-RRH power limits")

        power = sum(cp.trace(A) for A in self.WA) + cp.trace(self.VA)
        self.power = power
        if kind == "primal":
            obj = power
        elif kind == "l1":
            obj = cp.sum(self.alpha)
        else:
            self.c_param = cp.Parameter((L, K), name="penalty_coeff")
            obj = power + cp.sum(cp.multiply(self.c_param, self.s_var))
        self.cons = cons
        flat = [c for group in cons.values() for c in group if c is not None]
        self.problem = cp.Problem(cp.Minimize(obj), flat)


def _lmi(A, B, p, q, corner, mult, Xi):
    """Real embedding of U^H X U + diag(mult*Xi, 0) with U = [I, g]; ``corner`` is the (n+1, n+1) entry."""
    n = Xi.shape[0]
    top_re = cp.reshape(A @ p - B @ q, (n, 1), order="F")
    top_im = cp.reshape(A @ q + B @ p, (n, 1), order="F")
    R = cp.bmat([[A + mult * Xi.real, top_re], [top_re.T, cp.reshape(corner, (1, 1), order="F")]])
    I_ = cp.bmat([[B + mult * Xi.imag, top_im], [-top_im.T, np.zeros((1, 1))]])
    E = cp.bmat([[R, -I_], [I_, R]])
    return 0.5 * (E + E.T) >> 0


def _model(scen: Scenario, kind: str, energy: str, support: np.ndarray | None = None) -> _Model:
    per_scen = _CACHE.setdefault(scen, {})
    key = (kind, energy, None if support is None else tuple(np.asarray(support, int).ravel()))
    if key not in per_scen:
        per_scen[key] = _Model(scen, kind, energy, support)
    return per_scen[key]


# --- programs ---------------------------------------------------------------

@dataclass(eq=False)
class ConicProgram:
    """A fixed-selection (or SCA-anchored) convex program ready to solve."""

    scen: Scenario
    kind: str
    energy: str
    s_fixed: np.ndarray | None = None
    anchor: np.ndarray | None = None
    phi: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StructuralError(f"unknown program kind {self.kind!r}")
        if self.energy not in ENERGY_MODES:
            raise StructuralError(f"unknown energy mode {self.energy!r}")
        shape = (self.scen.L, self.scen.K)
        if self.kind == "sca":
            a = np.asarray(self.anchor, float)
            if a.shape != shape or np.any(a < 0) or np.any(a > 1):
                raise StructuralError(f"SCA anchor must be {shape} with entries in [0, 1]")
            if self.phi < 0:
                raise StructuralError("penalty factor must be nonnegative")
            self.anchor = a
        else:
            s = np.asarray(self.s_fixed)
            if s.shape != shape or not np.all((s == 0) | (s == 1)):
                raise StructuralError(f"selection must be a binary {shape} matrix")
            if np.any(~np.isfinite(self.scen.P_tx_max)) and not np.all(s[~np.isfinite(self.scen.P_tx_max)] == 1):
                raise StructuralError("RRHs without a power limit must serve every IR")
            self.s_fixed = s.astype(int)

    @property
    def model(self) -> _Model:
        if self.kind == "primal":
            return _model(self.scen, self.kind, self.energy, self.s_fixed)
        mdl = _model(self.scen, self.kind, self.energy)
        if self.kind == "sca":
            mdl.c_param.value = self.phi * (1.0 - 2.0 * self.anchor)
        else:
            mdl.s_param.value = self.s_fixed.astype(float)
        return mdl

    def penalty_constant(self) -> float:
        """Part of the linearized penalty not depending on s: phi * sum(anchor^2)."""
        return self.phi * float(np.sum(self.anchor ** 2)) if self.kind == "sca" else 0.0

    def dump(self, fh: IO[str], backend: str = DEFAULT_BACKEND) -> None:
        """Write the compiled conic data as sparse text (objective, cones, A/b triplets)."""
        data, _, _ = self.model.problem.get_problem_data(backend)
        c = np.asarray(data["c"]).ravel()
        A = data["A"].tocoo()
        b = np.asarray(data["b"]).ravel()
        dims = data["dims"]
        fh.write(f"# conic program kind={self.kind} energy={self.energy} backend={backend}\n")
        fh.write(f"vars {c.size} rows {b.size} nnz {A.nnz}\n")
        fh.write(f"cones zero={dims.zero} nonneg={dims.nonneg} soc={list(dims.soc)} psd={list(dims.psd)}\n")
        fh.write("objective\n")
        for j in np.flatnonzero(c):
            fh.write(f"{j} {c[j]:.17g}\n")
        fh.write("A\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        fh.write("b\n")
        for i in np.flatnonzero(b):
            fh.write(f"{i} {b[i]:.17g}\n")


def build_primal(scen: Scenario, s_fixed, energy: str | None = None) -> ConicProgram:
    """Relaxed problem for a fixed selection: minimize total power subject to all constraints except rank."""
    return ConicProgram(scen, "primal", energy or _default_energy(scen), s_fixed=np.asarray(s_fixed))


def build_l1_feasibility(scen: Scenario, s_fixed, energy: str | None = None) -> ConicProgram:
    """Same constraint set with the selection coupling softened by slacks; minimize their sum."""
    return ConicProgram(scen, "l1", energy or _default_energy(scen), s_fixed=np.asarray(s_fixed))


def build_sca(scen: Scenario, anchor, phi: float, energy: str | None = None) -> ConicProgram:
    """Continuous-selection program with the penalty linearized at ``anchor``."""
    return ConicProgram(scen, "sca", energy or _default_energy(scen), anchor=np.asarray(anchor, float), phi=float(phi))


# --- solving ----------------------------------------------------------------

def _value(x):
    return None if x is None else np.asarray(x.value, dtype=float)


def _complex(A, B) -> np.ndarray:
    X = np.asarray(A.value, float) + 1j * np.asarray(B.value, float)
    return 0.5 * (X + X.conj().T)


def _dual(c, shape=None):
    if c is None:
        return np.zeros(shape) if shape is not None else 0.0
    v = np.asarray(c.dual_value, dtype=float)
    return v


def solve(program: ConicProgram, tol: float = 1e-6, backend: str = DEFAULT_BACKEND) -> PrimalOutcome:
    """Solve one program. Never raises on infeasibility; the status says what happened.

    ``tol`` is the relative accuracy demanded of the returned primal-dual pair:
    the total complementarity must not exceed ``10 * tol`` times the objective
    (or 1 W, whichever is larger), otherwise the status is numerical failure.
    Fixed-selection points must also pass :func:`verify_policy` at ``tol``.
    SCA steps reported optimal by the backend skip this check; inaccurate
    ones are measured against the size of the linearized penalty.
    """
    if backend not in _SOLVER_OPTS:
        raise StructuralError(f"unsupported backend {backend!r}")
    if program.kind == "primal" and not np.all(program.s_fixed.any(axis=0)):
        # an IR served by no RRH receives nothing and has a positive SINR target
        return PrimalOutcome("infeasible", program, backend=backend, solver_status="presolve")
    mdl = program.model
    opts = dict(_SOLVER_OPTS[backend])
    try:
        mdl.problem.solve(solver=backend, warm_start=False, **opts)
    except (cp.error.SolverError, ArithmeticError):
        return PrimalOutcome("numerical-failure", program, backend=backend, solver_status="solver_error")
    status = mdl.problem.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return PrimalOutcome("infeasible", program, backend=backend, solver_status=status)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return PrimalOutcome("numerical-failure", program, backend=backend, solver_status=status)
    out = _extract(program, mdl)
    out.backend, out.solver_status = backend, status
    # interior-point codes often stall just short of their own stopping rule on
    # these problems; accept the point when the independent KKT gap is small
    if program.kind == "sca" and status == cp.OPTIMAL:
        # SCA steps only steer the selection; the returned policy comes from a
        # certified fixed-selection solve, so the backend's own verdict suffices
        return out
    scale = max(1.0, abs(program_objective(out)))
    if program.kind == "sca":
        scale = max(scale, program.phi * float(np.sum(np.abs(1.0 - 2.0 * program.anchor) * out.s_relaxed)))
    gap = duality_gap(out)
    if not np.isfinite(gap) or abs(gap) > 10 * tol * scale:
        out.status = "numerical-failure"
    elif program.kind == "primal" and not verify_policy(out.policy, program.scen, program.energy, tol).ok:
        # a small gap does not rule out a point that misses a constraint by more than the margin
        out.status = "numerical-failure"
        out.solver_status = f"{status}; primal check failed"
    return out


def _extract(program: ConicProgram, mdl: _Model) -> PrimalOutcome:
    scen = program.scen
    L, K, M, n = scen.L, scen.K, scen.M, scen.n
    W = np.array([_complex(mdl.WA[k], mdl.WB[k]) for k in range(K)]).reshape(K, n, n)
    V = _complex(mdl.VA, mdl.VB)
    if mdl.e is not None:
        e = _value(mdl.e)
    elif program.energy == "per_rrh":
        tx = np.array([sum(block_power(W[k], scen, l) for k in range(K)) + block_power(V, scen, l) for l in range(L)])
        e = np.append(scen.P_c_rrh + scen.rho * tx, scen.P_c_cp)
    else:
        e = np.zeros(L + 1)
    if program.kind == "sca":
        s_rel = np.clip(_value(mdl.s_var), 0.0, 1.0)
        s_pol = (s_rel >= 0.5).astype(int)
    else:
        s_rel = None
        s_pol = program.s_fixed
    policy = Policy(W, V, e, s_pol)
    out = PrimalOutcome("optimal", program, policy=policy)
    out.delta = _value(mdl.delta) if mdl.delta is not None else np.zeros((M, K))
    out.nu = _value(mdl.nu) if mdl.nu is not None else np.zeros(M)
    out.delta[mdl.nominal] = 0.0
    out.nu[mdl.nominal] = 0.0
    power = policy.total_power()
    if program.kind == "l1":
        out.slack = np.maximum(_value(mdl.alpha), 0.0)
        out.l1_violation = float(out.slack.sum())
        out.objective = out.l1_violation
    else:
        out.objective = power
    if program.kind == "sca":
        out.s_relaxed = s_rel
        out.penalized_objective = power + program.phi * float(np.sum(s_rel - s_rel ** 2))
    out.duals = _extract_duals(program, mdl)
    return out


def _lmi_dual(con, nominal: bool, n: int) -> np.ndarray:
    """Complex dual of a robust constraint; a nominal row acts on the corner entry only."""
    if not nominal:
        return dual_to_complex(con.dual_value)
    D = np.zeros((n + 1, n + 1), complex)
    D[n, n] = np.asarray(con.dual_value, float).item()
    return D


def _extract_duals(program: ConicProgram, mdl: _Model) -> DualCertificate:
    scen = program.scen
    L, K, M, n = scen.L, scen.K, scen.M, scen.n
    ref = mdl.ref
    cons = mdl.cons
    # C1 rows were divided by the noise reference
    alpha = np.array([float(c.dual_value) for c in cons["C1"]]) / ref
    Dg = np.ones(n + 1)
    Dg[n] = 1.0 / np.sqrt(ref)
    scale = np.outer(Dg, Dg)
    D_c2 = np.zeros((M, K, n + 1, n + 1), complex)
    D_c7 = np.zeros((M, n + 1, n + 1), complex)
    it = iter(cons["C2"])
    for m in range(M):
        for k in range(K):
            D_c2[m, k] = _lmi_dual(next(it), mdl.nominal[m], n) * scale
        D_c7[m] = _lmi_dual(cons["C7"][m], mdl.nominal[m], n) * scale
    if program.energy == "pooled":
        varrho = np.atleast_1d(np.asarray(cons["C4"][0].dual_value, float)).ravel()[:1]
    elif program.energy == "per_rrh":
        varrho = np.array([np.asarray(c.dual_value, float).item() for c in cons["C4"]])
    else:
        varrho = np.zeros(1)
    tau = np.zeros(L + 1)
    chi = np.zeros(L + 1)
    if cons["C5"]:
        tau[mdl.c5_rows] = np.asarray(cons["C5"][0].dual_value, float)
    if cons["C8"]:
        chi[:] = np.asarray(cons["C8"][0].dual_value, float)
    gamma = np.zeros(L)
    for l, c in zip(mdl.c6_rows, cons["C6"]):
        gamma[l] = float(c.dual_value)
    beta = np.zeros((L, K))
    for l, c in enumerate(cons["C11"]):
        if c is not None:
            beta[l, mdl.c11_cols[l]] = np.asarray(c.dual_value, float).reshape(-1)
    Z = np.zeros((K, n, n), complex)
    for k, c in enumerate(cons["Z"]):
        idx = mdl.active[k]
        Z[k][np.ix_(idx, idx)] = dual_to_complex(c.dual_value)
    Y = dual_to_complex(cons["Y"][0].dual_value)
    lam = np.asarray(cons["C14d"][0].dual_value, float).reshape(M, K) if cons["C14d"] else np.zeros((M, K))
    theta = np.asarray(cons["C14n"][0].dual_value, float).reshape(M) if cons["C14n"] else np.zeros(M)
    cert = DualCertificate(alpha, D_c2, D_c7, varrho, tau, chi, gamma, beta, Z, Y, lam, theta)
    cert.support = mdl.support.astype(bool)
    if program.kind == "l1":
        cert.xi = np.asarray(cons["C15"][0].dual_value, float)
    if program.kind == "sca":
        cert.s_lower = np.asarray(cons["s_lo"][0].dual_value, float)
        cert.s_upper = np.asarray(cons["s_hi"][0].dual_value, float)
        bh = np.zeros(L)
        for l, c in zip(mdl.c3_rows, cons["C3"]):
            bh[l] = float(c.dual_value)
        cert.backhaul = bh
    return cert


# --- Lagrangian bookkeeping -------------------------------------------------

def _u(g):
    n = g.shape[0]
    return np.hstack([np.eye(n), g[:, None]])


def _rrh_weights(scen: Scenario, d: DualCertificate, energy: str, k: int | None) -> np.ndarray:
    """Diagonal of sum_l R_l (energy price * rho + gamma_l [+ beta_{l,k}])."""
    L = scen.L
    if energy == "pooled":
        price = np.full(L, d.varrho[0] * scen.rho)
    elif energy == "per_rrh":
        price = d.varrho[:L] * scen.rho
    else:
        price = np.zeros(L)
    w = price + d.gamma
    if k is not None:
        w = w + d.beta[:, k]
    return np.repeat(w, scen.Nt)


def gradient_w(outcome: PrimalOutcome, k: int, *, include_z: bool = True) -> np.ndarray:
    """Partial derivative of the Lagrangian with respect to W_k (zero at an exact KKT point)."""
    scen, d = outcome.program.scen, outcome.duals
    n = scen.n
    obj_weight = 0.0 if outcome.program.kind == "l1" else 1.0
    G = obj_weight * np.eye(n, dtype=complex)
    for j in range(scen.K):
        Hj = np.outer(scen.h[j], scen.h[j].conj())
        G += (-d.alpha[k] / scen.gamma_req[k]) * Hj if j == k else d.alpha[j] * Hj
    for m in range(scen.M):
        U = _u(scen.g_hat[m])
        G += U @ (d.D_c2[m, k] / scen.gamma_tol - d.D_c7[m]) @ U.conj().T
    G += np.diag(_rrh_weights(scen, d, outcome.program.energy, k))
    if include_z:
        G -= d.Z[k]
    return 0.5 * (G + G.conj().T)


def gradient_v(outcome: PrimalOutcome) -> np.ndarray:
    scen, d = outcome.program.scen, outcome.duals
    n = scen.n
    obj_weight = 0.0 if outcome.program.kind == "l1" else 1.0
    G = obj_weight * np.eye(n, dtype=complex) - d.Y
    for j in range(scen.K):
        G += d.alpha[j] * np.outer(scen.h[j], scen.h[j].conj())
    for m in range(scen.M):
        U = _u(scen.g_hat[m])
        G -= U @ (d.D_c2[m].sum(axis=0) + d.D_c7[m]) @ U.conj().T
    G += np.diag(_rrh_weights(scen, d, outcome.program.energy, None))
    return 0.5 * (G + G.conj().T)


def stationarity_residual(outcome: PrimalOutcome) -> float:
    """Largest gradient entry of the Lagrangian in W, V, delta and nu, relative to the identity scale.

    Antenna blocks removed by the selection pattern are not variables, so
    only the retained rows and columns of each W_k count.
    """
    scen, d = outcome.program.scen, outcome.duals
    active = outcome.program.model.active
    res = [np.abs(gradient_w(outcome, k)[np.ix_(active[k], active[k])]).max(initial=0.0) for k in range(scen.K)]
    res.append(np.abs(gradient_v(outcome)).max())
    for m in range(scen.M):
        S1 = np.zeros((scen.n + 1, scen.n + 1), complex)
        S1[:scen.n, :scen.n] = scen.Xi[m]
        S1[scen.n, scen.n] = -scen.eps[m] ** 2
        for k in range(scen.K):
            res.append(abs(np.real(np.trace(d.D_c2[m, k] @ S1)) + d.lam[m, k]))
        res.append(abs(np.real(np.trace(d.D_c7[m] @ S1)) + d.theta[m]))
    return float(max(res))


def constraint_values(outcome: PrimalOutcome) -> dict[str, np.ndarray]:
    """g(x) for every scalar constraint and S(x) for every LMI of the program as modeled (margins included)."""
    eta = FEAS_MARGIN
    prog, scen, pol = outcome.program, outcome.program.scen, outcome.policy
    K, L, M, n = scen.K, scen.L, scen.M, scen.n
    W, V, e = pol.W, pol.V, pol.e_s
    rx = np.array([[np.real(np.vdot(scen.h[k], W[j] @ scen.h[k])) for j in range(K)] for k in range(K)])
    rxV = np.array([np.real(np.vdot(scen.h[k], V @ scen.h[k])) for k in range(K)])
    out: dict[str, np.ndarray] = {}
    out["C1"] = np.array([rx[k, k] / scen.gamma_req[k] - (rx[k].sum() - rx[k, k]) - rxV[k] - scen.sigma_ir_sq[k] * (1 + eta)
                          for k in range(K)])
    c2 = np.zeros((M, K, n + 1, n + 1), complex)
    c7 = np.zeros((M, n + 1, n + 1), complex)
    for m in range(M):
        args = (scen.g_hat[m], scen.Xi[m], scen.eps[m])
        for k in range(K):
            c2[m, k] = build_c2_lmi(W[k], V, *args, scen.gamma_tol, max(outcome.delta[m, k], 0.0),
                                    scen.sigma_s_sq * (1 - eta)).matrix
        c7[m] = build_c7_lmi(W, V, *args, scen.P_min_er[m] * (1 + eta), scen.mu, max(outcome.nu[m], 0.0)).matrix
    out["C2"], out["C7"] = c2, c7
    bp = np.array([[block_power(W[k], scen, l) for k in range(K)] for l in range(L)])
    tx = bp.sum(axis=1) + np.array([block_power(V, scen, l) for l in range(L)])
    finite_p = np.isfinite(scen.P_tx_max)
    out["C6"] = np.where(finite_p, np.where(finite_p, scen.P_tx_max, 0.0) * (1 - eta) - tx, 0.0)
    if prog.energy == "pooled":
        demand = scen.P_c_cp + float(np.sum(scen.P_c_rrh)) + scen.rho * float(tx.sum())
        out["C4"] = np.array([float(e.sum() - e @ scen.B @ e) - demand * (1 + eta)])
        out["C5"] = np.where(np.isfinite(scen.E_max), np.nan_to_num(scen.E_max, posinf=0.0) * (1 - eta) - e, 0.0)
        out["C8"] = e.copy()
    elif prog.energy == "per_rrh":
        out["C4"] = scen.E_max[:L] * (1 - eta) - scen.P_c_rrh - scen.rho * tx
    s = outcome.s_relaxed if prog.kind == "sca" else prog.s_fixed
    cap = s * np.where(finite_p, scen.P_tx_max, 0.0)[:, None] * (1 - eta)
    if prog.kind == "l1":
        cap = cap + outcome.slack
        out["C15"] = outcome.slack
    out["C11"] = np.where(finite_p[:, None], cap - bp, 0.0)
    out["Z"], out["Y"] = W, V
    out["C14d"], out["C14n"] = outcome.delta, outcome.nu
    if prog.kind == "sca":
        out["s_lo"], out["s_hi"] = s, 1.0 - s
        rows = np.isfinite(scen.C_backhaul_max)
        out["C3"] = np.where(rows, np.nan_to_num(scen.C_backhaul_max, posinf=0.0) - s @ scen.R_backhaul, 0.0)
    return out


def complementarity(outcome: PrimalOutcome) -> dict[str, float]:
    """Multiplier-weighted constraint values; all vanish at an exact KKT point."""
    d = outcome.duals
    g = constraint_values(outcome)
    re_tr = lambda D, S: float(np.real(np.sum(D * np.conj(S))))  # noqa: E731  Re Tr(D S) for Hermitian S
    terms = {
        "C1": float(np.dot(d.alpha, g["C1"])),
        "C2": re_tr(d.D_c2, g["C2"]),
        "C7": re_tr(d.D_c7, g["C7"]),
        "C6": float(np.dot(d.gamma, g["C6"])),
        "C11": float(np.sum(d.beta * g["C11"])),
        "Z": re_tr(d.Z, g["Z"]),
        "Y": re_tr(d.Y, g["Y"]),
        "C14": float(np.sum(d.lam * g["C14d"]) + np.dot(d.theta, g["C14n"])),
    }
    if "C4" in g:
        terms["C4"] = float(np.dot(d.varrho[:g["C4"].size], g["C4"]))
    if "C5" in g:
        terms["C5"] = float(np.dot(d.tau, g["C5"]) + np.dot(d.chi, g["C8"]))
    if "C15" in g:
        terms["C15"] = float(np.sum(d.xi * g["C15"]))
    if "s_lo" in g:
        terms["s"] = float(np.sum(d.s_lower * g["s_lo"]) + np.sum(d.s_upper * g["s_hi"]))
        terms["C3"] = float(np.dot(d.backhaul, g["C3"]))
    return terms


def program_objective(outcome: PrimalOutcome) -> float:
    """Objective of the program actually solved (the linearized penalty included for SCA)."""
    prog = outcome.program
    if prog.kind == "sca":
        s = outcome.s_relaxed
        return outcome.objective + linearized_penalty(s, prog.anchor, prog.phi)
    return outcome.objective


def linearized_penalty(s, s_anchor, phi: float) -> float:
    """phi * (sum s - sum a^2 - 2 sum a (s - a)): the first-order upper model of phi * sum(s - s^2) at a."""
    s = np.asarray(s, float)
    a = np.asarray(s_anchor, float)
    if s.shape != a.shape:
        raise StructuralError("s and anchor shapes differ")
    return float(phi * (np.sum(s) - np.sum(a ** 2) - 2.0 * np.sum(a * (s - a))))


def lagrangian_value(outcome: PrimalOutcome) -> float:
    """Lagrangian at the returned primal-dual pair."""
    return program_objective(outcome) - sum(complementarity(outcome).values())


def duality_gap(outcome: PrimalOutcome) -> float:
    """Objective minus the Lagrangian at the returned pair, i.e. the total complementarity."""
    return program_objective(outcome) - lagrangian_value(outcome)


# --- verification and rank-one recovery -------------------------------------

def verify_policy(policy: Policy, scen: Scenario, energy: str | None = None, tol: float = 1e-6,
                  check_backhaul: bool = False) -> ConstraintReport:
    """All constraints of the chosen energy model, including the worst-case ER constraints."""
    energy = energy or _default_energy(scen)
    rep = check_deterministic_constraints(policy, scen, tol, check_backhaul=check_backhaul)
    if energy != "pooled":
        rep.slacks.pop("C4", None)
        rep.slacks.pop("C5", None)
    if energy == "per_rrh":
        cons = np.array([
            scen.P_c_rrh[l] + scen.rho * (sum(block_power(policy.W[k], scen, l) for k in range(scen.K))
                                          + block_power(policy.V, scen, l))
            for l in range(scen.L)
        ])
        with np.errstate(invalid="ignore", divide="ignore"):
            rep.slacks["C4"] = (scen.E_max[:scen.L] - cons) / np.maximum(cons, 1e-12)
    return rep.merged(verify_policy_robust(policy, scen, tol))


def numerical_rank(W: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of eigenvalues above ``rank_tol`` times the largest one."""
    lam = np.linalg.eigvalsh(0.5 * (W + np.conj(W).T))
    top = lam[-1]
    if top <= 0:
        return 0
    return int(np.sum(lam > rank_tol * top))


def certificate_matrix(outcome: PrimalOutcome, k: int) -> np.ndarray:
    """C_k = Z_k + alpha_k H_k / Gamma_req_k: the part of the W_k-gradient without the IR-k signal term."""
    scen, d = outcome.program.scen, outcome.duals
    Hk = np.outer(scen.h[k], scen.h[k].conj())
    C = d.Z[k] + d.alpha[k] / scen.gamma_req[k] * Hk
    return 0.5 * (C + C.conj().T)


def certificate_matrix_as_printed(outcome: PrimalOutcome, k: int) -> np.ndarray:
    """Same matrix assembled term by term with the ER-SINR dual weighted by 1/Gamma_req_k.

    Differs from :func:`certificate_matrix` whenever Gamma_req_k != Gamma_tol
    and the ER-SINR LMIs are active; kept for diagnostics only.
    """
    scen, d = outcome.program.scen, outcome.duals
    G = np.eye(scen.n, dtype=complex)
    for j in range(scen.K):
        if j != k:
            G += d.alpha[j] * np.outer(scen.h[j], scen.h[j].conj())
    for m in range(scen.M):
        U = _u(scen.g_hat[m])
        G += U @ (d.D_c2[m, k] / scen.gamma_req[k] - d.D_c7[m]) @ U.conj().T
    G += np.diag(_rrh_weights(scen, d, outcome.program.energy, k))
    return 0.5 * (G + G.conj().T)


def null_basis(C: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    lam, U = np.linalg.eigh(C)
    top = max(abs(lam[-1]), 1e-300)
    return U[:, lam <= rank_tol * top]


@dataclass
class RecoveryReport:
    ranks_before: list[int] = field(default_factory=list)
    ranks_after_shuffle: list[int] = field(default_factory=list)
    psi: list[np.ndarray] = field(default_factory=list)
    objective_change: float = 0.0
    constraints: ConstraintReport | None = None


def rank_one_recovery(outcome: PrimalOutcome, scen: Scenario | None = None, rank_tol: float = DEFAULT_RANK_TOL,
                      tol: float = 1e-6, report: RecoveryReport | None = None) -> tuple[Policy, BeamVectors]:
    """Turn a relaxed optimum into beamforming vectors without changing the objective.

    1. For every W_k of numerical rank above one, the components lying in the
       null space of the dual certificate C_k are moved into the
       artificial-noise covariance, weighted by their Rayleigh quotients.
    2. Each W_k is then replaced by w w^H with w = W_k h_k / sqrt(h_k^H W_k h_k)
       and the PSD remainder W_k - w w^H is added to V. This keeps the IR-k
       signal power, all interference terms, per-RRH powers and the total
       received power at every ER unchanged, and can only lower the ER-side
       SINR, so it never breaks a constraint that held before.

    The result is re-verified against every constraint, including the
    worst-case ER checks; failure raises :class:`RecoveryFailed`.
    """
    if outcome.status != "optimal" or outcome.policy is None:
        raise StructuralError("rank-one recovery needs an optimal outcome")
    if outcome.program.kind == "l1":
        raise StructuralError("rank-one recovery applies to power-minimization programs")
    scen = scen or outcome.program.scen
    pol = outcome.policy
    K, n = scen.K, scen.n
    W = pol.W.copy()
    V = pol.V.copy()
    w = np.zeros((K, n), complex)
    ranks = [numerical_rank(W[k], rank_tol) for k in range(K)]
    psis, after = [], []
    for k in range(K):
        psi = np.zeros(0)
        if ranks[k] > 1:
            Phi = null_basis(certificate_matrix(outcome, k), rank_tol)
            psi = np.real(np.einsum("ij,ik,kj->j", Phi.conj(), W[k], Phi))
            moved = (Phi * psi) @ Phi.conj().T
            W[k] = W[k] - moved
            V = V + moved
        psis.append(psi)
        after.append(numerical_rank(W[k], rank_tol))
        hk = scen.h[k]
        Wh = W[k] @ hk
        sig = float(np.real(np.vdot(hk, Wh)))
        if sig > 0:
            w[k] = Wh / np.sqrt(sig)
        W_new = np.outer(w[k], w[k].conj())
        V = V + (W[k] - W_new)
        W[k] = W_new
    V = 0.5 * (V + V.conj().T)
    new = Policy(W, V, pol.e_s, pol.s)
    before = pol.total_power()
    change = abs(new.total_power() - before) / max(abs(before), 1e-300)
    checks = verify_policy(new, scen, outcome.program.energy, tol)
    if report is not None:
        report.ranks_before = ranks
        report.ranks_after_shuffle = after
        report.psi = psis
        report.objective_change = change
        report.constraints = checks
    if change > tol:
        raise RecoveryFailed(f"objective moved by {change:.3g} (relative)")
    if not checks.ok:
        raise RecoveryFailed(f"recovered policy violates {checks.violations()[:3]}")
    return new, BeamVectors(w)


FALLBACK_CHAIN = ("CLARABEL", "CVXOPT", "SCS")


def solve_with_fallback(program: ConicProgram, tol: float = 1e-6, backends=FALLBACK_CHAIN) -> PrimalOutcome:
    """Try backends in order until one returns optimal or infeasible."""
    out = None
    for be in backends:
        out = solve(program, tol, be)
        if out.status != "numerical-failure":
            return out
    return out


def solve_fixed(scen: Scenario, s_fixed, energy: str | None = None, tol: float = 1e-6,
                backends=FALLBACK_CHAIN) -> PrimalOutcome:
    """Fixed-selection primal solve with backend fallback on numerical failure."""
    return solve_with_fallback(build_primal(scen, s_fixed, energy), tol, backends)


def require_optimal(outcome: PrimalOutcome) -> PrimalOutcome:
    if outcome.status == "numerical-failure":
        raise NumericalFailure(f"conic backend {outcome.backend} returned {outcome.solver_status}")
    return outcome
