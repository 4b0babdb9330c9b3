"""Domain types and closed-form physical-layer metrics.

Everything here is stored and computed in linear scale (Watts, linear SINR,
bits/s/Hz). Conversion to dB happens only at the configuration and CLI
boundary, see :mod:`dasswipt.units`.

Constraint checkers never raise on infeasible input: they return a
:class:`ConstraintReport` whose slacks are normalized by the scale of each
constraint so that a single relative tolerance applies to all of them.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import StructuralError

_HERM_TOL = 1e-10


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _is_pd(A: np.ndarray) -> bool:
    if not np.allclose(A, A.conj().T, atol=_HERM_TOL * max(1.0, np.abs(A).max())):
        return False
    return bool(np.linalg.eigvalsh(A).min() > 0)


@dataclass(frozen=True, eq=False)
class Geometry:
    """Placement and small-scale fading behind a generated scenario.

    Kept so that baselines which move the transmitter (co-located array) can
    rebuild channels from the same fading draws.
    """

    rrh_pos: np.ndarray  # (L, 2) meters
    ir_pos: np.ndarray  # (K, 2)
    er_pos: np.ndarray  # (M, 2)
    ir_fading: np.ndarray  # (K, L*Nt) unit-variance CN entries
    er_fading: np.ndarray  # (M, L*Nt)
    path_gain_ref: float  # linear gain at 1 m
    path_loss_exponent: float
    min_distance: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable problem instance.

    Channels are stacked row-wise: ``h[k]`` is the length ``Nt*L`` channel of
    IR ``k`` with RRH ``l`` occupying entries ``l*Nt:(l+1)*Nt``.
    ``E_max`` has ``L + 1`` entries, the last one being the central processor.
    Infinite ``P_tx_max`` disables the per-RRH power limits; infinite
    ``E_max`` everywhere disables the energy-supply constraints.
    """

    L: int
    K: int
    M: int
    Nt: int
    h: np.ndarray
    g_hat: np.ndarray
    Xi: np.ndarray
    eps: np.ndarray
    gamma_req: np.ndarray
    gamma_tol: float
    sigma_ir_sq: np.ndarray
    sigma_er_sq: np.ndarray
    sigma_s_sq: float
    C_backhaul_max: np.ndarray
    P_tx_max: np.ndarray
    P_min_er: np.ndarray
    E_max: np.ndarray
    B: np.ndarray
    P_c_cp: float
    P_c_rrh: np.ndarray
    rho: float
    mu: float
    R_backhaul: np.ndarray
    geometry: Geometry | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        L, K, M, Nt = self.L, self.K, self.M, self.Nt
        for name, v in (("L", L), ("K", K), ("Nt", Nt)):
            if int(v) != v or v < 1:
                raise StructuralError(f"{name} must be a positive integer, got {v}")
        if int(M) != M or M < 0:
            raise StructuralError(f"M must be a nonnegative integer, got {M}")
        n = L * Nt
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("h", _frozen(np.reshape(self.h, (K, n)), complex))
        set_("g_hat", _frozen(np.reshape(self.g_hat, (M, n)), complex))
        set_("Xi", _frozen(np.reshape(self.Xi, (M, n, n)), complex))
        for name, size in (
            ("eps", M), ("gamma_req", K), ("sigma_ir_sq", K), ("sigma_er_sq", M),
            ("C_backhaul_max", L), ("P_tx_max", L), ("P_min_er", M), ("E_max", L + 1),
            ("P_c_rrh", L), ("R_backhaul", K),
        ):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.size == 1 and size != 1:
                arr = np.full(size, float(arr[0]))
            if arr.shape != (size,):
                raise StructuralError(f"{name} must have length {size}, got shape {arr.shape}")
            set_(name, _frozen(arr))
        set_("B", _frozen(np.asarray(self.B, dtype=float)))
        if self.B.shape != (L + 1, L + 1):
            raise StructuralError(f"B must be {(L + 1, L + 1)}, got {self.B.shape}")
        if not _is_pd(self.B):
            raise StructuralError("B-coefficient matrix must be symmetric positive definite")
        for m in range(M):
            if not _is_pd(self.Xi[m]):
                raise StructuralError(f"Xi[{m}] must be Hermitian positive definite")
        if np.any(self.eps < 0):
            raise StructuralError("uncertainty radii must be nonnegative")
        if np.any(self.gamma_req <= 0) or self.gamma_tol <= 0:
            raise StructuralError("SINR targets must be positive (linear scale)")
        if self.sigma_s_sq <= 0 or np.any(self.sigma_ir_sq <= 0):
            raise StructuralError("noise powers must be positive")
        if not (0 < self.mu <= 1):
            raise StructuralError("mu must lie in (0, 1]")
        if self.rho < 1:
            raise StructuralError("rho must be >= 1")
        for name in ("P_min_er", "E_max", "P_c_rrh", "R_backhaul", "C_backhaul_max"):
            if np.any(getattr(self, name) < 0):
                raise StructuralError(f"{name} must be nonnegative")
        if np.any(self.P_tx_max <= 0):
            raise StructuralError("P_tx_max must be positive")
        set_("gamma_tol", float(self.gamma_tol))
        set_("sigma_s_sq", float(self.sigma_s_sq))
        set_("P_c_cp", float(self.P_c_cp))
        set_("rho", float(self.rho))
        set_("mu", float(self.mu))

    @property
    def n(self) -> int:
        """Total number of transmit antennas ``Nt * L``."""
        return self.L * self.Nt

    @property
    def energy_limited(self) -> bool:
        return bool(np.all(np.isfinite(self.E_max)))

    def block(self, l: int) -> slice:
        return slice(l * self.Nt, (l + 1) * self.Nt)

    def selector(self, l: int) -> np.ndarray:
        """Diagonal 0/1 matrix picking the antennas of RRH ``l``."""
        d = np.zeros(self.n)
        d[self.block(l)] = 1.0
        return np.diag(d)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Policy:
    """Candidate resource allocation: Gram matrices, artificial noise, energy supply, selection."""

    W: np.ndarray  # (K, n, n) Hermitian PSD
    V: np.ndarray  # (n, n) Hermitian PSD
    e_s: np.ndarray  # (L + 1,)
    s: np.ndarray  # (L, K) of {0, 1}

    def __post_init__(self):
        W = np.asarray(self.W, dtype=complex)
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise StructuralError(f"W must have shape (K, n, n), got {W.shape}")
        V = np.asarray(self.V, dtype=complex)
        if V.shape != W.shape[1:]:
            raise StructuralError(f"V shape {V.shape} does not match W blocks {W.shape[1:]}")
        W = 0.5 * (W + np.conj(np.swapaxes(W, 1, 2)))
        V = 0.5 * (V + V.conj().T)
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "V", _frozen(V))
        object.__setattr__(self, "e_s", _frozen(np.asarray(self.e_s, dtype=float)))
        object.__setattr__(self, "s", _frozen(np.asarray(self.s).astype(int)))
        if self.s.ndim != 2 or self.s.shape[1] != W.shape[0]:
            raise StructuralError(f"s must have shape (L, K={W.shape[0]}), got {self.s.shape}")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    def total_power(self) -> float:
        """Objective value: sum of Tr(W_k) plus Tr(V)."""
        return float(np.real(np.trace(self.W, axis1=1, axis2=2).sum() + np.trace(self.V)))

    def replace(self, **changes) -> "Policy":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BeamVectors:
    """Rank-one factors ``w[k]`` with ``W[k] = w[k] w[k]^H``."""

    w: np.ndarray  # (K, n)

    def gram(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.w, self.w.conj())


def zero_policy(scen: Scenario) -> Policy:
    n = scen.n
    return Policy(
        W=np.zeros((scen.K, n, n), complex),
        V=np.zeros((n, n), complex),
        e_s=np.zeros(scen.L + 1),
        s=np.zeros((scen.L, scen.K), int),
    )


def _check_policy(policy: Policy, scen: Scenario) -> None:
    if policy.W.shape != (scen.K, scen.n, scen.n):
        raise StructuralError(
            f"policy W shape {policy.W.shape} does not match scenario {(scen.K, scen.n, scen.n)}"
        )
    if policy.e_s.shape != (scen.L + 1,):
        raise StructuralError(f"e_s must have length {scen.L + 1}")
    if policy.s.shape != (scen.L, scen.K):
        raise StructuralError(f"s must have shape {(scen.L, scen.K)}")


def quad(A: np.ndarray, x: np.ndarray) -> float:
    """Real part of ``x^H A x``."""
    return float(np.real(np.vdot(x, A @ x)))


def block_power(W: np.ndarray, scen: Scenario, l: int) -> float:
    """Tr(W R_l): transmit power of a Gram matrix on RRH ``l``'s antennas."""
    b = scen.block(l)
    return float(np.real(np.trace(W[b, b])))


def sinr_ir(policy: Policy, scen: Scenario, k: int) -> float:
    _check_policy(policy, scen)
    hk = scen.h[k]
    signal = quad(policy.W[k], hk)
    interference = sum(quad(policy.W[j], hk) for j in range(scen.K) if j != k)
    return signal / (interference + quad(policy.V, hk) + scen.sigma_ir_sq[k])


def secrecy_rate(gamma_req, gamma_tol):
    """Guaranteed secrecy rate [log2(1+gamma_req) - log2(1+gamma_tol)]^+ in bits/s/Hz."""
    gr = np.asarray(gamma_req, dtype=float)
    gt = np.asarray(gamma_tol, dtype=float)
    if np.any(gr < 0) or np.any(gt < 0):
        raise StructuralError("SINR values must be nonnegative (linear scale)")
    out = np.maximum(0.0, np.log2(1.0 + gr) - np.log2(1.0 + gt))
    return float(out) if out.ndim == 0 else out


def harvested_energy(policy: Policy, g: np.ndarray, mu: float) -> float:
    g = np.asarray(g, dtype=complex)
    if g.shape != (policy.V.shape[0],):
        raise StructuralError(f"channel length {g.shape} does not match {policy.V.shape[0]} antennas")
    total = policy.V + policy.W.sum(axis=0)
    return mu * quad(total, g)


def grid_loss(e_s, B) -> float:
    e_s = np.asarray(e_s, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.shape != (e_s.size, e_s.size):
        raise StructuralError(f"B shape {B.shape} does not match e_s length {e_s.size}")
    if not _is_pd(B):
        raise StructuralError("B-coefficient matrix must be symmetric positive definite")
    return float(e_s @ B @ e_s)


def available_power(e_s, B) -> float:
    """Power delivered by the micro-grid after line losses: 1^T e - e^T B e."""
    return float(np.sum(e_s)) - grid_loss(e_s, B)


def default_zero_tol(scen: Scenario, l: int) -> float:
    p = scen.P_tx_max[l]
    return 1e-6 * p if np.isfinite(p) else 1e-9


def backhaul_consumption(policy: Policy, scen: Scenario, l: int, zero_tol: float | None = None) -> float:
    """Backhaul load of link ``l``: rates of the IRs whose beam has nonzero power on RRH ``l``."""
    _check_policy(policy, scen)
    if zero_tol is None:
        zero_tol = default_zero_tol(scen, l)
    if zero_tol <= 0:
        raise StructuralError("zero_tol must be positive")
    active = [block_power(policy.W[k], scen, l) > zero_tol for k in range(scen.K)]
    return float(np.dot(active, scen.R_backhaul))


def rrh_consumption(policy: Policy, scen: Scenario, l: int) -> float:
    """Circuit plus amplifier power drawn by RRH ``l``."""
    tx = sum(block_power(policy.W[k], scen, l) for k in range(scen.K)) + block_power(policy.V, scen, l)
    return scen.P_c_rrh[l] + scen.rho * tx


def network_consumption(policy: Policy, scen: Scenario) -> float:
    return scen.P_c_cp + sum(rrh_consumption(policy, scen, l) for l in range(scen.L))


@dataclass
class ConstraintReport:
    """Normalized per-constraint slacks; a constraint holds when its slack is >= -tol."""

    slacks: dict[str, np.ndarray]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.violations()

    def violations(self) -> list[tuple[str, tuple[int, ...], float]]:
        out = []
        for name, arr in self.slacks.items():
            arr = np.asarray(arr, dtype=float)
            for idx in zip(*np.nonzero(arr < -self.tol)):
                out.append((name, tuple(int(i) for i in idx), float(arr[idx])))
        return out

    def min_slack(self) -> float:
        vals = [np.min(v) for v in self.slacks.values() if np.size(v)]
        return float(min(vals)) if vals else np.inf

    def merged(self, other: "ConstraintReport") -> "ConstraintReport":
        return ConstraintReport({**self.slacks, **other.slacks}, min(self.tol, other.tol))


def _rel(slack, scale):
    scale = np.asarray(scale, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(np.isfinite(scale), slack / np.maximum(scale, 1e-300), np.inf)
    return out


def check_deterministic_constraints(
    policy: Policy, scen: Scenario, tol: float = 1e-6, *, check_backhaul: bool = True,
    check_selection: bool = True, zero_tol: float | None = None,
) -> ConstraintReport:
    """Slacks of the non-robust constraints (IR SINR, backhaul, energy, power, PSD, selection).

    Normalization per constraint:

    * ``C1`` -- SINR_k / Gamma_req_k - 1
    * ``C3`` -- (C_max - load) / C_max
    * ``C4`` -- (available grid power - consumption) / consumption
    * ``C5``, ``C6``, ``C11`` -- headroom divided by the limit
    * ``C8``, ``C9``, ``C12`` -- value divided by the total transmit power (or 1 W)
    """
    _check_policy(policy, scen)
    L, K = scen.L, scen.K
    slacks: dict[str, np.ndarray] = {}
    slacks["C1"] = np.array([sinr_ir(policy, scen, k) / scen.gamma_req[k] - 1.0 for k in range(K)])
    if check_backhaul:
        load = np.array([
            backhaul_consumption(policy, scen, l, zero_tol) for l in range(L)
        ])
        slacks["C3"] = _rel(scen.C_backhaul_max - load, scen.C_backhaul_max)
    if scen.energy_limited:
        cons = network_consumption(policy, scen)
        avail = float(np.sum(policy.e_s)) - float(policy.e_s @ scen.B @ policy.e_s)
        slacks["C4"] = np.array([(avail - cons) / max(cons, 1e-12)])
        slacks["C5"] = _rel(scen.E_max - policy.e_s, scen.E_max)
    p_scale = max(policy.total_power(), 1.0)
    slacks["C8"] = policy.e_s / max(1.0, float(np.max(np.abs(policy.e_s), initial=0.0)))
    tx = np.array([
        sum(block_power(policy.W[k], scen, l) for k in range(K)) + block_power(policy.V, scen, l)
        for l in range(L)
    ])
    slacks["C6"] = _rel(scen.P_tx_max - tx, scen.P_tx_max)
    slacks["C9"] = np.array([np.linalg.eigvalsh(policy.V).min() / p_scale])
    slacks["C12"] = np.array([np.linalg.eigvalsh(policy.W[k]).min() / p_scale for k in range(K)])
    if check_selection:
        bp = np.array([[block_power(policy.W[k], scen, l) for k in range(K)] for l in range(L)])
        P = np.broadcast_to(scen.P_tx_max[:, None], bp.shape)
        with np.errstate(invalid="ignore"):
            cap = np.where(policy.s > 0, policy.s * P, 0.0)
        # unlimited RRHs: a switched-off block is still measured against the total power
        scale = np.where(np.isfinite(P), P, p_scale)
        slacks["C11"] = np.where(np.isinf(cap), np.inf, (cap - bp) / scale)
    return ConstraintReport(slacks, tol)
