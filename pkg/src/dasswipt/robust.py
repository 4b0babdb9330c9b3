"""S-procedure LMIs for the semi-infinite ER constraints and an exact worst-case oracle.

The oracle (:func:`worst_case_quadratic`) solves the trust-region subproblem
over the whitened uncertainty ellipsoid through its secular equation. It
shares no code with the LMI builders, so agreement between the two is an
independent check of the S-procedure reformulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import brentq

from .errors import StructuralError
from .model import ConstraintReport, Policy, Scenario, quad

SECULAR_TOL = 1e-10


@dataclass(frozen=True)
class LmiBlock:
    """Hermitian (n+1)x(n+1) matrix whose PSD-ness certifies one robust constraint."""

    matrix: np.ndarray
    tag: tuple  # ("C2", m, k) or ("C7", m)
    multiplier: float

    def __post_init__(self):
        A = self.matrix
        scale = max(1.0, float(np.abs(A).max()))
        if not np.allclose(A, A.conj().T, rtol=0, atol=1e-10 * scale):
            raise StructuralError(f"LMI block {self.tag} is not Hermitian")

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())

    def is_psd(self, rtol: float = 1e-12) -> bool:
        return self.min_eig() >= -rtol * max(1.0, float(np.abs(self.matrix).max()))


def _u_congruence(X: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """U^H X U with U = [I, g_hat]."""
    Xg = X @ g_hat
    n = X.shape[0]
    out = np.empty((n + 1, n + 1), complex)
    out[:n, :n] = X
    out[:n, n] = Xg
    out[n, :n] = Xg.conj()
    out[n, n] = np.vdot(g_hat, Xg)
    return out


def _multiplier_part(Xi, eps) -> np.ndarray:
    n = Xi.shape[0]
    out = np.zeros((n + 1, n + 1), complex)
    out[:n, :n] = Xi
    out[n, n] = -eps ** 2
    return out


def _hermitize(A):
    return 0.5 * (A + A.conj().T)


def c2_lmi_parts(W_k, V, g_hat, Xi, eps, gamma_tol, sigma_s_sq):
    """Return (S0, S1) with S(delta) = S0 + delta * S1 for the ER-SINR LMI."""
    n = len(g_hat)
    S0 = _u_congruence(np.asarray(V, complex), g_hat) - _u_congruence(np.asarray(W_k, complex), g_hat) / gamma_tol
    S0[n, n] += sigma_s_sq
    return _hermitize(S0), _multiplier_part(np.asarray(Xi, complex), eps)


def c7_lmi_parts(W_all, V, g_hat, Xi, eps, P_min, mu):
    """Return (S0, S1) with S(nu) = S0 + nu * S1 for the harvested-power LMI."""
    n = len(g_hat)
    T = np.asarray(V, complex) + np.asarray(W_all, complex).sum(axis=0)
    S0 = _u_congruence(T, g_hat)
    S0[n, n] -= P_min / mu
    return _hermitize(S0), _multiplier_part(np.asarray(Xi, complex), eps)


def build_c2_lmi(W_k, V, g_hat, Xi, eps, gamma_tol, delta, sigma_s_sq, tag=("C2",)) -> LmiBlock:
    if delta < 0:
        raise StructuralError("S-procedure multiplier must be nonnegative")
    g_hat = np.asarray(g_hat, complex)
    _check_dims(W_k, V, g_hat, Xi)
    S0, S1 = c2_lmi_parts(W_k, V, g_hat, Xi, eps, gamma_tol, sigma_s_sq)
    return LmiBlock(S0 + delta * S1, tuple(tag), float(delta))


def build_c7_lmi(W_all, V, g_hat, Xi, eps, P_min, mu, nu, tag=("C7",)) -> LmiBlock:
    if nu < 0:
        raise StructuralError("S-procedure multiplier must be nonnegative")
    g_hat = np.asarray(g_hat, complex)
    W_all = np.asarray(W_all, complex)
    for W in W_all:
        _check_dims(W, V, g_hat, Xi)
    S0, S1 = c7_lmi_parts(W_all, V, g_hat, Xi, eps, P_min, mu)
    return LmiBlock(S0 + nu * S1, tuple(tag), float(nu))


def _check_dims(W, V, g, Xi):
    n = g.shape[0]
    for name, A in (("W", W), ("V", V), ("Xi", Xi)):
        if np.shape(A) != (n, n):
            raise StructuralError(f"{name} must be {n}x{n}, got {np.shape(A)}")


def best_multiplier(S0: np.ndarray, S1: np.ndarray, delta_max: float, iters: int = 200) -> tuple[float, float]:
    """Maximize lambda_min(S0 + d*S1) over d in [0, delta_max].

    lambda_min is concave in d; bisection on the sign of its supergradient
    v^H S1 v (v the bottom eigenvector) locates the maximizer.
    Returns (d*, lambda_min at d*).
    """
    def eig_and_slope(d):
        w, v = np.linalg.eigh(S0 + d * S1)
        return w[0], float(np.real(np.vdot(v[:, 0], S1 @ v[:, 0])))

    lam0, slope0 = eig_and_slope(0.0)
    if slope0 <= 0 or delta_max <= 0:
        return 0.0, float(lam0)
    lo, hi = 0.0, float(delta_max)
    lam_hi, slope_hi = eig_and_slope(hi)
    if slope_hi >= 0:
        return hi, float(lam_hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        _, s = eig_and_slope(mid)
        if s > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    d = 0.5 * (lo + hi)
    return d, float(eig_and_slope(d)[0])


def _delta_max(S0, Xi, eps) -> float:
    corner = float(np.real(S0[-1, -1]))
    if eps > 0:
        return max(corner, 0.0) / eps ** 2
    # zero radius: the multiplier only inflates the top-left block
    lam = float(np.linalg.eigvalsh(Xi).min())
    return 1e8 * (float(np.abs(S0).max()) + 1.0) / lam


def lmi_feasible(S0: np.ndarray, S1: np.ndarray, Xi, eps, rtol: float = 1e-12) -> tuple[bool, float, float]:
    """Whether some multiplier >= 0 makes S0 + d*S1 PSD. Returns (decision, d*, lambda_min)."""
    d, lam = best_multiplier(S0, S1, _delta_max(S0, Xi, eps))
    scale = max(float(np.abs(S0).max()), 1e-300)
    return lam >= -rtol * scale, d, lam


def worst_case_quadratic(A, g_hat, Xi, eps, sense: str = "max") -> float:
    """Exact optimum of (g+D)^H A (g+D) over D^H Xi D <= eps^2.

    The uncertainty is whitened with the Cholesky factor of Xi and the
    resulting trust-region subproblem is solved via its secular equation,
    including the hard case.
    """
    if sense not in ("max", "min"):
        raise StructuralError("sense must be 'max' or 'min'")
    A = _hermitize(np.asarray(A, complex))
    g_hat = np.asarray(g_hat, complex)
    Xi = np.asarray(Xi, complex)
    if eps < 0:
        raise StructuralError("eps must be nonnegative")
    base = quad(A, g_hat)
    if eps == 0:
        return base
    try:
        Lc = cholesky(_hermitize(Xi), lower=True)
    except np.linalg.LinAlgError as exc:
        raise StructuralError("Xi must be positive definite") from exc
    if np.linalg.cond(Lc) > 1e14:
        raise StructuralError("Xi is numerically singular")
    # D = L^{-H} x with ||x|| <= eps
    Linv_A = solve_triangular(Lc, A, lower=True)
    Q = solve_triangular(Lc, Linv_A.conj().T, lower=True).conj().T  # L^{-1} A L^{-H}
    Q = _hermitize(Q)
    c = solve_triangular(Lc, A @ g_hat, lower=True)  # L^{-1} A g
    sign = -1.0 if sense == "max" else 1.0
    val = trust_region_min(sign * Q, sign * c, eps)
    return base + sign * val


def trust_region_min(Q: np.ndarray, c: np.ndarray, radius: float) -> float:
    """min x^H Q x + 2 Re(c^H x) subject to ||x|| <= radius, Q Hermitian.

    The multiplier theta >= max(0, -lambda_min) solves ||(Q + theta I)^{-1} c|| = radius
    unless the unconstrained minimizer is interior or the hard case applies.
    """
    lam, U = np.linalg.eigh(Q)
    ct = U.conj().T @ c
    a2 = np.abs(ct) ** 2
    scale = max(float(np.abs(lam).max()), float(np.sqrt(a2.sum())) / radius, 1e-300)
    theta_lo = max(0.0, -float(lam[0]))
    shifted = lam + theta_lo
    degenerate = np.abs(shifted) <= 1e-13 * scale
    rest = ~degenerate
    singular_grad = bool(np.any(a2[degenerate] > (1e-13 * scale * radius) ** 2))

    def objective(x):
        return float(np.sum(lam * np.abs(x) ** 2) + 2.0 * np.real(np.vdot(ct, x)))

    if not singular_grad:
        x = np.zeros_like(ct)
        x[rest] = -ct[rest] / shifted[rest]
        nrm = float(np.linalg.norm(x))
        if nrm <= radius:
            if theta_lo > 0:
                # hard case: fill the remaining radius along the bottom eigenvector
                x[int(np.flatnonzero(degenerate)[0])] = np.sqrt(radius ** 2 - nrm ** 2)
            return objective(x)

    def secular(theta):
        return 1.0 / radius - 1.0 / float(np.sqrt(np.sum(a2 / (lam + theta) ** 2)))

    lo = theta_lo + (1e-15 * scale if degenerate.any() else 0.0)
    hi = theta_lo + float(np.sqrt(a2.sum())) / radius + 1e-15 * scale
    while secular(hi) > 0:
        hi = theta_lo + 2.0 * (hi - theta_lo)
    theta = brentq(secular, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    x = -ct / (lam + theta)
    if abs(np.linalg.norm(x) - radius) > SECULAR_TOL * radius:
        raise ArithmeticError("secular equation did not converge")
    return objective(x)


def worst_case_er_sinr(W_k, V, g_hat, Xi, eps, sigma_s_sq) -> float:
    """Exact max over the uncertainty set of |g^H w|^2 / (g^H V g + sigma_s^2).

    Dinkelbach root-finding on r -> max_D g^H (W - r V) g - r sigma^2,
    which is decreasing in r; each evaluation is one trust-region solve.
    """
    W_k = np.asarray(W_k, complex)
    V = np.asarray(V, complex)
    top = worst_case_quadratic(W_k, g_hat, Xi, eps, "max")
    if top <= 0:
        return 0.0

    def F(r):
        return worst_case_quadratic(W_k - r * V, g_hat, Xi, eps, "max") - r * sigma_s_sq

    hi = top / sigma_s_sq
    if F(hi) > 0:  # cannot happen for V PSD; guard against indefinite V
        while F(hi) > 0:
            hi *= 2
    return brentq(F, 0.0, hi, xtol=1e-300, rtol=1e-13, maxiter=500)


def verify_policy_robust(policy: Policy, scen: Scenario, tol: float = 1e-6) -> ConstraintReport:
    """Worst-case check of the ER secrecy and harvested-power constraints.

    Slacks:
      ``C2[m, k]`` = 1 - worst-case SINR / Gamma_tol
      ``C7[m]``    = worst-case harvested power / P_min - 1
    """
    M, K = scen.M, scen.K
    c2 = np.zeros((M, K))
    c7 = np.zeros(M)
    total = policy.V + policy.W.sum(axis=0)
    for m in range(M):
        args = (scen.g_hat[m], scen.Xi[m], scen.eps[m])
        for k in range(K):
            wc = worst_case_er_sinr(policy.W[k], policy.V, *args, scen.sigma_s_sq)
            c2[m, k] = 1.0 - wc / scen.gamma_tol
        harvested = scen.mu * worst_case_quadratic(total, *args, "min")
        c7[m] = harvested / scen.P_min_er[m] - 1.0 if scen.P_min_er[m] > 0 else np.inf
    return ConstraintReport({"C2": c2, "C7": c7}, tol)


def sample_ball(rng: np.random.Generator, n: int, size: int, radius: float, Xi=None, surface_frac: float = 0.5):
    """Uniform samples from the complex ellipsoid D^H Xi D <= radius^2.

    A fraction ``surface_frac`` of samples is placed on the boundary, where
    the worst cases live.
    """
    z = rng.standard_normal((size, n)) + 1j * rng.standard_normal((size, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    u = rng.random(size) ** (1.0 / (2 * n))
    n_surf = int(round(surface_frac * size))
    u[:n_surf] = 1.0
    x = radius * z * u[:, None]
    if Xi is None:
        return x
    Lc = cholesky(_hermitize(np.asarray(Xi, complex)), lower=True)
    # D = L^{-H} x
    return solve_triangular(Lc.conj().T, x.T, lower=False).T
