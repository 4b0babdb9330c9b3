import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasswipt.conic import (
    build_l1_feasibility, build_primal, build_sca, certificate_matrix, complementarity, duality_gap,
    linearized_penalty, null_basis, numerical_rank, rank_one_recovery, RecoveryReport, solve, solve_fixed,
    stationarity_residual, verify_policy,
)
from dasswipt.errors import StructuralError
from dasswipt.model import check_deterministic_constraints
from dasswipt.robust import verify_policy_robust
from conftest import tiny_scenario
from helpers import rand_complex
from test_model import simple_scenario

ONES = np.ones((2, 2), int)


@pytest.fixture(scope="module")
def tiny_full():
    scen = tiny_scenario(0)
    return scen, solve(build_primal(scen, ONES))


class TestPrimal:
    def test_all_ones_optimal(self, tiny_full):
        scen, out = tiny_full
        assert out.optimal
        assert out.objective == pytest.approx(out.policy.total_power())
        assert 0 < out.objective < scen.P_tx_max.sum()

    def test_all_zeros_infeasible(self, tiny):
        out = solve(build_primal(tiny, np.zeros((2, 2), int)))
        assert out.status == "infeasible"

    def test_all_ones_lower_bounds_others(self, tiny_full):
        scen, full = tiny_full
        for bits in ((1, 0, 0, 1), (0, 1, 1, 0), (1, 1, 0, 1), (1, 0, 1, 1)):
            out = solve(build_primal(scen, np.array(bits).reshape(2, 2)))
            if out.optimal:
                assert full.objective <= out.objective * (1 + 1e-6)

    def test_second_backend_agrees(self, tiny_full):
        scen, out = tiny_full
        other = solve(build_primal(scen, ONES), backend="CVXOPT")
        assert other.optimal
        assert other.objective == pytest.approx(out.objective, rel=1e-5)

    def test_mrt_closed_form(self):
        h = np.array([[0.6 + 0.3j, -0.2 + 0.9j]])
        scen = simple_scenario(h=h, gamma_req=[4.0], sigma_ir_sq=[0.5], E_max=np.full(2, np.inf),
                               B=1e-9 * np.eye(2))
        out = solve(build_primal(scen, [[1]]))
        assert out.optimal
        expect = 0.5 * 4.0 / np.linalg.norm(h) ** 2
        assert out.objective == pytest.approx(expect, rel=1e-5)
        pol, beams = rank_one_recovery(out)
        # the recovered beam is matched to the channel
        w = beams.w[0]
        assert abs(np.vdot(h[0], w)) ** 2 == pytest.approx(np.linalg.norm(h) ** 2 * np.linalg.norm(w) ** 2, rel=1e-6)

    def test_vanishing_demand(self):
        scen = simple_scenario(gamma_req=[1e-9], sigma_ir_sq=[1e-3], E_max=np.full(2, np.inf), B=1e-9 * np.eye(2))
        out = solve(build_primal(scen, [[1]]))
        assert out.optimal and out.objective < 1e-6

    def test_bad_selection(self, tiny):
        with pytest.raises(StructuralError):
            build_primal(tiny, np.full((2, 2), 2))
        with pytest.raises(StructuralError):
            build_primal(tiny, np.ones((3, 2)))

    def test_bad_backend(self, tiny):
        with pytest.raises(StructuralError):
            solve(build_primal(tiny, ONES), backend="MOSEK9")


class TestDuality:
    def test_gap_small(self, tiny_full):
        _, out = tiny_full
        assert abs(duality_gap(out)) <= 10 * 1e-6 * max(1.0, out.objective)

    def test_duals_signed(self, tiny_full):
        _, out = tiny_full
        d = out.duals
        assert d.min_scalar() >= -1e-7
        for Z in d.Z:
            assert np.linalg.eigvalsh(Z).min() >= -1e-6 * max(1.0, np.abs(Z).max())
        assert np.linalg.eigvalsh(d.D_c7[0]).min() >= -1e-6 * max(1.0, np.abs(d.D_c7[0]).max())

    def test_stationarity(self, tiny_full):
        _, out = tiny_full
        assert stationarity_residual(out) <= 1e-4

    def test_complementarity_terms(self, tiny_full):
        _, out = tiny_full
        terms = complementarity(out)
        scale = max(1.0, out.objective)
        assert all(abs(v) <= 1e-5 * scale for v in terms.values())

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_gap_across_patterns(self, seed):
        scen = tiny_scenario(seed)
        for bits in ((1, 1, 1, 1), (1, 0, 0, 1), (0, 1, 1, 0)):
            out = solve(build_primal(scen, np.array(bits).reshape(2, 2)))
            if out.optimal:
                assert abs(duality_gap(out)) <= 10 * 1e-6 * max(1.0, out.objective)


@pytest.fixture(scope="module")
def exact():
    scen = tiny_scenario(6, sigma_est_sq=0.0)
    return scen, solve_fixed(scen, np.array([[0, 1], [1, 0]]))


class TestZeroRadius:
    """Perfect ER channel knowledge: the robust rows reduce to their nominal value."""

    def test_certified(self, exact):
        _, out = exact
        assert out.optimal
        assert abs(duality_gap(out)) <= 10 * 1e-6 * max(1.0, out.objective)
        assert stationarity_residual(out) <= 1e-4

    def test_dual_on_corner_only(self, exact):
        scen, out = exact
        D = out.duals.D_c7[0]
        assert np.count_nonzero(D[:scen.n, :]) == 0 and D[scen.n, scen.n].real >= 0
        assert np.all(out.delta == 0) and np.all(out.nu == 0)

    def test_limit_of_small_radius(self, exact):
        scen, out = exact
        # robust optima decrease toward the nominal one as the radius shrinks
        radii = (1e-2, 3e-3, 1e-3)
        objs = []
        for r in radii:
            near = solve_fixed(scen.replace(eps=r * np.linalg.norm(scen.g_hat, axis=1)), np.array([[0, 1], [1, 0]]))
            assert near.optimal
            objs.append(near.objective)
        assert objs[0] > objs[1] > objs[2] >= out.objective
        slope = (objs[1] - objs[2]) / (radii[1] - radii[2])
        assert objs[2] - slope * radii[2] == pytest.approx(out.objective, rel=1e-3)

    def test_policy_verifies(self, exact):
        scen, out = exact
        assert verify_policy(out.policy, scen).ok


class TestL1:
    def test_feasible_pattern_zero(self, tiny):
        out = solve(build_l1_feasibility(tiny, ONES))
        assert out.optimal and out.l1_violation <= 1e-6

    def test_zero_pattern_positive(self, tiny):
        out = solve(build_l1_feasibility(tiny, np.zeros((2, 2), int)))
        assert out.optimal and out.l1_violation > 1e-6
        # with s = 0 the slack must absorb every block power
        bp = np.array([[np.real(np.trace(out.policy.W[k][tiny.block(l), tiny.block(l)])) for k in range(2)]
                       for l in range(2)])
        assert out.l1_violation == pytest.approx(bp.sum(), rel=1e-4)

    def test_zero_pattern_against_full_power(self, tiny_full):
        scen, full = tiny_full
        out = solve(build_l1_feasibility(scen, np.zeros((2, 2), int)))
        # the all-ones optimum is a feasible point of this program with slack equal to its signal power
        signal = sum(np.real(np.trace(W)) for W in full.policy.W)
        assert 0 < out.l1_violation <= signal * (1 + 1e-4)

    def test_doubling_power_never_hurts(self, tiny):
        s = np.array([[1, 0], [0, 0]])
        base = solve(build_l1_feasibility(tiny, s))
        big = tiny.replace(P_tx_max=2 * tiny.P_tx_max)
        more = solve(build_l1_feasibility(big, s))
        assert more.l1_violation <= base.l1_violation * (1 + 1e-5) + 1e-9


class TestRecovery:
    def test_rank_one_and_objective(self, tiny_full):
        scen, out = tiny_full
        rep = RecoveryReport()
        pol, beams = rank_one_recovery(out, report=rep)
        assert all(numerical_rank(W) == 1 for W in pol.W)
        assert rep.objective_change <= 1e-6
        assert np.allclose(pol.W, np.einsum("ki,kj->kij", beams.w, beams.w.conj()), atol=1e-12)

    def test_already_rank_one_unchanged(self, tiny_full):
        _, out = tiny_full
        pol, _ = rank_one_recovery(out)
        again = out.policy.__class__(pol.W, pol.V, pol.e_s, pol.s)
        out2 = type(out)("optimal", out.program, again, out.duals, out.objective, delta=out.delta, nu=out.nu)
        rep = RecoveryReport()
        pol2, _ = rank_one_recovery(out2, report=rep)
        assert all(p.size == 0 for p in rep.psi)
        assert np.allclose(pol2.W, pol.W, atol=1e-10)

    @pytest.mark.parametrize("seed", [0, 1, 2, 4, 5])
    def test_recovered_policy_verifies(self, seed):
        scen = tiny_scenario(seed)
        out = solve_fixed(scen, ONES)
        pol, _ = rank_one_recovery(out)
        assert check_deterministic_constraints(pol, scen, 1e-5, check_backhaul=False).ok  # all-ones exceeds the tight cap
        assert verify_policy_robust(pol, scen, 1e-5).ok
        assert verify_policy(pol, scen, tol=1e-5).ok

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_signal_subspace_outside_null_space(self, seed):
        scen = tiny_scenario(seed)
        out = solve_fixed(scen, ONES)
        for k in range(scen.K):
            H = np.outer(scen.h[k], scen.h[k].conj())
            Y = null_basis(certificate_matrix(out, k))
            assert np.linalg.norm(H @ Y) <= 1e-6 * np.linalg.norm(H)

    def test_relaxation_lower_bounds_recovered(self, tiny_full):
        _, out = tiny_full
        pol, _ = rank_one_recovery(out)
        assert out.objective <= pol.total_power() * (1 + 1e-6)

    def test_needs_optimal(self, tiny):
        out = solve(build_primal(tiny, np.zeros((2, 2), int)))
        with pytest.raises(StructuralError):
            rank_one_recovery(out)

    def test_rank_one_from_higher_rank(self, rng):
        # hand-built outcome: W of rank two on a no-ER scenario, recovery keeps the signal power
        h = rand_complex(rng, 1, 2)
        scen = simple_scenario(h=h, gamma_req=[1.0], sigma_ir_sq=[0.1], E_max=np.full(2, np.inf), B=1e-9 * np.eye(2))
        out = solve(build_primal(scen, [[1]]))
        W = out.policy.W.copy()
        u = np.array([h[0, 1].conj(), -h[0, 0].conj()]) / np.linalg.norm(h)
        W[0] = W[0] + 0.01 * np.outer(u, u.conj())  # orthogonal to h: no signal change
        out.policy = out.policy.__class__(W, out.policy.V, out.policy.e_s, out.policy.s)
        rep = RecoveryReport()
        pol, _ = rank_one_recovery(out, report=rep, tol=1e-4)
        assert rep.ranks_before == [2]
        assert numerical_rank(pol.W[0]) == 1
        assert pol.total_power() == pytest.approx(np.real(np.trace(W[0])) + np.real(np.trace(out.policy.V)), rel=1e-9)


class TestNumericalRank:
    def test_examples(self, rng):
        w1, w2 = rand_complex(rng, 3), rand_complex(rng, 3)
        assert numerical_rank(np.outer(w1, w1.conj())) == 1
        assert numerical_rank(np.zeros((3, 3))) == 0
        A = np.outer(w1, w1.conj()) + 1e-12 * np.outer(w2, w2.conj())
        assert numerical_rank(A, 1e-8) == 1
        assert numerical_rank(np.outer(w1, w1.conj()) + np.outer(w2, w2.conj())) == 2


class TestSca:
    @settings(max_examples=60)
    @given(st.integers(0, 10_000), st.floats(0.0, 100.0))
    def test_linearized_penalty_majorizes(self, seed, phi):
        rng = np.random.default_rng(seed)
        s, a = rng.random((2, 3)), rng.random((2, 3))
        exact = phi * np.sum(s - s ** 2)
        lin = linearized_penalty(s, a, phi)
        assert lin >= exact - 1e-9 * max(1.0, phi)
        assert linearized_penalty(a, a, phi) == pytest.approx(phi * np.sum(a - a ** 2), abs=1e-9)

    def test_binary_anchor(self):
        a = np.array([[1.0, 0.0]])
        assert linearized_penalty(a, a, 5.0) == 0.0
        assert linearized_penalty(np.array([[0.0, 1.0]]), a, 5.0) == pytest.approx(10.0)

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            linearized_penalty(np.ones(2), np.ones(3), 1.0)

    def test_relaxation_solves(self, tiny):
        out = solve(build_sca(tiny, np.full((2, 2), 0.5), 0.0))
        assert out.optimal
        assert np.all((out.s_relaxed >= 0) & (out.s_relaxed <= 1))
        # with no penalty the relaxation is at most the all-ones power
        full = solve(build_primal(tiny, ONES))
        assert out.objective <= full.objective * (1 + 1e-5)

    def test_bad_anchor(self, tiny):
        with pytest.raises(StructuralError):
            build_sca(tiny, np.full((2, 2), 1.5), 1.0)
        with pytest.raises(StructuralError):
            build_sca(tiny, np.full((2, 2), 0.5), -1.0)


def test_dump_format(tiny):
    buf = io.StringIO()
    build_primal(tiny, ONES).dump(buf)
    text = buf.getvalue().splitlines()
    assert text[0].startswith("# conic program kind=primal")
    assert text[1].startswith("vars ")
    assert "psd=" in text[2]
    assert {"objective", "A", "b"} <= set(text)


def test_primal_point_must_verify():
    # the default backend lands 3e-6 short on C1 here; the next backend takes over
    scen = tiny_scenario(16, sigma_est_sq=0.0)
    s = np.array([[1, 0], [0, 1]])
    first = solve(build_primal(scen, s))
    assert first.status == "numerical-failure" and "primal check" in first.solver_status
    out = solve_fixed(scen, s)
    assert out.optimal and out.backend != "CLARABEL"
    assert verify_policy(out.policy, scen, out.program.energy, 1e-6).ok
