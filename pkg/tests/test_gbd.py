from types import SimpleNamespace

import numpy as np
import pytest

from dasswipt.conic import build_l1_feasibility, solve
from dasswipt.errors import InstanceInfeasible, StructuralError
from dasswipt.gbd import (
    Cut, backhaul_ok, bitstring, enumeration_optimum, feasibility_cut, master_branch_and_bound, master_enumerate,
    optimality_cut, run_gbd, solve_master,
)
from dasswipt.baselines import baseline_full_cooperation
from conftest import tiny_enumeration, tiny_gbd, tiny_scenario
from test_model import simple_scenario


def fake_outcome(kind, beta, objective=0.0, l1=0.0):
    prog = SimpleNamespace(kind=kind)
    return SimpleNamespace(optimal=True, program=prog, duals=SimpleNamespace(beta=np.asarray(beta, float)),
                           objective=objective, l1_violation=l1)


def knapsack_scenario(L, K, R, cap):
    return simple_scenario(L=L, K=K, gamma_req=np.full(K, 2.0), sigma_ir_sq=np.ones(K), R_backhaul=np.asarray(R, float),
                           C_backhaul_max=np.asarray(cap, float), P_tx_max=np.ones(L), E_max=np.full(L + 1, 100.0),
                           B=0.01 * np.eye(L + 1), P_c_rrh=np.zeros(L))


class TestCuts:
    def test_inactive_coupling(self):
        scen = knapsack_scenario(1, 2, [1, 1], [5])
        cut = optimality_cut(fake_outcome("primal", [[0.0, 0.0]], 10.0), [[1, 1]], scen)
        for s in ([[0, 0]], [[1, 0]], [[1, 1]]):
            assert cut.evaluate(s) == 10.0

    def test_single_binary_on(self):
        scen = knapsack_scenario(1, 1, [1], [5])
        # beta * P = 5 on a served block, generated at s = 1
        cut = optimality_cut(fake_outcome("primal", [[5.0]], 10.0), [[1]], scen)
        assert cut.constant == 15.0 and cut.coeff[0, 0] == -5.0
        assert cut.evaluate([[1]]) == 10.0 and cut.evaluate([[0]]) == 15.0

    def test_off_block_switch_on_releases_cut(self):
        scen = knapsack_scenario(1, 2, [1, 1], [5])
        cut = optimality_cut(fake_outcome("primal", [[2.0, 123.0]], 10.0), [[1, 0]], scen)
        assert cut.evaluate([[1, 0]]) == pytest.approx(10.0)
        assert cut.evaluate([[1, 1]]) <= 0.0
        assert cut.evaluate([[0, 0]]) == pytest.approx(12.0)

    def test_feasibility_separates(self):
        scen = knapsack_scenario(1, 2, [1, 1], [5])
        cut = feasibility_cut(fake_outcome("l1", [[0.0, 3.0]], l1=0.7), [[1, 0]], scen)
        assert cut.evaluate([[1, 0]]) == pytest.approx(0.7)
        assert cut.evaluate([[1, 1]]) == pytest.approx(0.7 - 3.0)

    def test_affine(self, rng):
        cut = Cut("optimality", 1.3, rng.standard_normal((2, 2)))
        s = rng.integers(0, 2, (2, 2))
        assert cut.evaluate(s) - cut.evaluate(1 - s) == pytest.approx(np.sum(cut.coeff * (2 * s - 1)))

    def test_wrong_sources(self):
        scen = knapsack_scenario(1, 1, [1], [5])
        with pytest.raises(StructuralError):
            optimality_cut(fake_outcome("l1", [[1.0]]), [[1]], scen)
        with pytest.raises(StructuralError):
            feasibility_cut(fake_outcome("l1", [[1.0]], l1=0.0), [[1]], scen)
        with pytest.raises(StructuralError):
            Cut("other", 0.0, np.zeros((1, 1)))

    def test_real_feasibility_cut_properties(self):
        scen = tiny_scenario(0)
        s0 = np.zeros((2, 2), int)
        out = solve(build_l1_feasibility(scen, s0))
        cut = feasibility_cut(out, s0, scen)
        assert cut.evaluate(s0) == pytest.approx(out.l1_violation) and cut.evaluate(s0) > 0
        assert cut.evaluate(np.ones((2, 2))) <= 1e-7


class TestMaster:
    def test_single_cut(self):
        scen = knapsack_scenario(1, 1, [2], [10])
        res = solve_master([Cut("optimality", 10.0, np.array([[-5.0]]))], scen)
        assert res.s.tolist() == [[1]] and res.mu == 5.0

    def test_knapsack(self):
        scen = knapsack_scenario(2, 2, [2, 2], [3, 3])
        cut = Cut("optimality", 0.0, -np.ones((2, 2)))
        for method in ("enumerate", "bnb"):
            res = solve_master([cut], scen, method)
            assert np.all(res.s.sum(axis=1) <= 1)
            assert res.mu == -2.0

    def test_no_cuts_lexicographic(self):
        scen = knapsack_scenario(1, 2, [1, 1], [5])
        res = solve_master([], scen)
        assert res.s.tolist() == [[0, 0]] and res.mu == -np.inf

    def test_infeasible_master(self):
        scen = knapsack_scenario(1, 1, [1], [5])
        cuts = [Cut("feasibility", 1.0, np.array([[0.0]]))]
        assert solve_master(cuts, scen, "enumerate") is None
        assert solve_master(cuts, scen, "bnb") is None

    def test_unknown_method(self):
        with pytest.raises(StructuralError):
            solve_master([], knapsack_scenario(1, 1, [1], [5]), "simplex")

    def test_bnb_matches_enumeration(self, rng):
        for trial in range(100):
            R = rng.uniform(0.5, 2.0, 3)
            scen = knapsack_scenario(2, 3, R, rng.uniform(0.5, 1.0, 2) * R.sum())
            cuts = [Cut("optimality", rng.normal(5, 2), rng.normal(0, 2, (2, 3))) for _ in range(rng.integers(1, 6))]
            cuts += [Cut("feasibility", rng.normal(-1, 1), rng.normal(0, 1, (2, 3))) for _ in range(rng.integers(0, 3))]
            a, b = master_enumerate(cuts, scen), master_branch_and_bound(cuts, scen)
            assert (a is None) == (b is None), trial
            if a is not None:
                assert b.mu == pytest.approx(a.mu, abs=1e-9), trial
                assert bitstring(a.s) == bitstring(b.s), trial

    def test_backhaul_ok(self):
        scen = knapsack_scenario(2, 2, [2, 2], [3, 4])
        assert backhaul_ok([[1, 0], [1, 1]], scen)
        assert not backhaul_ok([[1, 1], [0, 0]], scen)


class TestRunGbd:
    def test_matches_enumeration(self):
        values, _ = tiny_enumeration(0)
        best, _ = enumeration_optimum(tiny_scenario(0), values)
        _, _, trace = tiny_gbd(0)
        assert trace.objective == pytest.approx(best, rel=1e-4)

    def test_bounds_monotone(self):
        _, _, trace = tiny_gbd(0)
        ub = [r.UB for r in trace.records]
        lb = [r.LB for r in trace.records]
        assert all(b <= a for a, b in zip(ub, ub[1:]))
        assert all(b >= a for a, b in zip(lb, lb[1:]))
        assert trace.status == "optimal"
        assert trace.iterations <= 2 ** 4 + 2

    @pytest.mark.parametrize("init_seed", [1, 2, 3, 4, 5])
    def test_random_start_same_objective(self, init_seed):
        _, _, ref = tiny_gbd(0)
        _, _, trace = run_gbd(tiny_scenario(0), kappa=1e-4, init_seed=init_seed)
        assert trace.objective == pytest.approx(ref.objective, rel=1e-4)

    def test_bnb_master_same_result(self):
        _, _, ref = tiny_gbd(1)
        _, _, trace = run_gbd(tiny_scenario(1), kappa=1e-4, master="bnb")
        assert trace.objective == pytest.approx(ref.objective, rel=1e-4)

    def test_uncapped_equals_full_cooperation(self):
        scen = tiny_scenario(2, C_backhaul_max=np.inf)
        _, _, trace = run_gbd(scen, kappa=1e-4)
        _, _, full = baseline_full_cooperation(scen)
        assert trace.objective == pytest.approx(full, rel=1e-4)

    def test_infeasible_instance(self):
        # seed 13 of the tiny family admits no feasible pattern
        with pytest.raises(InstanceInfeasible):
            run_gbd(tiny_scenario(13), kappa=1e-4)

    def test_budget_exhausted_before_feasible(self):
        # the all-ones start breaks the tight cap, so one iteration finds nothing usable
        with pytest.raises(InstanceInfeasible, match="budget"):
            run_gbd(tiny_scenario(0), kappa=0.0, max_iter=1)

    def test_budget_exhausted_returns_best(self):
        _, _, ref = tiny_gbd(0)
        n = ref.iterations
        if n < 3:
            pytest.skip("reference run too short to truncate")
        _, _, trace = run_gbd(tiny_scenario(0), kappa=0.0, max_iter=n - 1)
        assert trace.status in ("max-iter", "repeated-pattern", "optimal")
        assert trace.objective >= ref.objective * (1 - 1e-4)

    def test_bad_arguments(self):
        with pytest.raises(StructuralError):
            run_gbd(tiny_scenario(0), kappa=-1.0)
        with pytest.raises(StructuralError):
            run_gbd(tiny_scenario(0), s0=np.ones((3, 3)))

    def test_trace_csv(self, tmp_path):
        _, _, trace = tiny_gbd(0)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,UB,LB,status,s"
        assert len(lines) == trace.iterations + 1
        assert lines[1].split(",")[4] == "1111"
