import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import clarabel_l1, enumerate_vertices, highs_l1
from pulselab import kernel as K
from pulselab import signal as S
from pulselab import solver as L

GAUSS = K.gaussian()


def instance_for(pairs, grid, delta, seed=0, nonneg=False, kernel=GAUSS):
    spikes = S.SpikeTrain.from_pairs(pairs)
    G = S.convolution_matrix(kernel, grid)
    m = S.add_noise(S.synthesize(spikes, kernel, grid), grid, delta, seed=seed)
    return L.ProblemInstance(G, m.y, delta, nonneg), spikes


def feasible(inst, sol, feas_tol=1e-9):
    floor = sol.report.feas_floor
    return sol.residual_l1 <= inst.delta * (1 + feas_tol) + floor


class TestReformulation:
    def test_counts(self):
        inst = L.ProblemInstance(np.eye(7), np.ones(7), 0.1)
        lp = L.lp_reformulate(inst)
        assert lp.n_vars == 28
        assert lp.A_eq.shape == (7, 28) and lp.A_ub.shape == (1, 28)

    def test_nonneg_counts(self):
        lp = L.lp_reformulate(L.ProblemInstance(np.eye(7), np.ones(7), 0.1, nonneg=True))
        assert lp.n_vars == 21
        assert "x_minus" not in lp.blocks

    def test_zero_delta_forces_exact_fit(self):
        inst = L.ProblemInstance(np.eye(3), np.ones(3), 0.0)
        lp = L.lp_reformulate(inst)
        assert lp.b_ub[0] == 0.0
        r = np.zeros(lp.n_vars)
        r[lp.blocks["r_plus"]] = 1.0
        # any residual mass violates the budget row
        assert (lp.A_ub @ r)[0] > lp.b_ub[0]

    def test_equivalent_to_program(self):
        grid = S.GridConfig(N=2, sigma=1.0, k_min=-8, k_max=8)
        inst, _ = instance_for([(-2, 1.0), (3, -0.5)], grid, 0.05, seed=2)
        obj, _ = highs_l1(L.lp_reformulate(inst))
        assert L.solve(inst).objective == pytest.approx(obj, abs=1e-7)


class TestSolve:
    def test_zero_measurement(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-20, k_max=20)
        G = S.convolution_matrix(GAUSS, grid)
        for delta in (0.0, 0.1):
            sol = L.solve(L.ProblemInstance(G, np.zeros(grid.width), delta))
            assert sol.status is L.Status.OPTIMAL
            assert sol.objective == 0.0 and not np.any(sol.x_hat)

    def test_single_spike(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-10, k_max=10)
        inst, _ = instance_for([(0, 1.0)], grid, 1e-6, seed=1)
        sol = L.solve(inst)
        assert sol.status is L.Status.OPTIMAL
        assert sol.x_hat[10] == pytest.approx(1.0, abs=1e-3)
        assert np.abs(np.delete(sol.x_hat, 10)).sum() <= 1e-3
        ref, _ = clarabel_l1(inst.G, inst.y, inst.delta)
        assert sol.objective == pytest.approx(ref, abs=1e-6)

    def test_two_separated_spikes(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-40, k_max=40)
        inst, spikes = instance_for([(-11, 1.0), (11, 1.0)], grid, 1e-6, seed=5)
        sol = L.solve(inst)
        rec = L.extract_spikes(sol, grid)
        assert np.array_equal(rec.k, spikes.k)
        assert np.abs(rec.c - spikes.c).max() <= 1e-3

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
    def test_homogeneity(self, alpha):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-60, k_max=60)
        inst, _ = instance_for([(-20, 1.2), (0, -0.7), (25, 0.9)], grid, 1e-3, seed=8)
        base = L.solve(inst)
        scaled = L.solve(L.ProblemInstance(inst.G, alpha * inst.y, alpha * inst.delta))
        tol = 2 * L.SolverOptions().resolved_opt_tol(alpha * inst.y)
        assert np.abs(scaled.x_hat - alpha * base.x_hat).sum() <= tol

    def test_feasibility_and_minimality(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-100, k_max=100)
        rng = np.random.default_rng(11)
        for seed in range(4):
            pairs = [(-40, rng.uniform(0.5, 2)), (-5, -rng.uniform(0.5, 2)), (33, rng.uniform(0.5, 2))]
            inst, spikes = instance_for(pairs, grid, 10.0 ** -rng.integers(2, 8), seed=seed)
            sol = L.solve(inst)
            assert sol.status is L.Status.OPTIMAL
            assert feasible(inst, sol)
            assert sol.objective <= np.abs(spikes.c).sum() + L.SolverOptions().resolved_opt_tol(inst.y)
            assert sol.gap <= L.SolverOptions().resolved_opt_tol(inst.y)

    def test_nonneg(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-60, k_max=60)
        inst, _ = instance_for([(-3, 1.0), (3, 0.8), (30, 0.5)], grid, 1e-3, seed=3, nonneg=True)
        sol = L.solve(inst)
        assert sol.status is L.Status.OPTIMAL
        assert sol.x_hat.min() >= -1e-10
        ref, _ = clarabel_l1(inst.G, inst.y, inst.delta, nonneg=True)
        assert sol.objective == pytest.approx(ref, abs=1e-6)

    def test_nonneg_infeasible(self):
        G = np.array([[1.0, 0.5], [0.5, 1.0]])
        sol = L.solve(L.ProblemInstance(G, np.array([-1.0, -1.0]), 0.1, nonneg=True))
        assert sol.status is L.Status.INFEASIBLE

    def test_max_iter(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-60, k_max=60)
        inst, _ = instance_for([(-3, 1.0), (30, 0.5)], grid, 1e-3, seed=3)
        sol = L.solve(inst, L.SolverOptions(max_iter=2))
        assert sol.status is L.Status.MAX_ITER
        assert sol.iterations == 2

    def test_rectangular(self):
        rng = np.random.default_rng(0)
        G = rng.normal(size=(6, 9))
        y = rng.normal(size=6)
        sol = L.solve(L.ProblemInstance(G, y, 0.3))
        obj, _ = clarabel_l1(G, y, 0.3)
        assert sol.status is L.Status.OPTIMAL
        assert sol.objective == pytest.approx(obj, abs=1e-6)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            L.SolverOptions(feas_tol=0)
        with pytest.raises(ValueError):
            L.SolverOptions(max_iter=0)
        with pytest.raises(ValueError):
            L.ProblemInstance(np.eye(3), np.ones(2), 0.1)
        with pytest.raises(ValueError):
            L.ProblemInstance(np.eye(3), np.ones(3), -0.1)


class TestVerifyOptimality:
    def test_hand_built_lp(self):
        # min x1 + x2  s.t. |4 - 2 x1 - x2| <= 1, x >= 0.  Vertices on the
        # budget boundary: (1.5, 0), (2.5, 0), (0, 3), (0, 5); the best is 1.5.
        inst = L.ProblemInstance(np.array([[2.0, 1.0]]), np.array([4.0]), 1.0, nonneg=True)
        sol = L.solve(inst)
        assert np.allclose(sol.x_hat, [1.5, 0.0])
        rep = L.verify_optimality(inst, sol, sol.duals)
        assert rep.gap <= 1e-12 and rep.primal_feas == 0.0 and rep.dual_feas <= 1e-12
        # the dual optimum is lam = mu = 1/2
        assert sol.duals.lam[0] == pytest.approx(0.5) and sol.duals.mu == pytest.approx(0.5)

    def test_perturbation_breaks_certificate(self):
        grid = S.GridConfig(N=10, sigma=1.0, k_min=-30, k_max=30)
        inst, _ = instance_for([(-11, 1.0), (11, -1.0)], grid, 1e-4)
        sol = L.solve(inst)
        base = L.verify_optimality(inst, sol, sol.duals)
        x = sol.x_hat.copy()
        x[17] += 0.1
        rep = L.verify_optimality(inst, x, sol.duals)
        assert rep.primal_feas > base.primal_feas or rep.gap > base.gap

    def test_dimension_mismatch(self):
        inst = L.ProblemInstance(np.eye(3), np.ones(3), 0.1)
        with pytest.raises(ValueError):
            L.verify_optimality(inst, np.zeros(4), L.DualVariables(np.zeros(3), 0.0))


@settings(max_examples=25, deadline=None)
@given(
    W=st.integers(2, 4),
    seed=st.integers(0, 10_000),
    nonneg=st.booleans(),
    rel_delta=st.floats(0.0, 0.5),
)
def test_matches_vertex_enumeration(W, seed, nonneg, rel_delta):
    rng = np.random.default_rng(seed)
    idx = np.arange(W)
    G = np.exp(-0.5 * (np.subtract.outer(idx, idx) / rng.uniform(0.5, 1.5)) ** 2)
    x = np.zeros(W)
    x[rng.integers(W)] = rng.uniform(0.5, 2.0)
    y = G @ x + 0.05 * rng.normal(size=W)
    delta = rel_delta * np.abs(y).sum()
    ref, _ = enumerate_vertices(G, y, delta, nonneg)
    sol = L.solve(L.ProblemInstance(G, y, delta, nonneg))
    if not np.isfinite(ref):
        assert sol.status is L.Status.INFEASIBLE
        return
    assert sol.status is L.Status.OPTIMAL
    assert sol.objective == pytest.approx(ref, abs=1e-9)


def test_extract_spikes_threshold():
    grid = S.GridConfig(N=1, sigma=1.0, k_min=0, k_max=10)
    x = np.zeros(11)
    x[[2, 5, 8]] = [3.0, 2.9e-6, 3.1e-6]
    assert S.SpikeTrain.from_vector(x, grid) != L.extract_spikes(x, grid)
    assert L.extract_spikes(x, grid).k.tolist() == [2, 8]
