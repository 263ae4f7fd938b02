import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import maxsync.dynamics as dyn
from conftest import NEG, POS, brute_laplacian, identity, pair_network
from maxsync.dynamics import (
    RunConfig,
    alpha_gradient,
    check_global_equilibrium,
    divergence_report,
    heat_step,
    in_stable_manifold,
    is_solution,
    loss,
    rraggu,
    tarski_laplacian,
)
from maxsync.network import TradeNetwork, random_instance, random_state, value_residual
from maxsync.oracle import brute_force_greatest_subsolution
from maxsync.tropical import leq, linf_distance, scalar_shift

seeds = st.integers(0, 2**31 - 1)
slow_settings = settings(max_examples=40, deadline=None)


def small_instance(seed, d=3):
    return random_instance(5, d, 0.6, cost_range=(-2, 2), weight_range=(0, 1), seed=seed)


def sample_state(net, seed, stream=0, lo=-3.0, hi=3.0):
    return random_state(net.n_agents, net.n_alternatives, (lo, hi), seed=seed, stream=stream)


def run_to_rest(net, X0, max_iters=2000):
    # alpha can sit exactly flat for several sweeps before a convergent run
    # settles, so the plateau rule is switched off here
    return rraggu(net, X0, RunConfig(epsilon=0.0, max_iters=max_iters, plateau_window=10**6))


# ---------------------------------------------------------------- Laplacian


class TestLaplacian:
    def test_scalar_pair_swaps(self):
        net = pair_network([[0.0]], [[0.0]], 0.0)
        assert tarski_laplacian(net, [[3.0], [5.0]]).tolist() == [[5.0], [3.0]]

    def test_two_alternative_block(self):
        net = pair_network([[0.0, -1.0], [-1.0, 0.0]], identity(2), 0.0)
        X = np.array([[5.0, 5.0], [1.0, 2.0]])
        L = tarski_laplacian(net, X)
        assert L.tolist() == brute_laplacian(net, X).tolist()
        assert L[0].tolist() == [1.0, 2.0]

    def test_isolated_agent_gets_top(self):
        W = np.full((3, 3), POS)
        W[0, 1] = W[1, 0] = 0.0
        net = TradeNetwork.from_matrices(3, 2, {(0, 1): identity(2), (1, 0): identity(2)}, W)
        X = np.array([[0.0, 1.0], [2.0, 3.0], [-4.0, 7.0]])
        assert (tarski_laplacian(net, X)[2] == POS).all()
        assert heat_step(net, X)[2].tolist() == [-4.0, 7.0]

    def test_weight_shifts_block(self):
        net = pair_network([[0.0]], [[0.0]], 0.75)
        assert tarski_laplacian(net, [[3.0], [5.0]]).tolist() == [[5.75], [3.75]]

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            tarski_laplacian(pair_network([[0.0]], [[0.0]]), [[0.0], [0.0]], method="magic")

    def test_rejects_bad_state(self):
        net = pair_network([[0.0]], [[0.0]])
        with pytest.raises(ValueError):
            tarski_laplacian(net, [[POS], [0.0]])

    @slow_settings
    @given(seeds, st.booleans())
    def test_matches_loop_reference(self, seed, with_neg_inf):
        net = small_instance(seed)
        X = sample_state(net, seed)
        if with_neg_inf:
            X[np.random.default_rng(seed).random(X.shape) < 0.3] = NEG
        ref = brute_laplacian(net, X)
        assert np.array_equal(tarski_laplacian(net, X), ref)
        assert np.array_equal(tarski_laplacian(net, X, method="agentwise"), ref)

    def test_greatest_subsolution_against_grid(self):
        # block 0 of L is the greatest Y with A_01 ⊞ Y ⪯ (A_10 ⊞ X_1) + W
        rng = np.random.default_rng(11)
        for _ in range(10):
            A01 = rng.integers(-4, 5, size=(2, 2)) / 2
            A10 = rng.integers(-4, 5, size=(2, 2)) / 2
            net = pair_network(A01, A10, 0.5)
            X = np.vstack([[0.0, 0.0], rng.integers(-4, 5, size=2) / 2])
            rhs = np.max(net.A(1, 0).data + X[1][None, :], axis=1) + 0.5
            grid = brute_force_greatest_subsolution(A01, rhs, grid_step=0.25)
            assert linf_distance(tarski_laplacian(net, X)[0], grid) <= 0.25

    def test_chunked_path_matches(self, monkeypatch):
        net = small_instance(4)
        X = sample_state(net, 4)
        whole = tarski_laplacian(net, X)
        monkeypatch.setattr(dyn, "_CHUNK_ELEMS", 16)
        assert np.array_equal(tarski_laplacian(net, X, workers=3), whole)
        assert np.array_equal(tarski_laplacian(net, X, workers=3, method="agentwise"), whole)


# ------------------------------------------------------------ heat and loss


class TestHeatStep:
    def test_scalar_pair(self):
        net = pair_network([[0.0]], [[0.0]], 0.0)
        out = heat_step(net, [[3.0], [5.0]])
        assert out.tolist() == [[3.0], [3.0]]
        assert not out.flags.writeable

    def test_synchronised_state_is_fixed(self):
        net = pair_network(identity(2), identity(2), 0.0)
        X = np.array([[1.0, 2.0], [1.0, 2.0]])
        assert np.array_equal(heat_step(net, X), X)

    def test_workers_bit_identical(self):
        net = random_instance(30, 6, 0.3, seed=8)
        X = sample_state(net, 8)
        assert np.array_equal(heat_step(net, X, workers=1), heat_step(net, X, workers=4))
        assert np.array_equal(heat_step(net, X, workers="auto"), heat_step(net, X))

    def test_bad_workers(self):
        with pytest.raises(ValueError):
            dyn.resolve_workers(0)


class TestLoss:
    def test_identity_pair(self):
        net = pair_network(identity(1), identity(1), 0.0)
        assert loss(net, [[0.0], [2.0]]) == 2.0

    def test_agrees_with_edge_residuals(self):
        net = small_instance(2)
        X = sample_state(net, 2)
        worst = max(value_residual(net, u, v, X[u], X[v]) for u, v in net.edges)
        assert loss(net, X) == worst

    def test_no_edges(self):
        net = random_instance(3, 2, 0.0)
        assert loss(net, np.zeros((3, 2))) == 0.0

    def test_neg_inf_mismatch_is_infinite(self):
        net = pair_network(identity(1), identity(1), 0.0)
        assert loss(net, [[NEG], [0.0]]) == POS
        assert loss(net, [[NEG], [NEG]]) == 0.0

    def test_alpha(self):
        assert alpha_gradient([[1.0, 2.0]], [[1.0, 0.5]]) == 1.5
        assert alpha_gradient([[0.0]], [[NEG]]) == POS


# ------------------------------------------------------------- invariants


class TestInvariants:
    @slow_settings
    @given(seeds)
    def test_descent(self, seed):
        net = small_instance(seed)
        X = sample_state(net, seed)
        assert leq(heat_step(net, X), X)

    @slow_settings
    @given(seeds)
    def test_monotone(self, seed):
        net = small_instance(seed)
        X, Y = sample_state(net, seed, 0), sample_state(net, seed, 1)
        lo = np.minimum(X, Y)
        assert leq(tarski_laplacian(net, lo), tarski_laplacian(net, X), tol=1e-9)
        assert leq(heat_step(net, lo), heat_step(net, Y), tol=1e-9)

    @slow_settings
    @given(seeds, st.floats(-10, 10))
    def test_homogeneous(self, seed, alpha):
        net = small_instance(seed)
        X = sample_state(net, seed)
        lhs = heat_step(net, scalar_shift(X, alpha))
        assert linf_distance(lhs, scalar_shift(heat_step(net, X), alpha)) <= 1e-9

    @slow_settings
    @given(seeds)
    def test_nonexpansive(self, seed):
        net = small_instance(seed)
        X, Y = sample_state(net, seed, 0), sample_state(net, seed, 1)
        assert linf_distance(heat_step(net, X), heat_step(net, Y)) <= linf_distance(X, Y) + 1e-9

    @slow_settings
    @given(seeds)
    def test_solution_iff_edge_bound(self, seed):
        net = small_instance(seed, d=2)
        X = sample_state(net, seed, lo=-0.5, hi=0.5)
        bound_ok = all(
            value_residual(net, u, v, X[u], X[v]) <= net.W[u, v] + 1e-9 for u, v in net.edges
        )
        assert is_solution(net, X, tol=1e-9) == bound_ok


class TestSolutions:
    def converged(self, seed=253):
        # a default-sized instance with a finite equilibrium
        net = random_instance(seed=seed)
        X, trace = run_to_rest(net, random_state(20, 10, seed=seed))
        assert trace.status == "fixed_point"
        return net, X

    def test_rest_point_is_solution(self):
        net, X = self.converged()
        assert np.isfinite(X).all()
        assert is_solution(net, X, tol=0.0)
        assert in_stable_manifold(net, X, 0.0)

    def test_edge_bound_and_global_equilibrium(self):
        net, X = self.converged()
        for u, v in net.edges:
            assert value_residual(net, u, v, X[u], X[v]) <= net.W[u, v] + 1e-9
        check = check_global_equilibrium(net, X, net.auto_epsilon())
        assert check.ok and check.worst_residual <= net.auto_epsilon()

    def test_join_and_shift_are_solutions(self):
        net, X = self.converged()
        Y, _ = run_to_rest(net, random_state(20, 10, seed=253, stream=7))
        assert is_solution(net, np.maximum(X, Y), tol=1e-9)
        assert is_solution(net, X + 3.5, tol=1e-9)

    def test_stable_manifold_threshold(self):
        net = small_instance(1)
        X = sample_state(net, 1)
        a = linf_distance(heat_step(net, X), X)
        assert a > 0
        assert in_stable_manifold(net, X, a)
        assert not in_stable_manifold(net, X, a / 2)

    def test_global_equilibrium_reports_worst_edge(self):
        net = pair_network(identity(1), identity(1), 0.0)
        check = check_global_equilibrium(net, [[0.0], [2.0]], 1.0)
        assert check == (False, (0, 1), 2.0)
        assert check_global_equilibrium(random_instance(2, 1, 0.0), np.zeros((2, 1)), 0.0).ok


# ------------------------------------------------------------------ RRAggU


class TestRRAggU:
    def test_converges_in_one_sweep(self):
        net = pair_network([[0.0]], [[0.0]], 0.0)
        X, trace = rraggu(net, [[3.0], [5.0]])
        assert X.tolist() == [[3.0], [3.0]]
        assert trace.status == "converged_loss"
        assert trace.alphas.tolist() == [2.0] and trace.losses.tolist() == [0.0]

    def test_already_synchronised(self):
        net = pair_network(identity(2), identity(2), 0.0)
        X0 = [[1.0, 2.0], [1.0, 2.0]]
        X, trace = rraggu(net, X0)
        assert trace.status == "converged_loss" and trace.records == []
        assert X.tolist() == X0 and trace.final_loss == 0.0

    def test_fixed_point_above_epsilon(self):
        net = pair_network([[0.0]], [[0.0]], 0.5)
        X, trace = rraggu(net, [[3.0], [5.0]], RunConfig(epsilon=0.0))
        assert X.tolist() == [[3.0], [3.5]]
        assert trace.status == "fixed_point"
        assert trace.alphas.tolist() == [1.5, 0.0]

    def test_plateau_on_diverging_pair(self, diverging_pair):
        X, trace = rraggu(diverging_pair, np.zeros((2, 2)), RunConfig(plateau_window=3))
        assert trace.status == "plateau_alpha"
        assert (trace.alphas == 1.0).all() and len(trace.records) == 4
        assert (X == -4.0).all()

    def test_max_iters(self, diverging_pair):
        _, trace = rraggu(diverging_pair, np.zeros((2, 2)), RunConfig(max_iters=3))
        assert trace.status == "max_iters" and len(trace.records) == 3

    def test_collapse_to_neg_inf(self):
        net = pair_network([[0.0, 0.0], [0.0, 0.0]], identity(2), 0.0)
        X, trace = rraggu(net, [[0.0, 0.0], [NEG, 0.0]])
        assert trace.status == "diverged" and trace.final_alpha == POS
        assert (X[0] == NEG).all()

    def test_fixed_step_mode(self, diverging_pair):
        _, trace = rraggu(diverging_pair, np.zeros((2, 2)), RunConfig(steps=10))
        assert [r.t for r in trace.records] == list(range(11))
        assert trace.status == "max_iters"

    def test_alpha_nonincreasing_on_random_runs(self):
        net = random_instance(seed=0)
        for trial in range(5):
            _, trace = rraggu(net, random_state(20, 10, seed=0, stream=trial), RunConfig(steps=10))
            assert trace.alpha_nonincreasing(1e-9)

    def test_csv(self):
        net = pair_network([[0.0]], [[0.0]], 0.0)
        _, trace = rraggu(net, [[3.0], [5.0]])
        assert trace.to_csv(timing=False) == "t,alpha,loss\n0,2.0,0.0\n"
        assert trace.to_csv().startswith("t,alpha,loss,step_seconds\n0,2.0,0.0,")

    def test_config_validation(self):
        for bad in ({"epsilon": -1.0}, {"epsilon": "big"}, {"max_iters": 0}, {"steps": -1},
                    {"plateau_window": 0}, {"keep_states": 1}, {"parallelism": -2}):
            with pytest.raises(ValueError):
                RunConfig(**bad)

    def test_auto_epsilon_and_floor(self):
        net = pair_network([[0.0]], [[0.0]], 0.25)
        _, trace = rraggu(net, [[3.0], [5.0]])
        assert trace.epsilon == 0.25 and trace.divergence_floor == 2.0

    def test_workers_do_not_change_trace(self):
        net = random_instance(seed=3)
        X0 = random_state(20, 10, seed=3)
        a = rraggu(net, X0, RunConfig(steps=10, parallelism=1))[1]
        b = rraggu(net, X0, RunConfig(steps=10, parallelism=4))[1]
        assert a.to_csv(timing=False) == b.to_csv(timing=False)


class TestDivergence:
    def test_both_agents_flagged(self, diverging_pair):
        _, trace = rraggu(diverging_pair, np.zeros((2, 2)), RunConfig(steps=5))
        rep = divergence_report(diverging_pair, trace)
        assert rep.agents == [0, 1] and rep.connected is True
        assert len(rep.flagged) == 4

    def test_nothing_below_floor(self, diverging_pair):
        _, trace = rraggu(diverging_pair, np.zeros((2, 2)), RunConfig(steps=0))
        # one sweep reaches -1, exactly the auto floor, so nothing is flagged
        rep = divergence_report(diverging_pair, trace)
        assert rep.agents == [] and rep.connected is None

    def test_disconnected_flags(self):
        W = np.full((4, 4), POS)
        W[0, 1] = W[1, 0] = W[2, 3] = W[3, 2] = 0.0
        A = {(0, 1): np.zeros((1, 1)), (1, 0): np.zeros((1, 1)),
             (2, 3): np.zeros((1, 1)), (3, 2): np.zeros((1, 1))}
        net = TradeNetwork.from_matrices(4, 1, A, W)
        states = [np.zeros((4, 1)), np.array([[-5.0], [0.0], [-5.0], [0.0]])]
        rep = divergence_report(net, states=states, floor=-1.0)
        assert rep.agents == [0, 2] and rep.connected is False
        assert rep.to_json() == {"flagged": [[0, 0], [2, 0]], "agents": [0, 2], "connected": False}

    def test_needs_input(self):
        with pytest.raises(ValueError):
            divergence_report(pair_network([[0.0]], [[0.0]]))
