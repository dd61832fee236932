import numpy as np
import pytest

from ccadmm.analysis import (
    SpectralSplit,
    aggregate_step,
    build_aggregate,
    certificate_report,
    certify_consensus_lyapunov,
    certify_primal_dual_lyapunov,
    check_reconstruction,
    equilibrium_z,
    local_stack,
    lyapunov_matrix,
    network_average,
    perp_equilibrium,
    primal_dual_jacobian,
    proxy_stack,
    split_spectrum,
)
from ccadmm.errors import NoCertifiedPError, NotQuadraticError
from ccadmm.graph import complete_graph, cycle_graph, new_graph, path_graph
from ccadmm.network import Params, initial_world, step_synchronous
from ccadmm.problem import QuadraticCost, default_microgrid, make_problem, random_quadratic_instance


def scalar_problem(graph, b=0.0):
    return make_problem(graph, [QuadraticCost([[1.0]], [0.0])] * graph.n, [[[1.0]]] * graph.n, [b])


def test_single_edge_matrices():
    mats = build_aggregate(new_graph(2, [(0, 1)]), 1, 1.0, 0.5)
    assert np.array_equal(mats.replicator, np.eye(4))
    assert np.array_equal(mats.scaling, 0.5 * np.eye(4))
    assert np.allclose(mats.transition, 0.5 * np.eye(4), atol=1e-15)


@pytest.mark.parametrize("g", [cycle_graph(3), complete_graph(4), path_graph(5)])
def test_matrix_structure(g):
    m = 2
    mats = build_aggregate(g, m, 1.0, 0.5)
    S, D = mats.swap, mats.replicator
    assert np.array_equal(S @ S, np.eye(S.shape[0]))
    assert set(np.unique(S)) <= {0.0, 1.0} and np.all(S.sum(axis=0) == 1) and np.all(S.sum(axis=1) == 1)
    # each agent block of D's columns is replicated once per incident out-edge
    for i in range(g.n):
        cols = D[:, 2 * m * i : 2 * m * (i + 1)]
        assert cols.sum() == 2 * m * g.degree(i)
    for k, (i, j) in enumerate(g.directed_edges):
        assert np.array_equal(D[2 * m * k : 2 * m * (k + 1), 2 * m * i : 2 * m * (i + 1)], np.eye(2 * m))
        swapped = g.edge_index(j, i)
        assert np.array_equal(S[2 * m * k : 2 * m * (k + 1), 2 * m * swapped : 2 * m * (swapped + 1)], np.eye(2 * m))
    for i in range(g.n):
        blk = mats.scaling[2 * m * i : 2 * m * (i + 1), 2 * m * i : 2 * m * (i + 1)]
        assert np.allclose(blk, np.eye(2 * m) / (1 + g.degree(i)))


def test_bad_aggregate_parameters():
    with pytest.raises(ValueError):
        build_aggregate(path_graph(2), 1, 0.0, 0.5)
    with pytest.raises(ValueError):
        build_aggregate(path_graph(2), 1, 1.0, 1.0)


def test_zero_input_stays_zero():
    p = scalar_problem(cycle_graph(3))
    mats = build_aggregate(p.graph, 1, 1.0, 0.5)
    x, lam, z = aggregate_step(np.zeros(3), np.zeros(3), np.zeros(12), mats, p, Params(0.1))
    assert not x.any() and not lam.any() and not z.any()


@pytest.mark.parametrize("seed", range(3))
def test_aggregate_matches_agents(seed):
    p = random_quadratic_instance(5, 2, 2, seed=seed)
    params = Params(0.1, 1.0, 0.7, 0.4)
    mats = build_aggregate(p.graph, p.m, params.rho, params.beta)
    rng = np.random.default_rng(seed)
    w = initial_world(p, rng.standard_normal(p.n), rng.standard_normal(p.N * p.m),
                      rng.standard_normal(2 * p.m * p.graph.num_directed_edges))
    x, lam, z = w.x, w.lam, w.z
    for _ in range(30):
        w = step_synchronous(w, params)
        x, lam, z = aggregate_step(x, lam, z, mats, p, params)
    assert max(np.max(np.abs(w.x - x)), np.max(np.abs(w.lam - lam)), np.max(np.abs(w.z - z))) <= 1e-12


def test_network_average_examples():
    p = random_quadratic_instance(4, 2, 2, seed=1)
    rng = np.random.default_rng(0)
    x, lam = rng.standard_normal(p.n), rng.standard_normal(p.N * p.m)
    brute_res = np.zeros(p.m)
    brute_lam = np.zeros(p.m)
    for i, xi in enumerate(p.split_x(x)):
        brute_res += p.A_blocks[i] @ xi - p.b / p.N
        brute_lam += lam[i * p.m : (i + 1) * p.m]
    expected = np.concatenate([brute_res, brute_lam]) / p.N
    assert np.max(np.abs(network_average(x, lam, p) - expected)) <= 1e-14

    one = make_problem(new_graph(1, []), [QuadraticCost(np.eye(2), np.zeros(2))], [[[1.0, 2.0]]], [3.0])
    assert network_average(np.array([1.0, 1.0]), np.array([0.5]), one).tolist() == [0.0, 0.5]


def test_single_edge_spectrum():
    split = split_spectrum(build_aggregate(path_graph(2), 1, 1.0, 0.5))
    assert split.unit_count == 0 and split.perp_dim == 4
    M = split.perp_basis
    assert np.allclose(M.T @ M, np.eye(4), atol=1e-14)
    assert split.spectral_radius_perp == pytest.approx(0.5, abs=1e-14)


def test_three_cycle_spectrum():
    mats = build_aggregate(cycle_graph(3), 1, 1.0, 0.5)
    split = split_spectrum(mats)
    ev = np.linalg.eigvals(mats.transition)
    assert split.unit_count == int(np.sum(np.abs(ev - 1) <= 1e-8))
    assert split.spectral_radius_perp < 1
    B, M = split.unit_basis, split.perp_basis
    assert np.max(np.abs(M.T @ B), initial=0) <= 1e-10
    assert np.max(np.abs(M.T @ M - np.eye(M.shape[1]))) <= 1e-10
    assert np.allclose(mats.transition @ B, B, atol=1e-10)


def test_perp_equilibrium_examples(random_instance):
    p = random_instance
    mats = build_aggregate(p.graph, p.m, 1.0, 0.5)
    split = split_spectrum(mats)
    rng = np.random.default_rng(3)
    x, lam = rng.standard_normal(p.n), rng.standard_normal(p.N * p.m)
    w = perp_equilibrium(x, lam, split, mats, p)
    g = 2 * 0.5 * 1.0 * mats.swap @ mats.replicator @ mats.scaling
    g_perp = split.perp_basis.T @ (g @ local_stack(x, lam, p))
    assert np.max(np.abs(split.perp_transition @ w + g_perp - w)) <= 1e-10

    zero_b = make_problem(p.graph, p.costs, p.A_blocks, np.zeros(p.m))
    assert not perp_equilibrium(np.zeros(p.n), np.zeros(p.N * p.m), split, mats, zero_b).any()


def test_frozen_consensus_converges_to_perp_equilibrium(random_instance):
    p = random_instance
    params = Params(1e-300)  # effectively frozen primal/dual state
    mats = build_aggregate(p.graph, p.m, params.rho, params.beta)
    split = split_spectrum(mats)
    rng = np.random.default_rng(8)
    x, lam = rng.standard_normal(p.n), rng.standard_normal(p.N * p.m)
    w = initial_world(p, x, lam)
    for _ in range(2000):
        w = step_synchronous(w, params)
    target = perp_equilibrium(x, lam, split, mats, p)
    assert np.max(np.abs(split.perp_basis.T @ w.z - target)) <= 1e-8


@pytest.mark.parametrize("g", [cycle_graph(3), path_graph(4), complete_graph(5)])
def test_reconstruction(g):
    p = make_problem(g, [QuadraticCost(np.eye(2), np.zeros(2))] * g.n,
                     [np.array([[1.0, 0.5], [0.0, 2.0]])] * g.n, [1.0, -1.0])
    mats = build_aggregate(g, 2, 1.0, 0.5)
    split = split_spectrum(mats)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, lam = rng.standard_normal(p.n), rng.standard_normal(p.N * p.m)
        assert check_reconstruction(x, lam, split, mats, p) <= 1e-10


def test_reconstruction_with_consensual_input():
    g = cycle_graph(4)
    p = scalar_problem(g, b=4.0)
    mats = build_aggregate(g, 1, 1.0, 0.5)
    split = split_spectrum(mats)
    x, lam = np.ones(4), np.full(4, 0.7)
    z = equilibrium_z(x, lam, split, mats, p)
    s = proxy_stack(x, lam, z, mats, p).reshape(4, 2)
    assert np.allclose(s, [[0.0, 0.7]] * 4, atol=1e-12)


def test_reconstruction_single_agent():
    p = scalar_problem(new_graph(1, []), b=2.0)
    mats = build_aggregate(p.graph, 1, 1.0, 0.5)
    split = split_spectrum(mats)
    assert split.perp_dim == 0 and split.unit_count == 0
    s = proxy_stack(np.array([3.0]), np.array([0.4]), np.zeros(0), mats, p)
    assert s.tolist() == [1.0, 0.4]
    assert check_reconstruction(np.array([3.0]), np.array([0.4]), split, mats, p) == 0.0


def test_primal_dual_certificate_one_agent(scalar_one_agent):
    G = primal_dual_jacobian(scalar_one_agent, 1.0, np.eye(1))
    assert np.array_equal(G, [[-1.0, -1.0], [1.0, 0.0]])
    # 2x2 eigenvalue oracle: P = [[p, 1], [1, p]] is definite iff p > 1
    for p in (0.5, 1.0):
        assert np.linalg.eigvalsh(lyapunov_matrix(scalar_one_agent, p))[0] <= 0
    cert = certify_primal_dual_lyapunov(scalar_one_agent, 1.0)
    assert cert.p_min_eig > 0 and cert.margin >= 1e-8
    E = G.T @ cert.P + cert.P @ G
    assert np.linalg.eigvalsh(E)[-1] == pytest.approx(-cert.margin)


def test_primal_dual_certificate_grid_failure(scalar_one_agent):
    with pytest.raises(NoCertifiedPError):
        certify_primal_dual_lyapunov(scalar_one_agent, 1.0, p_grid=[0.1, 0.5, 1.0])


def test_primal_dual_certificate_random_instance():
    p = random_quadratic_instance(4, 2, 2, seed=4)
    cert = certify_primal_dual_lyapunov(p, 1.0)
    assert cert.margin > 0 and not cert.sampled
    assert cert.p == cert.tried[0]
    assert cert.q == pytest.approx(2 * min(cert.p * cert.mu, cert.a, cert.p * 1.0))


def test_primal_dual_certificate_sampled():
    p = default_microgrid(N_x=3)
    with pytest.raises(NotQuadraticError):
        certify_primal_dual_lyapunov(p, 1.0)
    cert = certify_primal_dual_lyapunov(p, 1.0, samples=10)
    assert cert.sampled and cert.margin > 0


def test_consensus_certificate_single_edge():
    cc = certify_consensus_lyapunov(split_spectrum(build_aggregate(path_graph(2), 1, 1.0, 0.5)))
    # q * 0.25 - q = -1  =>  q = 4/3
    assert np.allclose(cc.Q, 4.0 / 3.0 * np.eye(4), atol=1e-12)
    assert cc.b1 == pytest.approx(4 / 3) and cc.b2 == pytest.approx(4 / 3) and cc.b3 == 1.0


def test_consensus_certificate_matches_kronecker_solve():
    Tp = split_spectrum(build_aggregate(cycle_graph(3), 1, 1.0, 0.5)).perp_transition
    n = Tp.shape[0]
    vecQ = np.linalg.solve(np.eye(n * n) - np.kron(Tp.T, Tp.T), np.eye(n).ravel())
    cc = certify_consensus_lyapunov(split_spectrum(build_aggregate(cycle_graph(3), 1, 1.0, 0.5)))
    assert np.allclose(cc.Q, vecQ.reshape(n, n), atol=1e-10)
    assert cc.residual <= 1e-10 and cc.b1 > 0


def test_consensus_certificate_decrease():
    split = split_spectrum(build_aggregate(complete_graph(4), 2, 1.0, 0.5))
    cc = certify_consensus_lyapunov(split)
    Tp = split.perp_transition
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.standard_normal(Tp.shape[0])
        Tv = Tp @ v
        assert Tv @ cc.Q @ Tv - v @ cc.Q @ v <= -cc.b3 * (v @ v) + 1e-9
        assert cc.b1 * (v @ v) <= v @ cc.Q @ v <= cc.b2 * (v @ v) + 1e-9


def test_consensus_certificate_empty():
    empty = SpectralSplit(np.eye(2), np.zeros((2, 0)), np.zeros((0, 0)), np.ones(2), 0.0, 0.0)
    cc = certify_consensus_lyapunov(empty)
    assert cc.Q.shape == (0, 0) and cc.residual == 0.0


def test_certificate_report(random_instance):
    rep = certificate_report(random_instance, 1.0, 1.0, 0.5, n_samples=5)
    assert rep["passed"]
    for k in ("spectrum", "reconstruction", "primal_dual_lyapunov", "consensus_lyapunov"):
        assert rep[k]["passed"]
