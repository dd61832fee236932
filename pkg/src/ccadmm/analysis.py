"""Aggregate (stacked) form of the algorithm and numerical certificates.

Stacking every agent's memories in canonical directed-edge order gives

    x+ = x - gamma (grad f(x) + blockdiag(A_i)' s_lam)
    lam+ = lam + gamma (kappa (s_lam - lam) + s_x)
    z+ = T z + 2 beta rho S D H u(x, lam)

with proxies ``s = H (u + D' z)`` and local data
``u = col(A_i x_i - b_i, lam_i)``. ``S`` swaps the (i,j) and (j,i) blocks,
``D`` replicates node blocks onto out-edges, ``H`` scales by
``1/(1 + rho deg_i)`` and ``T = I - beta (I + S - 2 rho S D H D')``.

The certificates below check numerically what the convergence argument
needs: the eigenvalue-1 subspace of T splits off cleanly, the complementary
dynamics are Schur with an equilibrium that reconstructs the network
averages exactly, and both the centralized primal-dual map and the
complementary z-dynamics admit quadratic Lyapunov functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    NoCertifiedPError,
    NotQuadraticError,
    NotSchurError,
    SingularSolveError,
    SpectralAmbiguityError,
)
from .graph import Graph
from .oracle import SaddlePoint
from .problem import ProblemInstance

__all__ = [
    "AggregateMatrices",
    "SpectralSplit",
    "PrimalDualCertificate",
    "ConsensusCertificate",
    "build_aggregate",
    "local_stack",
    "proxy_stack",
    "aggregate_step",
    "network_average",
    "split_spectrum",
    "perp_equilibrium",
    "equilibrium_z",
    "check_reconstruction",
    "primal_dual_jacobian",
    "lyapunov_matrix",
    "certify_primal_dual_lyapunov",
    "certify_consensus_lyapunov",
    "certificate_report",
]


@dataclass(frozen=True)
class AggregateMatrices:
    swap: np.ndarray
    replicator: np.ndarray
    scaling: np.ndarray
    transition: np.ndarray
    m: int
    d: int
    N: int
    rho: float
    beta: float


@dataclass(frozen=True)
class SpectralSplit:
    """Orthonormal bases of the eigenvalue-1 subspace of T and of its complement."""

    unit_basis: np.ndarray
    perp_basis: np.ndarray
    perp_transition: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius_perp: float
    proxy_leak: float

    @property
    def unit_count(self) -> int:
        return self.unit_basis.shape[1]

    @property
    def perp_dim(self) -> int:
        return self.perp_basis.shape[1]


@dataclass(frozen=True)
class PrimalDualCertificate:
    """Quadratic Lyapunov certificate ``W = e' P e`` for the centralized map.

    ``margin`` is ``-lambda_max(G'P + PG)`` measured at the certified ``p``;
    ``q`` is the closed-form bound ``2 min(p mu, a, p kappa)`` kept for
    comparison only.
    """

    P: np.ndarray
    p: float
    q: float
    margin: float
    p_min_eig: float
    mu: float
    a: float
    sampled: bool
    tried: tuple[float, ...]


@dataclass(frozen=True)
class ConsensusCertificate:
    """``U(z) = z' Q z`` with ``T_perp' Q T_perp - Q = -I``."""

    Q: np.ndarray
    b1: float
    b2: float
    b3: float
    residual: float


def build_aggregate(g: Graph, m: int, rho: float, beta: float) -> AggregateMatrices:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    d, N, k = g.num_directed_edges, g.n, 2 * m
    perm = np.zeros((d, d))
    rep = np.zeros((d, N))
    for e, (i, j) in enumerate(g.directed_edges):
        perm[e, g.edge_index(j, i)] = 1.0
        rep[e, i] = 1.0
    eye = np.eye(k)
    S = np.kron(perm, eye)
    D = np.kron(rep, eye)
    H = np.kron(np.diag(1.0 / (1.0 + rho * np.asarray(g.degrees, float))), eye)
    I = np.eye(k * d)
    T = I - beta * (I + S - 2.0 * rho * S @ D @ H @ D.T)
    return AggregateMatrices(S, D, H, T, m, d, N, rho, beta)


def local_stack(x, lam, problem: ProblemInstance) -> np.ndarray:
    """``col(A_i x_i - b_i, lam_i)`` over agents, length ``2 N m``."""
    lam = np.asarray(lam, float)
    if lam.shape != (problem.N * problem.m,):
        raise DimensionMismatchError(f"lam has shape {lam.shape}, expected ({problem.N * problem.m},)")
    L = lam.reshape(problem.N, problem.m)
    parts = [
        np.concatenate([problem.local_residual(i, xi), L[i]])
        for i, xi in enumerate(problem.split_x(x))
    ]
    return np.concatenate(parts)


def proxy_stack(x, lam, z, mats: AggregateMatrices, problem: ProblemInstance) -> np.ndarray:
    z = np.asarray(z, float)
    if z.shape != (2 * mats.m * mats.d,):
        raise DimensionMismatchError(f"z has shape {z.shape}, expected ({2 * mats.m * mats.d},)")
    return mats.scaling @ (local_stack(x, lam, problem) + mats.replicator.T @ z)


def _forcing(x, lam, mats, problem) -> np.ndarray:
    return 2.0 * mats.beta * mats.rho * (mats.swap @ (mats.replicator @ (mats.scaling @ local_stack(x, lam, problem))))


def aggregate_step(x, lam, z, mats: AggregateMatrices, problem: ProblemInstance, params):
    """One stacked tick; ``params`` needs ``gamma`` and ``kappa`` attributes."""
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    s = proxy_stack(x, lam, z, mats, problem).reshape(problem.N, 2 * problem.m)
    s_x = s[:, : problem.m].ravel()
    s_lam = s[:, problem.m :].ravel()
    x_new = x - params.gamma * (problem.grad(x) + problem.A_blockdiag.T @ s_lam)
    lam_new = lam + params.gamma * (params.kappa * (s_lam - lam) + s_x)
    z_new = mats.transition @ z + _forcing(x, lam, mats, problem)
    return x_new, lam_new, z_new


def network_average(x, lam, problem: ProblemInstance) -> np.ndarray:
    """``((Ax - b)/N, mean lam_i)`` as one ``2m`` vector."""
    lam = np.asarray(lam, float)
    if lam.shape != (problem.N * problem.m,):
        raise DimensionMismatchError(f"lam has shape {lam.shape}, expected ({problem.N * problem.m},)")
    res = sum(problem.local_residual(i, xi) for i, xi in enumerate(problem.split_x(x)))
    return np.concatenate([res / problem.N, lam.reshape(problem.N, problem.m).mean(axis=0)])


def split_spectrum(mats: AggregateMatrices, tol_unit: float = 1e-8) -> SpectralSplit:
    """Separate the eigenvalue-1 subspace of T from a Schur complement.

    Both bases come from one SVD of ``T - I``: the right singular vectors for
    the smallest singular values span the null space, the rest its orthogonal
    complement.

    Raises
    ------
    SpectralAmbiguityError
        If a non-unit eigenvalue has modulus within ``tol_unit`` of the unit
        circle, or if eigenvalue 1 is defective.
    """
    T = mats.transition
    dim = T.shape[0]
    ev = np.linalg.eigvals(T)
    unit = np.abs(ev - 1.0) <= tol_unit
    rest = np.abs(ev[~unit])
    if rest.size and rest.max() >= 1.0 - tol_unit:
        raise SpectralAmbiguityError(
            f"eigenvalue of modulus {rest.max():.12g} is neither 1 nor separated from the unit circle"
        )
    pbar = int(unit.sum())
    _, sv, Vt = np.linalg.svd(T - np.eye(dim))
    if pbar and sv[dim - pbar] > np.sqrt(tol_unit):
        raise SpectralAmbiguityError("eigenvalue 1 is defective: its eigenvectors do not span its multiplicity")
    M = Vt[: dim - pbar].T
    B = Vt[dim - pbar :].T
    Tp = M.T @ T @ M
    radius = float(np.max(np.abs(np.linalg.eigvals(Tp)))) if Tp.size else 0.0
    leak = float(np.max(np.abs(mats.replicator.T @ B), initial=0.0))
    return SpectralSplit(B, M, Tp, ev, radius, leak)


def perp_equilibrium(x, lam, split: SpectralSplit, mats: AggregateMatrices, problem: ProblemInstance) -> np.ndarray:
    """Fixed point of ``w+ = T_perp w + M' g(x, lam)`` for frozen ``(x, lam)``."""
    n_perp = split.perp_dim
    if n_perp == 0:
        return np.zeros(0)
    K = np.eye(n_perp) - split.perp_transition
    if np.linalg.cond(K) > 1e12:
        raise SingularSolveError("I - T_perp is numerically singular; the spectral split is broken")
    return np.linalg.solve(K, split.perp_basis.T @ _forcing(x, lam, mats, problem))


def equilibrium_z(x, lam, split, mats, problem) -> np.ndarray:
    """Full memory vector at the equilibrium, with zero unit-subspace component."""
    return split.perp_basis @ perp_equilibrium(x, lam, split, mats, problem)


def check_reconstruction(x, lam, split, mats, problem) -> float:
    """Distance between the equilibrium proxies and the replicated true averages."""
    s = proxy_stack(x, lam, equilibrium_z(x, lam, split, mats, problem), mats, problem)
    return float(np.linalg.norm(s - np.tile(network_average(x, lam, problem), problem.N)))


def _consensus_ops(problem: ProblemInstance):
    N, m = problem.N, problem.m
    ones = np.kron(np.ones((N, 1)), np.eye(m))
    C = ones @ problem.A / N
    J = np.eye(N * m) - ones @ ones.T / N
    return C, J


def primal_dual_jacobian(problem: ProblemInstance, kappa: float, hessian: np.ndarray) -> np.ndarray:
    """Linear factor ``G`` with ``field(chi) = G (chi - chi*)`` for a given mean-value Hessian."""
    C, J = _consensus_ops(problem)
    return np.block([[-hessian, -C.T], [C, -kappa * J]])


def lyapunov_matrix(problem: ProblemInstance, p: float) -> np.ndarray:
    C, _ = _consensus_ops(problem)
    n, Nm = problem.n, problem.N * problem.m
    return np.block([[p * np.eye(n), C.T], [C, p * np.eye(Nm)]])


def certify_primal_dual_lyapunov(
    problem: ProblemInstance,
    kappa: float,
    p_grid=None,
    margin_tol: float = 1e-8,
    samples: int = 0,
    seed: int = 0,
) -> PrimalDualCertificate:
    """Smallest ``p`` on the grid with ``P > 0`` and ``G'P + PG <= -margin_tol I``.

    Quadratic costs have a constant Hessian, so one matrix inequality covers
    every state. Other costs are checked at ``samples`` random points only and
    the result is flagged ``sampled``.
    """
    A = problem.A
    AAt = A @ A.T
    if p_grid is None:
        p0 = np.linalg.norm(AAt, 2) + 1.0
        p_grid = [p0 * 2.0**k for k in range(21)]
    if problem.is_quadratic:
        hessians = [problem.hessian(np.zeros(problem.n))]
        sampled = False
    elif samples > 0:
        rng = np.random.default_rng(seed)
        hessians = [problem.hessian(rng.standard_normal(problem.n)) for _ in range(samples)]
        sampled = True
    else:
        raise NotQuadraticError("non-quadratic costs need samples > 0 for a sampled certificate")
    Gs = [primal_dual_jacobian(problem, kappa, H) for H in hessians]
    mu = min(float(np.linalg.eigvalsh(H)[0]) for H in hessians)
    a = float(np.linalg.eigvalsh(AAt / problem.N)[0])
    for p in p_grid:
        P = lyapunov_matrix(problem, p)
        p_min = float(np.linalg.eigvalsh(P)[0])
        if p_min <= 0:
            continue
        worst = max(float(np.linalg.eigvalsh(G.T @ P + P @ G)[-1]) for G in Gs)
        if worst <= -margin_tol:
            q = 2.0 * min(p * mu, a, p * kappa)
            return PrimalDualCertificate(P, float(p), q, -worst, p_min, mu, a, sampled, tuple(p_grid))
    raise NoCertifiedPError(f"no p in the grid {p_grid[0]:.3g}..{p_grid[-1]:.3g} certifies descent")


def certify_consensus_lyapunov(split: SpectralSplit) -> ConsensusCertificate:
    """Solve ``T_perp' Q T_perp - Q = -I``; bounds ``b1 = lambda_min(Q)``, ``b2 = lambda_max(Q)``, ``b3 = 1``."""
    Tp = split.perp_transition
    n = Tp.shape[0]
    if n == 0:
        return ConsensusCertificate(np.zeros((0, 0)), 1.0, 1.0, 1.0, 0.0)
    if split.spectral_radius_perp >= 1.0:
        raise NotSchurError(f"T_perp has spectral radius {split.spectral_radius_perp:.6g} >= 1")
    Q = scipy.linalg.solve_discrete_lyapunov(Tp.T, np.eye(n))
    Q = 0.5 * (Q + Q.T)
    residual = float(np.max(np.abs(Tp.T @ Q @ Tp - Q + np.eye(n))))
    ev = np.linalg.eigvalsh(Q)
    return ConsensusCertificate(Q, float(ev[0]), float(ev[-1]), 1.0, residual)


def certificate_report(
    problem: ProblemInstance,
    kappa: float,
    rho: float,
    beta: float,
    oracle: SaddlePoint | None = None,
    n_samples: int = 50,
    seed: int = 0,
    tol_unit: float = 1e-8,
) -> dict:
    """Run every certificate and collect margins and pass flags as plain data."""
    rng = np.random.default_rng(seed)
    mats = build_aggregate(problem.graph, problem.m, rho, beta)
    report: dict = {"kappa": kappa, "rho": rho, "beta": beta}

    split = split_spectrum(mats, tol_unit)
    max_mod = float(np.max(np.abs(split.eigenvalues)))
    report["spectrum"] = {
        "unit_count": split.unit_count,
        "perp_dim": split.perp_dim,
        "max_modulus": max_mod,
        "spectral_radius_perp": split.spectral_radius_perp,
        "proxy_leak": split.proxy_leak,
        "passed": bool(max_mod <= 1 + 1e-10 and split.spectral_radius_perp < 1 and split.proxy_leak <= 1e-10),
    }

    worst = 0.0
    for _ in range(n_samples):
        x = rng.standard_normal(problem.n)
        lam = rng.standard_normal(problem.N * problem.m)
        worst = max(worst, check_reconstruction(x, lam, split, mats, problem))
    report["reconstruction"] = {"max_error": worst, "samples": n_samples, "passed": bool(worst <= 1e-9)}

    try:
        cert = certify_primal_dual_lyapunov(problem, kappa, samples=0 if problem.is_quadratic else n_samples, seed=seed)
        report["primal_dual_lyapunov"] = {
            "p": cert.p, "q": cert.q, "margin": cert.margin, "p_min_eig": cert.p_min_eig,
            "mu": cert.mu, "a": cert.a, "sampled": cert.sampled, "passed": True,
        }
    except NoCertifiedPError as exc:
        report["primal_dual_lyapunov"] = {"passed": False, "error": str(exc)}

    try:
        cc = certify_consensus_lyapunov(split)
        report["consensus_lyapunov"] = {
            "b1": cc.b1, "b2": cc.b2, "b3": cc.b3, "residual": cc.residual,
            "passed": bool(cc.b1 > 0 and cc.residual <= 1e-10),
        }
    except NotSchurError as exc:
        report["consensus_lyapunov"] = {"passed": False, "error": str(exc)}

    if oracle is not None:
        report["oracle"] = {"kkt_residual": oracle.kkt_residual}
    report["passed"] = all(
        report[k]["passed"] for k in ("spectrum", "reconstruction", "primal_dual_lyapunov", "consensus_lyapunov")
    )
    return report
