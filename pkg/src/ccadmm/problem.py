"""Constraint-coupled problem instances.

    minimize    sum_i f_i(x_i)
    subject to  sum_i A_i x_i = b

Each agent i owns a local cost f_i, a constraint block A_i (m x n_i) and an
allotment b_i of the right-hand side with sum_i b_i = b. The allotment makes
the network average of the local residuals A_i x_i - b_i equal (Ax - b)/N.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.linalg import block_diag

from .errors import BadParameterError, DimensionMismatchError
from .graph import Graph, random_connected_graph

__all__ = [
    "LocalCost",
    "QuadraticCost",
    "ConverterLossCost",
    "ProblemInstance",
    "ValidationReport",
    "make_problem",
    "validate",
    "split_b",
    "global_residual",
    "microgrid_instance",
    "default_microgrid",
    "random_quadratic_instance",
    "problem_to_dict",
    "problem_from_dict",
]


@runtime_checkable
class LocalCost(Protocol):
    dim: int

    def eval(self, x: np.ndarray) -> float: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> np.ndarray: ...

    def strong_convexity(self) -> float: ...

    def lipschitz(self) -> float: ...


@dataclass(frozen=True)
class QuadraticCost:
    """``f(x) = 0.5 x'Qx + q'x + c`` with symmetric PSD ``Q``."""

    Q: np.ndarray
    q: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if Q.shape != (q.size, q.size):
            raise DimensionMismatchError(f"Q has shape {Q.shape} but q has length {q.size}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise BadParameterError("Q is not symmetric")
        if q.size and np.linalg.eigvalsh(Q)[0] < -1e-10:
            raise BadParameterError("Q is not positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.q.size

    def eval(self, x):
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.c)

    def grad(self, x):
        return self.Q @ x + self.q

    def hessian(self, x=None):
        return self.Q

    def strong_convexity(self):
        return float(np.linalg.eigvalsh(self.Q)[0])

    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.Q)[-1])


@dataclass(frozen=True)
class ConverterLossCost:
    """Converter loss ``a|x|^2 + b(sqrt(|x|^2 + eps^2) - eps) + c``.

    The pseudo-Huber term replaces ``b|x|`` so the gradient stays Lipschitz
    (constant ``2a + b/eps``) at the origin.
    """

    a: float
    b: float
    c: float
    eps: float
    dim: int

    def __post_init__(self):
        if not self.a > 0:
            raise BadParameterError(f"converter loss needs a > 0, got {self.a}")
        if not self.eps > 0:
            raise BadParameterError(f"smoothing eps must be positive, got {self.eps}")
        if self.b < 0:
            raise BadParameterError(f"converter loss needs b >= 0, got {self.b}")
        if self.dim < 1:
            raise BadParameterError(f"dim must be positive, got {self.dim}")

    def eval(self, x):
        sq = float(x @ x)
        return self.a * sq + self.b * (np.sqrt(sq + self.eps**2) - self.eps) + self.c

    def grad(self, x):
        r = np.sqrt(x @ x + self.eps**2)
        return (2.0 * self.a + self.b / r) * x

    def hessian(self, x):
        r = np.sqrt(x @ x + self.eps**2)
        eye = np.eye(self.dim)
        return 2.0 * self.a * eye + self.b * (eye / r - np.outer(x, x) / r**3)

    def strong_convexity(self):
        return 2.0 * self.a

    def lipschitz(self):
        return 2.0 * self.a + self.b / self.eps


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    graph: Graph
    costs: tuple
    A_blocks: tuple
    b: np.ndarray
    b_allot: tuple
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        N = self.graph.n
        A_blocks = tuple(np.atleast_2d(np.asarray(A, dtype=float)) for A in self.A_blocks)
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        b_allot = tuple(np.atleast_1d(np.asarray(bi, dtype=float)) for bi in self.b_allot)
        if not (len(self.costs) == len(A_blocks) == len(b_allot) == N):
            raise DimensionMismatchError(
                f"graph has {N} nodes but got {len(self.costs)} costs, "
                f"{len(A_blocks)} blocks, {len(b_allot)} allotments"
            )
        m = b.size
        for i, (cost, A, bi) in enumerate(zip(self.costs, A_blocks, b_allot)):
            if A.shape != (m, cost.dim):
                raise DimensionMismatchError(
                    f"A_{i} has shape {A.shape}, expected ({m}, {cost.dim})"
                )
            if bi.shape != (m,):
                raise DimensionMismatchError(f"b_{i} has shape {bi.shape}, expected ({m},)")
        object.__setattr__(self, "costs", tuple(self.costs))
        object.__setattr__(self, "A_blocks", A_blocks)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b_allot", b_allot)
        dims = [c.dim for c in self.costs]
        object.__setattr__(self, "_offsets", np.concatenate([[0], np.cumsum(dims)]).astype(int))

    @property
    def N(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.dim for c in self.costs)

    @property
    def n(self) -> int:
        return int(self._offsets[-1])

    @property
    def is_quadratic(self) -> bool:
        return all(isinstance(c, QuadraticCost) for c in self.costs)

    @cached_property
    def A(self) -> np.ndarray:
        """Stacked ``[A_1 ... A_N]`` of shape ``(m, n)``."""
        return np.hstack(self.A_blocks)

    @cached_property
    def A_blockdiag(self) -> np.ndarray:
        """``blockdiag(A_1, ..., A_N)`` of shape ``(N m, n)``."""
        return block_diag(*self.A_blocks)

    def split_x(self, x: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatchError(f"x has shape {x.shape}, expected ({self.n},)")
        o = self._offsets
        return [x[o[i] : o[i + 1]] for i in range(self.N)]

    def value(self, x: np.ndarray) -> float:
        return sum(c.eval(xi) for c, xi in zip(self.costs, self.split_x(x)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([c.grad(xi) for c, xi in zip(self.costs, self.split_x(x))])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return block_diag(*[c.hessian(xi) for c, xi in zip(self.costs, self.split_x(x))])

    def local_residual(self, i: int, xi: np.ndarray) -> np.ndarray:
        return self.A_blocks[i] @ xi - self.b_allot[i]


@dataclass(frozen=True)
class ValidationReport:
    mu: float
    lipschitz: float
    sigma_min: float
    sigma_max: float
    rank_tol: float
    allotment_error: float
    strongly_convex: bool
    full_row_rank: bool
    allotment_ok: bool

    @property
    def passed(self) -> bool:
        return self.strongly_convex and self.full_row_rank and self.allotment_ok

    def failures(self) -> list[str]:
        out = []
        if not self.strongly_convex:
            out.append(f"sum of local costs is not strongly convex (mu estimate {self.mu:.3g})")
        if not self.full_row_rank:
            out.append(
                f"constraint matrix A is not full row rank "
                f"(sigma_min {self.sigma_min:.3g} <= tol {self.rank_tol:.3g})"
            )
        if not self.allotment_ok:
            out.append(f"allotments b_i do not sum to b (error {self.allotment_error:.3g})")
        return out


def make_problem(graph, costs, A_blocks, b, b_allot=None) -> ProblemInstance:
    """Assemble an instance; ``b_allot`` defaults to the even split ``b/N``."""
    if b_allot is None:
        b_allot = split_b(b, graph.n)
    return ProblemInstance(graph, tuple(costs), tuple(A_blocks), b, tuple(b_allot))


def validate(p: ProblemInstance, rank_tol: float | None = None) -> ValidationReport:
    """Measure the constants behind the convergence assumptions.

    ``mu`` is the smallest Hessian eigenvalue over the agents for quadratic
    costs and the declared lower bound ``2a`` for converter losses. Variables
    are separable across agents, so the sum inherits the worst local value.
    """
    A = p.A
    if A.shape != (p.m, p.n):
        raise DimensionMismatchError(f"stacked A has shape {A.shape}, expected ({p.m}, {p.n})")
    mu = min(c.strong_convexity() for c in p.costs)
    lip = max(c.lipschitz() for c in p.costs)
    sv = np.linalg.svd(A, compute_uv=False)
    sigma_max = float(sv[0]) if sv.size else 0.0
    # m > n leaves fewer than m singular values: rank deficient by definition
    sigma_min = float(sv[-1]) if p.m <= p.n else 0.0
    if rank_tol is None:
        rank_tol = 1e-8 * sigma_max
    err = float(np.max(np.abs(np.sum(p.b_allot, axis=0) - p.b)))
    return ValidationReport(
        mu=float(mu),
        lipschitz=float(lip),
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        rank_tol=float(rank_tol),
        allotment_error=err,
        strongly_convex=mu > 0,
        full_row_rank=sigma_min > rank_tol,
        allotment_ok=err <= 1e-12 * max(1.0, float(np.max(np.abs(p.b), initial=0.0))),
    )


def split_b(b, N: int) -> list[np.ndarray]:
    """Even allotment ``b_i = b / N``."""
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return [b / N for _ in range(N)]


def global_residual(p: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise DimensionMismatchError(f"x has shape {x.shape}, expected ({p.n},)")
    return p.A @ x - p.b


def microgrid_instance(
    N_x: int,
    R_g: float,
    unit_params: Sequence[tuple[float, float, float]],
    g_demand,
    eps: float = 1e-3,
    graph: Graph | None = None,
    graph_seed: int = 0,
    edge_prob: float = 0.3,
) -> ProblemInstance:
    """Reactive-power dispatch among ``N_x`` converters and the grid interface.

    Agent 0 is the point of common coupling with loss ``3 R_g |x_0|^2``;
    agents ``1..N_x`` carry converter losses. All blocks are identity, so the
    constraint reads ``x_0 + sum_i x_i = g``. A unit with ``b_i = 0`` gets a
    plain quadratic cost, which keeps the all-zero case exactly quadratic.
    """
    g = np.atleast_1d(np.asarray(g_demand, dtype=float))
    m = g.size
    if N_x < 1:
        raise BadParameterError(f"need at least one controllable unit, got N_x={N_x}")
    if len(unit_params) != N_x:
        raise BadParameterError(f"expected {N_x} unit parameter triples, got {len(unit_params)}")
    if not R_g > 0:
        raise BadParameterError(f"grid resistance must be positive, got {R_g}")
    if not eps > 0:
        raise BadParameterError(f"smoothing eps must be positive, got {eps}")

    costs: list = [QuadraticCost(6.0 * R_g * np.eye(m), np.zeros(m))]
    for a, b, c in unit_params:
        if not a > 0:
            raise BadParameterError(f"converter loss needs a > 0, got {a}")
        if b == 0:
            costs.append(QuadraticCost(2.0 * a * np.eye(m), np.zeros(m), c))
        else:
            costs.append(ConverterLossCost(float(a), float(b), float(c), float(eps), m))

    N = N_x + 1
    if graph is None:
        graph = random_connected_graph(N, edge_prob, graph_seed)
    elif graph.n != N:
        raise DimensionMismatchError(f"graph has {graph.n} nodes, expected {N}")
    return make_problem(graph, costs, [np.eye(m)] * N, g)


def default_microgrid(
    N_x: int = 10,
    m: int = 5,
    R_g: float = 0.1,
    seed: int = 0,
    zero_b: bool = False,
    eps: float = 1e-3,
) -> ProblemInstance:
    """Seeded microgrid with ``a ~ U[0.5, 1.5]``, ``b ~ U[0, 0.1]``, ``c = 0``, ``g ~ U[-1, 1]``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, N_x)
    b = np.zeros(N_x) if zero_b else rng.uniform(0.0, 0.1, N_x)
    g = rng.uniform(-1.0, 1.0, m)
    units = [(float(ai), float(bi), 0.0) for ai, bi in zip(a, b)]
    return microgrid_instance(N_x, R_g, units, g, eps=eps, graph_seed=seed)


def random_quadratic_instance(
    N: int, n_i: int, m: int, seed: int, edge_prob: float = 0.4, graph: Graph | None = None
) -> ProblemInstance:
    """Random strongly convex quadratic instance.

    ``Q_i = L L'/n_i + 0.5 I`` with standard normal ``L``; ``q_i``, ``A_i`` and
    ``b`` are standard normal. Without ``graph`` the topology is a seeded
    random connected graph.
    """
    rng = np.random.default_rng(seed)
    graph_seed = int(rng.integers(2**31))
    if graph is None:
        graph = random_connected_graph(N, edge_prob, graph_seed)
    elif graph.n != N:
        raise DimensionMismatchError(f"graph has {graph.n} nodes, expected {N}")
    costs, blocks = [], []
    for _ in range(N):
        L = rng.standard_normal((n_i, n_i)) / np.sqrt(n_i)
        Q = L @ L.T + 0.5 * np.eye(n_i)
        costs.append(QuadraticCost(0.5 * (Q + Q.T), rng.standard_normal(n_i)))
        blocks.append(rng.standard_normal((m, n_i)))
    b = rng.standard_normal(m)
    return make_problem(graph, costs, blocks, b)


def _cost_to_dict(c) -> dict:
    if isinstance(c, QuadraticCost):
        return {"type": "quadratic", "Q": c.Q.tolist(), "q": c.q.tolist(), "c": c.c}
    if isinstance(c, ConverterLossCost):
        return {"type": "converter_loss", "a": c.a, "b": c.b, "c": c.c, "eps": c.eps, "dim": c.dim}
    raise TypeError(f"cannot serialize cost of type {type(c).__name__}")


def _cost_from_dict(d: dict):
    kind = d.get("type")
    if kind == "quadratic":
        return QuadraticCost(np.array(d["Q"], dtype=float), np.array(d["q"], dtype=float), d.get("c", 0.0))
    if kind == "converter_loss":
        return ConverterLossCost(
            float(d["a"]), float(d.get("b", 0.0)), float(d.get("c", 0.0)),
            float(d.get("eps", 1e-3)), int(d["dim"]),
        )
    raise ValueError(f"unknown cost type {kind!r}")


def problem_to_dict(p: ProblemInstance) -> dict:
    return {
        "graph": p.graph.to_dict(),
        "costs": [_cost_to_dict(c) for c in p.costs],
        "A": [A.tolist() for A in p.A_blocks],
        "b": p.b.tolist(),
        "b_allot": [bi.tolist() for bi in p.b_allot],
    }


def problem_from_dict(d: dict) -> ProblemInstance:
    """Inverse of :func:`problem_to_dict`; ``"A"`` lists one ``m x n_i`` block per agent."""
    graph = Graph.from_dict(d["graph"])
    costs = [_cost_from_dict(c) for c in d["costs"]]
    blocks = [np.array(A, dtype=float).reshape(len(d["b"]), c.dim) for A, c in zip(d["A"], costs)]
    allot = d.get("b_allot")
    return make_problem(graph, costs, blocks, np.array(d["b"], dtype=float), allot)


def problem_to_json(p: ProblemInstance) -> str:
    return json.dumps(problem_to_dict(p))


def problem_from_json(text: str) -> ProblemInstance:
    return problem_from_dict(json.loads(text))
