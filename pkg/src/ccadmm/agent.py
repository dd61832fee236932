"""Local state machine of one agent.

Per tick an agent forms its proxies of the two network averages from its own
primal/dual pair and its per-neighbor memories z_ij, takes a primal-dual step
with those proxies in place of the true averages, and sends each neighbor
``m_ij = -z_ij + 2 rho [proxy]``. On receipt of ``m_ji`` it relaxes
``z_ij <- (1 - beta) z_ij + beta m_ji``.

All operations are pure: they return a new :class:`AgentState`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteStateError, NotANeighborError
from .problem import ProblemInstance

__all__ = [
    "AgentState",
    "Proxy",
    "Message",
    "initial_state",
    "compute_proxy",
    "primal_dual_step",
    "make_message",
    "receive",
]


@dataclass(frozen=True)
class AgentState:
    """Full local memory of agent ``id``.

    ``z`` has one row per neighbor, in the order of ``neighbors`` (ascending),
    each row of length ``2m``: residual part first, multiplier part second.
    """

    id: int
    x: np.ndarray
    lam: np.ndarray
    neighbors: tuple[int, ...]
    z: np.ndarray

    def slot(self, j: int) -> int:
        try:
            return self.neighbors.index(j)
        except ValueError:
            raise NotANeighborError(f"{j} is not a neighbor of agent {self.id}") from None

    def z_of(self, j: int) -> np.ndarray:
        return self.z[self.slot(j)]

    @property
    def z_map(self) -> dict[int, np.ndarray]:
        return {j: self.z[k] for k, j in enumerate(self.neighbors)}


@dataclass(frozen=True)
class Proxy:
    """Local estimates of ``(Ax - b)/N`` and of the average multiplier."""

    s_x: np.ndarray
    s_lam: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.s_x, self.s_lam])


@dataclass(frozen=True)
class Message:
    sender: int
    to: int
    payload: np.ndarray
    tick: int = 0


def initial_state(p: ProblemInstance, i: int, x0=None, lam0=None, z0=None) -> AgentState:
    """Agent ``i`` at the given start point; zeros where not supplied."""
    nbrs = p.graph.neighbors(i)
    x = np.zeros(p.dims[i]) if x0 is None else np.array(x0, dtype=float)
    lam = np.zeros(p.m) if lam0 is None else np.array(lam0, dtype=float)
    z = np.zeros((len(nbrs), 2 * p.m)) if z0 is None else np.array(z0, dtype=float).reshape(len(nbrs), 2 * p.m)
    return AgentState(i, x, lam, nbrs, z)


def compute_proxy(s: AgentState, p: ProblemInstance, rho: float) -> Proxy:
    """Closed-form minimizer of the local consensus-ADMM subproblem.

    ``[s_x; s_lam] = ([A_i x_i - b_i; lam_i] + sum_j z_ij) / (1 + rho deg_i)``
    """
    v = np.concatenate([p.local_residual(s.id, s.x), s.lam])
    if s.z.shape[0]:
        v = v + s.z.sum(axis=0)
    v = v / (1.0 + rho * len(s.neighbors))
    m = p.m
    return Proxy(v[:m], v[m:])


def primal_dual_step(
    s: AgentState, pr: Proxy, p: ProblemInstance, gamma: float, kappa: float
) -> AgentState:
    """Gradient descent in ``x`` and ascent in ``lam`` driven by the proxies.

    The dual row ascends, ``lam + gamma (kappa (s_lam - lam) + s_x)``, which is
    the sign the Lagrangian gradient demands.
    """
    cost = p.costs[s.id]
    x = s.x - gamma * (cost.grad(s.x) + p.A_blocks[s.id].T @ pr.s_lam)
    lam = s.lam + gamma * (kappa * (pr.s_lam - s.lam) + pr.s_x)
    if not (np.isfinite(x).all() and np.isfinite(lam).all()):
        raise NonFiniteStateError(f"agent {s.id} produced a non-finite state")
    return AgentState(s.id, x, lam, s.neighbors, s.z)


def make_message(s: AgentState, pr: Proxy, rho: float, j: int, tick: int = 0) -> Message:
    return Message(s.id, j, -s.z[s.slot(j)] + 2.0 * rho * pr.stacked, tick)


def receive(s: AgentState, msg: Message, beta: float) -> AgentState:
    """Relax the memory slot of ``msg.sender`` toward the payload."""
    if msg.to != s.id:
        raise NotANeighborError(f"message addressed to {msg.to} delivered to agent {s.id}")
    k = s.slot(msg.sender)
    z = s.z.copy()
    z[k] = (1.0 - beta) * s.z[k] + beta * msg.payload
    return AgentState(s.id, s.x, s.lam, s.neighbors, z)
