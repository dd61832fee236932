"""Deterministic simulated network running the agents.

A synchronous tick has snapshot semantics: every proxy and message is
computed from the tick-t states, then all primal-dual steps are applied,
then all memories are relaxed with the tick-t messages. An asynchronous tick
activates each agent independently with probability ``p_act`` and drops each
directed message independently with probability ``p_drop``; inactive agents
keep their whole state and discard whatever is addressed to them.

Randomness comes from one seeded generator per run, consumed in a fixed
order each tick: one draw per agent (ascending), then one draw per directed
edge (canonical order), whether or not the draw ends up mattering.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .agent import AgentState, compute_proxy, initial_state, make_message, primal_dual_step, receive
from .errors import BadParameterError, DivergedError, NonFiniteStateError
from .oracle import SaddlePoint
from .problem import ProblemInstance

__all__ = [
    "Params",
    "ScheduleModel",
    "WorldState",
    "StepStats",
    "TraceRecord",
    "Trace",
    "initial_world",
    "step_synchronous",
    "step_asynchronous",
    "run",
    "find_step_size",
    "CONVERGED",
    "MAX_ITER",
    "DIVERGED",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"

CSV_HEADER = (
    "tick",
    "d",
    "primal_residual",
    "lambda_consensus_err",
    "gap_to_lambda_star",
    "active_count",
    "dropped_count",
)


@dataclass(frozen=True)
class Params:
    """Step size ``gamma``, dual-consensus weight ``kappa``, ADMM penalty ``rho``, relaxation ``beta``."""

    gamma: float
    kappa: float = 1.0
    rho: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        for name in ("gamma", "kappa", "rho"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise BadParameterError(f"{name} must be positive and finite, got {v}")
        if not 0 < self.beta < 1:
            raise BadParameterError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class ScheduleModel:
    kind: str = "sync"
    p_act: float = 1.0
    p_drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sync", "async"):
            raise BadParameterError(f"schedule kind must be 'sync' or 'async', got {self.kind!r}")
        if not 0.0 <= self.p_act <= 1.0:
            raise BadParameterError(f"p_act must lie in [0, 1], got {self.p_act}")
        if not 0.0 <= self.p_drop < 1.0:
            raise BadParameterError(f"p_drop must lie in [0, 1), got {self.p_drop}")


@dataclass(frozen=True)
class WorldState:
    problem: ProblemInstance
    agents: tuple[AgentState, ...]
    tick: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([a.x for a in self.agents])

    @property
    def lam(self) -> np.ndarray:
        return np.concatenate([a.lam for a in self.agents])

    @property
    def z(self) -> np.ndarray:
        """Memories stacked in canonical directed-edge order."""
        return np.concatenate([a.z.ravel() for a in self.agents])


class StepStats(NamedTuple):
    active_count: int
    dropped_count: int


class TraceRecord(NamedTuple):
    tick: int
    d: float
    primal_residual: float
    lambda_consensus_err: float
    gap_to_lambda_star: float
    active_count: int
    dropped_count: int


@dataclass
class Trace:
    records: list[TraceRecord]
    status: str
    params: Params
    schedule: ScheduleModel
    final: WorldState | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return self.records[-1].tick

    @property
    def final_d(self) -> float:
        return self.records[-1].d

    def column(self, name: str) -> np.ndarray:
        k = TraceRecord._fields.index(name)
        return np.array([r[k] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.tick, repr(r.d), repr(r.primal_residual), repr(r.lambda_consensus_err),
                        repr(r.gap_to_lambda_star), r.active_count, r.dropped_count])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "final_d": self.final_d,
            "params": asdict(self.params),
            "seed": self.schedule.seed,
            "schedule": asdict(self.schedule),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def initial_world(p: ProblemInstance, x0=None, lam0=None, z0=None) -> WorldState:
    """World at tick 0; stacked ``x0``/``lam0``/``z0`` are split per agent, zeros otherwise."""
    xs = p.split_x(x0) if x0 is not None else [None] * p.N
    lams = np.asarray(lam0, float).reshape(p.N, p.m) if lam0 is not None else [None] * p.N
    if z0 is not None:
        off = p.graph.edge_offsets() * 2 * p.m
        z0 = np.asarray(z0, float)
        zs = [z0[off[i] : off[i + 1]] for i in range(p.N)]
    else:
        zs = [None] * p.N
    agents = tuple(initial_state(p, i, xs[i], lams[i], zs[i]) for i in range(p.N))
    return WorldState(p, agents, 0)


def _advance(w: WorldState, params: Params, active, delivered) -> tuple[WorldState, StepStats]:
    p = w.problem
    graph = p.graph
    old = w.agents
    new = list(old)
    outbox = []
    for i, a in enumerate(old):
        if not active[i]:
            continue
        pr = compute_proxy(a, p, params.rho)
        for j in a.neighbors:
            outbox.append(make_message(a, pr, params.rho, j, w.tick))
        new[i] = primal_dual_step(a, pr, p, params.gamma, params.kappa)
    dropped = 0
    for msg in outbox:
        if not delivered[graph.edge_index(msg.sender, msg.to)]:
            dropped += 1
            continue
        if active[msg.to]:
            new[msg.to] = receive(new[msg.to], msg, params.beta)
    stats = StepStats(int(sum(bool(v) for v in active)), dropped)
    return WorldState(p, tuple(new), w.tick + 1), stats


def step_synchronous(w: WorldState, params: Params) -> WorldState:
    N, d = w.problem.N, w.problem.graph.num_directed_edges
    return _advance(w, params, [True] * N, [True] * d)[0]


def step_asynchronous(
    w: WorldState, params: Params, model: ScheduleModel, rng: np.random.Generator
) -> tuple[WorldState, StepStats]:
    """One tick under random activation and packet loss."""
    N, d = w.problem.N, w.problem.graph.num_directed_edges
    active = rng.random(N) < model.p_act
    delivered = rng.random(d) >= model.p_drop
    return _advance(w, params, active, delivered)


class _Metrics:
    def __init__(self, p: ProblemInstance, oracle: SaddlePoint):
        self.A = p.A
        self.b = p.b
        self.x_star = oracle.x_star
        self.lam_star = oracle.lambda_star
        self.N, self.m = p.N, p.m

    def __call__(self, w: WorldState, stats: StepStats) -> TraceRecord:
        x = w.x
        L = w.lam.reshape(self.N, self.m)
        diff = L[:, None, :] - L[None, :, :]
        return TraceRecord(
            w.tick,
            float(np.sum((x - self.x_star) ** 2)),
            float(np.linalg.norm(self.A @ x - self.b)),
            float(np.sqrt(np.max(np.sum(diff * diff, axis=-1)))),
            float(np.linalg.norm(L - self.lam_star)),
            stats.active_count,
            stats.dropped_count,
        )


def run(
    w0: WorldState,
    params: Params,
    model: ScheduleModel,
    oracle: SaddlePoint,
    tol_d: float = 1e-8,
    max_iter: int = 10**6,
    diverge_threshold: float = 1e12,
) -> Trace:
    """Iterate until ``d <= tol_d``, ``max_iter`` ticks, or divergence.

    Divergence (``d > diverge_threshold`` or a non-finite state) is reported
    through ``Trace.status`` rather than raised.
    """
    metrics = _Metrics(w0.problem, oracle)
    rng = np.random.default_rng(model.seed)
    N = w0.problem.N
    w = w0
    records = [metrics(w, StepStats(N, 0))]
    status = MAX_ITER
    if records[0].d <= tol_d:
        return Trace(records, CONVERGED, params, model, w)
    for _ in range(max_iter):
        try:
            if model.kind == "sync":
                w = step_synchronous(w, params)
                stats = StepStats(N, 0)
            else:
                w, stats = step_asynchronous(w, params, model, rng)
        except NonFiniteStateError:
            records.append(TraceRecord(w.tick + 1, math.inf, math.inf, math.inf, math.inf, N, 0))
            status = DIVERGED
            break
        rec = metrics(w, stats)
        records.append(rec)
        if not math.isfinite(rec.d) or rec.d > diverge_threshold:
            status = DIVERGED
            break
        if rec.d <= tol_d:
            status = CONVERGED
            break
    return Trace(records, status, params, model, w)


def find_step_size(
    p: ProblemInstance,
    oracle: SaddlePoint,
    kappa: float = 1.0,
    rho: float = 1.0,
    beta: float = 0.5,
    gamma0: float = 1.0,
    tol_d: float = 1e-8,
    max_iter: int = 200_000,
    max_halvings: int = 40,
) -> tuple[float, Trace]:
    """Halve ``gamma`` from ``gamma0`` until a synchronous run converges.

    Probes count as diverged once ``d`` grows a millionfold past its start,
    which cuts short slowly unstable step sizes.
    """
    w0 = initial_world(p)
    d0 = float(np.sum(oracle.x_star**2))
    threshold = min(1e12, 1e6 * max(d0, 1.0))
    gamma = gamma0
    for _ in range(max_halvings):
        trace = run(w0, Params(gamma, kappa, rho, beta), ScheduleModel(), oracle, tol_d, max_iter, threshold)
        if trace.status == CONVERGED:
            return gamma, trace
        gamma *= 0.5
    raise DivergedError(f"no step size down to {gamma:g} converged within {max_iter} ticks")
