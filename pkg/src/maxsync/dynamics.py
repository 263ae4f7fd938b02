"""Tarski Laplacian, heat equation and the RRAggU iteration.

Two implementations of the Laplacian live here.  ``method="vectorized"``
processes every directed edge at once in fixed-size chunks (optionally on a
thread pool); ``method="agentwise"`` is a literal per-agent transcription of
the Residuate / Rescale / Aggregate / Update loop and exists mainly as a
cross-check.  Both are exact (only max, min and one addition per term), so
they agree bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence, Union

import networkx as nx
import numpy as np

from .network import TradeNetwork, as_state
from .tropical import (
    DEFAULT_TOL,
    POS_INF,
    encode_scalar,
    linf_distance,
    minp_add,
    minp_matvec,
    mp_matvec,
    pseudoinverse,
)

# max entries of a (chunk, d, d) temporary
_CHUNK_ELEMS = 1 << 21

Workers = Union[int, Literal["auto"]]


def resolve_workers(workers: Workers) -> int:
    if workers == "auto":
        return os.cpu_count() or 1
    n = int(workers)
    if n < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return n


def _chunks(n: int, d: int) -> list[tuple[int, int]]:
    step = max(1, _CHUNK_ELEMS // (d * d))
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


def _run_chunks(fn, spans, workers: int) -> None:
    if workers == 1 or len(spans) == 1:
        for lo, hi in spans:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # list() re-raises worker exceptions
        list(pool.map(lambda s: fn(*s), spans))


def effective_values(net: TradeNetwork, X: np.ndarray, workers: int = 1) -> np.ndarray:
    """``A_{u,v} ⊞ X_u`` for every directed slot, shape ``(2E, d)``."""
    E2, d = 2 * net.n_edges, net.n_alternatives
    out = np.empty((E2, d))

    def work(lo, hi):
        # max_j A[e, i, j] + X[src[e], j]; neither operand holds +inf
        out[lo:hi] = np.max(net.couplings[lo:hi] + X[net.src[lo:hi], None, :], axis=2)

    _run_chunks(work, _chunks(E2, d), workers)
    return out


def edge_residuals(net: TradeNetwork, X) -> np.ndarray:
    """Sup-norm gap of the two effective values on each undirected edge."""
    X = np.asarray(X, dtype=float)
    if not net.n_edges:
        return np.empty(0)
    eff = effective_values(net, X)
    a, b = eff[0::2], eff[1::2]
    with np.errstate(invalid="ignore"):
        diff = np.abs(a - b)
    diff[a == b] = 0.0
    diff[np.isnan(diff)] = POS_INF
    return diff.max(axis=1)


# ------------------------------------------------------------ Laplacian


def residuate(net: TradeNetwork, u: int, v: int, X) -> np.ndarray:
    """``A⁻_{u,v} ⊞' (A_{v,u} ⊞ X_v)``: greatest Y with ``A_{u,v} ⊞ Y ⪯ A_{v,u} ⊞ X_v``."""
    return minp_matvec(pseudoinverse(net.A(u, v)), mp_matvec(net.A(v, u), X[v]))


def rescale(net: TradeNetwork, u: int, v: int, residual: np.ndarray) -> np.ndarray:
    return minp_add(net.W[u, v], residual)


def agent_update(net: TradeNetwork, u: int, X) -> tuple[np.ndarray, np.ndarray]:
    """One agent's share of a sweep: returns ``(Aggregate(N_u), Update(u))``."""
    z = np.full(net.n_alternatives, POS_INF)
    for v in net.neighbors(u):
        z = np.minimum(z, rescale(net, u, v, residuate(net, u, v, X)))
    return z, np.minimum(X[u], z)


def _laplacian_agentwise(net: TradeNetwork, X: np.ndarray, workers: int) -> np.ndarray:
    out = np.empty_like(X)

    def work(lo, hi):
        for u in range(lo, hi):
            out[u] = agent_update(net, u, X)[0]

    N = net.n_agents
    step = max(1, math.ceil(N / workers))
    _run_chunks(work, [(lo, min(lo + step, N)) for lo in range(0, N, step)], workers)
    return out


def _laplacian_vectorized(net: TradeNetwork, X: np.ndarray, workers: int) -> np.ndarray:
    N, d = X.shape
    out = np.full((N, d), POS_INF)
    E2 = 2 * net.n_edges
    if not E2:
        return out
    eff = effective_values(net, X, workers)
    partner = np.arange(E2) ^ 1
    rescaled = np.empty((E2, d))
    w = net.edge_weights

    def work(lo, hi):
        # pseudoinverse: [A⁻]_{i,k} = -A[k, i]; s[e, k, i] = -A[e, k, i] +' eff[partner, k]
        with np.errstate(invalid="ignore"):
            s = eff[partner[lo:hi], :, None] - net.couplings[lo:hi]
        s[np.isnan(s)] = POS_INF
        r = s.min(axis=1)
        with np.errstate(invalid="ignore"):
            r += w[lo:hi, None]
        r[np.isnan(r)] = POS_INF
        rescaled[lo:hi] = r

    _run_chunks(work, _chunks(E2, d), workers)

    order = np.argsort(net.src, kind="stable")
    agents, starts = np.unique(net.src[order], return_index=True)
    out[agents] = np.minimum.reduceat(rescaled[order], starts, axis=0)
    return out


def tarski_laplacian(
    net: TradeNetwork,
    X,
    workers: Workers = 1,
    method: Literal["vectorized", "agentwise"] = "vectorized",
) -> np.ndarray:
    """Apply the tropical Tarski Laplacian to a stacked state.

    Block ``u`` is the meet over neighbours ``v`` of
    ``W[u,v] +' A⁻_{u,v} ⊞' (A_{v,u} ⊞ X_v)``.  Agents without neighbours get
    the all-``+inf`` block (the empty meet).
    """
    X = as_state(X, net)
    n = resolve_workers(workers)
    if method == "vectorized":
        return _laplacian_vectorized(net, X, n)
    if method == "agentwise":
        return _laplacian_agentwise(net, X, n)
    raise ValueError(f"unknown method {method!r}")


def heat_step(net: TradeNetwork, X, workers: Workers = 1, method="vectorized") -> np.ndarray:
    """``X(t+1) = L(X(t)) ∧ X(t)``; the result is read-only."""
    X = as_state(X, net)
    out = np.minimum(tarski_laplacian(net, X, workers, method), X)
    assert not (out == POS_INF).any(), "+inf leaked into a stored state"
    out.flags.writeable = False
    return out


def loss(net: TradeNetwork, X) -> float:
    """Worst edge residual; 0 on a graph without edges."""
    r = edge_residuals(net, as_state(X, net))
    return float(r.max()) if r.size else 0.0


def alpha_gradient(X_prev, X_next) -> float:
    return linf_distance(X_prev, X_next)


# ------------------------------------------------------------- membership


def is_solution(net: TradeNetwork, X, tol: float = DEFAULT_TOL) -> bool:
    return linf_distance(heat_step(net, X), X) <= tol


def in_stable_manifold(net: TradeNetwork, X, alpha: float) -> bool:
    return linf_distance(heat_step(net, X), X) <= alpha


class EquilibriumCheck(NamedTuple):
    ok: bool
    worst_edge: tuple[int, int] | None
    worst_residual: float


def check_global_equilibrium(net: TradeNetwork, X, eps: float) -> EquilibriumCheck:
    r = edge_residuals(net, as_state(X, net))
    if not r.size:
        return EquilibriumCheck(True, None, 0.0)
    k = int(np.argmax(r))
    return EquilibriumCheck(bool((r <= eps).all()), net.edges[k], float(r[k]))


# ----------------------------------------------------------------- RRAggU

STATUSES = ("converged_loss", "plateau_alpha", "fixed_point", "max_iters", "diverged")


@dataclass
class RunConfig:
    """Stopping rules and execution knobs for :func:`rraggu`.

    ``steps`` switches to fixed-step mode: exactly ``steps + 1`` sweeps
    (t = 0..steps) are recorded and the stopping rules are ignored.
    ``divergence_floor="auto"`` means one unit below the smallest finite
    entry of the initial state.
    """

    epsilon: Union[float, Literal["auto"]] = "auto"
    max_iters: int = 1000
    alpha_plateau_tol: float = 1e-9
    plateau_window: int = 5
    divergence_floor: Union[float, Literal["auto"]] = "auto"
    parallelism: Workers = 1
    steps: int | None = None
    keep_states: int = 5

    def __post_init__(self):
        if self.epsilon != "auto":
            if isinstance(self.epsilon, str) or not float(self.epsilon) >= 0.0:
                raise ValueError(f"epsilon must be a nonnegative number or 'auto', got {self.epsilon!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.alpha_plateau_tol < 0:
            raise ValueError("alpha_plateau_tol must be nonnegative")
        if self.plateau_window < 1:
            raise ValueError("plateau_window must be positive")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.keep_states < 2:
            raise ValueError("keep_states must be at least 2")
        resolve_workers(self.parallelism)

    def resolve_epsilon(self, net: TradeNetwork) -> float:
        return net.auto_epsilon() if self.epsilon == "auto" else float(self.epsilon)


@dataclass
class TraceRecord:
    t: int
    alpha: float
    loss: float
    step_seconds: float


@dataclass
class Trace:
    """Per-sweep record of a run.

    Row ``t`` describes the sweep ``X(t) -> X(t+1)``: ``alpha`` is
    ``‖X(t+1) - X(t)‖∞`` and ``loss`` is the loss of ``X(t+1)``.
    """

    epsilon: float
    initial_loss: float
    divergence_floor: float
    records: list[TraceRecord] = field(default_factory=list)
    status: str = "max_iters"
    window: list[np.ndarray] = field(default_factory=list)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def final_alpha(self) -> float:
        return self.records[-1].alpha if self.records else 0.0

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    def alpha_nonincreasing(self, tol: float = DEFAULT_TOL) -> bool:
        a = self.alphas
        if a.size < 2:
            return True
        prev, nxt = a[:-1], a[1:]
        ok = (nxt <= prev) | (np.isfinite(prev) & np.isfinite(nxt) & (nxt <= prev + tol))
        return bool(ok.all() and (a >= 0).all())

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["t", "alpha", "loss"] + (["step_seconds"] if timing else [])
        writer.writerow(header)
        for r in self.records:
            row = [r.t, _fmt(r.alpha), _fmt(r.loss)]
            if timing:
                row.append(f"{r.step_seconds:.6e}")
            writer.writerow(row)
        return buf.getvalue()


def _fmt(v: float) -> str:
    s = encode_scalar(v)
    return s if isinstance(s, str) else repr(s)


def rraggu(net: TradeNetwork, X0, cfg: RunConfig | None = None) -> tuple[np.ndarray, Trace]:
    """Iterate the heat equation until a stopping rule fires.

    Every sweep reads only the previous snapshot, so the update is
    synchronous no matter how many workers compute it.  Termination:

    * ``converged_loss``: loss <= epsilon (checked on X(0) too, so an
      already-synchronised state returns after zero sweeps);
    * ``plateau_alpha``: alpha stayed positive and changed by at most
      ``alpha_plateau_tol`` for ``plateau_window`` consecutive sweeps;
    * ``fixed_point``: alpha hit 0 while loss is still above epsilon;
    * ``diverged``: a finite entry collapsed to ``-inf`` (alpha = inf);
    * ``max_iters``: budget exhausted, or fixed-step mode finished.
    """
    cfg = cfg or RunConfig()
    X = as_state(X0, net)
    X.flags.writeable = False
    eps = cfg.resolve_epsilon(net)
    if cfg.divergence_floor == "auto":
        finite = X[np.isfinite(X)]
        floor = float(finite.min()) - 1.0 if finite.size else -math.inf
    else:
        floor = float(cfg.divergence_floor)
    workers = resolve_workers(cfg.parallelism)

    trace = Trace(epsilon=eps, initial_loss=loss(net, X), divergence_floor=floor)
    window: deque = deque([X], maxlen=cfg.keep_states)
    fixed = cfg.steps is not None

    if not fixed and trace.initial_loss <= eps:
        trace.status = "converged_loss"
        trace.window = list(window)
        return X, trace

    n_sweeps = cfg.steps + 1 if fixed else cfg.max_iters
    plateau = 0
    prev_alpha = None
    for t in range(n_sweeps):
        t0 = time.perf_counter()
        Xn = heat_step(net, X, workers)
        dt = time.perf_counter() - t0
        a = alpha_gradient(X, Xn)
        ell = loss(net, Xn)
        trace.records.append(TraceRecord(t, a, ell, dt))
        X = Xn
        window.append(X)
        if fixed:
            continue
        if a == POS_INF:
            trace.status = "diverged"
            break
        if ell <= eps:
            trace.status = "converged_loss"
            break
        if a == 0.0:
            trace.status = "fixed_point"
            break
        if prev_alpha is not None and abs(a - prev_alpha) <= cfg.alpha_plateau_tol:
            plateau += 1
        else:
            plateau = 0
        prev_alpha = a
        if plateau >= cfg.plateau_window:
            trace.status = "plateau_alpha"
            break
    else:
        trace.status = "max_iters"
    trace.window = list(window)
    return X, trace


# ------------------------------------------------------------- divergence


@dataclass
class DivergenceReport:
    flagged: list[tuple[int, int]]  # (agent, alternative), 0-based
    agents: list[int]
    connected: bool | None  # None when nothing is flagged

    def to_json(self) -> dict:
        return {
            "flagged": [list(p) for p in self.flagged],
            "agents": self.agents,
            "connected": self.connected,
        }


def divergence_report(
    net: TradeNetwork,
    trace: Trace | None = None,
    states: Sequence | None = None,
    floor: float | None = None,
    tol: float = DEFAULT_TOL,
) -> DivergenceReport:
    """Entries that sank below the floor and were still falling at the end.

    ``states`` defaults to the trajectory window kept in ``trace`` and
    ``floor`` to the trace's resolved divergence floor.
    """
    if states is None:
        if trace is None:
            raise ValueError("need a trace or explicit states")
        states = trace.window
    if floor is None:
        if trace is None:
            raise ValueError("need a trace or an explicit floor")
        floor = trace.divergence_floor
    if len(states) < 2:
        return DivergenceReport([], [], None)
    prev = np.asarray(states[-2], dtype=float)
    last = np.asarray(states[-1], dtype=float)
    falling = (last < prev - tol) & (last < floor)
    flagged = [(int(u), int(i)) for u, i in np.argwhere(falling)]
    agents = sorted({u for u, _ in flagged})
    connected = None
    if agents:
        G = nx.Graph()
        G.add_nodes_from(agents)
        G.add_edges_from((u, v) for u, v in net.edges if u in G and v in G)
        connected = nx.is_connected(G)
    return DivergenceReport(flagged, agents, connected)
