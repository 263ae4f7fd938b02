"""Trade networks: agents, alternatives, transaction-cost couplings, weights.

A :class:`TradeNetwork` stores the directed coupling matrices of all edges
in one stacked array.  Undirected edge ``k = (u, v)`` with ``u < v`` owns
rows ``2k`` (``A_{u,v}``) and ``2k + 1`` (``A_{v,u}``), so the partner of a
directed slot ``e`` is always ``e ^ 1``.  The dynamics code relies on that.

Agent indices are 0-based everywhere in the API and on disk.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tropical import (
    NEG_INF,
    POS_INF,
    DimensionError,
    TropicalMatrix,
    decode_scalar,
    encode_scalar,
    linf_distance,
    matrix_from_json,
    matrix_to_json,
    mp_matvec,
)

# spawn_key tags for the seeded substreams
_INSTANCE_STREAM = 0
_STATE_STREAM = 1


class InstanceError(ValueError):
    """Malformed or (in strict mode) assumption-violating network."""


class AssumptionWarning(UserWarning):
    """Network loaded despite violating a modelling assumption."""


@dataclass(frozen=True)
class Violation:
    kind: str  # "symmetry", "sparsity", "g_astic"
    message: str
    edge: tuple[int, int] | None = None

    def __str__(self) -> str:
        return self.message


@dataclass(frozen=True, eq=False)
class TradeNetwork:
    """Undirected trade graph with matrix and scalar edge weights.

    Build instances with :meth:`from_matrices`, :func:`random_instance` or
    :func:`load_network` rather than calling the constructor directly.
    """

    n_agents: int
    n_alternatives: int
    edges: tuple[tuple[int, int], ...]
    couplings: np.ndarray  # (2 * n_edges, d, d), max-plus
    W: np.ndarray  # (N, N), min-plus

    # derived indices
    src: np.ndarray = field(init=False, repr=False)
    dst: np.ndarray = field(init=False, repr=False)
    edge_weights: np.ndarray = field(init=False, repr=False)
    _slot: dict = field(init=False, repr=False)
    _neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        N, d = self.n_agents, self.n_alternatives
        if N < 1 or d < 1:
            raise InstanceError(f"need n_agents >= 1 and n_alternatives >= 1, got {N}, {d}")
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        seen = set()
        for u, v in edges:
            if not (0 <= u < v < N):
                raise InstanceError(f"edge ({u}, {v}) must satisfy 0 <= u < v < {N}")
            if (u, v) in seen:
                raise InstanceError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        couplings = np.asarray(self.couplings, dtype=float)
        if couplings.shape != (2 * len(edges), d, d):
            raise DimensionError("TradeNetwork couplings", couplings.shape, (2 * len(edges), d, d))
        if np.isnan(couplings).any() or (couplings == POS_INF).any():
            raise InstanceError("coupling matrices must be max-plus (no +inf, no NaN)")
        W = np.asarray(self.W, dtype=float)
        if W.shape != (N, N):
            raise DimensionError("TradeNetwork W", W.shape, (N, N))
        if np.isnan(W).any() or (W == NEG_INF).any():
            raise InstanceError("W must be min-plus (no -inf, no NaN)")
        couplings.flags.writeable = False
        W.flags.writeable = False

        E = len(edges)
        src = np.empty(2 * E, dtype=np.intp)
        dst = np.empty(2 * E, dtype=np.intp)
        if E:
            pairs = np.array(edges, dtype=np.intp)
            src[0::2], dst[0::2] = pairs[:, 0], pairs[:, 1]
            src[1::2], dst[1::2] = pairs[:, 1], pairs[:, 0]
        slot = {(int(a), int(b)): e for e, (a, b) in enumerate(zip(src, dst))}
        nbrs: list[list[int]] = [[] for _ in range(N)]
        for u, v in edges:
            nbrs[u].append(v)
            nbrs[v].append(u)

        set_ = object.__setattr__
        set_(self, "edges", edges)
        set_(self, "couplings", couplings)
        set_(self, "W", W)
        set_(self, "src", src)
        set_(self, "dst", dst)
        set_(self, "edge_weights", W[src, dst] if E else np.empty(0))
        set_(self, "_slot", slot)
        set_(self, "_neighbors", tuple(tuple(sorted(n)) for n in nbrs))

    @classmethod
    def from_matrices(
        cls,
        n_agents: int,
        n_alternatives: int,
        A: Mapping[tuple[int, int], object],
        W,
        edges: Sequence[tuple[int, int]] | None = None,
    ) -> "TradeNetwork":
        """Assemble a network from a ``{(u, v): matrix}`` map.

        Both directions must be present for every edge.  When ``edges`` is
        omitted it is inferred from the keys of ``A``.
        """
        if edges is None:
            edges = sorted({(min(u, v), max(u, v)) for u, v in A})
        else:
            edges = sorted((min(u, v), max(u, v)) for u, v in edges)
        d = n_alternatives
        couplings = np.empty((2 * len(edges), d, d))
        for k, (u, v) in enumerate(edges):
            for slot, key in ((2 * k, (u, v)), (2 * k + 1, (v, u))):
                if key not in A:
                    raise InstanceError(f"missing coupling matrix A[{key[0]},{key[1]}]")
                m = A[key]
                data = m.data if isinstance(m, TropicalMatrix) else np.asarray(m, dtype=float)
                if data.shape != (d, d):
                    raise DimensionError(f"A[{key[0]},{key[1]}]", data.shape, (d, d))
                couplings[slot] = data
        return cls(n_agents, n_alternatives, tuple(edges), couplings, np.asarray(W, dtype=float))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self._neighbors[u]

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._slot

    def slot(self, u: int, v: int) -> int:
        try:
            return self._slot[(u, v)]
        except KeyError:
            raise InstanceError(f"({u}, {v}) is not an edge") from None

    def A(self, u: int, v: int) -> TropicalMatrix:
        """Coupling matrix ``A_{u,v}`` of the directed pair ``(u, v)``."""
        return TropicalMatrix(self.couplings[self.slot(u, v)], "max")

    def auto_epsilon(self) -> float:
        """Largest edge weight; ``-inf`` when there are no edges."""
        if not self.n_edges:
            return NEG_INF
        return float(self.edge_weights.max())


# ------------------------------------------------------------ validation


def validate(net: TradeNetwork) -> list[Violation]:
    """Check the symmetry/sparsity and doubly G-astic assumptions.

    Negative edge weights are not violations; they raise an
    :class:`AssumptionWarning` instead.
    """
    out: list[Violation] = []
    W = net.W
    N = net.n_agents
    asym = np.argwhere(W != W.T)
    for u, v in asym:
        if u < v:
            out.append(
                Violation("symmetry", f"W[{u},{v}]={W[u, v]} differs from W[{v},{u}]={W[v, u]}", (int(u), int(v)))
            )
    on_edge = np.zeros((N, N), dtype=bool)
    on_edge[net.src, net.dst] = True
    for a, b in np.argwhere(on_edge & (W == POS_INF)):
        out.append(Violation("sparsity", f"edge ({a},{b}) has W=inf", (int(a), int(b))))
    for a, b in np.argwhere(~on_edge & (W != POS_INF)):
        out.append(Violation("sparsity", f"non-edge ({a},{b}) has finite W={W[a, b]}", (int(a), int(b))))
    finite = net.couplings > NEG_INF
    for axis, what in ((2, "row"), (1, "column")):
        for e, i in np.argwhere(~finite.any(axis=axis)):
            a, b = int(net.src[e]), int(net.dst[e])
            out.append(Violation("g_astic", f"A[{a},{b}] {what} {i} is all -inf", (a, b)))
    if net.n_edges and (net.edge_weights < 0).any():
        bad = [net.edges[k] for k in np.flatnonzero(net.edge_weights[0::2] < 0)]
        warnings.warn(f"negative edge weights on {bad[:5]}{'...' if len(bad) > 5 else ''}", AssumptionWarning, stacklevel=2)
    return out


# -------------------------------------------------------- edge quantities


def effective_value(net: TradeNetwork, u: int, v: int, X_u) -> np.ndarray:
    """Best realisable value of each alternative for ``u`` trading with ``v``."""
    return mp_matvec(net.A(u, v), X_u)


def value_residual(net: TradeNetwork, u: int, v: int, X_u, X_v) -> float:
    return linf_distance(effective_value(net, u, v, X_u), effective_value(net, v, u, X_v))


# -------------------------------------------------------------- states


def as_state(X, net: TradeNetwork | None = None) -> np.ndarray:
    """Validate a stacked ``(N, d)`` assignment of value vectors."""
    X = np.array(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("state", X.shape)
    if net is not None and X.shape != (net.n_agents, net.n_alternatives):
        raise DimensionError("state", X.shape, (net.n_agents, net.n_alternatives))
    if np.isnan(X).any() or (X == POS_INF).any():
        raise ValueError("value vectors are max-plus: no +inf or NaN")
    return X


def state_to_json(X) -> dict:
    return matrix_to_json(np.asarray(X, dtype=float))


def state_from_json(doc: dict) -> np.ndarray:
    return as_state(matrix_from_json(doc))


# ---------------------------------------------------------- generation


def _check_range(name: str, rng_range) -> tuple[float, float]:
    lo, hi = (float(v) for v in rng_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be a finite interval lo <= hi, got {rng_range}")
    return lo, hi


def _substream(seed, *key: int) -> np.random.Generator:
    entropy = seed if isinstance(seed, int) else [int(s) for s in seed]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=key)))


def random_instance(
    n_agents: int = 20,
    n_alternatives: int = 10,
    edge_prob: float = 0.2,
    cost_range=(-1.0, 1.0),
    weight_range=(0.0, 1.0),
    seed: int = 0,
) -> TradeNetwork:
    """Erdős–Rényi trade network with uniform couplings and weights.

    Agent ``u`` owns the PCG64 substream ``SeedSequence(seed,
    spawn_key=(0, u))``.  From it, in order, it draws the coin flips for the
    pairs ``(u, v)``, ``v > u``, then for each of its edges the matrices
    ``A_{u,v}``, ``A_{v,u}`` and finally the weights of those edges.
    """
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must lie in [0, 1], got {edge_prob}")
    if n_agents < 1 or n_alternatives < 1:
        raise ValueError("n_agents and n_alternatives must be positive")
    clo, chi = _check_range("cost_range", cost_range)
    wlo, whi = _check_range("weight_range", weight_range)
    N, d = n_agents, n_alternatives

    rngs = [_substream(seed, _INSTANCE_STREAM, u) for u in range(N)]
    partners = []
    for u, rng in enumerate(rngs):
        flips = rng.random(N - u - 1)
        partners.append(np.flatnonzero(flips < edge_prob) + u + 1)
    E = sum(len(p) for p in partners)

    couplings = np.empty((2 * E, d, d))
    W = np.full((N, N), POS_INF)
    edges = []
    k = 0
    for u, rng in enumerate(rngs):
        m = len(partners[u])
        if not m:
            continue
        couplings[2 * k : 2 * (k + m)] = rng.uniform(clo, chi, size=(2 * m, d, d))
        w = rng.uniform(wlo, whi, size=m)
        for v, wv in zip(partners[u], w):
            W[u, v] = W[v, u] = wv
            edges.append((u, int(v)))
        k += m
    return TradeNetwork(N, d, tuple(edges), couplings, W)


def random_state(
    n_agents: int,
    n_alternatives: int,
    value_range=(-1.0, 1.0),
    seed: int = 0,
    stream: int = 0,
) -> np.ndarray:
    """Uniform finite initial condition; ``stream`` selects e.g. a trial."""
    lo, hi = _check_range("value_range", value_range)
    X = np.empty((n_agents, n_alternatives))
    for u in range(n_agents):
        X[u] = _substream(seed, _STATE_STREAM, stream, u).uniform(lo, hi, size=n_alternatives)
    return X


# ----------------------------------------------------------------- I/O


def network_to_json(net: TradeNetwork) -> dict:
    A = {}
    for e in range(2 * net.n_edges):
        A[f"{net.src[e]},{net.dst[e]}"] = matrix_to_json(net.couplings[e])
    return {
        "n_agents": net.n_agents,
        "n_alternatives": net.n_alternatives,
        "edges": [list(e) for e in net.edges],
        "A": A,
        "W": [[encode_scalar(w) for w in row] for row in net.W.tolist()],
    }


def save_network(net: TradeNetwork) -> bytes:
    return json.dumps(network_to_json(net)).encode()


def network_from_json(doc: dict, strict: bool = False) -> TradeNetwork:
    try:
        N = int(doc["n_agents"])
        d = int(doc["n_alternatives"])
        edges = [(int(u), int(v)) for u, v in doc["edges"]]
        raw_A = doc["A"]
        W = np.array([[decode_scalar(w) for w in row] for row in doc["W"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance document: {exc}") from None
    A = {}
    for key, m in raw_A.items():
        try:
            u, v = (int(s) for s in key.split(","))
            A[(u, v)] = matrix_from_json(m)
        except ValueError as exc:
            raise InstanceError(f"A[{key}]: {exc}") from None
    try:
        net = TradeNetwork.from_matrices(N, d, A, W, edges=edges)
    except (DimensionError, ValueError) as exc:
        raise InstanceError(str(exc)) from None
    violations = validate(net)
    if violations:
        summary = "; ".join(str(v) for v in violations[:10])
        if strict:
            raise InstanceError(f"{len(violations)} assumption violation(s): {summary}")
        warnings.warn(f"{len(violations)} assumption violation(s): {summary}", AssumptionWarning, stacklevel=2)
    return net


def load_network(data: bytes | str, strict: bool = False) -> TradeNetwork:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    return network_from_json(doc, strict=strict)
