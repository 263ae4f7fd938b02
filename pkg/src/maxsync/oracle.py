"""Independent checks for the algebra and the dynamics.

The helpers at the top re-derive max-plus products and residuation with
plain loops and broadcasting instead of going through :mod:`maxsync.tropical`,
so a bug there cannot hide itself here.  Property checks return a
:class:`PropertyReport`; every failure stores its inputs in the JSON
encoding so :func:`replay_failure` can re-run it bit for bit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import heat_step, is_solution
from .network import TradeNetwork, state_from_json, state_to_json
from .tropical import DEFAULT_TOL, linf_distance, principal_solution

_INF = math.inf


def _mp_apply(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    m, n = A.shape
    out = np.full(m, -_INF)
    for i in range(m):
        for j in range(n):
            if A[i, j] == -_INF or x[j] == -_INF:
                continue
            out[i] = max(out[i], A[i, j] + x[j])
    return out


def _residuate(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Greatest x with A ⊞ x ⪯ b, coordinate by coordinate: x_j = min_i b_i - A_ij."""
    m, n = A.shape
    out = np.full(n, _INF)
    for j in range(n):
        for i in range(m):
            if A[i, j] == -_INF:
                continue  # no constraint on x_j from row i
            out[j] = min(out[j], b[i] - A[i, j])
    return out


# -------------------------------------------------------------- reports


@dataclass
class PropertyReport:
    name: str
    trials: int = 0
    failures: list[dict] = field(default_factory=list)
    tolerance: float = DEFAULT_TOL
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {len(self.failures)}/{self.trials} failures (tol={self.tolerance:g})"


def merge_reports(name: str, reports: Sequence[PropertyReport]) -> PropertyReport:
    out = PropertyReport(name, tolerance=max((r.tolerance for r in reports), default=DEFAULT_TOL))
    for r in reports:
        out.trials += r.trials
        out.failures.extend(dict(f, property=r.name) for f in r.failures)
    return out


# --------------------------------------------------- grid residuation oracle


class OracleError(RuntimeError):
    """The oracle was configured so that it cannot see the answer."""


def default_box(A, b, margin: float = 2.0) -> tuple[float, float]:
    x = principal_solution(A, b)
    finite = x[np.isfinite(x)]
    if not finite.size:
        raise OracleError("principal solution has no finite entry")
    return float(finite.min()) - margin, float(finite.max()) + margin


def brute_force_greatest_subsolution(
    A,
    b,
    grid_step: float = 0.25,
    box: tuple | None = None,
) -> np.ndarray:
    """Exhaustive grid search for the greatest ``x`` with ``A ⊞ x ⪯ b``.

    Every point ``lo + k * grid_step`` inside ``box`` is tested; the
    coordinate-wise maximum of the feasible points is returned.  Raises
    :class:`OracleError` when nothing is feasible or the answer touches the
    upper face of the box, i.e. when the box may be cutting off the true
    maximiser.
    """
    A = np.asarray(A.data if hasattr(A, "data") else A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if n > 4:
        raise ValueError("grid oracle is limited to n <= 4")
    if not np.isfinite(b).all():
        raise ValueError("grid oracle needs a finite right-hand side")
    if box is None:
        box = default_box(A, b)
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (n,))
    axes = [l + grid_step * np.arange(int(math.floor((h - l) / grid_step + 1e-9)) + 1) for l, h in zip(lo, hi)]

    pts = np.array(list(itertools.product(*axes)))  # (P, n)
    with np.errstate(invalid="ignore"):
        vals = A[None, :, :] + pts[:, None, :]  # (P, m, n)
    vals[np.isnan(vals)] = -_INF
    feasible = (vals.max(axis=2) <= b[None, :]).all(axis=1)
    if not feasible.any():
        raise OracleError("no grid point in the box is a subsolution")
    best = pts[feasible].max(axis=0)
    top = np.array([ax[-1] for ax in axes])
    if (best >= top).any():
        raise OracleError(f"greatest feasible point {best} touches the box top {top}")
    if (_mp_apply(A, best) > b).any():
        raise OracleError("feasible set not closed under join; oracle inconsistent")
    return best


# --------------------------------------------------------- F properties


def _nonexpansive_ok(net, w, tol):
    X, Y = w["X"], w["Y"]
    return linf_distance(heat_step(net, X), heat_step(net, Y)) <= linf_distance(X, Y) + tol


def _monotone_ok(net, w, tol):
    FX, FY = heat_step(net, w["X"]), heat_step(net, w["Y"])
    return bool(np.all(FX <= FY + tol))


def _homogeneous_ok(net, w, tol):
    X, a = w["X"], w["alpha"]
    return linf_distance(heat_step(net, X + a), heat_step(net, X) + a) <= tol


def _solution_ok(net, w, tol):
    return is_solution(net, w["X"], tol)


def _edge_bound_ok(net, w, tol):
    return not _edge_bound_violations(net, w["X"], tol)


_CHECKS: dict[str, Callable] = {
    "nonexpansive": _nonexpansive_ok,
    "monotone": _monotone_ok,
    "homogeneous": _homogeneous_ok,
    "is_solution": _solution_ok,
    "edge_bound": _edge_bound_ok,
}


def _encode_witness(w: dict) -> dict:
    out = {}
    for k, v in w.items():
        out[k] = state_to_json(v) if isinstance(v, np.ndarray) else v
    return out


def _decode_witness(w: dict) -> dict:
    out = {}
    for k, v in w.items():
        out[k] = state_from_json(v) if isinstance(v, dict) and "data" in v else v
    return out


def _run_check(report: PropertyReport, net, check: str, witness: dict, trial: int) -> None:
    report.trials += 1
    if not _CHECKS[check](net, witness, report.tolerance):
        report.failures.append({"trial": trial, "check": check, "witness": _encode_witness(witness)})


def replay_failure(net: TradeNetwork, failure: dict, tol: float = DEFAULT_TOL) -> bool:
    """Re-run a recorded failure; True if it still fails."""
    witness = _decode_witness(json.loads(json.dumps(failure["witness"])))
    return not _CHECKS[failure["check"]](net, witness, tol)


def _finite_state(rng, net, value_range):
    return rng.uniform(*value_range, size=(net.n_agents, net.n_alternatives))


def check_nonexpansive(
    net: TradeNetwork,
    n_trials: int = 1000,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    value_range=(-1.0, 1.0),
) -> PropertyReport:
    """Sample state pairs and test non-expansiveness, monotonicity, homogeneity.

    Each trial draws its own generator from ``SeedSequence(seed,
    spawn_key=(trial,))``.  Pairs alternate between independent draws and
    small perturbations so both far and near pairs get covered.
    """
    report = PropertyReport("nonexpansive+monotone+homogeneous", tolerance=tol, seed=seed)
    for t in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))
        X = _finite_state(rng, net, value_range)
        if t % 2:
            Y = X + rng.normal(scale=10.0 ** rng.uniform(-6, 0), size=X.shape)
        else:
            Y = _finite_state(rng, net, value_range)
        _run_check(report, net, "nonexpansive", {"X": X, "Y": Y}, t)
        Z = X + np.abs(rng.normal(scale=0.5, size=X.shape)) * (rng.random(X.shape) < 0.5)
        _run_check(report, net, "monotone", {"X": X, "Y": Z}, t)
        _run_check(report, net, "homogeneous", {"X": X, "alpha": float(rng.uniform(-5, 5))}, t)
    return report


def check_solutions(net: TradeNetwork, solutions: Sequence, tol: float = 1e-6) -> PropertyReport:
    report = PropertyReport("is_solution", tolerance=tol)
    for k, X in enumerate(solutions):
        _run_check(report, net, "is_solution", {"X": np.asarray(X, dtype=float)}, k)
    return report


def check_semimodule_closure(
    net: TradeNetwork,
    solutions: Sequence,
    n_trials: int = 1000,
    seed: int = 0,
    tol: float = 1e-6,
) -> PropertyReport:
    """Joins and shifts of solutions must stay solutions.

    If ``X`` and ``Y`` are ``tol``-approximate fixed points then, by
    monotonicity and descent, so is ``X ∨ Y``; shifts are exact up to
    rounding, hence the same ``tol`` is used for the derived states.
    """
    report = PropertyReport("semimodule_closure", tolerance=tol, seed=seed)
    sols = [np.asarray(X, dtype=float) for X in solutions]
    for k, X in enumerate(sols):
        _run_check(report, net, "is_solution", {"X": X}, -1 - k)
    if not sols:
        return report
    for t in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))
        i, j = rng.integers(len(sols), size=2)
        X, Y = sols[i], sols[j]
        _run_check(report, net, "is_solution", {"X": np.maximum(X, Y)}, t)
        _run_check(report, net, "is_solution", {"X": X + float(rng.uniform(-10, 10))}, t)
        finite = X[np.isfinite(X)]
        if finite.size:
            # the positive representative
            _run_check(report, net, "is_solution", {"X": X + (1.0 - float(finite.min()))}, t)
    return report


def _edge_bound_violations(net: TradeNetwork, X, tol: float) -> list[dict]:
    X = np.asarray(X, dtype=float)
    out = []
    for u, v in net.edges:
        w_uv, w_vu = net.W[u, v], net.W[v, u]
        eu = _mp_apply(np.asarray(net.couplings[net.slot(u, v)]), X[u])
        ev = _mp_apply(np.asarray(net.couplings[net.slot(v, u)]), X[v])
        for i in range(net.n_alternatives):
            if eu[i] == ev[i]:
                continue  # includes both -inf
            gap = ev[i] - eu[i]
            if not (-w_uv - tol <= gap <= w_vu + tol):
                out.append({"edge": [u, v], "alternative": i, "gap": gap, "W": w_uv})
    return out


def check_equilibrium_bound(net: TradeNetwork, X, tol: float = 1e-6) -> PropertyReport:
    """Per-edge, per-alternative two-sided bound ``-W ⪯ A_vu⊞X_v - A_uv⊞X_u ⪯ W``."""
    report = PropertyReport("equilibrium_bound", trials=net.n_edges, tolerance=tol)
    bad = _edge_bound_violations(net, X, tol)
    if bad:
        report.failures.append(
            {"trial": 0, "check": "edge_bound", "witness": _encode_witness({"X": np.asarray(X, dtype=float)}), "violations": bad}
        )
    return report


# ----------------------------------------------------- alternating method


class AlternatingResult(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    converged: bool
    iterations: int


def alternating_method_reference(
    A,
    B,
    x0,
    y0,
    max_iters: int = 1000,
    tol: float = DEFAULT_TOL,
) -> AlternatingResult:
    """Classical alternating method for ``A ⊞ x = B ⊞ y``.

    ``x ← x ∧ A⁻ ⊞' (B ⊞ y)``, then ``y ← y ∧ B⁻ ⊞' (A ⊞ x)`` with the new
    ``x``.  Stops when neither vector moves by more than ``tol``;
    ``converged`` is False when ``max_iters`` runs out first.
    """
    A = np.asarray(getattr(A, "data", A), dtype=float)
    B = np.asarray(getattr(B, "data", B), dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    y = np.asarray(y0, dtype=float).copy()
    for it in range(1, max_iters + 1):
        x_new = np.minimum(x, _residuate(A, _mp_apply(B, y)))
        y_new = np.minimum(y, _residuate(B, _mp_apply(A, x_new)))
        moved = max(linf_distance(x, x_new), linf_distance(y, y_new))
        x, y = x_new, y_new
        if moved <= tol:
            return AlternatingResult(x, y, True, it)
    return AlternatingResult(x, y, False, max_iters)
