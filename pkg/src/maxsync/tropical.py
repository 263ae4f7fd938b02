"""Max-plus / min-plus linear algebra over the extended reals.

Scalars are plain floats, with ``-inf`` and ``+inf`` standing for the two
distinguished symbols.  Addition is context dependent: in the max-plus
context ``-inf`` absorbs everything (including ``+inf``), in the min-plus
context ``+inf`` absorbs everything.  numpy would produce ``nan`` for
``-inf + inf``; the helpers below patch exactly those entries.

Vectors are 1-d float arrays.  Matrices are :class:`TropicalMatrix`, a thin
immutable wrapper that carries the semiring tag so a stray ``+inf`` cannot
sneak into a max-plus product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

NEG_INF = -math.inf
POS_INF = math.inf

DEFAULT_TOL = 1e-9

Semiring = Literal["max", "min"]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        pretty = " and ".join("x".join(str(n) for n in s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")


class SemiringError(ValueError):
    """A matrix or vector carries an infinity that is illegal for its semiring."""


# ---------------------------------------------------------------- scalars


def mp_add(a, b):
    """Max-plus ``a + b``: ``-inf`` is absorbing."""
    with np.errstate(invalid="ignore"):
        s = np.add(a, b)
    if np.ndim(s) == 0:
        return NEG_INF if math.isnan(s) else float(s)
    s[np.isnan(s)] = NEG_INF
    return s


def minp_add(a, b):
    """Min-plus ``a +' b``: ``+inf`` is absorbing."""
    with np.errstate(invalid="ignore"):
        s = np.add(a, b)
    if np.ndim(s) == 0:
        return POS_INF if math.isnan(s) else float(s)
    s[np.isnan(s)] = POS_INF
    return s


def neg(a):
    """Negation; swaps the two infinities."""
    return np.negative(a)


# --------------------------------------------------------------- matrices

def _as_float_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError("construct", arr.shape)
    if np.isnan(arr).any():
        raise ValueError("NaN is not an extended real")
    return arr


def _check_tag(arr: np.ndarray, semiring: Semiring, what: str) -> None:
    if semiring == "max":
        if np.any(arr == POS_INF):
            raise SemiringError(f"{what} tagged max-plus contains +inf")
    elif semiring == "min":
        if np.any(arr == NEG_INF):
            raise SemiringError(f"{what} tagged min-plus contains -inf")
    else:
        raise ValueError(f"unknown semiring {semiring!r}")


@dataclass(frozen=True, eq=False)
class TropicalMatrix:
    """Dense matrix over the extended reals, tagged max-plus or min-plus."""

    data: np.ndarray
    semiring: Semiring = "max"

    def __post_init__(self):
        arr = _as_float_array(self.data, 2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError("construct", arr.shape)
        _check_tag(arr, self.semiring, "matrix")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @classmethod
    def identity(cls, n: int, semiring: Semiring = "max") -> "TropicalMatrix":
        off = NEG_INF if semiring == "max" else POS_INF
        data = np.full((n, n), off)
        np.fill_diagonal(data, 0.0)
        return cls(data, semiring)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TropicalMatrix):
            return NotImplemented
        return (
            self.semiring == other.semiring
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __hash__(self):
        return hash((self.semiring, self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"TropicalMatrix({self.data.tolist()!r}, semiring={self.semiring!r})"

    def to_json(self) -> dict:
        return matrix_to_json(self.data)

    @classmethod
    def from_json(cls, doc: dict, semiring: Semiring = "max") -> "TropicalMatrix":
        return cls(matrix_from_json(doc), semiring)


def as_matrix(a, semiring: Semiring = "max") -> TropicalMatrix:
    if isinstance(a, TropicalMatrix):
        if a.semiring != semiring:
            raise SemiringError(
                f"expected a {semiring}-plus matrix, got {a.semiring}-plus"
            )
        return a
    return TropicalMatrix(a, semiring)


def as_vector(x, semiring: Semiring | None = "max") -> np.ndarray:
    """Coerce to a 1-d float array, rejecting the semiring's forbidden infinity."""
    arr = _as_float_array(x, 1)
    if semiring is not None:
        _check_tag(arr, semiring, "vector")
    return arr


# ------------------------------------------------------------- products


def _mp_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a: (m, p), b: (p, n); neither contains +inf, so no nan can appear.
    return np.max(a[:, :, None] + b[None, :, :], axis=1)


def _minp_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        s = a[:, :, None] + b[None, :, :]
    s[np.isnan(s)] = POS_INF
    return np.min(s, axis=1)


def mp_matmul(A, B) -> TropicalMatrix:
    """Max-plus product ``[A ⊞ B]_ij = max_k A_ik + B_kj``."""
    A, B = as_matrix(A, "max"), as_matrix(B, "max")
    if A.cols != B.rows:
        raise DimensionError("mp_matmul", A.shape, B.shape)
    return TropicalMatrix(_mp_product(A.data, B.data), "max")


def minp_matmul(A, B) -> TropicalMatrix:
    """Min-plus product ``[A ⊞' B]_ij = min_k A_ik +' B_kj``."""
    A, B = as_matrix(A, "min"), as_matrix(B, "min")
    if A.cols != B.rows:
        raise DimensionError("minp_matmul", A.shape, B.shape)
    return TropicalMatrix(_minp_product(A.data, B.data), "min")


def mp_matvec(A, x) -> np.ndarray:
    A = as_matrix(A, "max")
    x = as_vector(x, "max")
    if A.cols != x.shape[0]:
        raise DimensionError("mp_matvec", A.shape, x.shape)
    return np.max(A.data + x[None, :], axis=1)


def minp_matvec(A, y) -> np.ndarray:
    A = as_matrix(A, "min")
    # residuation targets are max-plus vectors, so -inf is allowed here
    y = as_vector(y, None)
    if A.cols != y.shape[0]:
        raise DimensionError("minp_matvec", A.shape, y.shape)
    with np.errstate(invalid="ignore"):
        s = A.data + y[None, :]
    s[np.isnan(s)] = POS_INF
    return np.min(s, axis=1)


def pseudoinverse(A) -> TropicalMatrix:
    """Negated transpose of a max-plus matrix; the result is min-plus."""
    A = as_matrix(A, "max")
    return TropicalMatrix(-A.data.T, "min")


def dual_pseudoinverse(A) -> TropicalMatrix:
    """Negated transpose of a min-plus matrix, back to max-plus."""
    A = as_matrix(A, "min")
    return TropicalMatrix(-A.data.T, "max")


def principal_solution(A, b) -> np.ndarray:
    """Greatest ``x`` with ``A ⊞ x ⪯ b``, computed as ``A⁻ ⊞' b``.

    This is an exact solution of ``A ⊞ x = b`` whenever one exists.  The
    right-hand side may contain ``-inf`` but not ``+inf``.

    ``b_i - A_ij`` can round up, so ``A_ij + x_j`` may overshoot ``b_i`` by
    an ulp.  Such entries are stepped down until ``A ⊞ x ⪯ b`` holds in
    floating point too.
    """
    A = as_matrix(A, "max")
    b = as_vector(b, "max")
    if A.rows != b.shape[0]:
        raise DimensionError("principal_solution", A.shape, b.shape)
    x = minp_matvec(pseudoinverse(A), b)
    for _ in range(4):
        with np.errstate(invalid="ignore"):
            over = (A.data + x[None, :] > b[:, None]).any(axis=0) & np.isfinite(x)
        if not over.any():
            break
        x[over] = np.nextafter(x[over], NEG_INF)
    return x


# ------------------------------------------------------------- lattice


def _same_dim(op: str, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(op, x.shape, y.shape)


def join(x, y) -> np.ndarray:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    _same_dim("join", x, y)
    return np.maximum(x, y)


def meet(x, y) -> np.ndarray:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    _same_dim("meet", x, y)
    return np.minimum(x, y)


def scalar_shift(x, alpha: float) -> np.ndarray:
    if not math.isfinite(alpha):
        raise ValueError(f"shift must be finite, got {alpha}")
    return np.asarray(x, dtype=float) + alpha


def leq(x, y, tol: float = 0.0) -> bool:
    """Product order ``x ⪯ y``; ``tol`` loosens finite comparisons only."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    _same_dim("leq", x, y)
    if tol == 0.0:
        return bool(np.all(x <= y))
    ok = x <= y
    finite = np.isfinite(x) & np.isfinite(y)
    ok[finite] = x[finite] <= y[finite] + tol
    return bool(np.all(ok))


def linf_distance(x, y) -> float:
    """Sup-norm distance with the infinity conventions.

    Equal infinities are at distance 0; an infinity against anything else is
    at distance ``+inf``.  Works for arrays of any (matching) shape.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    _same_dim("linf_distance", x, y)
    if x.size == 0:
        return 0.0
    with np.errstate(invalid="ignore"):
        diff = np.abs(x - y)
    diff[x == y] = 0.0
    diff[np.isnan(diff)] = POS_INF
    return float(diff.max())


def allclose(x, y, tol: float = DEFAULT_TOL) -> bool:
    """Finite entries equal within ``tol``; infinities must match exactly."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        return False
    return linf_distance(x, y) <= tol


def is_doubly_g_astic(A) -> bool:
    data = A.data if isinstance(A, TropicalMatrix) else np.asarray(A, dtype=float)
    finite = data > NEG_INF
    return bool(finite.any(axis=1).all() and finite.any(axis=0).all())


# ---------------------------------------------------------------- JSON


def encode_scalar(v: float):
    if v == POS_INF:
        return "inf"
    if v == NEG_INF:
        return "-inf"
    return float(v)


def decode_scalar(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return POS_INF
        if s in ("-inf", "-infinity"):
            return NEG_INF
        raise ValueError(f"bad extended real {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"bad extended real {v!r}")
    out = float(v)
    if math.isnan(out):
        raise ValueError("NaN is not an extended real")
    return out


def matrix_to_json(data: np.ndarray) -> dict:
    data = np.asarray(data, dtype=float)
    rows, cols = data.shape
    return {
        "rows": rows,
        "cols": cols,
        "data": [encode_scalar(v) for v in data.ravel().tolist()],
    }


def matrix_from_json(doc: dict) -> np.ndarray:
    try:
        rows, cols, raw = int(doc["rows"]), int(doc["cols"]), doc["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix document: {exc}") from None
    flat: Iterable = raw
    if raw and isinstance(raw[0], list):
        flat = [v for row in raw for v in row]
    values = [decode_scalar(v) for v in flat]
    if len(values) != rows * cols:
        raise ValueError(
            f"matrix data has {len(values)} entries, expected {rows}x{cols}"
        )
    return np.array(values, dtype=float).reshape(rows, cols)
