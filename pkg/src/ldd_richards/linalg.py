"""Sparse storage, matrix-vector products and restarted GMRES."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "TripletMatrix",
    "CsrMatrix",
    "GmresOptions",
    "GmresStats",
    "GmresBreakdown",
    "to_csr",
    "spmv",
    "gmres",
    "condition_number_dense",
    "dump_coordinate",
    "MAX_DENSE_SIZE",
]

MAX_DENSE_SIZE = 5000


class GmresBreakdown(RuntimeError):
    """Arnoldi produced a zero vector while the residual is still above tolerance."""


@dataclass
class TripletMatrix:
    """Coordinate storage; duplicate ``(row, col)`` entries are summed on conversion."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).ravel()
        self.cols = np.asarray(self.cols, dtype=np.int64).ravel()
        self.vals = np.asarray(self.vals, dtype=float).ravel()
        if not (self.rows.size == self.cols.size == self.vals.size):
            raise ValueError("rows, cols and vals must have equal length")

    @classmethod
    def from_entries(cls, n_rows: int, n_cols: int, entries) -> "TripletMatrix":
        entries = list(entries)
        if not entries:
            return cls(n_rows, n_cols, [], [], [])
        r, c, v = zip(*entries)
        return cls(n_rows, n_cols, r, c, v)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for r, c, v in zip(self.rows, self.cols, self.vals):
            out[r, c] += v
        return out


@dataclass
class CsrMatrix:
    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @cached_property
    def _row_of_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.indptr))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        on = self._row_of_entry == self.indices
        np.add.at(d, self.indices[on], self.data[on])
        return d

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self._row_of_entry, self.indices] = self.data
        return out

    def __matmul__(self, x):
        return spmv(self, x)


def to_csr(t: TripletMatrix) -> CsrMatrix:
    """Compressed-row form of ``t`` with duplicates summed and zeros kept."""
    if t.rows.size and (t.rows.min() < 0 or t.rows.max() >= t.n_rows
                        or t.cols.min() < 0 or t.cols.max() >= t.n_cols):
        raise IndexError("triplet index out of range")
    key = t.rows * t.n_cols + t.cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    slot = np.cumsum(first) - 1
    n_unique = int(first.sum())
    data = np.bincount(slot, weights=t.vals[order], minlength=n_unique) if key.size else np.zeros(0)
    ukey = key[first]
    rows = ukey // t.n_cols
    indptr = np.zeros(t.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=t.n_rows), out=indptr[1:])
    return CsrMatrix(t.n_rows, t.n_cols, indptr, ukey % t.n_cols, data)


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """``A @ x``; each row is summed in column order."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_cols,):
        raise ValueError(f"vector of shape {x.shape} for matrix {A.shape}")
    return np.bincount(A._row_of_entry, weights=A.data * x[A.indices], minlength=A.n_rows)


@dataclass
class GmresOptions:
    restart: int = 30
    tol: float = 1e-10
    max_iter: int | None = None  # default 10 * n
    precondition: bool = False

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class GmresStats:
    iterations: int = 0
    restarts: int = 0
    residual: float = 0.0
    converged: bool = False
    history: list = field(default_factory=list, repr=False)


def gmres(A, b, x0=None, opts: GmresOptions | None = None):
    """Restarted GMRES with optional right Jacobi scaling.

    Returns ``(x, stats)``. ``stats.residual`` is the true relative residual
    ``||b - A x|| / ||b||`` of the returned iterate, recomputed after every
    cycle. If the iteration budget runs out the best iterate seen is
    returned with ``converged=False``. A lucky breakdown counts as
    convergence when the residual meets the tolerance and raises
    :class:`GmresBreakdown` otherwise.
    """
    opts = opts or GmresOptions()
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise ValueError(f"matrix {A.shape} does not match rhs of length {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    max_iter = opts.max_iter if opts.max_iter is not None else 10 * n
    stats = GmresStats()

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        stats.converged = True
        return np.zeros(n), stats

    if opts.precondition:
        d = np.asarray(A.diagonal(), dtype=float)
        dinv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), 1.0)
    else:
        dinv = None

    r = b - A @ x
    rnorm = float(np.linalg.norm(r))
    best_x, best_res = x.copy(), rnorm / bnorm
    stats.residual = best_res
    target = opts.tol * bnorm
    m = opts.restart

    while rnorm > target and stats.iterations < max_iter:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        gvec = np.zeros(m + 1)
        gvec[0] = rnorm
        V[0] = r / rnorm
        k = 0
        breakdown = False
        while k < m and stats.iterations < max_iter:
            z = V[k] * dinv if dinv is not None else V[k]
            w = A @ z
            # classical Gram-Schmidt, applied twice
            h = V[: k + 1] @ w
            w = w - h @ V[: k + 1]
            h2 = V[: k + 1] @ w
            w = w - h2 @ V[: k + 1]
            h += h2
            hn = float(np.linalg.norm(w))
            H[: k + 1, k] = h
            H[k + 1, k] = hn
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = math.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            gvec[k + 1] = -sn[k] * gvec[k]
            gvec[k] = cs[k] * gvec[k]
            stats.iterations += 1
            k += 1
            if abs(gvec[k]) <= target:
                break
            if hn <= 1e-14 * max(1.0, float(np.abs(h).max(initial=0.0))):
                breakdown = True
                break
            V[k] = w / hn
        # back substitution on the k x k triangle
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            if H[i, i] == 0.0:
                y[i] = 0.0
                continue
            y[i] = (gvec[i] - H[i, i + 1:k] @ y[i + 1:k]) / H[i, i]
        dx = y @ V[:k]
        if dinv is not None:
            dx = dx * dinv
        x = x + dx
        r = b - A @ x
        rnorm = float(np.linalg.norm(r))
        stats.history.append(rnorm / bnorm)
        if rnorm / bnorm < best_res:
            best_x, best_res = x.copy(), rnorm / bnorm
        if breakdown and rnorm > target:
            raise GmresBreakdown(
                f"Arnoldi breakdown after {stats.iterations} iterations with relative residual {rnorm / bnorm:.3e}")
        if rnorm > target and stats.iterations < max_iter:
            stats.restarts += 1

    stats.converged = best_res <= opts.tol
    stats.residual = best_res
    return best_x, stats


def condition_number_dense(A) -> float:
    """2-norm condition number ``sigma_max / sigma_min``; ``inf`` when singular."""
    if isinstance(A, TripletMatrix):
        A = to_csr(A)
    if isinstance(A, CsrMatrix):
        if max(A.shape) > MAX_DENSE_SIZE:
            raise ValueError(f"refusing to densify a {A.shape} matrix")
        A = A.to_dense()
    A = np.asarray(A, dtype=float)
    if max(A.shape) > MAX_DENSE_SIZE:
        raise ValueError(f"refusing to densify a {A.shape} matrix")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0.0 or s[-1] <= s[0] * np.finfo(float).eps * max(A.shape):
        return math.inf
    return float(s[0] / s[-1])


def dump_coordinate(A, path) -> None:
    """Write one ``row col value`` line per stored entry, 17 significant digits."""
    if isinstance(A, TripletMatrix):
        A = to_csr(A)
    with open(path, "w") as fh:
        fh.write(f"% {A.n_rows} {A.n_cols} {A.data.size}\n")
        for r, c, v in zip(A._row_of_entry, A.indices, A.data):
            fh.write(f"{r} {c} {v:.17g}\n")
