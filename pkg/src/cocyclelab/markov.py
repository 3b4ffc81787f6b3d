"""Finite Markov chains: stochastic matrices, stationary vectors, cylinders.

Symbols are 0-based throughout (``0 .. q-1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConvergenceError, EnumerationCapError, ValidationError

ROW_TOL = 1e-9
STATIONARY_TOL = 1e-15
STATIONARY_MAX_ITERS = 100_000
ENUMERATION_CAP = 2**20


def _validate_rows(rows) -> np.ndarray:
    P = np.asarray(rows, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"transition matrix must be square, got shape {P.shape}")
    if P.shape[0] < 2:
        raise ValidationError("transition matrix needs at least 2 symbols")
    if not np.all(np.isfinite(P)):
        raise ValidationError("transition matrix has non-finite entries")
    if np.any(P < 0):
        r = int(np.argwhere(P < 0)[0, 0])
        raise ValidationError(f"row {r} has a negative entry")
    sums = P.sum(axis=1)
    for r, s in enumerate(sums):
        if abs(s - 1.0) > ROW_TOL:
            raise ValidationError(f"row {r} sums to {float(s)!r}, expected 1")
    # Snap rows onto the simplex so row sums hold to machine precision.
    P = P / sums[:, None]
    dead = np.flatnonzero(P.sum(axis=0) == 0)
    if dead.size:
        raise ValidationError(f"column {int(dead[0])} is identically zero")
    return P


def check_aperiodic(rows) -> int | None:
    """Smallest N with P^N entrywise positive, or None.

    The search stops at Wielandt's bound (q-1)^2 + 1; a primitive matrix
    always reaches positivity by then.
    """
    P = _validate_rows(rows)
    q = P.shape[0]
    pattern = P > 0
    B = pattern.astype(np.int64)
    power = pattern.copy()
    for N in range(1, (q - 1) ** 2 + 2):
        if power.all():
            return N
        power = (power.astype(np.int64) @ B) > 0
    return None


def _is_irreducible(P: np.ndarray) -> bool:
    q = P.shape[0]
    reach = np.eye(q, dtype=np.int64) + (P > 0)
    acc = np.eye(q, dtype=np.int64)
    for _ in range(q - 1):
        acc = ((acc @ reach) > 0).astype(np.int64)
    return bool((acc > 0).all())


def _power_iteration(P: np.ndarray, tol: float, max_iters: int) -> np.ndarray:
    q = P.shape[0]
    # Lazy chain: same stationary vector, aperiodic even when P is not.
    L = 0.5 * (P + np.eye(q))
    p = np.full(q, 1.0 / q)
    resid = np.inf
    for _ in range(max_iters):
        nxt = p @ L
        nxt /= nxt.sum()
        prev, resid = resid, np.max(np.abs(nxt - p))
        p = nxt
        # stop at the tolerance or once rounding noise stalls the iteration
        if resid <= tol or (resid < 1e-13 and resid >= prev):
            break
    resid = float(np.max(np.abs(p @ P - p)))
    if resid > 1e-10:
        raise ConvergenceError(
            f"power iteration stalled with residual {resid:.3e}", residual=resid
        )
    return p


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic transition matrix together with its stationary vector."""

    rows: np.ndarray
    p: np.ndarray = field(repr=False)
    aperiodicity_exponent: int | None
    periodic: bool

    @classmethod
    def from_rows(cls, rows) -> StochasticMatrix:
        P = _validate_rows(rows)
        if not _is_irreducible(P):
            raise ValidationError("transition matrix is reducible")
        N = check_aperiodic(P)
        p = _power_iteration(P, STATIONARY_TOL, STATIONARY_MAX_ITERS)
        P.setflags(write=False)
        p.setflags(write=False)
        return cls(rows=P, p=p, aperiodicity_exponent=N, periodic=N is None)

    @classmethod
    def bernoulli(cls, probs) -> StochasticMatrix:
        probs = np.asarray(probs, dtype=float)
        return cls.from_rows(np.tile(probs, (probs.size, 1)))

    @property
    def q(self) -> int:
        return self.rows.shape[0]

    def stationary_residual(self) -> float:
        return float(np.max(np.abs(self.p @ self.rows - self.p)))

    def backward_weights(self) -> np.ndarray:
        """Matrix W with W[i, j] = p_i P_ij / p_j; each column sums to one."""
        return self.p[:, None] * self.rows / self.p[None, :]


def _as_matrix(P) -> StochasticMatrix:
    if isinstance(P, StochasticMatrix):
        return P
    return StochasticMatrix.from_rows(P)


def stationary_distribution(P) -> tuple[np.ndarray, bool]:
    """Return ``(p, periodic)``; ``periodic`` flags irreducible-but-periodic P."""
    P = _as_matrix(P)
    return P.p.copy(), P.periodic


def _check_word(P: StochasticMatrix, word) -> np.ndarray:
    w = np.asarray(word, dtype=np.int64).reshape(-1)
    if w.size and (w.min() < 0 or w.max() >= P.q):
        raise ValidationError(f"word {tuple(w)} has symbols outside 0..{P.q - 1}")
    return w


def cylinder_measure(P, word) -> float:
    P = _as_matrix(P)
    w = _check_word(P, word)
    if w.size == 0:
        return 1.0
    mass = P.p[w[0]]
    for a, b in zip(w[:-1], w[1:]):
        mass *= P.rows[a, b]
    return float(mass)


@njit(cache=True)
def _walk(cum, start, u):
    n = u.shape[0]
    q = cum.shape[0]
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = start
    s = start
    for t in range(n):
        x = u[t]
        k = 0
        while k < q - 1 and x >= cum[s, k]:
            k += 1
        s = k
        out[t + 1] = s
    return out


def sample_chain(P, n: int, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw a length-``n`` path: first symbol from p, then along the rows of P."""
    P = _as_matrix(P)
    if n < 1:
        raise ValidationError("chain length must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    u = rng.random(n)
    start = int(np.searchsorted(np.cumsum(P.p), u[0], side="right"))
    start = min(start, P.q - 1)
    cum = np.cumsum(P.rows, axis=1)
    # A row's zero-probability tail must never be selected.
    cum[:, -1] = np.inf
    return _walk(cum, start, u[1:])


def cylinder_table(P, length: int, first: int | None = None, cap: int = ENUMERATION_CAP):
    """All positive-mass words of the given length, as ``(words, masses)`` arrays."""
    P = _as_matrix(P)
    q = P.q
    total = q ** (length - 1) if first is not None else q**length
    if total > cap:
        raise EnumerationCapError(
            f"{total} cylinders of length {length} exceed the cap {cap}; "
            "use Monte-Carlo sampling instead"
        )
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64), np.ones(1)
    if first is None:
        words = np.arange(q, dtype=np.int64)[:, None]
        masses = P.p.copy()
    else:
        words = np.array([[first]], dtype=np.int64)
        masses = P.p[[first]].copy()
    for _ in range(length - 1):
        last = words[:, -1]
        ext = masses[:, None] * P.rows[last]
        keep = ext > 0
        rows_idx, syms = np.nonzero(keep)
        words = np.hstack([words[rows_idx], syms[:, None]])
        masses = ext[keep]
    return words, masses


def enumerate_cylinders(P, length: int, cap: int = ENUMERATION_CAP) -> list[tuple[tuple[int, ...], float]]:
    words, masses = cylinder_table(P, length, cap=cap)
    return [(tuple(int(s) for s in w), float(m)) for w, m in zip(words, masses)]

