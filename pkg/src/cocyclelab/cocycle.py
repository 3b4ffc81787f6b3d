"""Locally constant GL(2) cocycles and their action on the projective line.

Lines through the origin are parametrized by an angle in [0, pi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotExpandingError, ValidationError
from .markov import StochasticMatrix, cylinder_table

INVARIANCE_TOL = 1e-9


def normalize_angle(theta):
    t = np.mod(theta, np.pi)
    # mod can round up to exactly pi for tiny negative inputs
    return np.where(t >= np.pi, 0.0, t) if np.ndim(t) else (0.0 if t >= np.pi else float(t))


def angular_gap(a, b):
    """Unsigned angle between two lines, in [0, pi/2]."""
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), np.pi))
    return np.minimum(d, np.pi - d)


def unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def singular_values(alpha) -> tuple[float, float]:
    """Closed-form singular values ``(s_max, s_min)`` of a 2x2 matrix."""
    a, b, c, d = np.asarray(alpha, dtype=float).ravel()
    fro = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    # F -+ 2|det| as sums of squares, free of cancellation
    sg = 1.0 if a * d - b * c >= 0 else -1.0
    disc = np.sqrt(((a - sg * d) ** 2 + (b + sg * c) ** 2) * ((a + sg * d) ** 2 + (b - sg * c) ** 2))
    s_max = np.sqrt(0.5 * (fro + disc))
    s_min = det / s_max if s_max > 0 else 0.0
    return float(s_max), float(s_min)


def matrix_norm(alpha) -> float:
    return singular_values(alpha)[0]


def matrix_conorm(alpha) -> float:
    """Smallest singular value, i.e. 1 / ||alpha^{-1}||."""
    return singular_values(alpha)[1]


def rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class CocycleMap:
    """One invertible 2x2 matrix per symbol, stored as a (q, 2, 2) array."""

    matrices: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrices, dtype=float)
        if M.ndim == 2 and M.shape[1] == 4:
            M = M.reshape(-1, 2, 2)
        if M.ndim != 3 or M.shape[1:] != (2, 2):
            raise ValidationError(f"cocycle matrices must have shape (q, 2, 2), got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValidationError("cocycle has non-finite entries")
        for i, a in enumerate(M):
            det = abs(np.linalg.det(a))
            scale = np.sum(a * a)
            if det < 1e-12 * scale or det == 0:
                raise ValidationError(f"matrix {i} is singular (|det| = {det:.3e})")
        M.setflags(write=False)
        object.__setattr__(self, "matrices", M)

    @property
    def q(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.matrices[i]

    def dets(self) -> np.ndarray:
        return np.linalg.det(self.matrices)

    def inverse(self) -> CocycleMap:
        return CocycleMap(np.linalg.inv(self.matrices))

    def scaled(self, c: float) -> CocycleMap:
        return CocycleMap(c * self.matrices)


def word_product(A: CocycleMap, word) -> np.ndarray:
    """A(w_{n-1}) ... A(w_1) A(w_0); the empty word gives the identity."""
    out = np.eye(2)
    for s in word:
        out = A[int(s)] @ out
    return out


def projective_action(alpha, theta):
    alpha = np.asarray(alpha, dtype=float)
    v = alpha @ unit(theta)
    return normalize_angle(np.arctan2(v[1], v[0]))


def projective_derivative(alpha, theta):
    """Magnitude of the derivative of the projective map at ``theta``.

    In dimension two this is |det alpha| / ||alpha u||^2 for the unit vector u
    spanning the line.
    """
    alpha = np.asarray(alpha, dtype=float)
    v = alpha @ unit(theta)
    return abs(np.linalg.det(alpha)) / np.sum(v * v, axis=0)


def _eigendirections(a: np.ndarray) -> list[float] | None:
    """Real eigenlines of a 2x2 matrix; None when it is a multiple of the identity."""
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    scale = np.max(np.abs(a))
    if abs(a[0, 1]) <= 1e-14 * scale and abs(a[1, 0]) <= 1e-14 * scale and abs(a[0, 0] - a[1, 1]) <= 1e-14 * scale:
        return None
    disc = tr * tr - 4 * det
    if disc < -1e-14 * scale * scale:
        return []
    root = np.sqrt(max(disc, 0.0))
    out = []
    for lam in {0.5 * (tr + root), 0.5 * (tr - root)}:
        m = a - lam * np.eye(2)
        # the eigenline is orthogonal to the larger row of a - lam I
        r = m[0] if np.dot(m[0], m[0]) >= np.dot(m[1], m[1]) else m[1]
        theta = normalize_angle(np.arctan2(r[0], -r[1]))
        if all(angular_gap(theta, t) > 1e-9 for t in out):
            out.append(theta)
    return out


def is_invariant(A: CocycleMap, theta: float, tol: float = INVARIANCE_TOL) -> bool:
    u = unit(theta)
    for a in A.matrices:
        w = a @ u
        if abs(w[0] * u[1] - w[1] * u[0]) > tol * np.linalg.norm(w):
            return False
    return True


def invariant_points(A: CocycleMap) -> list[float] | str:
    """Lines fixed by every A(i); the string "all" when every A(i) is scalar."""
    candidates = None
    for a in A.matrices:
        dirs = _eigendirections(a)
        if dirs is None:
            continue
        candidates = dirs
        break
    if candidates is None:
        return "all"
    return sorted(t for t in candidates if is_invariant(A, t))


def _log_step_derivatives(A: CocycleMap, theta: float) -> np.ndarray:
    # at an invariant line the l-step derivative factorizes over the symbols
    u = unit(theta)
    img = A.matrices @ u
    return np.log(np.abs(A.dets())) - 2 * np.log(np.linalg.norm(img, axis=1))


def _require_invariant(A: CocycleMap, v: float):
    if not is_invariant(A, v):
        raise ValidationError(f"line at angle {v!r} is not invariant under every matrix")


def expanding_integral(A: CocycleMap, P: StochasticMatrix, v: float, l: int, i: int) -> float:
    """Integral over [0; i] of log co-norm of the l-step projective derivative at v."""
    _require_invariant(A, v)
    g = _log_step_derivatives(A, v)
    words, masses = cylinder_table(P, l, first=i)
    return float(np.sum(masses * g[words].sum(axis=1)))


def check_expanding(A: CocycleMap, P: StochasticMatrix, v: float, l_max: int = 8):
    """Smallest l whose integrals are all positive, with c = min_i I_i / (4 p_i).

    Returns ``(l, c)`` or None.
    """
    _require_invariant(A, v)
    for l in range(1, l_max + 1):
        vals = np.array([expanding_integral(A, P, v, l, i) for i in range(P.q)])
        if np.all(vals > 0):
            return l, float(np.min(vals / (4 * P.p)))
    return None


def certify_expanding(A: CocycleMap, P: StochasticMatrix, v: float, l_max: int = 8):
    """Like :func:`check_expanding` but raises, naming the failing symbols."""
    res = check_expanding(A, P, v, l_max)
    if res is None:
        vals = [expanding_integral(A, P, v, l_max, i) for i in range(P.q)]
        bad = [i for i, x in enumerate(vals) if x <= 0]
        raise NotExpandingError(
            f"line {v!r} is not P-expanding up to l={l_max}: "
            f"symbols {bad} have non-positive integrals {[vals[i] for i in bad]}"
        )
    return res


def delta_moments(A: CocycleMap, P: StochasticMatrix, v: float, l: int, delta: float) -> np.ndarray:
    """Per-symbol integrals of ||DA^l(x, v)^{-1}||^delta."""
    g = _log_step_derivatives(A, v)
    out = np.empty(P.q)
    for i in range(P.q):
        words, masses = cylinder_table(P, l, first=i)
        out[i] = np.sum(masses * np.exp(-delta * g[words].sum(axis=1)))
    return out


def delta_moment_scan(A: CocycleMap, P: StochasticMatrix, v: float, l: int, c: float, deltas=None) -> float | None:
    """Largest delta in the grid with moment_i(delta) <= (1 - 3 c delta) p_i for every i."""
    if c is None or c <= 0:
        return None
    _require_invariant(A, v)
    if deltas is None:
        deltas = [2.0**-k for k in range(1, 11)]
    for delta in sorted(deltas, reverse=True):
        m = delta_moments(A, P, v, l, delta)
        if np.all(m <= (1 - 3 * c * delta) * P.p):
            return float(delta)
    return None


def preimages_contained(A: CocycleMap, P: StochasticMatrix, l: int, inner, outer, samples: int = 64) -> bool:
    """Check that A^l(x)^{-1} maps the closed arc ``inner`` into the open arc ``outer``.

    Arcs are ``(center, radius)`` pairs; the inner arc is sampled at its
    endpoints and ``samples`` interior points for every positive-mass word.
    """
    c_in, r_in = inner
    c_out, r_out = outer
    thetas = c_in + np.linspace(-r_in, r_in, samples + 2)
    words, _ = cylinder_table(P, l)
    for w in words:
        inv = np.linalg.inv(word_product(A, w))
        imgs = np.array([projective_action(inv, t) for t in thetas])
        if np.any(angular_gap(imgs, c_out) >= r_out):
            return False
    return True
