"""Transfer operator on grid measure vectors and its stationary vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cocycle import CocycleMap, angular_gap, invariant_points, normalize_angle, projective_action
from .errors import ConvergenceError, ValidationError
from .grid import GridMeasure, MeasureVector, ProjectiveGrid, total_variation
from .lyapunov import furstenberg_integral
from .markov import StochasticMatrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 5000
DEFAULT_TAU = 0.05
RESTART_BLOCK = 64


def pushforward_matrix(alpha, grid: ProjectiveGrid) -> sp.csr_matrix:
    """Column-stochastic N x N matrix moving each bin to the image of its center."""
    img = projective_action(alpha, grid.centers)
    lo, hi, w = grid.split(img)
    cols = np.arange(grid.N)
    K = sp.coo_matrix(
        (np.concatenate([w, 1.0 - w]), (np.concatenate([lo, hi]), np.concatenate([cols, cols]))),
        shape=(grid.N, grid.N),
    )
    return K.tocsr()


def grid_pushforward(alpha, nu) -> GridMeasure:
    m = nu.masses if isinstance(nu, GridMeasure) else np.asarray(nu, dtype=float)
    K = pushforward_matrix(alpha, ProjectiveGrid(m.size))
    return GridMeasure(K @ m)


class TransferOperator:
    """The operator (P eta)_j = sum_i (p_i P_ij / p_j) A(i)_* eta_i on a fixed grid."""

    def __init__(self, A: CocycleMap, P: StochasticMatrix, N: int):
        if A.q != P.q:
            raise ValidationError(f"cocycle has {A.q} symbols but P has {P.q}")
        self.A = A
        self.P = P
        self.grid = ProjectiveGrid(N)
        self.kernels = [pushforward_matrix(a, self.grid) for a in A.matrices]
        self.weights = P.backward_weights()

    @property
    def N(self) -> int:
        return self.grid.N

    def apply_array(self, m: np.ndarray) -> np.ndarray:
        pushed = np.stack([K @ row for K, row in zip(self.kernels, m)])
        return self.weights.T @ pushed

    def __call__(self, eta: MeasureVector) -> MeasureVector:
        return MeasureVector(self.apply_array(eta.masses))

    def apply_pairs(self, xs: np.ndarray) -> np.ndarray:
        """Diagonal action on a stack of (N, N) couplings."""
        pushed = np.stack([(K @ (K @ x).T).T for K, x in zip(self.kernels, xs)])
        return np.tensordot(self.weights.T, pushed, axes=1)


def transfer_apply(A: CocycleMap, P: StochasticMatrix, eta: MeasureVector) -> MeasureVector:
    return TransferOperator(A, P, eta.N)(eta)


def _residual(op: TransferOperator, m: np.ndarray) -> float:
    out = op.apply_array(m)
    return max(total_variation(a, b) for a, b in zip(out, m))


def invariance_residual(A: CocycleMap, P: StochasticMatrix, eta: MeasureVector) -> float:
    """max_j TV(eta_j, (P eta)_j)."""
    eta.require_unit()
    return _residual(TransferOperator(A, P, eta.N), eta.masses)


@dataclass
class StationaryResult:
    eta: MeasureVector
    residual: float
    iterations: int
    converged: bool
    label: str = ""


def cesaro_stationary(A: CocycleMap, P: StochasticMatrix, init: MeasureVector,
                      max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                      op: TransferOperator | None = None,
                      block: int = RESTART_BLOCK) -> StationaryResult:
    """Cesaro averages of operator iterates, restarted from the current average.

    Over a block started at xi, the average eta_n = (1/n) sum_{l<n} P^l xi
    has residual TV(P^n xi, xi)/n, available without an extra operator
    call. When a block ends, the average becomes the next starting point;
    this never increases the residual and converges geometrically when the
    discretized chain mixes.
    """
    init.require_unit()
    op = op or TransferOperator(A, P, init.N)
    xi = init.masses.copy()
    best = xi
    best_res = _residual(op, xi)
    if best_res <= tol:
        return StationaryResult(MeasureVector(xi), best_res, 0, True)
    acc = np.zeros_like(xi)
    cur = xi
    n = 0
    for it in range(1, max_iters + 1):
        acc += cur
        cur = op.apply_array(cur)
        n += 1
        res = max(total_variation(a, b) for a, b in zip(cur, xi)) / n
        if res < best_res:
            best, best_res = acc / n, res
        if best_res <= tol:
            break
        if n == block:
            xi = acc / n
            acc = np.zeros_like(xi)
            cur = xi
            n = 0
    # renormalize away accumulated rounding before handing the vector back
    best = best / best.sum(axis=1, keepdims=True)
    res = _residual(op, best)
    converged = res <= tol
    if not converged:
        log.info("Cesaro solver stopped at residual %.3e after %d iterations", res, it)
    return StationaryResult(MeasureVector(best), res, it, converged)


@dataclass(frozen=True)
class Atom:
    symbol: int
    bin: int
    mass: float
    theta: float


def _circular_mean(thetas, weights) -> float:
    z = np.sum(np.asarray(weights) * np.exp(2j * np.asarray(thetas)))
    return float(normalize_angle(np.angle(z) / 2))


def _component_atoms(m: np.ndarray, tau: float):
    N = m.size
    centers = ProjectiveGrid(N).centers
    used = np.zeros(N, dtype=bool)
    out = []
    for b in np.argsort(-m, kind="stable"):
        if used[b] or m[b] <= 0:
            continue
        if m[b] * 2 <= tau:
            break
        left, right = (b - 1) % N, (b + 1) % N
        cands = [x for x in (left, right) if not used[x]]
        nb = max(cands, key=lambda x: m[x]) if cands else None
        cluster = [b] if nb is None or m[nb] <= 0 else [b, nb]
        total = float(m[cluster].sum())
        if total <= tau:
            continue
        used[cluster] = True
        out.append((int(b), total, _circular_mean(centers[cluster], m[cluster])))
    return out


def detect_atoms(eta: MeasureVector, tau: float = DEFAULT_TAU,
                 refined: MeasureVector | None = None, retain: float = 0.9) -> list[Atom]:
    """Concentrations of mass above ``tau``.

    A point mass deposited by the linear two-bin splitting occupies at most
    two adjacent bins, so candidates are a heavy bin plus its heavier
    neighbour. When ``refined`` (the same object computed on a grid of 2N
    bins) is given, a candidate is kept only if the two fine bins bracketing
    its location carry at least ``retain`` of its mass.
    """
    atoms = []
    for j in range(eta.q):
        for b, mass, theta in _component_atoms(eta.masses[j], tau):
            if refined is not None:
                if refined.N != 2 * eta.N:
                    raise ValidationError("refined vector must live on a grid of 2N bins")
                lo, hi, _ = refined.grid.split(theta)
                if refined.masses[j][lo] + refined.masses[j][hi] < retain * mass:
                    continue
            atoms.append(Atom(j, b, mass, theta))
    return atoms


@dataclass
class AtomReport:
    atoms: list[float]
    weight: float
    closed: bool
    weights_equal: bool
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_atomic_invariant_set(A: CocycleMap, eta: MeasureVector,
                                tau: float = DEFAULT_TAU) -> AtomReport:
    """Extract the heaviest atoms and test that the cocycle permutes them.

    Also checks that every invariant atom has the same weight in each
    component. Failures are collected in the report rather than raised.
    """
    N = eta.N
    h = np.pi / N
    weight_tol = 2.0 / N + 1e-3
    atoms = detect_atoms(eta, tau)
    if not atoms:
        return AtomReport([], 0.0, False, False, ["no atoms above threshold"])
    top = max(a.mass for a in atoms)
    L: list[float] = []
    for a in sorted(atoms, key=lambda a: -a.mass):
        if a.mass >= top - weight_tol and all(angular_gap(a.theta, t) > h for t in L):
            L.append(a.theta)
    L.sort()
    violations = []
    closed = True
    for i, mat in enumerate(A.matrices):
        for t in L:
            img = projective_action(mat, t)
            if min(angular_gap(img, s) for s in L) > h:
                closed = False
                violations.append(f"A({i}) maps atom {t:.6f} to {img:.6f}, outside the set")
    weights_equal = True
    for t in L:
        w = []
        for j in range(eta.q):
            near = [a.mass for a in atoms if a.symbol == j and angular_gap(a.theta, t) <= h]
            w.append(max(near) if near else 0.0)
        if max(w) - min(w) > weight_tol:
            weights_equal = False
            violations.append(f"atom {t:.6f} has unequal weights across symbols: {w}")
    return AtomReport(L, top, closed, weights_equal, violations)


def default_inits(A: CocycleMap, N: int) -> list[tuple[str, MeasureVector]]:
    q = A.q
    inits = [("uniform", MeasureVector.uniform(q, N))]
    eig = invariant_points(CocycleMap(A.matrices[:1]))
    if eig != "all":
        for t in eig:
            inits.append((f"dirac@{t:.6f}", MeasureVector.dirac(q, N, t)))
    for k in range(4):
        t = k * np.pi / 4
        inits.append((f"dirac@{t:.6f}", MeasureVector.dirac(q, N, t)))
    seen = set()
    return [x for x in inits if not (x[0] in seen or seen.add(x[0]))]


@dataclass
class FurstenbergResult:
    value: float
    eta: MeasureVector
    residual: float
    label: str
    runs: list[tuple[str, float, float, bool]]


def maximize_furstenberg(A: CocycleMap, P: StochasticMatrix, inits=None, N: int = 1024,
                         max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> FurstenbergResult:
    """Max of the Furstenberg integral over converged stationary vectors from several inits."""
    if inits is None:
        inits = default_inits(A, N)
    inits = [(f"init{k}", x) if isinstance(x, MeasureVector) else x for k, x in enumerate(inits)]
    op = TransferOperator(A, P, inits[0][1].N)
    runs = []
    best = None
    for label, init in inits:
        res = cesaro_stationary(A, P, init, max_iters=max_iters, tol=tol, op=op)
        val = furstenberg_integral(A, P, res.eta)
        runs.append((label, val, res.residual, res.converged))
        if res.converged and (best is None or val > best[0]):
            best = (val, res, label)
    if best is None:
        worst = min(r[2] for r in runs)
        raise ConvergenceError(
            "no stationary run converged: " + ", ".join(f"{r[0]} residual {r[2]:.3e}" for r in runs),
            residual=worst,
        )
    val, res, label = best
    return FurstenbergResult(val, res.eta, res.residual, label, runs)
