"""Couplings of grid measures, their delta-energy, and the coupling dynamics.

The kernel is d(u, w)^(-delta) on U1 x U1 and 1 elsewhere, where d is the
angle between lines scaled so the projective line has diameter 1. On a grid,
two masses in the same bin of U1 sit on the diagonal, so such cells cost
+inf and are excluded from the transportation problem.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .cocycle import CocycleMap, angular_gap, certify_expanding, expanding_integral, preimages_contained
from .errors import NotExpandingError, SolverSizeError, SurgeryError, ValidationError
from .grid import GridMeasure, MeasureVector, ProjectiveGrid
from .markov import StochasticMatrix
from .stationary import TransferOperator

MARGINAL_TOL = 1e-10
SUPPORT_CAP = 256


@dataclass(frozen=True)
class Arc:
    """Open arc of lines within ``radius`` of ``center``."""

    center: float
    radius: float

    def contains(self, theta):
        return angular_gap(theta, self.center) < self.radius

    def contains_closed(self, theta):
        return angular_gap(theta, self.center) <= self.radius

    def scaled(self, f: float) -> Arc:
        return Arc(self.center, self.radius * f)


@dataclass(frozen=True)
class EnergyParams:
    delta: float
    u1: Arc
    cap: float = 1e300

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValidationError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0 < self.u1.radius < np.pi / 4:
            raise ValidationError(f"U1 radius must lie in (0, pi/4), got {self.u1.radius}")

    def report(self, value: float) -> float:
        return self.cap if np.isinf(value) else value


def nested_arcs(params: EnergyParams) -> tuple[Arc, Arc]:
    """Default U2, U3: concentric with U1 at 2/3 and 1/3 of its radius."""
    return params.u1.scaled(2 / 3), params.u1.scaled(1 / 3)


def projective_distance(u, w):
    return angular_gap(u, w) / (np.pi / 2)


def energy_kernel(u, w, params: EnergyParams) -> float:
    if params.u1.contains(u) and params.u1.contains(w):
        d = projective_distance(u, w)
        return np.inf if d == 0 else float(d ** -params.delta)
    return 1.0


@lru_cache(maxsize=16)
def _cost_matrix(N: int, delta: float, center: float, radius: float) -> np.ndarray:
    grid = ProjectiveGrid(N)
    c = grid.centers
    inside = angular_gap(c, center) < radius
    cost = np.ones((N, N))
    idx = np.flatnonzero(inside)
    if idx.size:
        # bin-index differences keep the matrix exactly symmetric
        steps = np.abs(idx[:, None] - idx[None, :])
        d = np.minimum(steps, N - steps) * (2.0 / N)
        with np.errstate(divide="ignore"):
            block = d ** -delta
        block[d == 0] = np.inf
        cost[np.ix_(idx, idx)] = block
    cost.setflags(write=False)
    return cost


def cost_matrix(N: int, params: EnergyParams) -> np.ndarray:
    return _cost_matrix(N, params.delta, params.u1.center, params.u1.radius)


@dataclass(frozen=True)
class GridCoupling:
    """Nonnegative N x N masses whose row and column sums match the declared marginals."""

    masses: np.ndarray
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        X = np.array(self.masses, dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ValidationError("coupling must be a square array")
        if np.any(X < 0) or not np.all(np.isfinite(X)):
            raise ValidationError("coupling has negative or non-finite mass")
        first = np.asarray(self.first, dtype=float)
        second = np.asarray(self.second, dtype=float)
        scale = max(1.0, float(first.sum()))
        if np.max(np.abs(X.sum(axis=1) - first)) > MARGINAL_TOL * scale:
            raise ValidationError("row sums differ from the first marginal")
        if np.max(np.abs(X.sum(axis=0) - second)) > MARGINAL_TOL * scale:
            raise ValidationError("column sums differ from the second marginal")
        for arr in (X, first, second):
            arr.setflags(write=False)
        object.__setattr__(self, "masses", X)
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)

    @classmethod
    def from_masses(cls, X) -> GridCoupling:
        X = np.asarray(X, dtype=float)
        return cls(X, X.sum(axis=1), X.sum(axis=0))

    @classmethod
    def product(cls, eta) -> GridCoupling:
        m = eta.masses if isinstance(eta, GridMeasure) else np.asarray(eta, dtype=float)
        total = m.sum()
        return cls(np.outer(m, m) / total, m, m)

    @property
    def N(self) -> int:
        return self.masses.shape[0]

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def is_symmetric(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.masses - self.masses.T)) <= tol * max(1.0, self.mass))

    def symmetrized(self) -> GridCoupling:
        X = 0.5 * (self.masses + self.masses.T)
        avg = 0.5 * (self.first + self.second)
        return GridCoupling(X, avg, avg)


@dataclass(frozen=True)
class CouplingVector:
    components: tuple[GridCoupling, ...]

    @property
    def q(self) -> int:
        return len(self.components)

    @property
    def N(self) -> int:
        return self.components[0].N

    def stack(self) -> np.ndarray:
        return np.stack([c.masses for c in self.components])

    def marginals(self, s: int) -> MeasureVector:
        return MeasureVector(np.stack([c.first if s == 0 else c.second for c in self.components]))

    @classmethod
    def product(cls, eta: MeasureVector) -> CouplingVector:
        return cls(tuple(GridCoupling.product(row) for row in eta.masses))


def coupling_energy(xi: GridCoupling, params: EnergyParams) -> float:
    cost = cost_matrix(xi.N, params)
    X = xi.masses
    if np.any((X > 0) & np.isinf(cost)):
        return np.inf
    return float(np.sum(np.where(np.isinf(cost), 0.0, cost) * X))


def weighted_energy(xi: CouplingVector, P: StochasticMatrix, params: EnergyParams) -> float:
    vals = np.array([coupling_energy(c, params) for c in xi.components])
    if np.any(np.isinf(vals[P.p > 0])):
        return np.inf
    return float(np.sum(P.p * vals))


def _diagonal_feasible(m1, m2, forbidden, total) -> bool:
    # Hall's condition: forbidden cells form a partial diagonal, so only
    # singleton row sets can be blocked.
    slack = 1e-12 * total
    return bool(np.all(m1[forbidden] + m2[forbidden] <= total + slack))


def _forest_flows(rows, cols, supply, demand):
    """Exact flows on a forest support by repeated leaf elimination; None on a cycle."""
    m = len(supply)
    rem = np.concatenate([supply, demand]).astype(float)
    adj = defaultdict(set)
    for e, (r, c) in enumerate(zip(rows, cols)):
        adj[r].add(e)
        adj[m + c].add(e)
    ends = [(r, m + c) for r, c in zip(rows, cols)]
    flows = np.zeros(len(rows))
    leaves = [v for v, es in adj.items() if len(es) == 1]
    left = len(rows)
    while leaves:
        v = leaves.pop()
        if len(adj[v]) != 1:
            continue
        e = adj[v].pop()
        a, b = ends[e]
        u = b if a == v else a
        flows[e] = rem[v]
        rem[v] = 0.0
        rem[u] -= flows[e]
        adj[u].discard(e)
        left -= 1
        if len(adj[u]) == 1:
            leaves.append(u)
    if left:
        return None
    return flows


def _solve_transport(m1, m2, cost):
    """Optimal plan for the transportation problem with +inf cells forbidden."""
    n1, n2 = cost.shape
    allowed = np.isfinite(cost)
    r_idx, c_idx = np.nonzero(allowed)
    nv = r_idx.size
    data = np.ones(2 * nv)
    A = sp.csr_matrix(
        (data, (np.concatenate([r_idx, n1 + c_idx]), np.concatenate([np.arange(nv)] * 2))),
        shape=(n1 + n2, nv),
    )
    b = np.concatenate([m1, m2])
    res = linprog(cost[allowed], A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"transportation solver failed: {res.message}")
    x = res.x
    keep = x > 1e-13 * b.sum()
    flows = _forest_flows(r_idx[keep], c_idx[keep], m1, m2)
    plan = np.zeros((n1, n2))
    if flows is not None and np.all(flows >= -1e-13 * b.sum()):
        plan[r_idx[keep], c_idx[keep]] = np.maximum(flows, 0.0)
    else:
        plan[r_idx, c_idx] = np.maximum(x, 0.0)
    return plan


def min_energy_coupling(eta1, eta2, params: EnergyParams) -> tuple[GridCoupling | None, float]:
    """Minimum-energy coupling of two grid measures of equal mass.

    Returns ``(None, inf)`` when every coupling charges a diagonal cell of U1.
    """
    m1 = np.asarray(eta1.masses if isinstance(eta1, GridMeasure) else eta1, dtype=float)
    m2 = np.asarray(eta2.masses if isinstance(eta2, GridMeasure) else eta2, dtype=float)
    if m1.shape != m2.shape:
        raise ValidationError("measures live on different grids")
    total = m1.sum()
    if abs(total - m2.sum()) > 1e-12 * max(total, 1.0):
        raise ValidationError(f"masses differ: {total!r} vs {m2.sum()!r}")
    N = m1.size
    s1, s2 = np.flatnonzero(m1 > 0), np.flatnonzero(m2 > 0)
    if s1.size > SUPPORT_CAP or s2.size > SUPPORT_CAP:
        raise SolverSizeError(
            f"support sizes {s1.size} x {s2.size} exceed {SUPPORT_CAP}; use a coarser grid"
        )
    if total == 0:
        zero = np.zeros(N)
        return GridCoupling(np.zeros((N, N)), zero, zero), 0.0
    cost = cost_matrix(N, params)
    forbidden = np.isinf(np.diag(cost))
    if not _diagonal_feasible(m1, m2, forbidden, total):
        return None, np.inf
    sub = cost[np.ix_(s1, s2)]
    plan = _solve_transport(m1[s1], m2[s2], sub)
    if plan is None:
        return None, np.inf
    X = np.zeros((N, N))
    X[np.ix_(s1, s2)] = plan
    xi = GridCoupling(X, m1, m2)
    return xi, coupling_energy(xi, params)


def self_energy(eta, params: EnergyParams) -> float:
    return min_energy_coupling(eta, eta, params)[1]


def fat_atom_check(eta, params: EnergyParams, tol: float = 1e-9) -> str:
    """Classify a grid measure as having infinite or finite self-energy.

    Returns "infinite" when a bin of U1 carries more than half the mass,
    "finite" when every bin of the closed arc carries less than half, and
    "boundary" otherwise.
    """
    m = np.asarray(eta.masses if isinstance(eta, GridMeasure) else eta, dtype=float)
    centers = ProjectiveGrid(m.size).centers
    half = 0.5 * m.sum()
    open_ = params.u1.contains(centers)
    closed = params.u1.contains_closed(centers)
    if np.any(open_ & (m > half + tol)):
        return "infinite"
    if np.all(m[closed] < half - tol):
        return "finite"
    return "boundary"


def vector_energy(eta: MeasureVector, P: StochasticMatrix, params: EnergyParams) -> float:
    """sum_i p_i e_delta(eta_i)."""
    total = 0.0
    for p_i, row in zip(P.p, eta.masses):
        e = self_energy(row, params)
        if np.isinf(e):
            return np.inf
        total += p_i * e
    return float(total)


def diagonal_transfer(A: CocycleMap, P: StochasticMatrix, xi: CouplingVector, l: int = 1,
                      op: TransferOperator | None = None) -> CouplingVector:
    """l-fold diagonal action: push each xi_i by A(i) x A(i) and mix with p_i P_ij / p_j."""
    op = op or TransferOperator(A, P, xi.N)
    X = xi.stack()
    first = xi.marginals(0).masses
    second = xi.marginals(1).masses
    for _ in range(l):
        X = op.apply_pairs(X)
        first = op.apply_array(first)
        second = op.apply_array(second)
    X = np.maximum(X, 0.0)
    return CouplingVector(tuple(GridCoupling(x, a, b) for x, a, b in zip(X, first, second)))


def surgery_off_diagonal(xi: GridCoupling, u2: Arc, u3: Arc,
                         params: EnergyParams | None = None) -> tuple[GridCoupling, float]:
    """Move all mass of U2^c x U2^c onto (U2^c x U3) and (U3 x U2^c).

    With zeta the projection of xi restricted to U2^c x U2^c and eta3 the
    projection of xi restricted to U3 x U3, the new coupling is

        xi - xi|U2^c x U2^c - (|zeta|/|eta3|) xi|U3 x U3
           + (zeta x eta3 + eta3 x zeta) / |eta3|,

    which keeps both marginals. Returns the new coupling and the energy of
    the added term, an upper bound for the energy increase (0 without
    ``params``).
    """
    if u3.radius >= u2.radius or angular_gap(u2.center, u3.center) > 1e-12:
        raise ValidationError("U3 must be a smaller concentric arc inside U2")
    if params is not None and u2.radius >= params.u1.radius:
        raise ValidationError("U2 must lie inside U1")
    X = xi.masses
    centers = ProjectiveGrid(xi.N).centers
    out2 = ~u2.contains(centers)
    in3 = u3.contains(centers)
    outer = np.outer(out2, out2)
    inner = np.outer(in3, in3)
    R_out = np.where(outer, X, 0.0)
    R_in = np.where(inner, X, 0.0)
    zeta, zeta2 = R_out.sum(axis=1), R_out.sum(axis=0)
    eta3, eta3b = R_in.sum(axis=1), R_in.sum(axis=0)
    scale = max(1.0, xi.mass)
    if np.max(np.abs(zeta - zeta2)) > 1e-12 * scale or np.max(np.abs(eta3 - eta3b)) > 1e-12 * scale:
        raise ValidationError("surgery needs couplings whose restricted blocks have equal projections")
    nz, n3 = zeta.sum(), eta3.sum()
    if nz == 0:
        return xi, 0.0
    if not nz < n3:
        raise SurgeryError(
            f"outer mass {nz:.6g} is not below inner mass {n3:.6g}", nz, n3
        )
    r = nz / n3
    correction = (np.outer(zeta, eta3) + np.outer(eta3, zeta)) / n3
    Y = np.where(outer, 0.0, X)
    Y = np.where(inner, Y * (1.0 - r), Y) + correction
    new = GridCoupling(Y, xi.first, xi.second)
    added = coupling_energy(GridCoupling.from_masses(correction), params) if params else 0.0
    return new, added


def near_atom_vector(q: int, N: int, center: float, kappa: float = 0.95,
                     width_bins: int = 5) -> MeasureVector:
    """kappa spread evenly over ``width_bins`` bins nearest ``center``, rest uniform."""
    grid = ProjectiveGrid(N)
    idx = np.argsort(angular_gap(grid.centers, center), kind="stable")[:width_bins]
    m = np.full(N, (1 - kappa) / N)
    m[idx] += kappa / width_bins
    return MeasureVector.broadcast(q, m / m.sum())


@dataclass
class ContractionTrace:
    energies: list[float]
    per_symbol: list[list[float]]
    l: int
    c: float
    delta: float
    rate: float
    C_emp: float
    truncated: bool = False
    reason: str = ""
    start: str = "product"
    corrections: list[float] = field(default_factory=list)
    preimages_inside: bool | None = None

    def bound_rhs(self, n: int) -> float:
        return self.C_emp + self.rate * self.energies[n]

    def holds(self) -> bool:
        E = self.energies
        return all(E[n + 1] <= self.bound_rhs(n) * (1 + 1e-12) for n in range(len(E) - 1))

    def sup_bound(self) -> float:
        return self.C_emp / (self.c * self.delta) + self.energies[0]


def _initial_coupling(eta: MeasureVector, P: StochasticMatrix, params: EnergyParams):
    prod = CouplingVector.product(eta)
    if np.isfinite(weighted_energy(prod, P, params)):
        return prod, "product"
    comps = []
    for row in eta.masses:
        xi, e = min_energy_coupling(row, row, params)
        if xi is None:
            raise ValidationError("a component has a fat atom in U1; every self-coupling has infinite energy")
        comps.append(xi.symmetrized())
    return CouplingVector(tuple(comps)), "min_energy"


def contraction_experiment(A: CocycleMap, P: StochasticMatrix, eta: MeasureVector,
                           params: EnergyParams, l: int | None = None, iters: int = 20,
                           reference: CocycleMap | None = None, u2: Arc | None = None,
                           u3: Arc | None = None, l_max: int = 8,
                           outer: Arc | None = None) -> ContractionTrace:
    """Alternate surgery and the l-step diagonal action, recording the energy.

    The expanding constants (l, c) are certified at the center of U1 for
    ``reference`` (default: ``A`` itself), which may differ from the
    cocycle that drives the dynamics. Starts from the product self-coupling,
    or from a minimum-energy symmetric self-coupling when the product
    charges the diagonal of U1. A failed surgery mass condition stops the
    run and marks the trace truncated. ``preimages_inside`` records whether
    every l-step inverse maps the closure of U1 into ``outer`` (default U1).
    """
    ref = reference if reference is not None else A
    v = params.u1.center
    l_cert, c = certify_expanding(ref, P, v, l_max)
    if l is None:
        l = l_cert
    else:
        vals = np.array([expanding_integral(ref, P, v, l, i) for i in range(P.q)])
        c = float(np.min(vals / (4 * P.p)))
        if c <= 0:
            raise NotExpandingError(f"l={l} does not certify the expanding point")
    if u2 is None or u3 is None:
        u2, u3 = nested_arcs(params)
    op = TransferOperator(A, P, eta.N)
    xi, start = _initial_coupling(eta, P, params)
    energies = [weighted_energy(xi, P, params)]
    per_symbol = [[coupling_energy(x, params) for x in xi.components]]
    corrections = []
    truncated, reason = False, ""
    for _ in range(iters):
        try:
            parts = [surgery_off_diagonal(x, u2, u3, params) for x in xi.components]
        except SurgeryError as exc:
            truncated, reason = True, str(exc)
            break
        corrections.append(float(np.dot(P.p, [p[1] for p in parts])))
        xi = diagonal_transfer(A, P, CouplingVector(tuple(p[0] for p in parts)), l, op=op)
        energies.append(weighted_energy(xi, P, params))
        per_symbol.append([coupling_energy(x, params) for x in xi.components])
    outer = outer if outer is not None else params.u1
    inside = preimages_contained(A, P, l, inner=(v, params.u1.radius), outer=(outer.center, outer.radius))
    rate = 1.0 - c * params.delta
    gaps = [energies[n + 1] - rate * energies[n] for n in range(len(energies) - 1)]
    C_emp = max([0.0] + gaps)
    return ContractionTrace(energies, per_symbol, l, c, params.delta, rate, C_emp,
                            truncated, reason, start, corrections, inside)
