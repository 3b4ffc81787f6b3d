import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.cocycle import CocycleMap, rotation
from cocyclelab.energy import (Arc, CouplingVector, EnergyParams, GridCoupling, contraction_experiment,
                               cost_matrix, coupling_energy, diagonal_transfer, energy_kernel,
                               fat_atom_check, min_energy_coupling, near_atom_vector, nested_arcs,
                               projective_distance, self_energy, surgery_off_diagonal, vector_energy,
                               weighted_energy)
from cocyclelab.errors import NotExpandingError, SolverSizeError, SurgeryError, ValidationError
from cocyclelab.grid import MeasureVector, ProjectiveGrid, total_variation
from cocyclelab.markov import StochasticMatrix
from cocyclelab.stationary import TransferOperator

from conftest import brute_force_transport, diag_cocycle, random_chain, random_cocycle

N = 64
CENTER = np.pi / 2
PARAMS = EnergyParams(0.5, Arc(CENTER, 0.6))
GRID = ProjectiveGrid(N)
U1_BINS = np.flatnonzero(PARAMS.u1.contains(GRID.centers))
OUT_BINS = np.flatnonzero(~PARAMS.u1.contains(GRID.centers))
CORE_BINS = np.flatnonzero(np.abs(GRID.centers - CENTER) < 0.15)


def point(bins, weights=None, n=N):
    m = np.zeros(n)
    w = np.ones(len(bins)) / len(bins) if weights is None else np.asarray(weights, float)
    np.add.at(m, bins, w)
    return m


small_measure = st.tuples(
    st.lists(st.sampled_from(list(U1_BINS[::3]) + list(OUT_BINS[::9])), min_size=1, max_size=3, unique=True),
    st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
)


def build(drawn, total=1.0):
    bins, w = drawn
    w = np.array(w[: len(bins)])
    return point(bins, total * w / w.sum())


class TestKernel:
    def test_distance(self):
        assert projective_distance(0.3, 0.3) == 0
        assert projective_distance(0.0, np.pi / 2) == 1
        assert projective_distance(0.0, np.pi / 4) == 0.5
        assert projective_distance(0.1, np.pi - 0.1) == pytest.approx(0.2 / (np.pi / 2))

    def test_outside_is_one(self):
        assert energy_kernel(0.0, CENTER, PARAMS) == 1.0

    def test_diagonal_inside_is_infinite(self):
        assert energy_kernel(CENTER, CENTER, PARAMS) == np.inf

    def test_hand_value(self):
        u, w = CENTER - np.pi / 16, CENTER + np.pi / 16
        assert projective_distance(u, w) == pytest.approx(0.25)
        assert energy_kernel(u, w, PARAMS) == pytest.approx(2.0, rel=1e-14)

    def test_param_validation(self):
        with pytest.raises(ValidationError):
            EnergyParams(0.0, Arc(0, 0.1))
        with pytest.raises(ValidationError):
            EnergyParams(0.5, Arc(0, np.pi / 4))

    def test_cost_matrix_matches_kernel(self):
        C = cost_matrix(N, PARAMS)
        for a, b in [(U1_BINS[0], U1_BINS[3]), (U1_BINS[2], U1_BINS[2]), (OUT_BINS[0], U1_BINS[1])]:
            assert C[a, b] == pytest.approx(energy_kernel(GRID.centers[a], GRID.centers[b], PARAMS), rel=1e-14)
        assert np.array_equal(C, C.T)


class TestCouplingEnergy:
    def test_single_off_diagonal_cell(self):
        a, b = U1_BINS[1], U1_BINS[5]
        X = np.zeros((N, N))
        X[a, b] = 1.0
        d = projective_distance(GRID.centers[a], GRID.centers[b])
        assert coupling_energy(GridCoupling.from_masses(X), PARAMS) == pytest.approx(d ** -0.5, rel=1e-14)

    def test_diagonal_mass_is_infinite(self):
        X = np.zeros((N, N))
        X[U1_BINS[2], U1_BINS[2]] = 1e-9
        X[0, 1] = 1
        assert coupling_energy(GridCoupling.from_masses(X), PARAMS) == np.inf

    def test_outside_support_is_mass(self):
        X = np.zeros((N, N))
        X[OUT_BINS[0], OUT_BINS[3]] = 0.4
        X[OUT_BINS[2], U1_BINS[3]] = 0.3
        assert coupling_energy(GridCoupling.from_masses(X), PARAMS) == pytest.approx(0.7, rel=1e-15)

    def test_marginal_validation(self):
        X = np.eye(N) / N
        with pytest.raises(ValidationError, match="row sums"):
            GridCoupling(X, np.full(N, 2.0 / N), np.full(N, 1.0 / N))

    @given(st.integers(0, 10_000))
    def test_symmetrization_is_neutral(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.random((N, N)) * (rng.random((N, N)) < 0.2)
        np.fill_diagonal(X, 0)
        xi = GridCoupling.from_masses(X / X.sum())
        assert coupling_energy(xi.symmetrized(), PARAMS) == pytest.approx(coupling_energy(xi, PARAMS), rel=1e-14)


class TestMinEnergy:
    def test_dirac_in_u1_is_infinite(self):
        m = point([U1_BINS[4]])
        xi, e = min_energy_coupling(m, m, PARAMS)
        assert xi is None and e == np.inf

    def test_two_half_atoms_swap(self):
        a, b = U1_BINS[2], U1_BINS[7]
        m = point([a, b])
        xi, e = min_energy_coupling(m, m, PARAMS)
        d = projective_distance(GRID.centers[a], GRID.centers[b])
        assert e == pytest.approx(d ** -0.5, rel=1e-12)
        assert xi.masses[a, b] == 0.5 and xi.masses[b, a] == 0.5
        assert brute_force_transport(m, m, cost_matrix(N, PARAMS)) == pytest.approx(e, rel=1e-12)

    def test_disjoint_outside_supports_cost_their_mass(self):
        _, e = min_energy_coupling(point(OUT_BINS[:2]), point(OUT_BINS[4:7]), PARAMS)
        assert e == pytest.approx(1.0, rel=1e-15)

    def test_unequal_masses_rejected(self):
        with pytest.raises(ValidationError, match="masses differ"):
            min_energy_coupling(point([0]), 0.5 * point([1]), PARAMS)

    def test_support_cap(self):
        m = np.full(512, 1 / 512)
        with pytest.raises(SolverSizeError, match="coarser grid"):
            min_energy_coupling(m, m, PARAMS)

    def test_large_support_matches_marginals(self):
        m = near_atom_vector(1, 256, CENTER, 0.9, 4).masses[0]
        xi, e = min_energy_coupling(m, m, PARAMS)
        assert np.isfinite(e)
        np.testing.assert_allclose(xi.masses.sum(axis=1), m, atol=1e-12)
        np.testing.assert_allclose(xi.masses.sum(axis=0), m, atol=1e-12)

    @settings(max_examples=80)
    @given(small_measure, small_measure)
    def test_brute_force_oracle(self, s1, s2):
        m1, m2 = build(s1), build(s2)
        _, e = min_energy_coupling(m1, m2, PARAMS)
        oracle = brute_force_transport(m1, m2, cost_matrix(N, PARAMS))
        if np.isinf(oracle):
            assert np.isinf(e)
        else:
            assert e == pytest.approx(oracle, rel=1e-12, abs=1e-12)

    @settings(max_examples=40)
    @given(small_measure)
    def test_self_coupling_oracle(self, s):
        m = build(s)
        oracle = brute_force_transport(m, m, cost_matrix(N, PARAMS))
        e = self_energy(m, PARAMS)
        assert (np.isinf(e) and np.isinf(oracle)) or e == pytest.approx(oracle, rel=1e-12)


class TestFatAtoms:
    def test_dirac(self):
        assert fat_atom_check(point([U1_BINS[3]]), PARAMS) == "infinite"

    def test_uniform(self):
        assert fat_atom_check(np.full(N, 1 / N), PARAMS) == "finite"

    def test_exact_half(self):
        assert fat_atom_check(point([U1_BINS[3], OUT_BINS[0]]), PARAMS) == "boundary"

    @settings(max_examples=40)
    @given(small_measure)
    def test_dichotomy_agrees_with_solver(self, s):
        m = build(s)
        verdict = fat_atom_check(m, PARAMS)
        e = self_energy(m, PARAMS)
        if verdict == "infinite":
            assert np.isinf(e)
        elif verdict == "finite":
            assert np.isfinite(e)


class TestVectorEnergy:
    P = StochasticMatrix.from_rows([[0.6, 0.4], [0.3, 0.7]])

    def test_all_diracs(self):
        assert vector_energy(MeasureVector.broadcast(2, point([U1_BINS[3]])), self.P, PARAMS) == np.inf

    def test_uniform_finite(self):
        assert np.isfinite(vector_energy(MeasureVector.uniform(2, N), self.P, PARAMS))

    def test_one_infinite_component(self):
        eta = MeasureVector(np.vstack([point([U1_BINS[3]]), np.full(N, 1 / N)]))
        assert vector_energy(eta, self.P, PARAMS) == np.inf

    def test_weighted_sum(self):
        a, b = point([U1_BINS[1], U1_BINS[6]]), np.full(N, 1 / N)
        e = vector_energy(MeasureVector(np.vstack([a, b])), self.P, PARAMS)
        assert e == pytest.approx(self.P.p[0] * self_energy(a, PARAMS) + self.P.p[1] * self_energy(b, PARAMS))


def random_coupling_vector(rng, q, n):
    comps = []
    for _ in range(q):
        X = rng.random((n, n)) * (rng.random((n, n)) < 0.3)
        comps.append(GridCoupling.from_masses(X / X.sum()))
    return CouplingVector(tuple(comps))


class TestDiagonalTransfer:
    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(2, 3), st.integers(1, 2))
    def test_marginals_commute(self, seed, q, l):
        rng = np.random.default_rng(seed)
        A, P = random_cocycle(rng, q), random_chain(rng, q)
        xi = random_coupling_vector(rng, q, 32)
        op = TransferOperator(A, P, 32)
        out = diagonal_transfer(A, P, xi, l, op=op)
        for s in (0, 1):
            m = xi.marginals(s).masses
            for _ in range(l):
                m = op.apply_array(m)
            proj = out.stack().sum(axis=2 - s)
            assert np.max(np.abs(proj - m)) <= 1e-12

    def test_identity_bernoulli_fixed(self):
        P = StochasticMatrix.bernoulli([0.4, 0.6])
        A = CocycleMap(np.array([np.eye(2)] * 2))
        X = np.random.default_rng(2).random((16, 16))
        xi = CouplingVector((GridCoupling.from_masses(X / X.sum()),) * 2)
        out = diagonal_transfer(A, P, xi, 1)
        np.testing.assert_allclose(out.stack(), xi.stack(), atol=1e-15)

    def test_symmetry_preserved(self, sticky_chain):
        A = random_cocycle(np.random.default_rng(3), 2)
        xi = random_coupling_vector(np.random.default_rng(4), 2, 32)
        sym = CouplingVector(tuple(c.symmetrized() for c in xi.components))
        out = diagonal_transfer(A, sticky_chain, sym, 2)
        assert all(c.is_symmetric(1e-15) for c in out.components)


class TestSurgery:
    U2, U3 = nested_arcs(PARAMS)

    def test_nothing_outside_means_unchanged(self):
        m = point(CORE_BINS[[0, 2]])
        xi = GridCoupling.product(m)
        new, added = surgery_off_diagonal(xi, self.U2, self.U3, PARAMS)
        assert new is xi and added == 0.0

    def test_product_of_near_dirac(self):
        m = 0.8 * GRID.point_mass(CENTER + 0.01) + 0.2 / N
        xi = GridCoupling.product(m)
        new, added = surgery_off_diagonal(xi, self.U2, self.U3, PARAMS)
        np.testing.assert_allclose(new.masses.sum(axis=1), m, atol=1e-10)
        np.testing.assert_allclose(new.masses.sum(axis=0), m, atol=1e-10)
        out2 = ~self.U2.contains(GRID.centers)
        assert new.masses[np.ix_(out2, out2)].sum() == 0.0
        assert new.is_symmetric()
        assert added > 0

    def test_energy_increase_bounded_by_added_term(self):
        m = 0.8 * point(CORE_BINS[[1, 3]]) + 0.2 / N
        xi, e0 = min_energy_coupling(m, m, PARAMS)
        new, added = surgery_off_diagonal(xi.symmetrized(), self.U2, self.U3, PARAMS)
        assert coupling_energy(new, PARAMS) <= e0 + added + 1e-12

    def test_mass_condition(self):
        m = 0.2 * GRID.point_mass(CENTER) + 0.8 / N
        with pytest.raises(SurgeryError) as info:
            surgery_off_diagonal(GridCoupling.product(m), self.U2, self.U3, PARAMS)
        assert info.value.outer_mass >= info.value.inner_mass

    def test_asymmetric_blocks_rejected(self):
        X = np.zeros((N, N))
        X[OUT_BINS[0], OUT_BINS[5]] = 0.5
        X[U1_BINS[4], U1_BINS[5]] = 0.5
        with pytest.raises(ValidationError, match="equal projections"):
            surgery_off_diagonal(GridCoupling.from_masses(X), self.U2, self.U3)

    def test_arc_order_checked(self):
        xi = GridCoupling.product(np.full(N, 1 / N))
        with pytest.raises(ValidationError):
            surgery_off_diagonal(xi, self.U3, self.U2)


class TestContraction:
    def test_sigma_two_family(self, fair_coin):
        ref = diag_cocycle(2)
        A = CocycleMap(rotation(0.01) @ ref.matrices)
        eta = near_atom_vector(2, 128, CENTER, 0.95, 3)
        trace = contraction_experiment(A, fair_coin, eta, PARAMS, iters=10, reference=ref)
        assert trace.l == 1 and trace.c == pytest.approx(np.log(2) / 2)
        assert np.isfinite(trace.C_emp) and trace.holds()
        assert max(trace.energies) <= trace.sup_bound() + 1e-12
        assert len(trace.energies) >= 2

    def test_truncation_is_flagged(self, fair_coin):
        eta = near_atom_vector(2, 128, CENTER, 0.95, 3)
        trace = contraction_experiment(diag_cocycle(2), fair_coin, eta, PARAMS, iters=50)
        assert trace.truncated and "outer mass" in trace.reason

    def test_identity_has_no_expanding_point(self, fair_coin):
        A = CocycleMap(np.array([np.eye(2)] * 2))
        with pytest.raises(NotExpandingError):
            contraction_experiment(A, fair_coin, MeasureVector.uniform(2, 64), PARAMS)

    def test_start_coupling(self, fair_coin):
        # a uniform product charges the diagonal inside U1, so a finite coupling is solved for
        trace = contraction_experiment(diag_cocycle(2), fair_coin, MeasureVector.uniform(2, 64), PARAMS, iters=1)
        assert trace.start == "min_energy"
        outside = MeasureVector.broadcast(2, point(OUT_BINS[:4]))
        trace = contraction_experiment(diag_cocycle(2), fair_coin, outside, PARAMS, iters=1)
        assert trace.start == "product" and trace.energies[0] == pytest.approx(1.0)


class TestSemicontinuity:
    def test_lower_semicontinuity_proxy(self):
        # eta_n -> eta in total variation; kernel values are capped by the one-bin distance
        rng = np.random.default_rng(5)
        base = point(U1_BINS[[1, 4, 8]], [0.3, 0.3, 0.4])
        e_lim = self_energy(base, PARAMS)
        modulus = (1 / N / 0.5) ** -PARAMS.delta
        values = []
        for n in range(1, 8):
            noise = rng.dirichlet(np.ones(len(U1_BINS)))
            eta_n = (1 - 2.0**-n) * base
            eta_n[U1_BINS] += 2.0**-n * noise
            e_n = self_energy(eta_n, PARAMS)
            values.append(e_n + 2 * modulus * total_variation(eta_n, base))
        assert e_lim <= min(values) + 1e-12

    def test_weighted_energy_matches_components(self, sticky_chain):
        xi = CouplingVector.product(MeasureVector.uniform(2, 32))
        assert weighted_energy(xi, sticky_chain, PARAMS) == np.inf


class TestPreimageCondition:
    def test_recorded_on_trace(self, fair_coin):
        eta = near_atom_vector(2, 64, CENTER, 0.95, 3)
        trace = contraction_experiment(diag_cocycle(2), fair_coin, eta, PARAMS, iters=1)
        # the inverse contracts towards the expanding line, so U1 pulls back into itself
        assert trace.preimages_inside is True

    def test_fails_for_a_tiny_outer_arc(self, fair_coin):
        eta = near_atom_vector(2, 64, CENTER, 0.95, 3)
        trace = contraction_experiment(diag_cocycle(2), fair_coin, eta, PARAMS, iters=1,
                                       outer=Arc(CENTER, 0.05))
        assert trace.preimages_inside is False
