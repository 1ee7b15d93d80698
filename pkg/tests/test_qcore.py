import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinphoton import qcore
from spinphoton.qcore import (
    CorrelationTrace,
    DegenerateSteadyStateError,
    DensityOperator,
    DimensionError,
    HermiticityError,
    QcoreError,
    StateInvariantError,
    build_lindblad,
    evolve_on_grid,
    propagate,
    steady_state,
    two_time_correlation,
)

from oracles import (
    classical_conditional_chain,
    driven_tls_excited_population,
    resonance_fluorescence_g2,
    taylor_expm,
)

SM = np.array([[0, 1], [0, 0]], dtype=complex)   # |g><e| with basis (g, e)
SP = SM.conj().T
SZ = np.diag([-1.0, 1.0]).astype(complex)        # excited = +1
PE = np.diag([0.0, 1.0]).astype(complex)


def ground(n=2):
    m = np.zeros((n, n), dtype=complex)
    m[0, 0] = 1.0
    return DensityOperator(m)


def excited():
    m = np.zeros((2, 2), dtype=complex)
    m[1, 1] = 1.0
    return DensityOperator(m)


def random_lindblad(rng, n=2, n_jumps=2):
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (h + h.conj().T)
    jumps = []
    for _ in range(n_jumps):
        c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        jumps.append((c, float(rng.uniform(0.1, 1.0))))
    return build_lindblad(h, jumps)


class TestDensityOperator:
    def test_valid_state_passes(self):
        rho = DensityOperator(np.diag([0.25, 0.75]).astype(complex))
        rho.validate()

    def test_trace_violation(self):
        with pytest.raises(StateInvariantError):
            DensityOperator(np.diag([0.5, 0.6]).astype(complex)).validate()

    def test_hermiticity_violation(self):
        m = np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex)
        with pytest.raises(StateInvariantError):
            DensityOperator(m).validate()

    def test_negativity_beyond_tolerance(self):
        with pytest.raises(StateInvariantError):
            DensityOperator(np.diag([1.001, -0.001]).astype(complex)).validate()

    def test_tiny_negativity_tolerated(self):
        DensityOperator(np.diag([1.0 + 5e-9, -5e-9]).astype(complex)).validate()

    def test_partial_trace_product_state(self):
        a = np.diag([0.3, 0.7]).astype(complex)
        b = np.diag([0.1, 0.2, 0.7]).astype(complex)
        rho = DensityOperator(np.kron(a, b), dims=(2, 3))
        np.testing.assert_allclose(rho.partial_trace(0).matrix, a, atol=1e-14)
        np.testing.assert_allclose(rho.partial_trace(1).matrix, b, atol=1e-14)

    def test_dims_mismatch(self):
        with pytest.raises(DimensionError):
            DensityOperator(np.eye(4) / 4, dims=(3, 2))


class TestBuildLindblad:
    def test_pure_decay_population(self):
        # H = 0, single jump sigma- at rate gamma: rho_ee(t) = exp(-gamma t)
        gamma = 1.3
        lio = build_lindblad(np.zeros((2, 2)), [(SM, gamma)])
        for t in (0.0, 0.4, 1.7):
            rho_t = propagate(lio, excited(), t)
            assert rho_t.matrix[1, 1].real == pytest.approx(np.exp(-gamma * t), abs=1e-10)

    def test_unitary_precession_preserves_coherence(self):
        omega = 2.1
        lio = build_lindblad(0.5 * omega * SZ, [])
        m = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
        rho0 = DensityOperator(m)
        for t in (0.3, 1.1):
            rho_t = propagate(lio, rho0, t)
            c = rho_t.matrix[0, 1]
            assert abs(c) == pytest.approx(0.5, abs=1e-10)
            # basis (g, e): rho_ge rotates as exp(+i omega t)
            assert np.angle(c / rho0.matrix[0, 1]) == pytest.approx(
                np.angle(np.exp(1j * omega * t)), abs=1e-9)

    def test_decay_plus_dephasing_matches_optical_bloch(self):
        from oracles import optical_bloch_coherence_decay
        gamma, gamma_star, omega0 = 0.9, 0.35, 1.7
        # dephasing jump: trion-style projector at rate 2*gamma_star gives a
        # coherence decay of gamma/2 + gamma_star on top of the radiative part
        lio = build_lindblad(0.5 * omega0 * SZ, [(SM, gamma), (PE, 2 * gamma_star)])
        m = np.array([[0.6, 0.35], [0.35, 0.4]], dtype=complex)
        rho0 = DensityOperator(m)
        for t in (0.2, 0.8, 2.0):
            got = propagate(lio, rho0, t, validate=False).matrix[1, 0]
            want = optical_bloch_coherence_decay(t, 0.35, omega0, gamma, gamma_star)
            assert got == pytest.approx(want, abs=1e-10)

    def test_rejects_non_hermitian_hamiltonian(self):
        h = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(HermiticityError):
            build_lindblad(h, [])

    def test_rejects_negative_rate(self):
        with pytest.raises(QcoreError):
            build_lindblad(np.zeros((2, 2)), [(SM, -0.1)])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            build_lindblad(np.zeros((2, 2)), [(np.zeros((3, 3)), 1.0)])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_liouvillians_trace_preserving_and_stable(self, seed):
        lio = random_lindblad(np.random.default_rng(seed), n=3, n_jumps=2)
        assert lio.trace_defect() < 1e-12
        assert lio.max_real_eigenvalue() < 1e-8


class TestSteadyState:
    def test_decay_only_gives_ground_projector(self):
        lio = build_lindblad(np.zeros((2, 2)), [(SM, 0.7)])
        rho = steady_state(lio)
        np.testing.assert_allclose(rho.matrix, ground().matrix, atol=1e-10)

    def test_driven_damped_saturation(self):
        gamma, omega_r = 1.0, 0.8
        h = 0.5 * omega_r * (SP + SM)
        lio = build_lindblad(h, [(SM, gamma)])
        rho = steady_state(lio)
        want = driven_tls_excited_population(omega_r, gamma)
        assert rho.matrix[1, 1].real == pytest.approx(want, abs=1e-10)

    def test_residual_is_small(self):
        lio = random_lindblad(np.random.default_rng(5), n=4, n_jumps=3)
        rho = steady_state(lio)
        resid = np.linalg.norm((lio.matrix / lio.scale) @ rho.matrix.flatten(order="F"))
        assert resid < 1e-9

    def test_degenerate_null_space_raises(self):
        # two uncoupled decaying qubits conserve each parity sector: the
        # Liouvillian of a single qubit with no mixing between two blocks
        h = np.zeros((4, 4))
        c = np.kron(np.diag([1.0, 0.0]), SM)  # decays only inside one block
        lio = build_lindblad(h, [(c, 1.0)])
        with pytest.raises(DegenerateSteadyStateError):
            steady_state(lio)


class TestPropagate:
    def test_tau_zero_is_identity(self):
        lio = random_lindblad(np.random.default_rng(1))
        rho = DensityOperator(np.diag([0.4, 0.6]).astype(complex))
        assert propagate(lio, rho, 0.0) is rho

    def test_negative_tau_rejected(self):
        lio = random_lindblad(np.random.default_rng(2))
        with pytest.raises(QcoreError):
            propagate(lio, ground(), -1.0)

    def test_pure_decay_at_one_lifetime(self):
        gamma = 2.0
        lio = build_lindblad(np.zeros((2, 2)), [(SM, gamma)])
        rho = propagate(lio, excited(), 1.0 / gamma)
        assert rho.matrix[1, 1].real == pytest.approx(np.exp(-1.0), abs=1e-10)

    def test_matches_taylor_series_oracle(self):
        # random 4-dimensional Liouvillian (2-level system), tau = 0.3
        lio = random_lindblad(np.random.default_rng(42), n=2, n_jumps=2)
        rho0 = DensityOperator(np.diag([0.35, 0.65]).astype(complex))
        got = propagate(lio, rho0, 0.3, validate=False).matrix
        want_vec = taylor_expm(lio.matrix * 0.3) @ rho0.matrix.flatten(order="F")
        want = want_vec.reshape((2, 2), order="F")
        np.testing.assert_allclose(got, 0.5 * (want + want.conj().T), atol=1e-8)

    def test_expm_and_ode_paths_agree(self):
        lio = random_lindblad(np.random.default_rng(7), n=3, n_jumps=2)
        rho0 = DensityOperator(np.eye(3, dtype=complex) / 3)
        a = propagate(lio, rho0, 0.8, method="expm", validate=False).matrix
        b = propagate(lio, rho0, 0.8, method="ode", validate=False).matrix
        np.testing.assert_allclose(a, b, atol=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 1.5), st.floats(0.05, 1.5))
    def test_semigroup_property(self, seed, ta, tb):
        lio = random_lindblad(np.random.default_rng(seed))
        rho0 = DensityOperator(np.diag([0.2, 0.8]).astype(complex))
        one = propagate(lio, rho0, ta + tb, validate=False).matrix
        two = propagate(lio, propagate(lio, rho0, ta, validate=False), tb,
                        validate=False).matrix
        np.testing.assert_allclose(one, two, atol=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 3.0))
    def test_propagated_states_satisfy_invariants(self, seed, tau):
        lio = random_lindblad(np.random.default_rng(seed), n=3, n_jumps=2)
        rho0 = DensityOperator(np.eye(3, dtype=complex) / 3)
        propagate(lio, rho0, tau).validate()

    def test_evolve_on_grid_matches_pointwise(self):
        lio = random_lindblad(np.random.default_rng(11), n=2)
        rho0 = DensityOperator(np.diag([0.3, 0.7]).astype(complex))
        grid = np.array([0.0, 0.2, 0.4, 0.6, 1.1])
        vs = evolve_on_grid(lio, rho0.matrix.flatten(order="F"), grid)
        for k, tau in enumerate(grid):
            want = propagate(lio, rho0, tau, validate=False).matrix
            np.testing.assert_allclose(vs[k].reshape((2, 2), order="F"), want, atol=1e-10)


class TestTwoTimeCorrelation:
    def test_identity_collapse_gives_constant(self):
        gamma, omega_r = 1.0, 0.6
        lio = build_lindblad(0.5 * omega_r * (SP + SM), [(SM, gamma)])
        rho = steady_state(lio)
        grid = np.linspace(0.0, 8.0, 33)
        trace = two_time_correlation(lio, rho, np.eye(2), PE, grid)
        np.testing.assert_allclose(trace.values, rho.matrix[1, 1].real, atol=1e-10)

    def test_resonance_fluorescence_g2(self):
        gamma, omega_r = 1.0, 3.0
        lio = build_lindblad(0.5 * omega_r * (SP + SM), [(SM, gamma)])
        rho = steady_state(lio)
        grid = np.linspace(0.0, 10.0, 201)
        g = two_time_correlation(lio, rho, SM, PE, grid)
        pe_ss = rho.matrix[1, 1].real
        g2 = g.values / (pe_ss ** 2)
        want = resonance_fluorescence_g2(grid, omega_r, gamma)
        assert g2[0] == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(g2, want, atol=1e-8)

    def test_thermal_diagonal_matches_classical_chain(self):
        # 4-level system with classical jumps only; diagonal collapse and
        # observable reduce the regression to a conditional-probability chain
        rng = np.random.default_rng(3)
        n = 4
        rates = rng.uniform(0.1, 1.0, size=(n, n))
        np.fill_diagonal(rates, 0.0)
        jumps = []
        for i in range(n):
            for j in range(n):
                if i != j:
                    c = np.zeros((n, n), dtype=complex)
                    c[j, i] = 1.0
                    jumps.append((c, rates[j, i]))
        lio = build_lindblad(np.zeros((n, n)), jumps)
        rho = steady_state(lio)
        p0 = np.diag(rho.matrix).real

        w_col = np.array([0.9, 0.1, 0.5, 0.2])
        w_obs = np.array([0.2, 0.7, 0.1, 1.0])
        collapse = np.diag(np.sqrt(w_col)).astype(complex)
        observable = np.diag(w_obs).astype(complex)
        grid = np.linspace(0.0, 5.0, 21)
        got = two_time_correlation(lio, rho, collapse, observable, grid)
        want = classical_conditional_chain(rates, p0, w_col, w_obs, grid)
        np.testing.assert_allclose(got.values, want, atol=1e-8)

    def test_long_delay_factorization(self):
        gamma, omega_r = 1.0, 0.9
        lio = build_lindblad(0.5 * omega_r * (SP + SM), [(SM, gamma)])
        rho = steady_state(lio)
        tau_long = 10.0 / gamma  # 10x the slowest timescale
        trace = two_time_correlation(lio, rho, SM, PE, np.array([0.0, tau_long]))
        want = rho.expect(PE).real * np.trace(SM @ rho.matrix @ SP).real
        assert trace.values[-1] == pytest.approx(want, rel=0.02)

    def test_non_stationary_state_rejected(self):
        lio = build_lindblad(np.zeros((2, 2)), [(SM, 1.0)])
        with pytest.raises(QcoreError):
            two_time_correlation(lio, excited(), SM, PE, np.array([0.0, 1.0]))


class TestCorrelationTrace:
    def test_rejects_non_monotone_grid(self):
        with pytest.raises(QcoreError):
            CorrelationTrace(np.array([0.0, 1.0, 0.5]), np.zeros(3))

    def test_rejects_non_finite(self):
        with pytest.raises(QcoreError):
            CorrelationTrace(np.array([0.0, 1.0]), np.array([1.0, np.inf]))
