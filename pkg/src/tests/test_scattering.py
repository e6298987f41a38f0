"""Tests for direct scattering on the Ablowitz-Ladik lattice."""

import numpy as np
import pytest

from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import Signal
from nft_capacity.core.models import SolitonMode
from nft_capacity.core.scattering import continuum_data
from nft_capacity.core.scattering import continuum_grid
from nft_capacity.core.scattering import derivative_eigenfunction
from nft_capacity.core.scattering import discrete_spectrum
from nft_capacity.core.scattering import discrete_zs_matrix
from nft_capacity.core.scattering import fold_representative
from nft_capacity.core.scattering import integral_coefficients
from nft_capacity.core.scattering import jost_and_a
from nft_capacity.core.scattering import lambda_from_z
from nft_capacity.core.scattering import localization_length_estimate
from nft_capacity.core.scattering import periodic_eigenvalues
from nft_capacity.core.scattering import predict_first_order
from nft_capacity.core.scattering import quadruplet_mismatch
from nft_capacity.core.scattering import quadruplet_partners
from nft_capacity.core.scattering import scatter
from nft_capacity.core.scattering import trace_energy
from nft_capacity.core.scattering import z_from_lambda
from nft_capacity.core.signal import generate_white_gaussian
from nft_capacity.core.signal import soliton_pulse
from nft_capacity.error_handling import DegeneracyError
from nft_capacity.error_handling import DependencyError
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import WindowTooSmallError


class TestSpectralMaps:
    """Test the lambda <-> z maps and the quadruplet structure."""

    def test_z_round_trip_inside_strip(self) -> None:
        tau = 0.5
        lam = np.array([0.3 + 0.2j, -1.2 + 1.5j, 2.0 + 0.01j])
        back = lambda_from_z(z_from_lambda(lam, tau), tau)
        np.testing.assert_allclose(back, lam, atol=1e-12)

    def test_upper_half_plane_maps_outside_unit_circle(self) -> None:
        z = z_from_lambda(np.array([0.4 + 0.3j]), 0.25)
        assert abs(z[0]) > 1.0

    def test_fold_representative_range(self) -> None:
        tau = 0.5
        half = np.pi / (2 * tau)
        lam = np.array([2.9 + 0.5j, -3.1 + 0.2j, 0.1 + 1.0j])
        folded = fold_representative(lam, tau)
        assert np.all(folded.real >= -half)
        assert np.all(folded.real < half)
        np.testing.assert_allclose(folded.imag, lam.imag)
        shifts = (lam.real - folded.real) / (np.pi / tau)
        np.testing.assert_allclose(shifts, np.round(shifts), atol=1e-12)

    def test_quadruplet_partners(self) -> None:
        tau = 0.5
        lam = np.array([0.3 + 0.7j])
        partners = quadruplet_partners(lam, tau)
        assert partners.shape == (1, 3)
        shift = np.pi / tau
        raw = np.array([np.conj(lam[0]), lam[0] + shift, np.conj(lam[0]) + shift])
        got = z_from_lambda(partners[0], tau)
        np.testing.assert_allclose(got, z_from_lambda(raw, tau), atol=1e-12)

    def test_partner_z_values(self) -> None:
        """conj(lambda) maps to 1/conj(z) and the pi/tau shift to -z."""
        tau = 0.25
        lam = 0.2 + 0.9j
        z = z_from_lambda(lam, tau)
        partners = z_from_lambda(quadruplet_partners(np.array([lam]), tau)[0], tau)
        np.testing.assert_allclose(partners[0], 1.0 / np.conj(z), rtol=1e-12)
        np.testing.assert_allclose(partners[1], -z, rtol=1e-12)


class TestLatticeMatrix:
    """Test the eigenvalue matrix of the lattice operator."""

    def test_shape(self, gaussian_signal: Signal) -> None:
        A = discrete_zs_matrix(gaussian_signal)
        assert A.shape == (2 * gaussian_signal.M, 2 * gaussian_signal.M)

    def test_vanishing_closure_drops_wrap_entries(
        self, gaussian_signal: Signal
    ) -> None:
        M = gaussian_signal.M
        periodic = discrete_zs_matrix(gaussian_signal, "periodic")
        vanishing = discrete_zs_matrix(gaussian_signal, "vanishing")
        assert periodic[M - 1, 0] != 0
        assert vanishing[M - 1, 0] == 0
        assert vanishing[M, 2 * M - 1] == 0

    def test_unknown_closure(self, gaussian_signal: Signal) -> None:
        with pytest.raises(ParameterError):
            discrete_zs_matrix(gaussian_signal, "reflecting")

    def test_quadruplet_symmetry(self, gaussian_signal: Signal) -> None:
        assert quadruplet_mismatch(gaussian_signal) < 1e-6


class TestDiscreteSpectrum:
    """Test bound-state detection."""

    def test_zero_signal_has_no_modes(self) -> None:
        state = discrete_spectrum(Signal(np.zeros(16), 0.5))
        assert state.N == 0
        assert state.eigenvalues.size == 0

    def test_sech_eigenvalue(self, sech_state: ScatteringState) -> None:
        """A = 1 sech carries one eigenvalue at i/2."""
        assert sech_state.N == 1
        assert abs(sech_state.solitons[0].lam - 0.5j) < 1e-2

    def test_two_soliton_sech(self) -> None:
        """A = 2.5 sech carries i(A - 1/2) and i(A - 3/2)."""
        state = discrete_spectrum(soliton_pulse(2.5, 512, 40.0 / 512))
        assert state.N == 2
        np.testing.assert_allclose(state.eigenvalues.imag, [1.0, 2.0], atol=5e-2)
        np.testing.assert_allclose(state.eigenvalues.real, [0.0, 0.0], atol=1e-6)

    def test_eigenvalues_are_zeros_of_a(self, sech_signal: Signal) -> None:
        state = discrete_spectrum(sech_signal)
        for mode in state.solitons:
            jost = jost_and_a(sech_signal, mode.lam)
            assert abs(jost.a) < 1e-6 * max(1.0, abs(jost.a_prime))

    def test_sorted_by_eta(self, gaussian_signal: Signal) -> None:
        state = discrete_spectrum(gaussian_signal)
        eta = [mode.eta for mode in state.solitons]
        assert eta == sorted(eta)
        assert all(value > 0 for value in eta)

    def test_representatives_in_right_half(self, gaussian_signal: Signal) -> None:
        state = discrete_spectrum(gaussian_signal)
        half = np.pi / (2 * gaussian_signal.tau)
        assert np.all(np.abs(state.eigenvalues.real) <= half)

    def test_lower_half_plane_rejected(self, sech_signal: Signal) -> None:
        with pytest.raises(ParameterError):
            jost_and_a(sech_signal, 0.2 - 0.1j)

    def test_trace_energy_of_reflectionless_pulse(
        self, sech_state: ScatteringState
    ) -> None:
        """Energy 2 of sech is carried by the soliton alone."""
        assert trace_energy(sech_state) == pytest.approx(2.0, rel=2e-2)


class TestNormingData:
    """Test b, mu and gamma of bound states."""

    def test_centered_pulse_has_unit_norming_modulus(
        self, sech_state: ScatteringState
    ) -> None:
        assert abs(np.log(abs(sech_state.solitons[0].b))) < 5e-2

    def test_shift_moves_log_b(self) -> None:
        """A shift by t0 changes log|b| by 2 eta t0 in modulus."""
        shifted = discrete_spectrum(soliton_pulse(1.0, 256, 40.0 / 256, center=2.0))
        mode = shifted.solitons[0]
        assert abs(np.log(abs(mode.b))) == pytest.approx(2 * mode.eta * 2.0, abs=5e-2)

    def test_mu_is_log_b_over_a_prime(self, sech_state: ScatteringState) -> None:
        mode = sech_state.solitons[0]
        assert np.exp(mode.mu) * mode.a_prime == pytest.approx(mode.b, rel=1e-10)

    def test_gamma_is_nonzero(self, sech_state: ScatteringState) -> None:
        assert abs(sech_state.solitons[0].gamma_n) > 1e-6


class TestEigenfunctions:
    """Test derivative eigenfunctions and localization estimates."""

    def test_sech_localization_length(self, sech_state: ScatteringState) -> None:
        """Bound states of A = 1 sech decay like exp(-|t| / 2)."""
        mode = sech_state.solitons[0]
        kappa = localization_length_estimate(mode, sech_state.tau)
        assert kappa == pytest.approx(mode.eta, abs=3e-2)

    def test_non_decaying_mode_rejected(self) -> None:
        mode = SolitonMode(lam=0.5j, psi=np.ones((2, 16), dtype=np.complex128))
        with pytest.raises(WindowTooSmallError):
            localization_length_estimate(mode, 0.5)

    def test_missing_eigenfunction(self) -> None:
        with pytest.raises(ParameterError):
            localization_length_estimate(SolitonMode(lam=0.5j), 0.5)

    @pytest.fixture
    def pulse(self) -> Signal:
        return soliton_pulse(1.0, 64, 20.0 / 64)

    @pytest.fixture
    def pulse_mode(self, pulse: Signal) -> SolitonMode:
        return discrete_spectrum(pulse, with_coefficients=False).solitons[0]

    def test_derivative_matches_finite_difference(
        self, pulse: Signal, pulse_mode: SolitonMode
    ) -> None:
        step = 1e-4
        upper = jost_and_a(pulse, pulse_mode.lam + step).phi
        lower = jost_and_a(pulse, pulse_mode.lam - step).phi
        expected = (upper - lower) / (2 * step)
        d_psi = derivative_eigenfunction(pulse, pulse_mode, remove_psi=False)
        assert d_psi.shape == (2, pulse.M)
        err = np.linalg.norm(d_psi - expected)
        assert err <= 1e-3 * np.linalg.norm(expected)

    def test_projected_derivative(
        self, pulse: Signal, pulse_mode: SolitonMode
    ) -> None:
        full = derivative_eigenfunction(pulse, pulse_mode, remove_psi=False)
        d_psi = derivative_eigenfunction(pulse, pulse_mode)
        psi = pulse_mode.psi.reshape(-1)
        expected = full.reshape(-1) - psi * (
            np.vdot(psi, full.reshape(-1)) / np.vdot(psi, psi)
        )
        np.testing.assert_allclose(d_psi.reshape(-1), expected, atol=1e-12)
        overlap = abs(np.vdot(psi, d_psi.reshape(-1)))
        assert overlap < 1e-8 * np.linalg.norm(psi) * np.linalg.norm(d_psi)

    def test_derivative_follows_psi_scale(
        self, pulse: Signal, pulse_mode: SolitonMode
    ) -> None:
        base = derivative_eigenfunction(pulse, pulse_mode, remove_psi=False)
        scaled_mode = SolitonMode(lam=pulse_mode.lam, psi=(2 - 1j) * pulse_mode.psi)
        scaled = derivative_eigenfunction(pulse, scaled_mode, remove_psi=False)
        np.testing.assert_allclose(scaled, (2 - 1j) * base, rtol=1e-10, atol=1e-14)

    def test_stored_psi_prime_is_jost_derivative(
        self, pulse: Signal, pulse_mode: SolitonMode
    ) -> None:
        assert pulse_mode.psi_prime is not None
        full = derivative_eigenfunction(pulse, pulse_mode, remove_psi=False)
        np.testing.assert_allclose(pulse_mode.psi_prime, full, rtol=1e-10)

    def test_derivative_needs_psi(self, pulse: Signal) -> None:
        with pytest.raises(ParameterError):
            derivative_eigenfunction(pulse, SolitonMode(lam=0.5j))

    def test_derivative_needs_bound_state(self) -> None:
        zero = Signal(np.zeros(16), 0.5)
        mode = SolitonMode(lam=0.5 + 0j, psi=np.ones((2, 16), dtype=np.complex128))
        with pytest.raises(ParameterError):
            derivative_eigenfunction(zero, mode)


class TestIntegralCoefficients:
    """Test the eigenfunction-integral responses of lambda and mu0."""

    @pytest.fixture(scope="class")
    def fine_state(self) -> tuple:
        s = soliton_pulse(1.0, 1024, 40.0 / 1024)
        return s, discrete_spectrum(s)

    @pytest.mark.parametrize("shape", ["odd", "chirped"])
    def test_agrees_with_lattice_sensitivities(
        self, fine_state: tuple, shape: str
    ) -> None:
        s, state = fine_state
        t = s.times
        if shape == "odd":
            du = (0.3 + 0.2j) * np.tanh(t) / np.cosh(t)
        else:
            du = np.exp(-0.25 * t**2) * np.exp(0.4j * t)
        pair = np.stack([du, np.conj(du)])
        mode = state.solitons[0]
        coeff_lambda, coeff_mu0 = integral_coefficients(mode, s.tau)
        lam_int = complex(np.sum(coeff_lambda * pair))
        lam_exact = complex(np.sum(mode.coeff_lambda * pair))
        mu_int = complex(np.sum(coeff_mu0 * pair))
        mu_exact = complex(np.sum(mode.coeff_mu0 * pair))
        scale = max(abs(lam_exact), abs(mu_exact))
        assert abs(lam_int - lam_exact) <= 0.1 * max(abs(lam_exact), 1e-2 * scale)
        assert abs(mu_int - mu_exact) <= 0.1 * max(abs(mu_exact), 1e-2 * scale)

    def test_shapes(self, sech_state: ScatteringState) -> None:
        mode = sech_state.solitons[0]
        coeff_lambda, coeff_mu0 = integral_coefficients(mode, sech_state.tau)
        assert coeff_lambda.shape == (2, sech_state.M)
        assert coeff_mu0.shape == (2, sech_state.M)

    def test_missing_derivative(self) -> None:
        mode = SolitonMode(
            lam=0.5j, gamma_n=1.0 + 0j, psi=np.ones((2, 8), dtype=np.complex128)
        )
        with pytest.raises(DependencyError):
            integral_coefficients(mode, 0.5)

    def test_degenerate_mode(self) -> None:
        psi = np.ones((2, 8), dtype=np.complex128)
        mode = SolitonMode(lam=0.5j, psi=psi, psi_prime=psi)
        with pytest.raises(DegeneracyError):
            integral_coefficients(mode, 0.5)


class TestContinuum:
    """Test continuum grid and reflection coefficients."""

    def test_grid_size_and_weight(self) -> None:
        xi, weight = continuum_grid(32, 3, 0.5)
        assert xi.size == 26
        assert weight == pytest.approx(1.0 / (0.5 * 26))
        assert np.all(np.abs(xi) < np.pi / (2 * 0.5))

    def test_grid_empty_when_solitons_fill_dof(self) -> None:
        xi, weight = continuum_grid(8, 4, 0.5)
        assert xi.size == 0
        assert weight == 0.0

    def test_weak_pulse_reflection_is_linear(self) -> None:
        """For weak fields rho is linear in the amplitude."""
        weak = continuum_data(soliton_pulse(0.01, 64, 0.5), n_solitons=0)
        weaker = continuum_data(soliton_pulse(0.005, 64, 0.5), n_solitons=0)
        scale = float(np.max(np.abs(weak.rho)))
        np.testing.assert_allclose(
            weak.rho, 2.0 * weaker.rho, rtol=0, atol=1e-3 * scale
        )
        np.testing.assert_allclose(np.abs(weak.a_vals), 1.0, atol=1e-3)

    def test_scatter_fills_continuum(self) -> None:
        s = soliton_pulse(1.0, 64, 20.0 / 64)
        state = scatter(s)
        assert state.N_c == s.M - 2 * state.N
        assert state.continuum is not None
        assert state.continuum.coeff_rho.shape == (state.N_c, 2, s.M)

    def test_scatter_without_continuum(self, gaussian_signal: Signal) -> None:
        assert scatter(gaussian_signal, with_continuum=False).continuum is None


class TestPeriodicSpectrum:
    """Test the discriminant roots behind the discrete spectrum."""

    def test_modes_sit_on_periodic_eigenvalues(self, gaussian_signal: Signal) -> None:
        lam = periodic_eigenvalues(gaussian_signal)
        state = discrete_spectrum(gaussian_signal, with_coefficients=False)
        np.testing.assert_allclose(state.eigenvalues, lam, atol=1e-12)

    def test_sech_root(self) -> None:
        s = soliton_pulse(1.0, 64, 20.0 / 64)
        lam = periodic_eigenvalues(s)
        assert lam.size == 1
        assert lam[0] == pytest.approx(0.5j, abs=5e-3)

    def test_zero_signal(self) -> None:
        assert periodic_eigenvalues(Signal(np.zeros(16), 0.5)).size == 0

    def test_gaussian_response_follows_solver(self) -> None:
        s = generate_white_gaussian(64, 0.25, 1.0, seed=11)
        state = discrete_spectrum(s, eta_min=0.05)
        assert state.N > 0
        rng = np.random.default_rng(4)
        delta = 1e-7 * (rng.standard_normal(s.M) + 1j * rng.standard_normal(s.M))
        predicted = predict_first_order(state, delta)["delta_lambda"]

        moved = periodic_eigenvalues(s.replace(s.samples + delta), eta_min=0.04)
        for lam, d_pred in zip(state.eigenvalues, predicted):
            nearest = moved[np.argmin(np.abs(moved - lam))]
            d_lam = nearest - lam
            assert abs(d_pred - d_lam) <= 1e-2 * abs(d_lam) + 1e-10

    @staticmethod
    def _errors(s: Signal, delta: np.ndarray) -> tuple:
        state = discrete_spectrum(s)
        predicted = predict_first_order(state, delta)
        moved = discrete_spectrum(s.replace(s.samples + delta), with_coefficients=False)
        d_lam = moved.eigenvalues - state.eigenvalues
        d_mu = np.array([m.mu for m in moved.solitons]) - np.array(
            [m.mu for m in state.solitons]
        )
        return (
            np.max(np.abs(predicted["delta_lambda"] - d_lam)),
            np.max(np.abs(predicted["delta_mu"] - d_mu)),
            np.max(np.abs(d_lam)),
        )

    def test_single_soliton_prediction(self) -> None:
        s = soliton_pulse(1.0, 64, 20.0 / 64)
        rng = np.random.default_rng(8)
        delta = 1e-5 * (rng.standard_normal(s.M) + 1j * rng.standard_normal(s.M))
        err_lam, err_mu, size = self._errors(s, delta)
        assert err_lam < 1e-2 * size
        assert err_mu < 1e-6

    @pytest.mark.slow
    def test_error_contracts_quadratically(self) -> None:
        left = soliton_pulse(1.0, 128, 0.25, center=-6.0).samples
        right = soliton_pulse(1.6, 128, 0.25, center=5.0).samples
        s = Signal(left + right, 0.25)
        rng = np.random.default_rng(9)
        direction = rng.standard_normal(s.M) + 1j * rng.standard_normal(s.M)
        coarse, _, _ = self._errors(s, 1e-3 * direction)
        fine, _, _ = self._errors(s, 0.5e-3 * direction)
        assert coarse / fine == pytest.approx(4.0, rel=0.3)

    def test_missing_coefficients(self, sech_signal: Signal) -> None:
        state = discrete_spectrum(sech_signal, with_coefficients=False)
        with pytest.raises(DependencyError):
            predict_first_order(state, np.zeros(sech_signal.M))

    def test_wrong_length(self, sech_state: ScatteringState) -> None:
        with pytest.raises(ParameterError):
            predict_first_order(sech_state, np.zeros(3))


@pytest.mark.integration
class TestAcceptanceSpectra:
    """Acceptance-scale spectra."""

    @pytest.mark.parametrize("amplitude", [1.0, 2.5])
    def test_sech_eigenvalues_fine_grid(self, amplitude: float) -> None:
        state = discrete_spectrum(soliton_pulse(amplitude, 2048, 40.0 / 2048))
        levels = [amplitude - 0.5 - j for j in range(int(amplitude + 0.5))]
        expected = [eta for eta in levels if eta > 0]
        np.testing.assert_allclose(
            np.sort(state.eigenvalues.imag), np.sort(expected), atol=1e-3
        )

    def test_gaussian_spectral_statistics(self) -> None:
        """N / M and mean eta both near 1/2 for D = 1."""
        counts, etas = [], []
        for seed in range(20):
            state = discrete_spectrum(
                generate_white_gaussian(64, 0.25, 1.0, seed), with_coefficients=False
            )
            counts.append(state.N / 64)
            etas.extend(mode.eta for mode in state.solitons)
        assert 0.42 <= np.mean(counts) <= 0.58
        assert 0.42 <= np.mean(etas) <= 0.58
