"""Shared pytest fixtures for nft-capacity tests."""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from nft_capacity.core.models import CovarianceBlocks
from nft_capacity.core.models import GordonHausTerms
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import SEPoint
from nft_capacity.core.models import Signal
from nft_capacity.core.scattering import discrete_spectrum
from nft_capacity.core.settings import Settings
from nft_capacity.core.signal import generate_white_gaussian
from nft_capacity.core.signal import soliton_pulse


@pytest.fixture
def sech_signal() -> Signal:
    """Unit-amplitude sech on |t| <= 20, one eigenvalue near i/2."""
    return soliton_pulse(1.0, 256, 40.0 / 256)


@pytest.fixture
def sech_state(sech_signal: Signal) -> ScatteringState:
    return discrete_spectrum(sech_signal)


@pytest.fixture
def gaussian_signal() -> Signal:
    """Small white Gaussian input, D = 1."""
    return generate_white_gaussian(32, 0.5, 1.0, seed=3)


@pytest.fixture
def default_settings(tmp_path: Path) -> Settings:
    return Settings(output_dir=tmp_path / "results")


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Flat key = value configuration for a tiny run."""
    path = tmp_path / "run.cfg"
    path.write_text(
        "# tiny desk-scale run\n"
        "duration_symbols = 16\n"
        "power_grid_dBm = -4:0:2\n"
        "seeds = 1, 2\n"
        "variants = full, nogh\n"
        "\n"
        "num_spans = 2  # short link\n",
        encoding="utf-8",
    )
    return path


def _random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T + n * np.eye(n)


@pytest.fixture
def synthetic_blocks() -> CovarianceBlocks:
    """Consistent blocks cut from one random positive definite matrix.

    Two solitons and three continuum points: dimension 4*2 + 2*3 = 14.
    """
    rng = np.random.default_rng(1234)
    n2, c2 = 4, 6
    full = _random_psd(rng, 2 * n2 + c2)
    lam_sl = slice(0, n2)
    mu_sl = slice(n2, 2 * n2)
    rho_sl = slice(2 * n2, 2 * n2 + c2)
    return CovarianceBlocks(
        M0_lambda_lambda=full[lam_sl, lam_sl],
        M0_mu_mu=full[mu_sl, mu_sl],
        M0_rho_rho=full[rho_sl, rho_sl],
        M0_lambda_mu=full[mu_sl, lam_sl],
        M0_lambda_rho=full[rho_sl, lam_sl],
        M0_rho_mu=full[rho_sl, mu_sl],
        eigenvalues=np.array([0.1 + 0.4j, -0.3 + 0.9j]),
    )


@pytest.fixture
def synthetic_gh(synthetic_blocks: CovarianceBlocks) -> GordonHausTerms:
    return GordonHausTerms(
        alpha_k=0.8,
        delta_lambda=synthetic_blocks.eigenvalues,
        A0=np.array([0.2 - 1.1j, 0.7 + 0.3j]),
    )


@pytest.fixture
def sample_points() -> List[SEPoint]:
    """Two powers, two seeds, one failed point."""
    points = []
    for power, snr_db in ((-2.0, 10.0), (0.0, 12.0)):
        for seed in (1, 2):
            points.append(
                SEPoint(
                    power_dBm=power,
                    power_P=10 ** (power / 10) * 1e-3,
                    snr_db=snr_db,
                    shannon_limit=snr_db / 3.0103,
                    bts_valid=power < 0,
                    K=4,
                    M=16,
                    seed=seed,
                    se_full=1.0 + seed * 0.1 + power * 0.01,
                    se_nogh=1.5,
                    se_noprop=1.1,
                    n_solitons=3,
                )
            )
    points[-1].se_full = None
    points[-1].se_nogh = None
    points[-1].se_noprop = None
    points[-1].error = "ConditioningError: covariance, not positive definite"
    return points
