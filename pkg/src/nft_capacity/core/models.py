"""Data models for nft-capacity.

Core value types shared by the units, signal, scattering, propagation,
covariance and spectral-efficiency modules.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from nft_capacity.error_handling import ParameterError


class CovarianceVariant(str, Enum):
    """Which noise covariance construction a matrix came from."""

    FULL = "full"
    NOGH = "nogh"
    NOPROP = "noprop"


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional fiber and amplifier constants.

    Units follow the configuration file: ps^2/km, 1/(W km), Hz, km, J, dB/km, W.
    """

    beta2: float = 21.67
    gamma: float = 1.27
    bandwidth_B: float = 100e9
    span_L: float = 100.0
    num_spans_K: int = 20
    n_sp: float = 1.0
    E_ph: float = 13.2e-20
    alpha_loss: float = 0.2
    power_P: float = 1e-3

    def __post_init__(self) -> None:
        positive = {
            "beta2": self.beta2,
            "gamma": self.gamma,
            "bandwidth_B": self.bandwidth_B,
            "span_L": self.span_L,
            "n_sp": self.n_sp,
            "E_ph": self.E_ph,
            "alpha_loss": self.alpha_loss,
            "power_P": self.power_P,
        }
        for name, value in positive.items():
            if not math.isfinite(value) or value <= 0:
                raise ParameterError(
                    f"{name} must be positive, got {value}", field=name
                )
        if int(self.num_spans_K) != self.num_spans_K or self.num_spans_K < 1:
            raise ParameterError(
                f"num_spans_K must be a positive integer, got {self.num_spans_K}",
                field="num_spans_K",
            )


@dataclass(frozen=True)
class ChannelScales:
    """Dimensionless scales linking physical and normalized variables.

    t_s is in seconds, R in watts and ell in km; the rest are dimensionless.
    """

    t_s: float
    R: float
    ell: float
    eps2: float
    L_s: float
    T_s: float
    tau: float
    D: float
    M: int
    Bt_s: float
    sigma2: float = 0.0


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled complex envelope at one propagation position.

    Sample p sits at the centre of the cell [t_L + p tau, t_L + (p + 1) tau]
    of the symmetric window [-M tau / 2, M tau / 2].
    """

    samples: np.ndarray
    tau: float
    position_x: float = 0.0

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.complex128).reshape(-1)
        if samples.size < 2:
            raise ParameterError(
                f"a signal needs at least 2 samples, got {samples.size}",
                M=int(samples.size),
            )
        if not np.all(np.isfinite(samples)):
            raise ParameterError("signal samples must be finite")
        if not math.isfinite(self.tau) or self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def M(self) -> int:
        """Number of samples."""
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.M * self.tau

    @property
    def window(self) -> Tuple[float, float]:
        """Left and right window boundaries."""
        half = 0.5 * self.duration
        return -half, half

    @property
    def times(self) -> np.ndarray:
        """Cell-centre sample times."""
        return (np.arange(self.M) + 0.5 - 0.5 * self.M) * self.tau

    def replace(
        self, samples: np.ndarray, position_x: Optional[float] = None
    ) -> "Signal":
        """Return a signal on the same grid with new samples."""
        return Signal(
            samples=samples,
            tau=self.tau,
            position_x=self.position_x if position_x is None else position_x,
        )


@dataclass(frozen=True)
class NoiseDraw:
    """Amplifier noise samples for one amplifier of one realization."""

    samples: np.ndarray
    amplifier_index: int
    stream_id: Tuple[int, int]


@dataclass
class SolitonMode:
    """One discrete eigenvalue with its norming data and eigenfunctions.

    psi holds the left Jost solution at the eigenvalue (rows psi_1, psi_2,
    sampled at the left boundary of every cell), normalized to the plane wave
    (1, 0) exp(-i lambda t) at the left window edge.
    """

    lam: complex
    b: complex = 0j
    mu: complex = 0j
    gamma_n: complex = 0j
    a_prime: complex = 0j
    a_double_prime: complex = 0j
    psi: Optional[np.ndarray] = None
    psi_prime: Optional[np.ndarray] = None
    b_prime: complex = 0j
    coeff_lambda: Optional[np.ndarray] = None
    coeff_mu0: Optional[np.ndarray] = None
    residual: float = 0.0

    @property
    def xi(self) -> float:
        return float(self.lam.real)

    @property
    def eta(self) -> float:
        return float(self.lam.imag)


@dataclass
class ContinuumData:
    """Reflection data on the real-axis grid.

    weight is the quadrature weight d xi / pi attached to every grid point.
    """

    xi_grid: np.ndarray
    rho: np.ndarray
    a_vals: np.ndarray
    b_vals: np.ndarray
    jost_phi: np.ndarray
    weight: float
    coeff_rho: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.xi_grid.size)


@dataclass
class ScatteringState:
    """Scattering data of one signal."""

    solitons: List[SolitonMode]
    M: int
    tau: float
    position_x: float = 0.0
    continuum: Optional[ContinuumData] = None

    @property
    def N(self) -> int:
        return len(self.solitons)

    @property
    def N_c(self) -> int:
        return self.continuum.size if self.continuum is not None else 0

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([mode.lam for mode in self.solitons], dtype=np.complex128)


@dataclass(frozen=True)
class PropagationPlan:
    """Span length, step and noise settings for one transmission run.

    dx is adjusted at construction so that it divides span_length exactly.
    The step is refined until the lattice norm drifts by at most norm_target
    per span and fails above norm_tolerance; spectral_tolerance bounds the
    eigenvalue drift per span relative to max eta (None skips that check).
    """

    span_length: float
    num_spans: int
    dx: Optional[float] = None
    eps2: float = 0.0
    seed: int = 0
    scheme: str = "strang"
    max_halvings: int = 4
    norm_tolerance: float = 1e-6
    norm_target: float = 1e-8
    spectral_tolerance: Optional[float] = 1e-4

    def __post_init__(self) -> None:
        if self.span_length < 0 or not math.isfinite(self.span_length):
            raise ParameterError(f"span length must be >= 0, got {self.span_length}")
        if self.num_spans < 1:
            raise ParameterError(f"num_spans must be >= 1, got {self.num_spans}")
        if self.eps2 < 0:
            raise ParameterError(f"eps2 must be >= 0, got {self.eps2}")
        if self.scheme not in ("strang", "yoshida4"):
            raise ParameterError(f"unknown integration scheme {self.scheme!r}")
        if not 0 < self.norm_target <= self.norm_tolerance:
            raise ParameterError(
                f"need 0 < norm_target <= norm_tolerance, got {self.norm_target:g}"
            )
        step = self.span_length / 64.0 if self.dx is None else float(self.dx)
        if self.span_length > 0:
            if step <= 0:
                raise ParameterError(f"dx must be positive, got {step}")
            n_steps = max(1, int(math.ceil(self.span_length / step - 1e-12)))
            step = self.span_length / n_steps
        object.__setattr__(self, "dx", step)


@dataclass
class CovarianceBlocks:
    """Per-amplifier covariance blocks in augmented (delta, delta*) layout.

    Off-diagonal names follow the assembled matrix: M0_lambda_mu is the block in
    the mu rows and lambda columns, so the assembled matrix reads
    [[ll, lm^H, lr^H], [lm, mm, rm^H], [lr, rm, rr]].
    """

    M0_lambda_lambda: np.ndarray
    M0_mu_mu: np.ndarray
    M0_rho_rho: np.ndarray
    M0_lambda_mu: np.ndarray
    M0_lambda_rho: np.ndarray
    M0_rho_mu: np.ndarray
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    amplifier_index: int = 0

    @property
    def n_solitons(self) -> int:
        return self.M0_lambda_lambda.shape[0] // 2

    @property
    def n_continuum(self) -> int:
        return self.M0_rho_rho.shape[0] // 2

    @property
    def dimension(self) -> int:
        return 4 * self.n_solitons + 2 * self.n_continuum

    def assemble(self) -> np.ndarray:
        """Full augmented matrix in (lambda, mu, rho) block order."""
        ll, mm, rr = self.M0_lambda_lambda, self.M0_mu_mu, self.M0_rho_rho
        lm, lr, rm = self.M0_lambda_mu, self.M0_lambda_rho, self.M0_rho_mu
        return np.block(
            [
                [ll, lm.conj().T, lr.conj().T],
                [lm, mm, rm.conj().T],
                [lr, rm, rr],
            ]
        )


@dataclass
class GordonHausTerms:
    """Drift coefficients subtracting D^k delta lambda from delta mu."""

    alpha_k: float
    delta_lambda: np.ndarray
    A0: np.ndarray

    @property
    def D1(self) -> np.ndarray:
        return np.diag(
            np.concatenate([1j * self.delta_lambda, -1j * self.delta_lambda.conj()])
        )

    @property
    def D0(self) -> np.ndarray:
        return np.diag(np.concatenate([self.A0, self.A0.conj()]))

    @property
    def Dk(self) -> np.ndarray:
        return self.alpha_k * self.D1 + self.D0


@dataclass
class NoiseCovariance:
    """Accumulated scattering-domain noise covariance."""

    S: np.ndarray
    variant: CovarianceVariant
    eps2: float
    K: int
    n_solitons: int
    n_continuum: int = 0

    @property
    def M_dof(self) -> int:
        """Number of retained complex degrees of freedom."""
        return 2 * self.n_solitons + self.n_continuum


@dataclass
class SEPoint:
    """One power point of a spectral-efficiency sweep."""

    power_dBm: float
    power_P: float
    snr_db: float
    shannon_limit: float
    bts_valid: bool
    K: int
    M: int
    seed: int
    se_full: Optional[float] = None
    se_nogh: Optional[float] = None
    se_noprop: Optional[float] = None
    lower_bound: Optional[float] = None
    awgn_capacity: Optional[float] = None
    se_asymptote: Optional[float] = None
    n_solitons: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None
