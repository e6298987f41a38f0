"""Entropies, spectral efficiency, bounds and the closed-form localization law."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nft_capacity.core.covariance import amplifier_blocks
from nft_capacity.core.covariance import amplifier_matrices
from nft_capacity.core.covariance import assemble_S
from nft_capacity.core.covariance import assemble_S_noGH
from nft_capacity.core.covariance import assemble_S_noProp
from nft_capacity.core.covariance import blocks_at_amplifier
from nft_capacity.core.covariance import log_det
from nft_capacity.core.models import NoiseCovariance
from nft_capacity.core.models import PhysicalParams
from nft_capacity.core.models import PropagationPlan
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import SEPoint
from nft_capacity.core.models import Signal
from nft_capacity.core.propagation import SnapshotCallback
from nft_capacity.core.propagation import propagate
from nft_capacity.core.scattering import continuum_state
from nft_capacity.core.scattering import discrete_spectrum
from nft_capacity.core.settings import Settings
from nft_capacity.core.signal import generate_white_gaussian
from nft_capacity.core.units import PS2_TO_S2
from nft_capacity.core.units import derive_scales
from nft_capacity.core.units import snr
from nft_capacity.core.units import snr_db
from nft_capacity.core.units import validity_flag
from nft_capacity.error_handling import ErrorLevel
from nft_capacity.error_handling import NftCapacityError
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import report_error


logger = logging.getLogger(__name__)

LOG2_PI_E = math.log2(math.pi * math.e)
_SMALL_X = 1e-4


def gaussian_input_entropy(D: float) -> float:
    """Entropy per complex degree of freedom of a white Gaussian input."""
    if D <= 0:
        raise ParameterError(f"D must be positive, got {D}")
    return math.log2(math.pi * math.e * D)


def gaussian_entropy(
    S: Union[NoiseCovariance, np.ndarray], M_dof: Optional[int] = None
) -> float:
    """h_G = 1/2 log2 det S + M_dof log2(pi e) for an augmented covariance."""
    if M_dof is None:
        if not isinstance(S, NoiseCovariance):
            raise ParameterError("M_dof is required for a bare matrix")
        M_dof = S.M_dof
    return 0.5 * log_det(S) + M_dof * LOG2_PI_E


def spectral_efficiency(
    h_U_per_dof: float,
    S: Union[NoiseCovariance, np.ndarray],
    M_dof: Optional[int] = None,
) -> float:
    """Bits per complex degree of freedom, h(U)/M_dof - h_G/M_dof."""
    if M_dof is None:
        if not isinstance(S, NoiseCovariance):
            raise ParameterError("M_dof is required for a bare matrix")
        M_dof = S.M_dof
    if M_dof <= 0:
        raise ParameterError(f"M_dof must be positive, got {M_dof}")
    return h_U_per_dof - gaussian_entropy(S, M_dof) / M_dof


def shannon_upper_bound(params: PhysicalParams) -> float:
    """log2(P / (K sigma^2 B))."""
    return math.log2(snr(params))


def awgn_capacity(snr_value: float) -> float:
    """log2(1 + SNR)."""
    if snr_value < 0:
        raise ParameterError(f"SNR must be non-negative, got {snr_value}")
    return math.log2(1.0 + snr_value)


def large_kls_asymptote(params: PhysicalParams) -> float:
    """High-power law log2 SNR - log2(K L (gamma P)^2 / (beta2 B^2))."""
    beta2 = params.beta2 * PS2_TO_S2
    nonlinear = (
        params.num_spans_K
        * params.span_L
        * (params.gamma * params.power_P) ** 2
        / (beta2 * params.bandwidth_B**2)
    )
    return math.log2(snr(params)) - math.log2(nonlinear)


def jensen_minkowski_lower_bound(
    average_Mk: np.ndarray, snr_value: Union[float, PhysicalParams]
) -> float:
    """1/2 log2 SNR minus the nonlinearity penalty log2 det(avg M^k) / dim.

    For a solitons-only matrix the dimension is 4N, so the penalty is
    (1/(4N)) log2 det of the per-amplifier average.
    """
    if isinstance(snr_value, PhysicalParams):
        snr_value = snr(snr_value)
    if snr_value <= 0:
        raise ParameterError(f"SNR must be positive, got {snr_value}")
    dim = average_Mk.shape[0]
    if dim == 0:
        raise ParameterError("the averaged matrix is empty")
    return 0.5 * math.log2(snr_value) - log_det(average_Mk) / dim


def kappa_closed_form(
    eta: Union[float, np.ndarray], D: float = 1.0
) -> Union[float, np.ndarray]:
    """Inverse localization length (D/2) [(2 eta / D) coth(2 eta / D) - 1].

    The removable singularity at eta = 0 evaluates to 0.
    """
    if D <= 0:
        raise ParameterError(f"D must be positive, got {D}")
    x = 2.0 * np.asarray(eta, dtype=float) / D
    if np.any(x < 0):
        raise ParameterError("eta must be non-negative")
    small = np.abs(x) < _SMALL_X
    safe = np.where(small, 1.0, x)
    x_coth = np.where(small, 1.0 + x**2 / 3.0 - x**4 / 45.0, safe / np.tanh(safe))
    kappa = 0.5 * D * (x_coth - 1.0)
    if np.ndim(kappa) == 0:
        return float(kappa)
    return kappa


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PointTask:
    settings: Settings
    power_dBm: float
    num_spans: int
    seed: int


def link_covariances(
    settings: Settings,
    power_dBm: float,
    num_spans: int,
    seed: int,
    variants: Optional[Sequence[str]] = None,
    snapshot: Optional[SnapshotCallback] = None,
) -> Tuple[SEPoint, Dict[str, NoiseCovariance]]:
    """Run one power point: input, noiseless link, covariances and SE values.

    The noise enters only through the covariances, so the link is propagated
    without noise and the spectrum is taken at every amplifier. A realization
    without solitons is evaluated on its continuum alone.

    Returns:
        The filled SEPoint and the covariance of every requested variant
    """
    params = settings.physical_params(power_dBm=power_dBm, num_spans=num_spans)
    scales = derive_scales(params, settings.duration_seconds())
    point = SEPoint(
        power_dBm=power_dBm,
        power_P=params.power_P,
        snr_db=snr_db(params),
        shannon_limit=shannon_upper_bound(params),
        bts_valid=validity_flag(scales, settings.bts_threshold),
        K=num_spans,
        M=scales.M,
        seed=seed,
        awgn_capacity=awgn_capacity(snr(params)),
        se_asymptote=large_kls_asymptote(params),
    )

    signal = generate_white_gaussian(scales.M, scales.tau, scales.D, seed)
    state0 = discrete_spectrum(signal)
    spectrum: Callable[[Signal], ScatteringState] = discrete_spectrum
    if state0.N == 0:
        logger.info(
            f"P={power_dBm:g} dBm seed={seed}: no solitons, using the continuum"
        )
        spectrum = continuum_state
        state0 = continuum_state(signal)
    point.n_solitons = state0.N
    M_dof = 2 * state0.N + state0.N_c
    h_U = gaussian_input_entropy(scales.D)

    plan = PropagationPlan(
        span_length=scales.L_s,
        num_spans=num_spans,
        dx=scales.L_s / settings.dx_divisions,
        eps2=scales.eps2,
        seed=seed,
        scheme=settings.integrator,
        max_halvings=settings.max_halvings,
        norm_tolerance=settings.norm_tolerance,
        norm_target=settings.norm_target,
        spectral_tolerance=settings.spectral_tolerance,
    )

    wanted = set(settings.variants if variants is None else variants)
    covariances: Dict[str, NoiseCovariance] = {}
    if wanted & {"full", "nogh"}:
        signals = propagate(signal, plan, noisy=False, snapshot=snapshot)
        states = [spectrum(s) for s in signals]
        blocks = amplifier_blocks(states, state0)
        if "nogh" in wanted:
            covariances["nogh"] = assemble_S_noGH(blocks, scales.eps2)
            point.se_nogh = spectral_efficiency(h_U, covariances["nogh"], M_dof)
        if "full" in wanted:
            matrices = amplifier_matrices(blocks, state0, scales.L_s)
            covariances["full"] = assemble_S(matrices, scales.eps2, state0.N)
            point.se_full = spectral_efficiency(h_U, covariances["full"], M_dof)
            point.lower_bound = jensen_minkowski_lower_bound(
                np.mean(np.stack(matrices), axis=0), snr(params)
            )
    if "noprop" in wanted:
        covariances["noprop"] = assemble_S_noProp(
            blocks_at_amplifier(state0), num_spans, scales.L_s, scales.eps2
        )
        point.se_noprop = spectral_efficiency(h_U, covariances["noprop"], M_dof)

    logger.debug(
        f"P={power_dBm:g} dBm K={num_spans} seed={seed}: N={state0.N}, "
        f"L_s={scales.L_s:.3e}, se_full={point.se_full}"
    )
    return point, covariances


def evaluate_point(
    settings: Settings, power_dBm: float, num_spans: int, seed: int
) -> SEPoint:
    """SEPoint of one grid point; stage failures raise."""
    point, _ = link_covariances(settings, power_dBm, num_spans, seed)
    return point


def _run_task(task: _PointTask) -> SEPoint:
    try:
        return evaluate_point(task.settings, task.power_dBm, task.num_spans, task.seed)
    except (NftCapacityError, np.linalg.LinAlgError, FloatingPointError) as e:
        report_error(
            exception=e,
            component="se_sweep",
            context_name="grid_point",
            context_data={
                "power_dBm": task.power_dBm,
                "K": task.num_spans,
                "seed": task.seed,
            },
            level=ErrorLevel.WARNING,
        )
        params = task.settings.physical_params(
            power_dBm=task.power_dBm, num_spans=task.num_spans
        )
        return SEPoint(
            power_dBm=task.power_dBm,
            power_P=params.power_P,
            snr_db=snr_db(params),
            shannon_limit=shannon_upper_bound(params),
            bts_valid=False,
            K=task.num_spans,
            M=task.settings.duration_symbols,
            seed=task.seed,
            error=f"{type(e).__name__}: {e}",
        )


def se_sweep(
    settings: Settings,
    num_spans: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[SEPoint]:
    """SEPoints over the power grid and seeds, sorted by (power, seed).

    A failing point is returned with ``error`` set and never aborts the sweep.
    """
    K = settings.num_spans if num_spans is None else num_spans
    tasks = [
        _PointTask(settings, power, K, seed)
        for power in settings.power_grid_dBm
        for seed in settings.seeds
    ]
    n_workers = settings.workers if workers is None else workers
    logger.info(f"SE sweep: {len(tasks)} points, K={K}, workers={n_workers}")

    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            points = list(pool.map(_run_task, tasks))
    else:
        points = [_run_task(task) for task in tasks]

    failed = sum(1 for p in points if not p.ok)
    if failed:
        logger.warning(f"{failed} of {len(points)} grid points failed")
    return sorted(points, key=lambda p: (p.power_dBm, p.seed))


@dataclass
class SeedAverage:
    """Mean and spread of each SE column over seeds at one power."""

    power_dBm: float
    n_seeds: int
    mean: Dict[str, float]
    std: Dict[str, float]


SE_COLUMNS = ("se_full", "se_nogh", "se_noprop", "lower_bound")


def average_over_seeds(points: Sequence[SEPoint]) -> List[SeedAverage]:
    """Group successful points by power and average every SE column."""
    groups: Dict[float, List[SEPoint]] = {}
    for point in points:
        if point.ok:
            groups.setdefault(point.power_dBm, []).append(point)

    result = []
    for power in sorted(groups):
        group = groups[power]
        mean: Dict[str, float] = {}
        std: Dict[str, float] = {}
        for column in SE_COLUMNS:
            cells = [getattr(p, column) for p in group]
            values = [v for v in cells if v is not None]
            if values:
                mean[column] = float(np.mean(values))
                std[column] = float(np.std(values))
        result.append(SeedAverage(power, len(group), mean, std))
    return result


def failure_fraction(points: Sequence[SEPoint]) -> float:
    if not points:
        return 0.0
    return sum(1 for p in points if not p.ok) / len(points)


def sweep_diagnostics(points: Sequence[SEPoint]) -> List[Tuple[float, int, int, str]]:
    """(power_dBm, K, seed, error) for every failed point."""
    return [(p.power_dBm, p.K, p.seed, p.error or "") for p in points if not p.ok]
