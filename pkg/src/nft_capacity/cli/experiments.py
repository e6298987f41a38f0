"""Experiment runners behind the command-line subcommands.

Each runner takes validated Settings, does its computation and serializes the
results; output files are written from the calling process only.
"""

import contextlib
import logging
import math
from dataclasses import asdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from nft_capacity import __version__
from nft_capacity.core.covariance import amplifier_blocks
from nft_capacity.core.covariance import amplifier_matrices
from nft_capacity.core.covariance import assemble_S
from nft_capacity.core.covariance import blocks_at_amplifier
from nft_capacity.core.covariance import log_det
from nft_capacity.core.covariance import to_text
from nft_capacity.core.covariance import zeta_closed
from nft_capacity.core.covariance import zeta_direct
from nft_capacity.core.models import PropagationPlan
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import SEPoint
from nft_capacity.core.models import Signal
from nft_capacity.core.propagation import inject_noise
from nft_capacity.core.propagation import injected_fault
from nft_capacity.core.propagation import propagate
from nft_capacity.core.propagation import propagate_span
from nft_capacity.core.propagation import spectral_drift
from nft_capacity.core.propagation import spectral_evolution_check
from nft_capacity.core.propagation import track_modes
from nft_capacity.core.scattering import discrete_spectrum
from nft_capacity.core.scattering import localization_length_estimate
from nft_capacity.core.scattering import periodic_eigenvalues
from nft_capacity.core.scattering import predict_first_order
from nft_capacity.core.scattering import quadruplet_mismatch
from nft_capacity.core.scattering import scatter
from nft_capacity.core.se_analysis import average_over_seeds
from nft_capacity.core.se_analysis import failure_fraction
from nft_capacity.core.se_analysis import gaussian_input_entropy
from nft_capacity.core.se_analysis import kappa_closed_form
from nft_capacity.core.se_analysis import link_covariances
from nft_capacity.core.se_analysis import se_sweep
from nft_capacity.core.se_analysis import spectral_efficiency
from nft_capacity.core.settings import Settings
from nft_capacity.core.signal import energy
from nft_capacity.core.signal import generate_white_gaussian
from nft_capacity.core.signal import soliton_pulse
from nft_capacity.core.units import derive_scales
from nft_capacity.core.units import physical_from_scales
from nft_capacity.error_handling import ErrorLevel
from nft_capacity.error_handling import NftCapacityError
from nft_capacity.error_handling import WindowTooSmallError
from nft_capacity.error_handling import report_error
from nft_capacity.utils.formatting import header_block
from nft_capacity.utils.serialization import diagnostics_csv_lines
from nft_capacity.utils.serialization import fig1_csv_lines
from nft_capacity.utils.serialization import load_signal
from nft_capacity.utils.serialization import save_signal
from nft_capacity.utils.serialization import se_csv_lines
from nft_capacity.utils.serialization import seed_average_csv_lines
from nft_capacity.utils.serialization import state_to_text
from nft_capacity.utils.serialization import write_lines

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 2
EXIT_PARTIAL = 3

# Above this share of failed grid points a sweep counts as a numerical failure.
FAILURE_LIMIT = 0.1

_SWEEP_ERRORS = (NftCapacityError, np.linalg.LinAlgError, FloatingPointError)


# ---------------------------------------------------------------------------
# fig1: localization length of Gaussian-input bound states
# ---------------------------------------------------------------------------


@dataclass
class LocalizationReport:
    """Binned numeric and closed-form inverse localization lengths."""

    rows: List[Tuple[float, float, float]]
    counts: List[int]
    n_modes: int
    skipped_modes: int
    dropped_bins: int
    path: Optional[Path] = None


def collect_localization(
    settings: Settings, D: float = 1.0
) -> Tuple[np.ndarray, np.ndarray, int]:
    """(eta, kappa) of every bound state over seeds and realizations.

    Returns:
        eta values, numeric kappa values and the number of modes whose
        eigenfunction did not decay inside the window
    """
    M = settings.fig1_samples
    tau = settings.fig1_tau
    etas: List[float] = []
    kappas: List[float] = []
    skipped = 0
    for seed in settings.seeds:
        for realization in range(settings.fig1_realizations):
            s = generate_white_gaussian(M, tau, D, seed, realization=realization)
            try:
                state = discrete_spectrum(s, with_coefficients=False)
            except _SWEEP_ERRORS as e:
                report_error(
                    exception=e,
                    component="fig1",
                    context_name="realization",
                    context_data={"seed": seed, "realization": realization},
                    level=ErrorLevel.WARNING,
                )
                continue
            for mode in state.solitons:
                try:
                    kappa = localization_length_estimate(mode, tau)
                except WindowTooSmallError:
                    skipped += 1
                    continue
                etas.append(mode.eta)
                kappas.append(kappa)
    return np.asarray(etas), np.asarray(kappas), skipped


def bin_localization(
    etas: np.ndarray,
    kappas: np.ndarray,
    edges: Sequence[float],
    min_modes: int,
    D: float = 1.0,
) -> Tuple[List[Tuple[float, float, float]], List[int], int]:
    """Average kappa per eta bin and attach the closed form.

    The closed form is averaged over the same modes as the numeric value.
    Bins with fewer than min_modes members are dropped.

    Returns:
        (eta_mean, kappa_numeric, kappa_closed_form) rows, mode counts and the
        number of dropped non-empty bins
    """
    edges_arr = np.asarray(edges, dtype=float)
    index = np.digitize(etas, edges_arr) - 1
    rows: List[Tuple[float, float, float]] = []
    counts: List[int] = []
    dropped = 0
    for b in range(edges_arr.size - 1):
        members = index == b
        n = int(np.count_nonzero(members))
        if n == 0:
            continue
        if n < min_modes:
            dropped += 1
            continue
        closed = np.asarray(kappa_closed_form(etas[members], D))
        rows.append(
            (
                float(np.mean(etas[members])),
                float(np.mean(kappas[members])),
                float(np.mean(closed)),
            )
        )
        counts.append(n)
    return rows, counts, dropped


def run_fig1(settings: Settings, out_dir: Path) -> LocalizationReport:
    """Numeric vs closed-form inverse localization length, written to fig1.csv."""
    etas, kappas, skipped = collect_localization(settings)
    rows, counts, dropped = bin_localization(
        etas, kappas, settings.eta_bins, settings.min_modes_per_bin
    )
    if dropped:
        logger.warning(
            f"Dropped {dropped} eta bins with fewer than "
            f"{settings.min_modes_per_bin} modes"
        )
    if skipped:
        logger.warning(f"Skipped {skipped} modes that do not decay inside the window")

    header = header_block(
        __version__,
        settings.config_hash(),
        settings.seeds,
        {
            "experiment": "fig1",
            "M": settings.fig1_samples,
            "tau": settings.fig1_tau,
            "realizations": settings.fig1_realizations,
            "modes": int(etas.size),
            "dropped_bins": dropped,
        },
    )
    path = write_lines(fig1_csv_lines(rows, header, counts), out_dir / "fig1.csv")
    return LocalizationReport(rows, counts, int(etas.size), skipped, dropped, path)


# ---------------------------------------------------------------------------
# fig2: spectral efficiency against SNR
# ---------------------------------------------------------------------------


def sweep_exit_code(points: Sequence[SEPoint]) -> int:
    """0 when every point completed, 3 for a partial sweep, 2 above the limit."""
    fraction = failure_fraction(points)
    if fraction == 0:
        return EXIT_OK
    if fraction > FAILURE_LIMIT:
        logger.error(
            f"{fraction:.0%} of grid points failed (limit {FAILURE_LIMIT:.0%})"
        )
        return EXIT_NUMERICAL
    return EXIT_PARTIAL


def run_fig2(
    settings: Settings, out_dir: Path, workers: Optional[int] = None
) -> Tuple[Dict[float, List[SEPoint]], int]:
    """One SE sweep CSV per configured total distance.

    Failed points keep empty SE cells and are listed in a diagnostics sidecar.

    Returns:
        Points per distance and the exit code of the whole run
    """
    results: Dict[float, List[SEPoint]] = {}
    config_hash = settings.config_hash()
    for distance in settings.distances_km:
        K = settings.spans_for_distance(distance)
        logger.info(f"fig2: {distance:g} km as K={K} spans of {settings.span_km:g} km")
        points = se_sweep(settings, num_spans=K, workers=workers)
        results[distance] = points

        header = header_block(
            __version__,
            config_hash,
            settings.seeds,
            {
                "experiment": "fig2",
                "distance_km": distance,
                "K": K,
                "M": settings.duration_symbols,
                "variants": ",".join(settings.variants),
            },
        )
        stem = f"fig2_{distance:g}km"
        write_lines(se_csv_lines(points, header), out_dir / f"{stem}.csv")
        if any(not p.ok for p in points):
            write_lines(
                diagnostics_csv_lines(points, header),
                out_dir / f"{stem}_diagnostics.csv",
            )
        if settings.average_seeds:
            write_lines(
                seed_average_csv_lines(average_over_seeds(points), header),
                out_dir / f"{stem}_averaged.csv",
            )

    every = [p for points in results.values() for p in points]
    return results, sweep_exit_code(every)


# ---------------------------------------------------------------------------
# One-shot dumps
# ---------------------------------------------------------------------------


def run_scatter(
    settings: Settings, signal_file: Path, out_dir: Path
) -> Tuple[ScatteringState, Path]:
    """Scattering data of a stored signal, written as versioned text."""
    s = load_signal(signal_file)
    state = scatter(s, with_continuum=True)
    header = header_block(
        __version__,
        settings.config_hash(),
        (),
        {"experiment": "scatter", "signal": Path(signal_file).name},
    )
    text = state_to_text(state)
    path = write_lines(
        header + text.rstrip("\n").split("\n"),
        out_dir / f"{Path(signal_file).stem}_scatter.txt",
    )
    logger.info(f"Scattered {s.M} samples: N={state.N}, N_c={state.N_c}")
    return state, path


def run_covariance(
    settings: Settings, out_dir: Path, variants: Optional[Sequence[str]] = None
) -> Tuple[SEPoint, Dict[str, Path]]:
    """Noise covariance of every variant at settings.power_dBm and the first seed."""
    seed = settings.seeds[0]
    snapshot: Optional[Callable[[int, Signal], None]] = None
    if settings.emit_snapshots:
        snapshot_dir = out_dir / "snapshots"

        def _write_snapshot(k: int, s: Signal) -> None:
            save_signal(s, snapshot_dir / f"span_{k:03d}.txt")

        snapshot = _write_snapshot

    point, covariances = link_covariances(
        settings,
        settings.power_dBm,
        settings.num_spans,
        seed,
        variants=variants,
        snapshot=snapshot,
    )
    header = header_block(
        __version__,
        settings.config_hash(),
        [seed],
        {
            "experiment": "covariance",
            "power_dBm": settings.power_dBm,
            "K": settings.num_spans,
        },
    )
    paths: Dict[str, Path] = {}
    for name, cov in covariances.items():
        lines = header + to_text(cov).rstrip("\n").split("\n")
        paths[name] = write_lines(lines, out_dir / f"covariance_{name}.txt")
    return point, paths


# ---------------------------------------------------------------------------
# Selftest
# ---------------------------------------------------------------------------


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


SuiteCheck = Callable[[], Tuple[bool, str]]


def _check_units() -> Tuple[bool, str]:
    settings = Settings()
    worst = 0.0
    for power_dBm in (-10.0, 0.0, 10.0):
        params = settings.physical_params(power_dBm=power_dBm)
        scales = derive_scales(params, settings.duration_seconds())
        back = physical_from_scales(scales)
        expected = {
            "power_P": params.power_P,
            "bandwidth_B": params.bandwidth_B,
            "span_L": params.span_L,
        }
        for key, value in expected.items():
            worst = max(worst, abs(back[key] - value) / value)
    return worst <= 1e-12, f"max relative error {worst:.1e}"


def _check_signal() -> Tuple[bool, str]:
    M, tau, eps2 = 64, 0.5, 1e-3
    seeds = range(200)
    input_energy = np.mean(
        [energy(generate_white_gaussian(M, tau, 1.0, seed)) for seed in seeds]
    )
    zero = Signal(np.zeros(M), tau)
    noise_energy = np.mean(
        [energy(inject_noise(zero, eps2, 1, seed)) for seed in seeds]
    )
    worst = max(abs(input_energy / M - 1.0), abs(noise_energy / (M * eps2) - 1.0))
    return worst <= 0.05, f"max relative energy deviation {worst:.1e}"


def _check_sech() -> Tuple[bool, str]:
    s = soliton_pulse(1.0, 512, 40.0 / 512)
    state = discrete_spectrum(s, with_coefficients=False)
    if state.N != 1:
        return False, f"expected 1 eigenvalue, found {state.N}"
    error = abs(state.solitons[0].lam - 0.5j)
    return error <= 3e-3, f"|lambda - i/2| = {error:.2e}"


def _check_quadruplets() -> Tuple[bool, str]:
    worst = 0.0
    for seed in (1, 2, 3):
        s = generate_white_gaussian(32, 0.5, 1.0, seed)
        worst = max(worst, quadruplet_mismatch(s))
    return worst <= 1e-6, f"worst partner distance {worst:.1e}"


def _check_drift() -> Tuple[bool, str]:
    s = soliton_pulse(1.2, 64, 20.0 / 64)
    state_in = discrete_spectrum(s, with_coefficients=False)
    plan = PropagationPlan(
        span_length=0.1,
        num_spans=3,
        dx=0.1 / 128,
        scheme="yoshida4",
        norm_tolerance=1e-8,
    )
    outputs = propagate(s, plan, noisy=False)
    state_out = discrete_spectrum(outputs[-1], with_coefficients=False)
    mapping = track_modes(state_in, state_out)
    drift = float(
        np.max(np.abs(state_out.eigenvalues[mapping] - state_in.eigenvalues))
    )
    limit = 1e-4 * float(np.max(state_in.eigenvalues.imag))
    return drift <= limit, f"max eigenvalue drift {drift:.1e} (limit {limit:.1e})"


def _check_gaussian_drift() -> Tuple[bool, str]:
    s = generate_white_gaussian(64, 0.25, 1.0, 11)
    reference = periodic_eigenvalues(s)
    plan = PropagationPlan(span_length=0.05, num_spans=20, scheme="yoshida4")
    outputs = propagate(s, plan, noisy=False)
    drift = spectral_drift(reference, outputs[-1])
    return drift <= 1e-4, f"eigenvalue drift {drift:.1e} of max eta over 20 spans"


def _check_first_order() -> Tuple[bool, str]:
    s = soliton_pulse(1.0, 64, 20.0 / 64)
    state = discrete_spectrum(s)
    rng = np.random.default_rng(8)
    delta = 1e-5 * (rng.standard_normal(s.M) + 1j * rng.standard_normal(s.M))
    predicted = predict_first_order(state, delta)
    moved = discrete_spectrum(s.replace(s.samples + delta), with_coefficients=False)
    d_lam = moved.eigenvalues - state.eigenvalues
    err = float(np.max(np.abs(predicted["delta_lambda"] - d_lam)))
    size = float(np.max(np.abs(d_lam)))
    return err <= 1e-2 * size, f"delta lambda error {err:.1e} of {size:.1e}"


def _short_link(K: int) -> Tuple[ScatteringState, List[ScatteringState], float]:
    s = soliton_pulse(1.2, 64, 20.0 / 64)
    L_s = 0.05
    plan = PropagationPlan(span_length=L_s, num_spans=K, scheme="yoshida4")
    states = [discrete_spectrum(out) for out in propagate(s, plan, noisy=False)]
    return discrete_spectrum(s), states, L_s


def _check_a0_cancellation() -> Tuple[bool, str]:
    state0, states, L_s = _short_link(4)
    blocks = amplifier_blocks(states, state0)
    full = log_det(assemble_S(amplifier_matrices(blocks, state0, L_s), 1.0, state0.N))
    dropped = amplifier_matrices(blocks, state0, L_s, drop_A0=True)
    plain = log_det(assemble_S(dropped, 1.0, state0.N))
    gap = abs(full - plain) / max(abs(full), 1.0)
    return gap <= 1e-6, f"relative log det gap {gap:.1e}"


def _check_gh_single_span() -> Tuple[bool, str]:
    state0, states, L_s = _short_link(1)
    blocks = amplifier_blocks(states, state0)
    with_gh = log_det(amplifier_matrices(blocks, state0, L_s)[0])
    gap = abs(with_gh - log_det(blocks[0].assemble()))
    return gap <= 1e-6, f"|log det M - log det M0| = {gap:.1e}"


def _check_spectral_evolution() -> Tuple[bool, str]:
    s = soliton_pulse(1.0, 128, 40.0 / 128, center=-2.0)
    state_in = discrete_spectrum(s, with_coefficients=False)
    out = propagate_span(s, 0.3, dx=0.3 / 128, scheme="yoshida4")
    state_out = discrete_spectrum(out, with_coefficients=False)
    report = spectral_evolution_check(state_in, state_out, 0.3, tolerance=1e-3)
    return report.ok, f"max log b residual {report.max_residual:.1e}"


def _check_canonical_det() -> Tuple[bool, str]:
    worst = 0.0
    for s in (
        generate_white_gaussian(32, 0.5, 1.0, 7),
        soliton_pulse(0.1, 32, 0.5),
    ):
        state = scatter(s, with_continuum=True)
        blocks = blocks_at_amplifier(state)
        M_dof = 2 * state.N + state.N_c
        worst = max(worst, abs(log_det(blocks.assemble())) / (2 * M_dof))
    return worst <= 1e-3, f"max |log2 det| per real dof {worst:.1e}"


def _check_zeta() -> Tuple[bool, str]:
    worst = 0.0
    for K in range(1, 51):
        closed = zeta_closed(K, 1.0)
        direct = zeta_direct(K, 1.0)
        worst = max(worst, abs(closed - direct) / max(closed, 1.0))
    return worst <= 1e-12, f"max relative deviation {worst:.1e}"


def _check_calibration() -> Tuple[bool, str]:
    worst = 0.0
    for snr_value in (10.0, 1e3):
        n = 4
        S = np.eye(2 * n) / snr_value
        se = spectral_efficiency(gaussian_input_entropy(1.0), S, n)
        worst = max(worst, abs(se - math.log2(snr_value)))
    return worst <= 1e-12, f"|SE - log2 SNR| = {worst:.1e}"


def _check_kappa() -> Tuple[bool, str]:
    at_zero = float(kappa_closed_form(0.0))
    tail = abs(float(kappa_closed_form(20.0)) - 19.5)
    # series branch below x = 1e-4, coth branch above
    below = float(kappa_closed_form(0.5e-4 - 1e-12))
    jump = abs(below - float(kappa_closed_form(0.5e-4 + 1e-12)))
    ok = at_zero == 0.0 and tail <= 1e-9 and jump <= 1e-10
    return ok, f"kappa(0)={at_zero:g}, large-eta error {tail:.1e}"


def _check_determinism() -> Tuple[bool, str]:
    texts = [
        state_to_text(discrete_spectrum(generate_white_gaussian(32, 0.5, 1.0, 11)))
        for _ in range(2)
    ]
    same = texts[0] == texts[1]
    return same, "identical state dumps" if same else "state dumps differ"


SELFTEST_SUITES: List[Tuple[str, SuiteCheck]] = [
    ("units_round_trip", _check_units),
    ("signal_statistics", _check_signal),
    ("sech_eigenvalue", _check_sech),
    ("quadruplet_symmetry", _check_quadruplets),
    ("eigenvalue_drift", _check_drift),
    ("gaussian_spectrum_drift", _check_gaussian_drift),
    ("first_order_perturbation", _check_first_order),
    ("spectral_evolution", _check_spectral_evolution),
    ("a0_cancellation", _check_a0_cancellation),
    ("gordon_haus_single_span", _check_gh_single_span),
    ("canonical_determinant", _check_canonical_det),
    ("zeta_closed_form", _check_zeta),
    ("identity_calibration", _check_calibration),
    ("kappa_closed_form", _check_kappa),
    ("determinism", _check_determinism),
]


def run_suite(name: str, check: SuiteCheck) -> SuiteResult:
    try:
        passed, detail = check()
    except _SWEEP_ERRORS as e:
        return SuiteResult(name, False, f"{type(e).__name__}: {e}")
    return SuiteResult(name, bool(passed), detail)


def run_selftest(fault_inject: bool = False) -> List[SuiteResult]:
    """Run every invariant suite at small scale; order is fixed."""
    guard = injected_fault() if fault_inject else contextlib.nullcontext()
    results = []
    with guard:
        for name, check in SELFTEST_SUITES:
            result = run_suite(name, check)
            level = logging.INFO if result.passed else logging.ERROR
            logger.log(level, f"Suite {name}: {'PASS' if result.passed else 'FAIL'}")
            results.append(result)
    return results
