"""Ablowitz-Ladik propagation between amplifiers.

The lattice flow

    i du_n/dx = -(1 + tau^2 |u_n|^2)(u_{n+1} + u_{n-1}) / tau^2 + 2 u_n / tau^2

is split into the discrete Laplacian, solved exactly in Fourier space, and the
local hopping term u_n' = i |u_n|^2 (u_{n+1} + u_{n-1}), solved by the
implicit midpoint rule. Boundary conditions are periodic.
"""

import contextlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional

import numpy as np
import scipy.fft

from nft_capacity.core.models import PropagationPlan
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import Signal
from nft_capacity.core.scattering import periodic_eigenvalues
from nft_capacity.core.signal import noise_draw
from nft_capacity.error_handling import PairingError
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import StepSizeError


logger = logging.getLogger(__name__)

SCHEMES = ("strang", "yoshida4")
MIDPOINT_TOL = 1e-13
MIDPOINT_MAX_ITER = 100
MATCH_RADIUS_FACTOR = 0.1

_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA_OUTER = 1.0 / (2.0 - _CBRT2)
_YOSHIDA_INNER = -_CBRT2 / (2.0 - _CBRT2)

SnapshotCallback = Callable[[int, Signal], None]

# Scales the hopping term; anything but 1.0 breaks integrability.
_nonlinear_gain = 1.0


def al_norm(s: Signal) -> float:
    """Conserved lattice norm sum log(1 + tau^2 |u|^2) / tau."""
    return float(np.sum(np.log1p((s.tau * np.abs(s.samples)) ** 2)) / s.tau)


def _laplacian_symbol(M: int, tau: float) -> np.ndarray:
    k = 2.0 * np.pi * scipy.fft.fftfreq(M, d=tau)
    return -4.0 * np.sin(0.5 * k * tau) ** 2 / tau**2


def _linear_flow(u: np.ndarray, symbol: np.ndarray, h: float) -> np.ndarray:
    return scipy.fft.ifft(scipy.fft.fft(u) * np.exp(1j * symbol * h))


def _hopping(v: np.ndarray) -> np.ndarray:
    return 1j * _nonlinear_gain * np.abs(v) ** 2 * (np.roll(v, -1) + np.roll(v, 1))


@contextlib.contextmanager
def injected_fault(gain: float = 1.5) -> Iterator[None]:
    """Corrupt the nonlinear step inside the block, for selftest fault injection."""
    global _nonlinear_gain
    previous = _nonlinear_gain
    _nonlinear_gain = gain
    logger.warning(f"Integrator fault injected: nonlinear gain {gain:g}")
    try:
        yield
    finally:
        _nonlinear_gain = previous


def _nonlinear_flow(u: np.ndarray, h: float) -> np.ndarray:
    """Implicit midpoint step for the hopping term, by fixed-point iteration."""
    scale = 1.0 + float(np.max(np.abs(u)))
    new = u + h * _hopping(u)
    for _ in range(MIDPOINT_MAX_ITER):
        candidate = u + h * _hopping(0.5 * (u + new))
        if float(np.max(np.abs(candidate - new))) <= MIDPOINT_TOL * scale:
            return candidate
        new = candidate
    raise StepSizeError(
        f"implicit midpoint did not converge with dx={h:.3e}",
        suggested_dx=0.5 * h,
    )


def _strang(u: np.ndarray, symbol: np.ndarray, h: float) -> np.ndarray:
    u = _linear_flow(u, symbol, 0.5 * h)
    u = _nonlinear_flow(u, h)
    return _linear_flow(u, symbol, 0.5 * h)


def _step(u: np.ndarray, symbol: np.ndarray, h: float, scheme: str) -> np.ndarray:
    if scheme == "strang":
        return _strang(u, symbol, h)
    u = _strang(u, symbol, _YOSHIDA_OUTER * h)
    u = _strang(u, symbol, _YOSHIDA_INNER * h)
    return _strang(u, symbol, _YOSHIDA_OUTER * h)


def _integrate(
    u: np.ndarray, symbol: np.ndarray, h: float, n_steps: int, scheme: str
) -> np.ndarray:
    for _ in range(n_steps):
        u = _step(u, symbol, h, scheme)
    return u


def spectral_drift(reference: np.ndarray, s: Signal) -> float:
    """Largest move of a reference eigenvalue, relative to max eta.

    Each reference eigenvalue is matched to the nearest periodic eigenvalue
    of ``s``; real parts are compared modulo pi / tau.
    """
    reference = np.asarray(reference, dtype=np.complex128)
    if reference.size == 0:
        return 0.0
    current = periodic_eigenvalues(s, eta_min=0.5 * float(np.min(reference.imag)))
    if current.size == 0:
        return float("inf")
    period = np.pi / s.tau
    delta = current[None, :] - reference[:, None]
    dxi = np.mod(delta.real + 0.5 * period, period) - 0.5 * period
    distance = np.hypot(dxi, delta.imag).min(axis=1)
    return float(np.max(distance) / np.max(reference.imag))


def propagate_span(
    s: Signal,
    L_s: float,
    dx: Optional[float] = None,
    scheme: str = "strang",
    max_halvings: int = 4,
    norm_tolerance: float = 1e-6,
    norm_target: float = 1e-8,
    spectral_tolerance: Optional[float] = None,
) -> Signal:
    """Propagate a signal over one span with a symmetric splitting scheme.

    The step is halved until the relative drift of the lattice norm is at
    most norm_target and, when spectral_tolerance is set, no periodic
    eigenvalue moved by more than spectral_tolerance * max eta. If the finest
    step still misses norm_target, the result is kept as long as the drift
    is within norm_tolerance.

    Args:
        s: Input signal
        L_s: Normalized span length
        dx: Initial step, default L_s / 64
        scheme: "strang" (second order) or "yoshida4" (fourth order)
        max_halvings: Step halvings tried before giving up
        norm_tolerance: Largest acceptable relative drift of al_norm per span
        norm_target: Relative drift of al_norm the step refinement aims for
        spectral_tolerance: Allowed eigenvalue drift per span over max eta

    Raises:
        StepSizeError: if the finest step drifts by more than norm_tolerance
            or moves the spectrum by more than spectral_tolerance
    """
    if L_s < 0 or not math.isfinite(L_s):
        raise ParameterError(f"span length must be >= 0, got {L_s}")
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown integration scheme {scheme!r}")
    if not 0 < norm_target <= norm_tolerance:
        raise ParameterError(
            f"need 0 < norm_target <= norm_tolerance, got {norm_target:g} and "
            f"{norm_tolerance:g}"
        )

    position = s.position_x + L_s
    if L_s == 0 or not np.any(s.samples):
        return s.replace(s.samples.copy(), position_x=position)

    step = L_s / 64.0 if dx is None else float(dx)
    if step <= 0:
        raise ParameterError(f"dx must be positive, got {step}")
    n_steps = max(1, int(math.ceil(L_s / step - 1e-12)))

    symbol = _laplacian_symbol(s.M, s.tau)
    norm_in = al_norm(s)
    reference = None if spectral_tolerance is None else periodic_eigenvalues(s)
    drift = float("inf")
    moved = 0.0
    fallback: Optional[Signal] = None
    fallback_drift = 0.0

    for attempt in range(max_halvings + 1):
        h = L_s / n_steps
        try:
            u = _integrate(np.array(s.samples), symbol, h, n_steps, scheme)
        except StepSizeError as e:
            logger.debug(f"Span attempt {attempt} failed: {e}")
        else:
            out = s.replace(u, position_x=position)
            drift = abs(al_norm(out) - norm_in) / norm_in
            if drift <= norm_tolerance and reference is not None:
                moved = spectral_drift(reference, out)
            spectral_ok = spectral_tolerance is None or moved <= spectral_tolerance
            if drift <= norm_target and spectral_ok:
                logger.debug(
                    f"Span of length {L_s:g} done in {n_steps} {scheme} steps, "
                    f"norm drift {drift:.2e}, spectral drift {moved:.2e}"
                )
                return out
            if drift <= norm_tolerance and spectral_ok:
                fallback, fallback_drift = out, drift
        logger.debug(
            f"Norm drift {drift:.2e} (target {norm_target:.1e}), spectral drift "
            f"{moved:.2e} with dx={h:.3e}; halving the step"
        )
        n_steps *= 2

    if fallback is not None:
        logger.info(
            f"Span accepted with norm drift {fallback_drift:.2e} above the "
            f"{norm_target:.1e} target"
        )
        return fallback

    raise StepSizeError(
        f"span of length {L_s:g}: lattice norm drift {drift:.2e} "
        f"(limit {norm_tolerance:.1e}), spectral drift {moved:.2e} after "
        f"{max_halvings} halvings; try dx below {L_s / n_steps:.3e}",
        drift=drift,
        spectral_drift=moved,
        suggested_dx=L_s / n_steps,
    )


def inject_noise(s: Signal, eps2: float, k: int, seed: int) -> Signal:
    """Add the noise of amplifier k; identical for repeated (seed, k)."""
    if eps2 == 0:
        return s
    draw = noise_draw(s.M, s.tau, eps2, seed, k)
    return s.replace(s.samples + draw.samples)


def propagate(
    s: Signal,
    plan: PropagationPlan,
    noisy: bool = True,
    snapshot: Optional[SnapshotCallback] = None,
) -> List[Signal]:
    """Run the full link and return the signal after every amplifier.

    Entry k - 1 of the result is the signal just after amplifier k, which sits
    at x = k L_s and adds its noise when ``noisy`` is set.
    """
    outputs: List[Signal] = []
    current = s
    for k in range(1, plan.num_spans + 1):
        current = propagate_span(
            current,
            plan.span_length,
            dx=plan.dx,
            scheme=plan.scheme,
            max_halvings=plan.max_halvings,
            norm_tolerance=plan.norm_tolerance,
            norm_target=plan.norm_target,
            spectral_tolerance=plan.spectral_tolerance,
        )
        if noisy:
            current = inject_noise(current, plan.eps2, k, plan.seed)
        outputs.append(current)
        if snapshot is not None:
            snapshot(k, current)
    logger.debug(
        f"Propagated {plan.num_spans} spans of length {plan.span_length:g} "
        f"(noisy={noisy})"
    )
    return outputs


def track_modes(
    reference: ScatteringState,
    candidate: ScatteringState,
    radius_factor: float = MATCH_RADIUS_FACTOR,
) -> List[int]:
    """Match every reference mode to its nearest candidate eigenvalue.

    The matching radius is radius_factor times the smallest spacing between
    reference eigenvalues (times eta for a single mode).

    Returns:
        Candidate index for each reference mode, in reference order

    Raises:
        PairingError: if a mode has no candidate inside the radius or two
            modes claim the same candidate
    """
    ref = reference.eigenvalues
    cand = candidate.eigenvalues
    if ref.size == 0:
        return []
    if cand.size == 0:
        raise PairingError(
            f"no candidate eigenvalues to match {ref.size} modes", n_reference=ref.size
        )

    if ref.size > 1:
        gaps = np.abs(ref[:, None] - ref[None, :])
        spacing = float(np.min(gaps[~np.eye(ref.size, dtype=bool)]))
    else:
        spacing = float(ref[0].imag)
    radius = radius_factor * spacing

    mapping: List[int] = []
    for i, lam in enumerate(ref):
        distance = np.abs(cand - lam)
        j = int(np.argmin(distance))
        if distance[j] > radius:
            raise PairingError(
                f"mode {i} at lambda={lam:.6g} has no partner within {radius:.3e}",
                mode=i,
                distance=float(distance[j]),
                radius=radius,
            )
        if j in mapping:
            raise PairingError(
                f"modes {mapping.index(j)} and {i} both match candidate {j}",
                mode=i,
            )
        mapping.append(j)
    return mapping


@dataclass
class EvolutionReport:
    """Residuals of the linear log b and log rho evolution laws."""

    L_s: float
    mode_residuals: np.ndarray
    continuum_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tolerance: float = 1e-4
    flagged_modes: List[int] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        values = np.concatenate([self.mode_residuals, self.continuum_residuals])
        return float(np.max(values)) if values.size else 0.0

    @property
    def ok(self) -> bool:
        return not self.flagged_modes and self.max_residual <= self.tolerance


def _log_shift(lam: np.ndarray, L_s: float, tau: float, dispersion: str) -> np.ndarray:
    if dispersion == "continuum":
        return -4j * lam**2 * L_s
    return -4j * np.sin(lam * tau) ** 2 / tau**2 * L_s


def _wrapped(delta: np.ndarray) -> np.ndarray:
    return np.abs(delta.real + 1j * np.angle(np.exp(1j * delta.imag)))


def spectral_evolution_check(
    state_in: ScatteringState,
    state_out: ScatteringState,
    L_s: float,
    tolerance: float = 1e-4,
    dispersion: str = "lattice",
) -> EvolutionReport:
    """Compare log b and log rho against their linear evolution in x.

    Noiselessly, log b_n advances by -4i lambda_n^2 L_s (the lattice law uses
    sin^2(lambda tau) / tau^2 in place of lambda^2). Residuals are taken
    modulo 2 pi i.

    Raises:
        PairingError: if output modes cannot be matched to input modes
    """
    if dispersion not in ("lattice", "continuum"):
        raise ParameterError(f"unknown dispersion law {dispersion!r}")

    mapping = track_modes(state_in, state_out)
    lam = state_in.eigenvalues
    b_in = np.array([m.b for m in state_in.solitons], dtype=np.complex128)
    b_out = np.array(
        [state_out.solitons[j].b for j in mapping], dtype=np.complex128
    )
    if lam.size:
        shift = _log_shift(lam, L_s, state_in.tau, dispersion)
        delta = np.log(b_out) - np.log(b_in) - shift
        mode_residuals = _wrapped(delta)
    else:
        mode_residuals = np.zeros(0)

    continuum_residuals = np.zeros(0)
    c_in, c_out = state_in.continuum, state_out.continuum
    if c_in is not None and c_out is not None and c_in.size and c_in.size == c_out.size:
        keep = (np.abs(c_in.rho) > 0) & (np.abs(c_out.rho) > 0)
        xi = c_in.xi_grid[keep].astype(np.complex128)
        delta = (
            np.log(c_out.rho[keep])
            - np.log(c_in.rho[keep])
            - _log_shift(xi, L_s, state_in.tau, dispersion)
        )
        continuum_residuals = _wrapped(delta)

    flagged = [int(i) for i in np.flatnonzero(mode_residuals > tolerance)]
    if flagged:
        logger.warning(
            f"{len(flagged)} modes violate the log b evolution law "
            f"(max residual {float(np.max(mode_residuals)):.2e})"
        )
    return EvolutionReport(
        L_s=L_s,
        mode_residuals=mode_residuals,
        continuum_residuals=continuum_residuals,
        tolerance=tolerance,
        flagged_modes=flagged,
    )
