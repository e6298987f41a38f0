"""Sampled envelopes: generation, noise draws and signal functionals."""

import logging
from typing import Union

import numpy as np

from nft_capacity.core.models import NoiseDraw
from nft_capacity.core.models import Signal
from nft_capacity.error_handling import ParameterError


logger = logging.getLogger(__name__)

INPUT_STREAM = 0


def make_rng(
    seed: int, stream: int = INPUT_STREAM, realization: int = 0
) -> np.random.Generator:
    """Seeded generator for one (seed, stream) pair.

    Stream 0 feeds the transmitted signal, stream k >= 1 the k-th amplifier,
    so every draw is reproducible independently of evaluation order. A nonzero
    realization selects further independent inputs under the same seed.
    """
    entropy = [int(seed), int(stream)]
    if realization:
        entropy.append(int(realization))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _circular_gaussian(
    rng: np.random.Generator, M: int, variance: float
) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(M) + 1j * rng.standard_normal(M))


def generate_white_gaussian(
    M: int,
    tau: float,
    D: float,
    seed: int,
    position_x: float = 0.0,
    realization: int = 0,
) -> Signal:
    """White circular Gaussian input with per-sample variance D / tau.

    Args:
        M: Number of samples
        tau: Normalized sample step
        D: Power spectral density (1 after normalization)
        seed: Seed of the input stream
        realization: Index of an extra independent input under the same seed

    Returns:
        Signal whose expected energy is M * D
    """
    if M < 2:
        raise ParameterError(f"M must be >= 2, got {M}")
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if D < 0:
        raise ParameterError(f"D must be non-negative, got {D}")

    if D == 0:
        return Signal(np.zeros(M, dtype=np.complex128), tau, position_x)

    rng = make_rng(seed, INPUT_STREAM, realization)
    samples = _circular_gaussian(rng, M, D / tau)
    return Signal(samples, tau, position_x)


def noise_draw(
    M: int, tau: float, eps2: float, seed: int, amplifier_index: int
) -> NoiseDraw:
    """Noise of amplifier k with per-sample variance eps2 / tau."""
    if amplifier_index < 1:
        raise ParameterError(f"amplifier index must be >= 1, got {amplifier_index}")
    if eps2 < 0:
        raise ParameterError(f"eps2 must be non-negative, got {eps2}")

    if eps2 == 0:
        samples = np.zeros(M, dtype=np.complex128)
    else:
        samples = _circular_gaussian(make_rng(seed, amplifier_index), M, eps2 / tau)
    return NoiseDraw(
        samples=samples,
        amplifier_index=amplifier_index,
        stream_id=(int(seed), int(amplifier_index)),
    )


def soliton_pulse(
    amplitude: float,
    M: int,
    tau: float,
    center: float = 0.0,
    phase: float = 0.0,
    position_x: float = 0.0,
) -> Signal:
    """A sech(t - center) exp(i phase) on the symmetric window."""
    t = (np.arange(M) + 0.5 - 0.5 * M) * tau
    samples = amplitude / np.cosh(t - center) * np.exp(1j * phase)
    return Signal(samples, tau, position_x)


def energy(s: Signal) -> float:
    """Rectangle-rule energy sum |u_p|^2 tau."""
    return float(np.sum(np.abs(s.samples) ** 2) * s.tau)


def sinc_kernel(Q: float, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Band-limited delta, Q sin(Q t) / (Q t), equal to Q at t = 0."""
    if Q <= 0:
        raise ParameterError(f"bandwidth Q must be positive, got {Q}")
    value = Q * np.sinc(Q * np.asarray(t, dtype=float) / np.pi)
    if np.ndim(value) == 0:
        return float(value)
    return value


def empirical_correlation(s: Signal, lag: int) -> complex:
    """Periodic sample correlation (1/M) sum u_{p+lag} conj(u_p)."""
    if abs(lag) >= s.M:
        raise ParameterError(f"|lag| must be < M={s.M}, got {lag}")
    u = s.samples
    return complex(np.mean(np.roll(u, -lag) * np.conj(u)))


def add_samples(s: Signal, extra: np.ndarray) -> Signal:
    """Signal plus an additive perturbation on the same grid."""
    if extra.shape != s.samples.shape:
        raise ParameterError(
            f"perturbation has {extra.size} samples, signal has {s.M}"
        )
    return s.replace(s.samples + extra)
