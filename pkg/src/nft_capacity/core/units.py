"""Conversion between physical fiber parameters and normalized NLSE variables.

Dispersion enters in ps^2/km and is converted to s^2/km here; every other
quantity keeps the unit it has in PhysicalParams.
"""

import logging
import math
from typing import Dict

from nft_capacity.core.models import ChannelScales
from nft_capacity.core.models import PhysicalParams
from nft_capacity.error_handling import ParameterError


logger = logging.getLogger(__name__)

PS2_TO_S2 = 1e-24
DEFAULT_BTS_THRESHOLD = 10.0


def dbm_to_watts(power_dbm: float) -> float:
    """Convert dBm to watts."""
    return 1e-3 * 10.0 ** (power_dbm / 10.0)


def watts_to_dbm(power_w: float) -> float:
    """Convert watts to dBm."""
    if power_w <= 0:
        raise ParameterError(f"power must be positive, got {power_w}")
    return 10.0 * math.log10(power_w / 1e-3)


def amplifier_gain(params: PhysicalParams) -> float:
    """Linear gain compensating one span, log10 g = 0.1 alpha L."""
    return 10.0 ** (0.1 * params.alpha_loss * params.span_L)


def noise_variance(params: PhysicalParams) -> float:
    """ASE spectral density per amplifier, sigma^2 = n_sp E_ph (g - 1), in J."""
    return params.n_sp * params.E_ph * (amplifier_gain(params) - 1.0)


def derive_scales(params: PhysicalParams, duration_T: float) -> ChannelScales:
    """Derive the normalized time, power and length scales.

    Args:
        params: Physical parameter set
        duration_T: Signal duration in seconds

    Returns:
        ChannelScales with D = 1 by construction
    """
    if not math.isfinite(duration_T) or duration_T <= 0:
        raise ParameterError(f"duration must be positive, got {duration_T}")

    beta2 = params.beta2 * PS2_TO_S2
    B = params.bandwidth_B
    P = params.power_P

    t_s = beta2 * B / (params.gamma * P)
    R = params.gamma * P**2 / (beta2 * B**2)
    ell = 2.0 * t_s**2 / beta2
    sigma2 = noise_variance(params)
    eps2 = sigma2 * B / P
    L_s = params.span_L / ell
    Bt_s = B * t_s
    tau = 1.0 / Bt_s
    D = P / (R * B * t_s)
    M = max(1, int(round(B * duration_T)))

    scales = ChannelScales(
        t_s=t_s,
        R=R,
        ell=ell,
        eps2=eps2,
        L_s=L_s,
        T_s=duration_T / t_s,
        tau=tau,
        D=D,
        M=M,
        Bt_s=Bt_s,
        sigma2=sigma2,
    )
    logger.debug(
        f"Scales for P={P:.3e} W: t_s={t_s:.4e} s, Bt_s={Bt_s:.2f}, "
        f"eps2={eps2:.4e}, L_s={L_s:.4e}"
    )
    return scales


def physical_from_scales(scales: ChannelScales) -> Dict[str, float]:
    """Recover power, bandwidth and span length from normalized scales.

    Returns:
        Dictionary with power_P (W), bandwidth_B (Hz) and span_L (km)
    """
    B = 1.0 / (scales.tau * scales.t_s)
    return {
        "power_P": scales.R * B * scales.t_s * scales.D,
        "bandwidth_B": B,
        "span_L": scales.L_s * scales.ell,
    }


def snr(params: PhysicalParams) -> float:
    """Linear-channel SNR P / (K sigma^2 B)."""
    return params.power_P / (
        params.num_spans_K * noise_variance(params) * params.bandwidth_B
    )


def snr_db(params: PhysicalParams) -> float:
    return 10.0 * math.log10(snr(params))


def validity_flag(
    scales: ChannelScales, threshold: float = DEFAULT_BTS_THRESHOLD
) -> bool:
    """Whether the sampling is fine enough for the continuum-time model.

    The boundary Bt_s == threshold counts as valid.
    """
    return bool(scales.Bt_s >= threshold)
