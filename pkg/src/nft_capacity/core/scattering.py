"""Direct Zakharov-Shabat scattering on the modified Ablowitz-Ladik lattice.

The field u is mapped to the lattice potential Q_n = i tau conj(u_n) and one
cell advances the Jost vector with

    T_n = c_n [[z, Q_n], [-conj(Q_n), 1/z]],  c_n = (1 + |Q_n|^2)^(-1/2),

where z = exp(-i lambda tau). Every T_n has unit determinant. The left Jost
solution starts as (1, 0) exp(-i lambda t_L) at the left window edge, so that
a(lambda) = exp(i lambda t_R) phi_1(t_R) and, at a zero of a, the norming
coefficient is b = exp(-i lambda t_R) phi_2(t_R).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from nft_capacity.core.models import ContinuumData
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import Signal
from nft_capacity.core.models import SolitonMode
from nft_capacity.error_handling import DegeneracyError
from nft_capacity.error_handling import DependencyError
from nft_capacity.error_handling import NumericalError
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import WindowTooSmallError


logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 30
NEWTON_MAX_JUMP = 1e-4
ETA_MIN_RELATIVE = 1e-3
ETA_MIN_FLOOR = 1e-6
DEDUPE_TOL = 1e-8
A_PRIME_THRESHOLD = 1e-12
GAMMA_THRESHOLD = 1e-12
A_CONTINUUM_THRESHOLD = 1e-12
ROOT_TOLERANCE = 1e-6
RESIDUAL_TOLERANCE = 1e-6
SENSITIVITY_CHUNK = 32

CLOSURES = ("periodic", "vanishing")


# ---------------------------------------------------------------------------
# Lattice potential and eigenvalue maps
# ---------------------------------------------------------------------------


def al_potential(s: Signal) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice potential Q_n and the normalization c_n of every cell."""
    Q = 1j * s.tau * np.conj(s.samples)
    c = 1.0 / np.sqrt(1.0 + np.abs(Q) ** 2)
    return Q, c


def z_from_lambda(lam: np.ndarray, tau: float) -> np.ndarray:
    return np.exp(-1j * np.asarray(lam, dtype=np.complex128) * tau)


def lambda_from_z(z: np.ndarray, tau: float) -> np.ndarray:
    """Spectral parameter with Re lambda in (-pi/tau, pi/tau]."""
    return 1j * np.log(np.asarray(z, dtype=np.complex128)) / tau


def fold_representative(lam: np.ndarray, tau: float) -> np.ndarray:
    """Fold Re lambda into [-pi/(2 tau), pi/(2 tau)), the Re z > 0 half.

    For even M, lambda and lambda + pi/tau are eigenvalues together, so each
    pair keeps the member on the right half of the z-plane.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    half = 0.5 * np.pi / tau
    # Representatives span [-pi/(2 tau), pi/(2 tau)), not [0, pi/(2 tau)):
    # a complex field has no xi -> -xi symmetry, so xi < 0 modes are kept.
    xi = np.mod(lam.real + half, 2.0 * half) - half
    return xi + 1j * lam.imag


def discrete_zs_matrix(s: Signal, closure: str = "periodic") -> np.ndarray:
    """Ablowitz-Ladik eigenvalue matrix of size 2M acting on (v_1, v_2).

    Rows 0..M-1 read z v1_n = v1_{n+1} / c_n - Q_n v2_n and rows M..2M-1 read
    z v2_m = v2_{m-1} / c_{m-1} - conj(Q_{m-1}) v1_m. The periodic closure
    wraps the indices around the window, matching the propagation lattice.
    The vanishing closure drops the wrap entries: its eigenvalues with
    |z| > 1 are then exactly the zeros of a in the upper half plane.
    """
    if closure not in CLOSURES:
        raise ParameterError(f"unknown closure {closure!r}", closure=closure)

    M = s.M
    Q, c = al_potential(s)
    A = np.zeros((2 * M, 2 * M), dtype=np.complex128)
    n = np.arange(M)

    A[n, M + n] = -Q
    A[n[:-1], n[:-1] + 1] = 1.0 / c[:-1]
    A[M + n[1:], M + n[1:] - 1] = 1.0 / c[:-1]
    A[M + n[1:], n[1:]] = -np.conj(Q[:-1])

    if closure == "periodic":
        A[M - 1, 0] = 1.0 / c[M - 1]
        A[M, 2 * M - 1] = 1.0 / c[M - 1]
        A[M, 0] = -np.conj(Q[M - 1])
    return A


def quadruplet_partners(eigs: np.ndarray, tau: float) -> np.ndarray:
    """Partners (conj lambda, lambda + pi/tau, conj lambda + pi/tau) per eigenvalue.

    Returns:
        Array of shape (L, 3); the shifted partners have Re lambda folded
        back into (-pi/tau, pi/tau]
    """
    lam = np.atleast_1d(np.asarray(eigs, dtype=np.complex128))
    shift = np.pi / tau
    partners = np.stack([np.conj(lam), lam + shift, np.conj(lam) + shift], axis=1)
    return lambda_from_z(z_from_lambda(partners, tau), tau)


def quadruplet_mismatch(s: Signal, eta_min: Optional[float] = None) -> float:
    """Largest distance from a partner of an accepted eigenvalue to the spectrum.

    Every periodic-closure eigenvalue with Im lambda above the floor and
    Re z > 0 must come with its three partners; the worst match distance
    in the z-plane is returned (0.0 when there is nothing to check).
    """
    z_all = scipy.linalg.eigvals(discrete_zs_matrix(s, "periodic"))
    lam = lambda_from_z(z_all, s.tau)
    floor = _eta_floor(lam.imag) if eta_min is None else eta_min
    picked = lam[(lam.imag > floor) & (z_all.real > 0)]
    if picked.size == 0:
        return 0.0
    partners = z_from_lambda(quadruplet_partners(picked, s.tau), s.tau)
    distance = np.abs(partners[..., None] - z_all[None, None, :]).min(axis=-1)
    return float(distance.max())


def _eta_floor(eta: np.ndarray) -> float:
    positive = eta[eta > 0]
    if positive.size == 0:
        return ETA_MIN_FLOOR
    return max(ETA_MIN_RELATIVE * float(np.max(positive)), ETA_MIN_FLOOR)


# ---------------------------------------------------------------------------
# Transfer-matrix sweeps
# ---------------------------------------------------------------------------


@dataclass
class _Sweep:
    """Scaled left Jost triple (phi, phi', phi'') for a batch of lambdas.

    Actual values are exp(log_scale) times the stored normalized vectors.
    """

    p: np.ndarray
    d: np.ndarray
    e: np.ndarray
    log_scale: np.ndarray
    sites: Optional[np.ndarray] = None
    site_scale: Optional[np.ndarray] = None


@dataclass
class _Ends:
    a: np.ndarray
    a_prime: np.ndarray
    a_double_prime: np.ndarray
    b_coef: np.ndarray
    b_prime: np.ndarray


def _sweep_forward(
    Q: np.ndarray,
    c: np.ndarray,
    tau: float,
    t_left: float,
    lams: np.ndarray,
    store: bool = False,
) -> _Sweep:
    """Propagate phi and its first two lambda-derivatives across the window.

    The vectors are rescaled after every cell and the scale is kept as a log,
    so bound states with large eta * T do not overflow.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
    L = lams.size
    M = Q.size
    z = z_from_lambda(lams, tau)
    zi = 1.0 / z
    tau2 = tau * tau

    p1 = np.ones(L, dtype=np.complex128)
    p2 = np.zeros(L, dtype=np.complex128)
    d1 = np.full(L, -1j * t_left, dtype=np.complex128)
    d2 = np.zeros(L, dtype=np.complex128)
    e1 = np.full(L, -(t_left**2), dtype=np.complex128)
    e2 = np.zeros(L, dtype=np.complex128)
    log_scale = -1j * lams * t_left

    sites = np.empty((L, 4, M), dtype=np.complex128) if store else None
    site_scale = np.empty((L, M), dtype=np.complex128) if store else None

    for n in range(M):
        if store:
            sites[:, 0, n] = p1
            sites[:, 1, n] = p2
            sites[:, 2, n] = d1
            sites[:, 3, n] = d2
            site_scale[:, n] = log_scale

        t11 = c[n] * z
        t22 = c[n] * zi
        t12 = c[n] * Q[n]
        t21 = -c[n] * np.conj(Q[n])
        dt11 = -1j * tau * t11
        dt22 = 1j * tau * t22

        ne1 = -tau2 * t11 * p1 + 2.0 * dt11 * d1 + t11 * e1 + t12 * e2
        ne2 = -tau2 * t22 * p2 + 2.0 * dt22 * d2 + t21 * e1 + t22 * e2
        nd1 = dt11 * p1 + t11 * d1 + t12 * d2
        nd2 = dt22 * p2 + t21 * d1 + t22 * d2
        np1 = t11 * p1 + t12 * p2
        np2 = t21 * p1 + t22 * p2

        m = np.maximum(np.abs(np1), np.abs(np2))
        p1, p2 = np1 / m, np2 / m
        d1, d2 = nd1 / m, nd2 / m
        e1, e2 = ne1 / m, ne2 / m
        log_scale = log_scale + np.log(m)

    return _Sweep(
        p=np.stack([p1, p2]),
        d=np.stack([d1, d2]),
        e=np.stack([e1, e2]),
        log_scale=log_scale,
        sites=sites,
        site_scale=site_scale,
    )


def _sweep_right(
    Q: np.ndarray,
    c: np.ndarray,
    tau: float,
    t_right: float,
    lam: complex,
    stop: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Right Jost solution (0, 1) exp(i lambda t_R) swept back to site ``stop``.

    Returns normalized vectors (2, M) at sites stop..M-1 (zeros elsewhere) and
    their complex log scales.
    """
    M = Q.size
    z = complex(z_from_lambda(lam, tau))
    zi = 1.0 / z
    v1, v2 = 0j, 1 + 0j
    scale = 1j * lam * t_right
    vecs = np.zeros((2, M), dtype=np.complex128)
    scales = np.zeros(M, dtype=np.complex128)
    for n in range(M - 1, stop - 1, -1):
        cn, qn = c[n], Q[n]
        v1, v2 = cn * (zi * v1 - qn * v2), cn * (np.conj(qn) * v1 + z * v2)
        m = max(abs(v1), abs(v2))
        v1, v2 = v1 / m, v2 / m
        scale += np.log(m)
        vecs[:, n] = (v1, v2)
        scales[n] = scale
    return vecs, scales


def _ends(sweep: _Sweep, lams: np.ndarray, t_right: float) -> _Ends:
    lams = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
    with np.errstate(over="ignore", invalid="ignore"):
        right = np.exp(1j * lams * t_right + sweep.log_scale)
        left = np.exp(-1j * lams * t_right + sweep.log_scale)
    p1, p2 = sweep.p
    d1, d2 = sweep.d
    e1 = sweep.e[0]
    with np.errstate(over="ignore", invalid="ignore"):
        return _Ends(
            a=right * p1,
            a_prime=right * (d1 + 1j * t_right * p1),
            a_double_prime=right
            * (e1 + 2j * t_right * d1 - t_right**2 * p1),
            b_coef=left * p2,
            b_prime=left * (d2 - 1j * t_right * p2),
        )


def _site_values(normalized: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        values = normalized * np.exp(log_scale)
    if not np.all(np.isfinite(values)):
        raise NumericalError("Jost solution overflowed on the sample grid")
    return values


# ---------------------------------------------------------------------------
# Jost solutions and scattering coefficients
# ---------------------------------------------------------------------------


@dataclass
class JostSolution:
    """Jost solutions and scattering coefficients at one spectral parameter.

    phi and psi_bar are sampled at the left edge of every cell.
    """

    lam: complex
    a: complex
    a_prime: complex
    a_double_prime: complex
    b_coef: complex
    b_prime: complex
    phi: np.ndarray
    phi_prime: np.ndarray
    psi_bar: np.ndarray


def jost_and_a(s: Signal, lam: complex) -> JostSolution:
    """Left and right Jost solutions with a, a' and a'' at lambda.

    Args:
        s: Sampled signal
        lam: Spectral parameter in the closed upper half plane

    Raises:
        ParameterError: if Im lambda < 0
        NumericalError: if the scaled recursion still overflows
    """
    lam = complex(lam)
    if lam.imag < 0:
        raise ParameterError(
            f"lambda must lie in the closed upper half plane, got {lam}", lam=lam
        )
    Q, c = al_potential(s)
    t_left, t_right = s.window
    sweep = _sweep_forward(Q, c, s.tau, t_left, np.array([lam]), store=True)
    ends = _ends(sweep, np.array([lam]), t_right)

    values = np.array(
        [ends.a[0], ends.a_prime[0], ends.a_double_prime[0], ends.b_coef[0]]
    )
    if not np.all(np.isfinite(values)):
        raise NumericalError(
            f"scattering coefficients overflowed at lambda={lam}", lam=lam
        )

    phi = _site_values(sweep.sites[0, :2], sweep.site_scale[0])
    phi_prime = _site_values(sweep.sites[0, 2:], sweep.site_scale[0])
    right_vecs, right_scales = _sweep_right(Q, c, s.tau, t_right, lam)
    psi_bar = _site_values(right_vecs, right_scales)

    return JostSolution(
        lam=lam,
        a=complex(ends.a[0]),
        a_prime=complex(ends.a_prime[0]),
        a_double_prime=complex(ends.a_double_prime[0]),
        b_coef=complex(ends.b_coef[0]),
        b_prime=complex(ends.b_prime[0]),
        phi=phi,
        phi_prime=phi_prime,
        psi_bar=psi_bar,
    )


@dataclass
class _Monodromy:
    """Scaled one-period transfer matrix and its lambda-derivative.

    The actual matrices are exp(log_scale) times P and P_prime. With
    ``store`` the partial products F_n = T_{n-1} ... T_0 are kept per cell.
    """

    P: np.ndarray
    P_prime: np.ndarray
    log_scale: np.ndarray
    partial: Optional[np.ndarray] = None
    partial_scale: Optional[np.ndarray] = None

    @property
    def trace(self) -> np.ndarray:
        return self.P[:, 0, 0] + self.P[:, 1, 1]

    @property
    def trace_prime(self) -> np.ndarray:
        return self.P_prime[:, 0, 0] + self.P_prime[:, 1, 1]

    def discriminant(self) -> np.ndarray:
        """tr T - 2 in units of exp(log_scale)."""
        with np.errstate(over="ignore", under="ignore"):
            return self.trace - 2.0 * np.exp(-self.log_scale)


def _cell_matrices(
    cn: float, qn: complex, z: np.ndarray, tau: float
) -> Tuple[np.ndarray, np.ndarray]:
    L = z.size
    T = np.empty((L, 2, 2), dtype=np.complex128)
    T[:, 0, 0] = cn * z
    T[:, 0, 1] = cn * qn
    T[:, 1, 0] = -cn * np.conj(qn)
    T[:, 1, 1] = cn / z
    Tp = np.zeros_like(T)
    Tp[:, 0, 0] = -1j * tau * T[:, 0, 0]
    Tp[:, 1, 1] = 1j * tau * T[:, 1, 1]
    return T, Tp


def _monodromy(
    Q: np.ndarray, c: np.ndarray, tau: float, lams: np.ndarray, store: bool = False
) -> _Monodromy:
    """Product T_{M-1} ... T_0 over the periodic window for a batch of lambdas."""
    lams = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
    L = lams.size
    M = Q.size
    z = z_from_lambda(lams, tau)

    P = np.zeros((L, 2, 2), dtype=np.complex128)
    P[:, 0, 0] = P[:, 1, 1] = 1.0
    Pp = np.zeros_like(P)
    log_scale = np.zeros(L)
    partial = np.empty((L, M, 2, 2), dtype=np.complex128) if store else None
    partial_scale = np.empty((L, M)) if store else None

    for n in range(M):
        if store:
            partial[:, n] = P
            partial_scale[:, n] = log_scale
        T, Tp = _cell_matrices(c[n], Q[n], z, tau)
        Pp = T @ Pp + Tp @ P
        P = T @ P
        m = np.max(np.abs(P), axis=(1, 2))
        P /= m[:, None, None]
        Pp /= m[:, None, None]
        log_scale += np.log(m)

    return _Monodromy(
        P=P,
        P_prime=Pp,
        log_scale=log_scale,
        partial=partial,
        partial_scale=partial_scale,
    )


def _newton_refine(
    Q: np.ndarray, c: np.ndarray, tau: float, lam0: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Polish periodic eigenvalues with Newton on Delta(lambda) = tr T - 2.

    A candidate that converges further than NEWTON_MAX_JUMP from its start
    has jumped to a neighbouring root and is reported as not converged.
    Returns the refined values and the convergence mask.
    """
    lam = np.array(lam0, dtype=np.complex128)
    active = np.ones(lam.size, dtype=bool)
    converged = np.zeros(lam.size, dtype=bool)

    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        mono = _monodromy(Q, c, tau, lam[idx])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = mono.discriminant() / mono.trace_prime
        bad = ~np.isfinite(step)
        step[bad] = 0.0
        lam[idx] -= step
        small = np.abs(step) <= NEWTON_TOL * (1.0 + np.abs(lam[idx]))
        converged[idx[small & ~bad]] = True
        active[idx[small | bad]] = False

    start = np.asarray(lam0, dtype=np.complex128)
    jumped = np.abs(lam - start) > NEWTON_MAX_JUMP * (1.0 + np.abs(start))
    return lam, converged & ~jumped & (lam.imag > 0)


def discriminant_residual(s: Signal, lam: complex) -> float:
    """|tr T(lambda) - 2| relative to |tr T(lambda)| on the periodic window."""
    Q, c = al_potential(s)
    mono = _monodromy(Q, c, s.tau, np.array([lam]))
    return float(abs(mono.discriminant()[0]) / max(abs(mono.trace[0]), 1e-300))


# ---------------------------------------------------------------------------
# Discrete spectrum
# ---------------------------------------------------------------------------


def _candidate_eigenvalues(s: Signal) -> np.ndarray:
    A = discrete_zs_matrix(s, closure="periodic")
    try:
        z = scipy.linalg.eigvals(A, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(
            f"eigensolver failed on the {A.shape[0]}x{A.shape[0]} lattice matrix: {e}",
            condition=float(np.linalg.cond(A)),
            M=s.M,
        ) from e
    z = z[np.isfinite(z)]
    z = z[(np.abs(z) > 1.0) & (z.real >= 0.0)]
    return fold_representative(lambda_from_z(z, s.tau), s.tau)


def _select(lam: np.ndarray, eta_min: Optional[float]) -> np.ndarray:
    if lam.size == 0:
        return lam
    floor = _eta_floor(lam.imag) if eta_min is None else eta_min
    lam = lam[lam.imag > floor]
    order = np.lexsort((lam.real, lam.imag))
    lam = lam[order]
    kept: List[complex] = []
    for value in lam:
        if all(abs(value - k) > DEDUPE_TOL * (1.0 + abs(k)) for k in kept):
            kept.append(complex(value))
    return np.array(kept, dtype=np.complex128)


def periodic_eigenvalues(s: Signal, eta_min: Optional[float] = None) -> np.ndarray:
    """Accepted discrete eigenvalues of the periodic lattice, without mode data.

    Eigenvalues of the periodic lattice matrix, the closure the split-step
    flow conserves, are polished by Newton on tr T(lambda) - 2, folded into
    Re z > 0, filtered with eta > eta_min and sorted by (eta, xi). For a
    signal that vanishes well inside the window they coincide with the
    zeros of a up to exp(-eta T).

    Raises:
        NumericalError: on eigensolver failure
    """
    if not np.any(s.samples):
        return np.zeros(0, dtype=np.complex128)
    candidates = _candidate_eigenvalues(s)
    if candidates.size == 0:
        return candidates

    Q, c = al_potential(s)
    refined, converged = _newton_refine(Q, c, s.tau, candidates)
    if not np.all(converged):
        logger.info(
            f"Newton polish did not converge for {int(np.sum(~converged))} of "
            f"{candidates.size} candidates; keeping eigensolver values"
        )
        refined = np.where(converged, refined, candidates)

    lam = _select(fold_representative(refined, s.tau), eta_min)
    logger.debug(
        f"Periodic spectrum: {lam.size} modes from {candidates.size} candidates "
        f"(M={s.M}, tau={s.tau:g})"
    )
    return lam


def discrete_spectrum(
    s: Signal,
    eta_min: Optional[float] = None,
    with_coefficients: bool = True,
) -> ScatteringState:
    """Soliton part of the scattering data, one representative per quadruplet.

    Modes are built at the eigenvalues of periodic_eigenvalues.

    Args:
        s: Sampled signal
        eta_min: Classification threshold; default max(1e-3 max eta, 1e-6)
        with_coefficients: Also compute first-order perturbation coefficients

    Raises:
        NumericalError: on eigensolver failure
        DegeneracyError: if a' or the norming constant vanishes for a mode
    """
    state = ScatteringState(solitons=[], M=s.M, tau=s.tau, position_x=s.position_x)
    lam = periodic_eigenvalues(s, eta_min)
    if lam.size == 0:
        return state

    Q, c = al_potential(s)
    state.solitons = [_build_mode(s, Q, c, value) for value in lam]
    if with_coefficients:
        perturbation_coefficients(s, state)
    return state


def _build_mode(s: Signal, Q: np.ndarray, c: np.ndarray, lam: complex) -> SolitonMode:
    t_left, t_right = s.window
    sweep = _sweep_forward(Q, c, s.tau, t_left, np.array([lam]), store=True)
    ends = _ends(sweep, np.array([lam]), t_right)
    mode = SolitonMode(
        lam=complex(lam),
        a_prime=complex(ends.a_prime[0]),
        a_double_prime=complex(ends.a_double_prime[0]),
        b_prime=complex(ends.b_prime[0]),
        psi=_site_values(sweep.sites[0, :2], sweep.site_scale[0]),
        psi_prime=_site_values(sweep.sites[0, 2:], sweep.site_scale[0]),
        residual=discriminant_residual(s, lam),
    )
    if mode.residual > ROOT_TOLERANCE:
        logger.warning(
            f"Mode at lambda={lam:.6g} has periodic residual {mode.residual:.3e}"
        )
    mode.b, mode.mu, mode.gamma_n = norming_data(s, mode)
    return mode


def norming_data(s: Signal, mode: SolitonMode) -> Tuple[complex, complex, complex]:
    """Norming coefficient b, canonical mu = log(b / a') and gamma_n.

    b is the ratio of the left to the right Jost solution at the window
    midpoint; gamma_n = 2 sum psi_1 psi_2 tau without conjugation.

    Raises:
        DegeneracyError: if |a'| or |gamma_n| is below threshold
    """
    if abs(mode.a_prime) < A_PRIME_THRESHOLD:
        raise DegeneracyError(
            f"degenerate eigenvalue at lambda={mode.lam:.6g}: "
            f"|a'|={abs(mode.a_prime):.3e}",
            lam=mode.lam,
            a_prime=abs(mode.a_prime),
        )

    Q, c = al_potential(s)
    t_left, t_right = s.window
    sweep = _sweep_forward(Q, c, s.tau, t_left, np.array([mode.lam]), store=True)
    mid = s.M // 2
    left = sweep.sites[0, :2, mid]
    right_vecs, right_scales = _sweep_right(Q, c, s.tau, t_right, mode.lam, stop=mid)
    right = right_vecs[:, mid]
    ratio = np.vdot(right, left) / np.vdot(right, right)
    b = complex(ratio * np.exp(sweep.site_scale[0, mid] - right_scales[mid]))

    psi = mode.psi
    if psi is None:
        psi = _site_values(sweep.sites[0, :2], sweep.site_scale[0])
    gamma_n = complex(2.0 * np.sum(psi[0] * psi[1]) * s.tau)
    if abs(gamma_n) < GAMMA_THRESHOLD:
        raise DegeneracyError(
            f"non-normalizable mode at lambda={mode.lam:.6g}: "
            f"|gamma|={abs(gamma_n):.3e}",
            lam=mode.lam,
            gamma=abs(gamma_n),
        )

    mu = complex(np.log(b / mode.a_prime))
    return b, mu, gamma_n


def trace_energy(state: ScatteringState) -> float:
    """Soliton share of the energy, 4 sum eta_k."""
    return float(4.0 * sum(mode.eta for mode in state.solitons))


# ---------------------------------------------------------------------------
# Derivative eigenfunction and localization
# ---------------------------------------------------------------------------


def _jordan_residual(
    Q: np.ndarray,
    c: np.ndarray,
    tau: float,
    lam: complex,
    psi: np.ndarray,
    x: np.ndarray,
) -> float:
    """Relative residual of (A - z) x = z' psi on the interior lattice rows.

    Row M - 1 and row M of the lattice matrix are the closure rows; the
    Jost derivative meets them only through a' and they are left out.
    """
    z = complex(z_from_lambda(lam, tau))
    zp = -1j * tau * z
    r1 = x[0, 1:] / c[:-1] - Q[:-1] * x[1, :-1] - z * x[0, :-1] - zp * psi[0, :-1]
    r2 = (
        x[1, :-1] / c[:-1]
        - np.conj(Q[:-1]) * x[0, 1:]
        - z * x[1, 1:]
        - zp * psi[1, 1:]
    )
    rhs = np.concatenate([zp * psi[0, :-1], zp * psi[1, 1:]])
    residual = np.concatenate([r1, r2])
    return float(np.linalg.norm(residual) / max(np.linalg.norm(rhs), 1e-300))


def derivative_eigenfunction(
    s: Signal, mode: SolitonMode, remove_psi: bool = True
) -> np.ndarray:
    """Lambda-derivative Psi' of a bound-state eigenfunction.

    Psi' is d phi / d lambda of the left Jost solution at the eigenvalue,
    rescaled by the ratio of mode.psi to that solution. It solves
    (A - z) Psi' = z' Psi with z' = -i tau z on every interior lattice row,
    the discrete form of (U - lambda) Psi' = Psi. With ``remove_psi`` the
    component along Psi is projected out; without it the gauge is the one
    in which mu = log(b / a').

    Raises:
        ParameterError: if the mode has no eigenfunction
        NumericalError: if the recursion overflows or the residual on the
            interior rows exceeds RESIDUAL_TOLERANCE
    """
    if mode.psi is None or mode.lam.imag <= 0:
        raise ParameterError(
            "derivative eigenfunction needs an accepted bound state with psi"
        )
    Q, c = al_potential(s)
    t_left, _ = s.window
    sweep = _sweep_forward(Q, c, s.tau, t_left, np.array([mode.lam]), store=True)
    phi = _site_values(sweep.sites[0, :2], sweep.site_scale[0])
    x = _site_values(sweep.sites[0, 2:], sweep.site_scale[0])

    psi = np.asarray(mode.psi, dtype=np.complex128)
    x = x * (np.vdot(phi, psi) / np.vdot(phi, phi))

    rel = _jordan_residual(Q, c, s.tau, mode.lam, psi, x)
    if not np.isfinite(rel) or rel > RESIDUAL_TOLERANCE:
        raise NumericalError(
            f"derivative eigenfunction residual {rel:.3e} above tolerance "
            f"at lambda={mode.lam:.6g}",
            residual=rel,
        )
    if remove_psi:
        x = x - psi * (np.vdot(psi, x) / np.vdot(psi, psi))
    return x


def localization_length_estimate(
    mode: SolitonMode,
    tau: float,
    tail_ratio: float = 1e-3,
    fit_ratio: float = 0.1,
) -> float:
    """Inverse localization length from the tail slope of log |Psi|.

    Samples whose norm is at most fit_ratio of the peak are fitted with a
    straight line against the distance to the peak.

    Raises:
        ParameterError: if the mode has no eigenfunction
        WindowTooSmallError: if the eigenfunction has not decayed to
            tail_ratio of its peak at either window end
    """
    if mode.psi is None:
        raise ParameterError("localization length needs the eigenfunction psi")
    norms = np.sqrt(np.sum(np.abs(mode.psi) ** 2, axis=0))
    peak_idx = int(np.argmax(norms))
    peak = float(norms[peak_idx])
    ends = max(float(norms[0]), float(norms[-1]))
    if peak <= 0 or ends > tail_ratio * peak:
        raise WindowTooSmallError(
            f"eigenfunction at lambda={mode.lam:.6g} does not decay inside the window",
            tail_ratio=ends / peak if peak > 0 else float("inf"),
        )

    distance = np.abs(np.arange(norms.size) - peak_idx) * tau
    tail = (norms <= fit_ratio * peak) & (norms > 0)
    if np.count_nonzero(tail) < 3:
        raise WindowTooSmallError(
            "too few tail samples to fit a decay rate", samples=int(np.sum(tail))
        )
    slope, _ = np.polyfit(distance[tail], np.log(norms[tail]), 1)
    return float(-slope)


# ---------------------------------------------------------------------------
# Continuum
# ---------------------------------------------------------------------------


def continuum_grid(M: int, n_solitons: int, tau: float) -> Tuple[np.ndarray, float]:
    """Uniform grid of N_c = M - 2N real eigenvalues and its weight d xi / pi.

    The grid covers the Re z > 0 half of the Brillouin zone at cell midpoints.
    """
    n_c = M - 2 * n_solitons
    if n_c <= 0:
        return np.zeros(0), 0.0
    step = np.pi / (tau * n_c)
    xi = -0.5 * np.pi / tau + (np.arange(n_c) + 0.5) * step
    return xi, step / np.pi


def continuum_data(s: Signal, n_solitons: Optional[int] = None) -> ContinuumData:
    """Reflection coefficients rho = b / a on the real grid.

    Args:
        s: Sampled signal
        n_solitons: Number of accepted modes; computed when omitted

    Raises:
        DegeneracyError: if |a(xi)| falls below threshold on the grid
    """
    if n_solitons is None:
        n_solitons = discrete_spectrum(s, with_coefficients=False).N
    xi, weight = continuum_grid(s.M, n_solitons, s.tau)
    if xi.size == 0:
        empty = np.zeros(0, dtype=np.complex128)
        return ContinuumData(
            xi_grid=np.zeros(0),
            rho=empty,
            a_vals=empty,
            b_vals=empty,
            jost_phi=np.zeros((0, 2, s.M), dtype=np.complex128),
            weight=0.0,
        )

    Q, c = al_potential(s)
    t_left, t_right = s.window
    lams = xi.astype(np.complex128)
    sweep = _sweep_forward(Q, c, s.tau, t_left, lams, store=True)
    ends = _ends(sweep, lams, t_right)

    small = np.abs(ends.a) < A_CONTINUUM_THRESHOLD
    if np.any(small):
        j = int(np.flatnonzero(small)[0])
        raise DegeneracyError(
            f"a(xi) vanishes on the continuum grid at xi={xi[j]:.6g}",
            xi=float(xi[j]),
        )

    jost_phi = _site_values(sweep.sites[:, :2], sweep.site_scale[:, None, :])
    return ContinuumData(
        xi_grid=xi,
        rho=ends.b_coef / ends.a,
        a_vals=ends.a,
        b_vals=ends.b_coef,
        jost_phi=jost_phi,
        weight=weight,
    )


def scatter(
    s: Signal, with_continuum: bool = True, eta_min: Optional[float] = None
) -> ScatteringState:
    """Full scattering state: solitons and, optionally, continuum data."""
    state = discrete_spectrum(s, eta_min=eta_min)
    if with_continuum:
        state.continuum = continuum_data(s, n_solitons=state.N)
        if state.continuum.size:
            perturbation_coefficients(s, state, solitons=False)
    return state


def continuum_state(s: Signal) -> ScatteringState:
    """Scattering state with the continuum on all M grid points and no modes."""
    state = ScatteringState(
        solitons=[],
        M=s.M,
        tau=s.tau,
        position_x=s.position_x,
        continuum=continuum_data(s, n_solitons=0),
    )
    return perturbation_coefficients(s, state, solitons=False)


# ---------------------------------------------------------------------------
# First-order perturbation coefficients
# ---------------------------------------------------------------------------


def _sensitivities(
    Q: np.ndarray, c: np.ndarray, s: Signal, lams: np.ndarray
) -> Dict[str, np.ndarray]:
    """Exact derivatives of a, a' and b with respect to every sample.

    Returns arrays of shape (L, 2, M): index 0 holds the coefficient of
    delta u_n and index 1 that of conj(delta u_n), plus the end values.
    """
    t_left, t_right = s.window
    tau = s.tau
    L = lams.size
    M = Q.size

    fwd = _sweep_forward(Q, c, tau, t_left, lams, store=True)
    ends = _ends(fwd, lams, t_right)

    z = z_from_lambda(lams, tau)
    zi = 1.0 / z
    R = np.zeros((L, 2, 2), dtype=np.complex128)
    R[:, 0, 0] = R[:, 1, 1] = 1.0
    Rp = np.zeros_like(R)
    r_log = np.zeros(L)
    Rs = np.empty((L, M, 2, 2), dtype=np.complex128)
    Rps = np.empty_like(Rs)
    r_scale = np.empty((L, M))

    T = np.zeros((L, 2, 2), dtype=np.complex128)
    Tp = np.zeros((L, 2, 2), dtype=np.complex128)
    for n in range(M - 1, -1, -1):
        Rs[:, n] = R
        Rps[:, n] = Rp
        r_scale[:, n] = r_log
        T[:, 0, 0] = c[n] * z
        T[:, 0, 1] = c[n] * Q[n]
        T[:, 1, 0] = -c[n] * np.conj(Q[n])
        T[:, 1, 1] = c[n] * zi
        Tp[:, 0, 0] = -1j * tau * T[:, 0, 0]
        Tp[:, 1, 1] = 1j * tau * T[:, 1, 1]
        Rp = Rp @ T + R @ Tp
        R = R @ T
        m = np.max(np.abs(R), axis=(1, 2))
        R /= m[:, None, None]
        Rp /= m[:, None, None]
        r_log += np.log(m)

    p1, p2, d1, d2 = (fwd.sites[:, k] for k in range(4))
    base = fwd.site_scale + r_scale
    lam_col = lams[:, None]
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        w_a = np.exp(base + 1j * lam_col * t_right)
        w_b = np.exp(base - 1j * lam_col * t_right)

    cq = c * c * np.conj(Q)
    cqc = c * c * Q
    a = ends.a[:, None]
    phi1p = (ends.a_prime - 1j * t_right * ends.a)[:, None]
    bb = ends.b_coef[:, None]

    dA_dQ = -0.5 * cq * a + c * w_a * p2 * Rs[:, :, 0, 0]
    dA_dQc = -0.5 * cqc * a - c * w_a * p1 * Rs[:, :, 0, 1]
    dP_dQ = -0.5 * cq * phi1p + c * w_a * (d2 * Rs[:, :, 0, 0] + p2 * Rps[:, :, 0, 0])
    dP_dQc = -0.5 * cqc * phi1p - c * w_a * (
        d1 * Rs[:, :, 0, 1] + p1 * Rps[:, :, 0, 1]
    )
    dB_dQ = -0.5 * cq * bb + c * w_b * p2 * Rs[:, :, 1, 0]
    dB_dQc = -0.5 * cqc * bb - c * w_b * p1 * Rs[:, :, 1, 1]

    dAp_dQ = dP_dQ + 1j * t_right * dA_dQ
    dAp_dQc = dP_dQc + 1j * t_right * dA_dQc

    def to_u(d_dQ: np.ndarray, d_dQc: np.ndarray) -> np.ndarray:
        return np.stack([-1j * tau * d_dQc, 1j * tau * d_dQ], axis=1)

    result = {
        "A": to_u(dA_dQ, dA_dQc),
        "A_prime": to_u(dAp_dQ, dAp_dQc),
        "B": to_u(dB_dQ, dB_dQc),
    }
    for key, value in result.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"sensitivity of {key} overflowed")
    result["a"] = ends.a
    result["a_prime"] = ends.a_prime
    result["a_double_prime"] = ends.a_double_prime
    result["b_coef"] = ends.b_coef
    result["b_prime"] = ends.b_prime
    return result


def _discriminant_sensitivities(
    Q: np.ndarray, c: np.ndarray, tau: float, lams: np.ndarray
) -> np.ndarray:
    """Response of periodic eigenvalues, delta lambda = -delta Delta / Delta'.

    With F_n = T_{n-1} ... T_0 and G_n = T_{M-1} ... T_{n+1} the monodromy
    is G_n T_n F_n, so a change of cell n moves its trace by
    tr(delta T_n F_n G_n). Returns shape (L, 2, M) like _sensitivities.

    Raises:
        DegeneracyError: if Delta' vanishes at one of the eigenvalues
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
    L = lams.size
    M = Q.size
    z = z_from_lambda(lams, tau)
    mono = _monodromy(Q, c, tau, lams, store=True)

    G = np.zeros((L, 2, 2), dtype=np.complex128)
    G[:, 0, 0] = G[:, 1, 1] = 1.0
    g_log = np.zeros(L)
    Gs = np.empty((L, M, 2, 2), dtype=np.complex128)
    g_scale = np.empty((L, M))
    for n in range(M - 1, -1, -1):
        Gs[:, n] = G
        g_scale[:, n] = g_log
        T, _ = _cell_matrices(c[n], Q[n], z, tau)
        G = G @ T
        m = np.max(np.abs(G), axis=(1, 2))
        G /= m[:, None, None]
        g_log += np.log(m)

    K = mono.partial @ Gs
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(mono.partial_scale + g_scale - mono.log_scale[:, None])
    trace = mono.trace[:, None]
    dD_dQ = -0.5 * c * c * np.conj(Q) * trace + c * w * K[:, :, 1, 0]
    dD_dQc = -0.5 * c * c * Q * trace - c * w * K[:, :, 0, 1]

    slope = mono.trace_prime
    small = ~(np.abs(slope) >= A_PRIME_THRESHOLD)
    if np.any(small):
        j = int(np.flatnonzero(small)[0])
        raise DegeneracyError(
            f"periodic discriminant is flat at lambda={lams[j]:.6g}",
            lam=complex(lams[j]),
        )
    with np.errstate(over="ignore", invalid="ignore"):
        coeff = -np.stack([-1j * tau * dD_dQc, 1j * tau * dD_dQ], axis=1)
        coeff /= slope[:, None, None]
    if not np.all(np.isfinite(coeff)):
        raise NumericalError("eigenvalue sensitivity overflowed")
    return coeff


def perturbation_coefficients(
    s: Signal,
    state: ScatteringState,
    solitons: bool = True,
    continuum: bool = True,
) -> ScatteringState:
    """Fill in the linear response of lambda, mu0 and rho to delta u.

    For each mode, delta lambda = -delta Delta / Delta' follows the periodic
    eigenvalue, which equals -delta a / a' once the signal has decayed
    inside the window, and
    delta mu0 = delta b / b + (b'/b) delta lambda - delta a' / a', where mu0
    differs from mu by A0 lambda with A0 = a'' / a'. On the continuum
    delta rho = delta b / a - (b / a^2) delta a.
    Coefficients are stored with shape (2, M): row 0 multiplies delta u and
    row 1 multiplies conj(delta u).
    """
    Q, c = al_potential(s)
    if solitons and state.solitons:
        lams = state.eigenvalues
        for start in range(0, lams.size, SENSITIVITY_CHUNK):
            chunk = lams[start : start + SENSITIVITY_CHUNK]
            sens = _sensitivities(Q, c, s, chunk)
            d_lam = _discriminant_sensitivities(Q, c, s.tau, chunk)
            for j, mode in enumerate(state.solitons[start : start + chunk.size]):
                a_p = sens["a_prime"][j]
                b = sens["b_coef"][j]
                if abs(b) == 0:
                    raise DegeneracyError(
                        f"norming coefficient vanishes at lambda={mode.lam:.6g}",
                        lam=mode.lam,
                    )
                coeff_lam = d_lam[j]
                mode.coeff_lambda = coeff_lam
                mode.coeff_mu0 = (
                    sens["B"][j] / b
                    + (sens["b_prime"][j] / b) * coeff_lam
                    - sens["A_prime"][j] / a_p
                )

    cont = state.continuum
    if continuum and cont is not None and cont.size:
        rows = []
        lams = cont.xi_grid.astype(np.complex128)
        for start in range(0, lams.size, SENSITIVITY_CHUNK):
            chunk = lams[start : start + SENSITIVITY_CHUNK]
            sens = _sensitivities(Q, c, s, chunk)
            a = sens["a"][:, None, None]
            b = sens["b_coef"][:, None, None]
            rows.append(sens["B"] / a - (b / a**2) * sens["A"])
        cont.coeff_rho = np.concatenate(rows, axis=0)
    return state


def integral_coefficients(
    mode: SolitonMode, tau: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Responses of lambda and mu0 from eigenfunction integrals.

    delta lambda = sum(psi_2^2 conj(du) - psi_1^2 du) tau / gamma_n and
    delta mu0 = sum((psi_2^2)' conj(du) - (psi_1^2)' du) tau / gamma_n with
    (psi^2)' = 2 psi psi'. psi_prime must be the Jost derivative stored by
    discrete_spectrum; a Psi' with the Psi component removed shifts mu0 by
    a multiple of lambda.

    Returns:
        (coeff_lambda, coeff_mu0), each of shape (2, M)

    Raises:
        DependencyError: if psi or psi_prime is missing
        DegeneracyError: if |gamma_n| is below threshold
    """
    if mode.psi is None or mode.psi_prime is None:
        raise DependencyError(
            f"mode at lambda={mode.lam:.6g} has no derivative eigenfunction",
            lam=mode.lam,
        )
    if abs(mode.gamma_n) < GAMMA_THRESHOLD:
        raise DegeneracyError(
            f"non-normalizable mode at lambda={mode.lam:.6g}",
            lam=mode.lam,
            gamma=abs(mode.gamma_n),
        )
    psi = np.asarray(mode.psi)
    psi_prime = np.asarray(mode.psi_prime)
    weight = tau / mode.gamma_n
    coeff_lambda = weight * np.stack([-psi[0] ** 2, psi[1] ** 2])
    coeff_mu0 = 2.0 * weight * np.stack(
        [-psi[0] * psi_prime[0], psi[1] * psi_prime[1]]
    )
    return coeff_lambda, coeff_mu0


def predict_first_order(
    state: ScatteringState, delta_u: np.ndarray
) -> Dict[str, np.ndarray]:
    """Linear prediction of the scattering data change for a perturbation.

    Returns:
        Dictionary with delta_lambda, delta_mu and (when the continuum is
        present) delta_rho arrays

    Raises:
        DependencyError: if perturbation coefficients were not computed
    """
    delta_u = np.asarray(delta_u, dtype=np.complex128)
    if delta_u.size != state.M:
        raise ParameterError(
            f"perturbation has {delta_u.size} samples, state has M={state.M}"
        )
    pair = np.stack([delta_u, np.conj(delta_u)])

    d_lam, d_mu = [], []
    for mode in state.solitons:
        if mode.coeff_lambda is None or mode.coeff_mu0 is None:
            raise DependencyError(
                f"mode at lambda={mode.lam:.6g} has no perturbation coefficients"
            )
        dl = complex(np.sum(mode.coeff_lambda * pair))
        dm0 = complex(np.sum(mode.coeff_mu0 * pair))
        d_lam.append(dl)
        d_mu.append(dm0 - (mode.a_double_prime / mode.a_prime) * dl)

    result = {
        "delta_lambda": np.array(d_lam, dtype=np.complex128),
        "delta_mu": np.array(d_mu, dtype=np.complex128),
    }
    cont = state.continuum
    if cont is not None and cont.size:
        if cont.coeff_rho is None:
            raise DependencyError("continuum has no perturbation coefficients")
        result["delta_rho"] = np.sum(cont.coeff_rho * pair[None], axis=(1, 2))
    return result
