"""Scattering-domain noise covariance per amplifier and over the whole link.

Every block uses the augmented layout (delta, conj(delta)). With white input
noise of variance eps2 / tau per sample, a quantity with response
delta X = g . delta u + h . conj(delta u) has the row [g, h], its conjugate
the row [conj(h), conj(g)], and the unit-noise covariance is J J^H / tau.
Rows are ordered lambda, mu0, rho where mu0 = mu + A0 lambda.
"""

import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from nft_capacity.core.models import CovarianceBlocks
from nft_capacity.core.models import CovarianceVariant
from nft_capacity.core.models import GordonHausTerms
from nft_capacity.core.models import NoiseCovariance
from nft_capacity.core.models import ScatteringState
from nft_capacity.core.propagation import track_modes
from nft_capacity.core.scattering import A_PRIME_THRESHOLD
from nft_capacity.core.scattering import integral_coefficients
from nft_capacity.error_handling import ConditioningError
from nft_capacity.error_handling import DegeneracyError
from nft_capacity.error_handling import DependencyError
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import StructuralError
from nft_capacity.utils.formatting import format_number


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _augmented_rows(coeffs: np.ndarray) -> np.ndarray:
    """(n, 2, M) coefficients to the (2n, 2M) augmented response matrix."""
    g, h = coeffs[:, 0], coeffs[:, 1]
    top = np.concatenate([g, h], axis=1)
    bottom = np.concatenate([np.conj(h), np.conj(g)], axis=1)
    return np.concatenate([top, bottom], axis=0)


def _empty(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.complex128)


BLOCK_SOURCES = ("sensitivity", "integral")


def _soliton_rows(state: ScatteringState, source: str) -> List[np.ndarray]:
    if source == "sensitivity":
        missing = [
            i
            for i, m in enumerate(state.solitons)
            if m.coeff_lambda is None or m.coeff_mu0 is None
        ]
        if missing:
            raise DependencyError(
                f"modes {missing} have no perturbation coefficients", modes=missing
            )
        return [
            np.stack([m.coeff_lambda for m in state.solitons]),
            np.stack([m.coeff_mu0 for m in state.solitons]),
        ]
    pairs = [integral_coefficients(m, state.tau) for m in state.solitons]
    return [np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])]


def blocks_at_amplifier(
    state: ScatteringState, amplifier_index: int = 0, source: str = "sensitivity"
) -> CovarianceBlocks:
    """Unit-noise covariance blocks of (lambda, mu0, rho) at one position.

    ``source`` picks the soliton rows: "sensitivity" uses the exact lattice
    responses stored on the modes, "integral" the Psi / Psi' / gamma_n
    quadratures of integral_coefficients. Continuum rows are the same for
    both.

    Raises:
        ParameterError: on an unknown source
        DependencyError: if perturbation coefficients or Psi' are missing
        DegeneracyError: if a mode has a vanishing a'
    """
    if source not in BLOCK_SOURCES:
        raise ParameterError(f"unknown block source {source!r}", source=source)
    tau = state.tau
    M = state.M
    n_sol = state.N

    if n_sol:
        for i, mode in enumerate(state.solitons):
            if abs(mode.a_prime) < A_PRIME_THRESHOLD:
                raise DegeneracyError(
                    f"mode {i} at lambda={mode.lam:.6g} has |a'| below threshold",
                    mode=i,
                )
        lam_rows, mu_rows = _soliton_rows(state, source)
        J_lam = _augmented_rows(lam_rows)
        J_mu = _augmented_rows(mu_rows)
    else:
        J_lam = _empty(0, 2 * M)
        J_mu = _empty(0, 2 * M)

    cont = state.continuum
    if cont is not None and cont.size:
        if cont.coeff_rho is None:
            raise DependencyError("continuum has no perturbation coefficients")
        J_rho = math.sqrt(cont.weight) * _augmented_rows(cont.coeff_rho)
    else:
        J_rho = _empty(0, 2 * M)

    def gram(A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return (A @ B.conj().T) / tau

    return CovarianceBlocks(
        M0_lambda_lambda=gram(J_lam, J_lam),
        M0_mu_mu=gram(J_mu, J_mu),
        M0_rho_rho=gram(J_rho, J_rho),
        M0_lambda_mu=gram(J_mu, J_lam),
        M0_lambda_rho=gram(J_rho, J_lam),
        M0_rho_mu=gram(J_rho, J_mu),
        eigenvalues=state.eigenvalues,
        amplifier_index=amplifier_index,
    )


def gordon_haus_terms(
    state0: ScatteringState, k: int, K: int, L_s: float
) -> GordonHausTerms:
    """Drift terms of amplifier k: alpha_k = 8 (K - k) L_s, Delta_lambda, A0.

    Both diagonals are taken on the input-side spectrum.

    Raises:
        ParameterError: if k is outside 1..K
        DegeneracyError: if a' vanishes for a mode
    """
    if not 1 <= k <= K:
        raise ParameterError(f"amplifier index must be in 1..{K}, got {k}")
    a0 = []
    for i, mode in enumerate(state0.solitons):
        if abs(mode.a_prime) < A_PRIME_THRESHOLD:
            raise DegeneracyError(
                f"mode {i} at lambda={mode.lam:.6g} has |a'| below threshold",
                mode=i,
            )
        a0.append(mode.a_double_prime / mode.a_prime)
    return GordonHausTerms(
        alpha_k=8.0 * (K - k) * L_s,
        delta_lambda=state0.eigenvalues,
        A0=np.array(a0, dtype=np.complex128),
    )


def _check_sizes(blocks: CovarianceBlocks, gh: GordonHausTerms) -> None:
    if gh.delta_lambda.size != blocks.n_solitons:
        raise StructuralError(
            f"Gordon-Haus terms cover {gh.delta_lambda.size} modes, "
            f"blocks cover {blocks.n_solitons}",
            gh_modes=int(gh.delta_lambda.size),
            block_modes=blocks.n_solitons,
        )
    n2 = 2 * blocks.n_solitons
    c2 = 2 * blocks.n_continuum
    expected = {
        "M0_mu_mu": (n2, n2),
        "M0_lambda_mu": (n2, n2),
        "M0_lambda_rho": (c2, n2),
        "M0_rho_mu": (c2, n2),
    }
    for name, shape in expected.items():
        if getattr(blocks, name).shape != shape:
            raise StructuralError(
                f"{name} has shape {getattr(blocks, name).shape}, expected {shape}"
            )


def drift_map(n_solitons: int, n_continuum: int, Dk: np.ndarray) -> np.ndarray:
    """Unit-determinant map subtracting D^k delta lambda from delta mu."""
    n2 = 2 * n_solitons
    T = np.eye(2 * n2 + 2 * n_continuum, dtype=np.complex128)
    T[n2 : 2 * n2, :n2] = -Dk
    return T


def assemble_Mk(
    blocks: CovarianceBlocks,
    gh: Optional[GordonHausTerms] = None,
    drop_A0: bool = False,
) -> np.ndarray:
    """Per-amplifier matrix M^k = T_k M0 T_k^H.

    Args:
        blocks: Unit-noise blocks at amplifier k
        gh: Drift terms; None leaves M0 unchanged
        drop_A0: Use D^k = alpha_k D1 only

    Raises:
        StructuralError: on inconsistent block sizes
    """
    M0 = blocks.assemble()
    if gh is None or blocks.n_solitons == 0:
        return M0
    _check_sizes(blocks, gh)
    Dk = gh.alpha_k * gh.D1 if drop_A0 else gh.Dk
    T = drift_map(blocks.n_solitons, blocks.n_continuum, Dk)
    return T @ M0 @ T.conj().T


def assemble_Mk_zx(blocks: CovarianceBlocks, gh: GordonHausTerms) -> np.ndarray:
    """M^k = M0 + G^k with the Z^k (mu mu) and X^k (mu lambda) increments."""
    _check_sizes(blocks, gh)
    D = gh.Dk
    ll, mm, rr = blocks.M0_lambda_lambda, blocks.M0_mu_mu, blocks.M0_rho_rho
    lm, lr, rm = blocks.M0_lambda_mu, blocks.M0_lambda_rho, blocks.M0_rho_mu

    Z = D @ ll @ D.conj().T - D @ lm.conj().T - lm @ D.conj().T
    X = -D @ ll
    W = -lr @ D.conj().T

    mu_lam = lm + X
    rho_mu = rm + W
    return np.block(
        [
            [ll, mu_lam.conj().T, lr.conj().T],
            [mu_lam, mm + Z, rho_mu.conj().T],
            [lr, rho_mu, rr],
        ]
    )


def cross_check_zx(blocks: CovarianceBlocks, gh: GordonHausTerms) -> float:
    """Largest entrywise gap between the congruence and Z/X constructions."""
    gap = assemble_Mk(blocks, gh) - assemble_Mk_zx(blocks, gh)
    return float(np.max(np.abs(gap))) if gap.size else 0.0


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.conj().T)


def _check_positive_definite(S: np.ndarray, variant: CovarianceVariant) -> None:
    if S.size == 0:
        return
    try:
        scipy.linalg.cholesky(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        smallest = float(np.min(np.linalg.eigvalsh(S)))
        raise ConditioningError(
            f"{variant.value} covariance is not positive definite "
            f"(smallest eigenvalue {smallest:.3e})",
            smallest_eigenvalue=smallest,
            variant=variant.value,
        ) from e


def _sum_matrices(matrices: Sequence[np.ndarray]) -> np.ndarray:
    if not matrices:
        raise ParameterError("at least one amplifier is required")
    shape = matrices[0].shape
    for k, Mk in enumerate(matrices, start=1):
        if Mk.shape != shape:
            raise StructuralError(
                f"amplifier {k} matrix has shape {Mk.shape}, expected {shape}",
                amplifier=k,
            )
    return np.sum(np.stack(matrices), axis=0)


def _noise_covariance(
    total: np.ndarray,
    eps2: float,
    K: int,
    n_solitons: int,
    n_continuum: int,
    variant: CovarianceVariant,
) -> NoiseCovariance:
    S = symmetrize(eps2 * total)
    if eps2 > 0:
        _check_positive_definite(S, variant)
    return NoiseCovariance(
        S=S,
        variant=variant,
        eps2=eps2,
        K=K,
        n_solitons=n_solitons,
        n_continuum=n_continuum,
    )


def _counts(dimension: int, n_solitons: int) -> int:
    return (dimension - 4 * n_solitons) // 2


def assemble_S(
    per_amplifier: Sequence[np.ndarray], eps2: float, n_solitons: int
) -> NoiseCovariance:
    """Full covariance S = eps2 sum_k M^k.

    Raises:
        StructuralError: if the amplifier matrices differ in size
        ConditioningError: if S is not positive definite for eps2 > 0
    """
    total = _sum_matrices(per_amplifier)
    return _noise_covariance(
        total,
        eps2,
        len(per_amplifier),
        n_solitons,
        _counts(total.shape[0], n_solitons),
        CovarianceVariant.FULL,
    )


def assemble_S_noGH(
    per_amplifier: Sequence[CovarianceBlocks], eps2: float
) -> NoiseCovariance:
    """Covariance without Gordon-Haus drift, eps2 sum_k M0^k."""
    if not per_amplifier:
        raise ParameterError("at least one amplifier is required")
    total = _sum_matrices([blocks.assemble() for blocks in per_amplifier])
    first = per_amplifier[0]
    return _noise_covariance(
        total,
        eps2,
        len(per_amplifier),
        first.n_solitons,
        first.n_continuum,
        CovarianceVariant.NOGH,
    )


def zeta_closed(K: int, L_s: float) -> float:
    """Variance of alpha_k over the K amplifiers, (16/3)(K^2 - 1) L_s^2."""
    return 16.0 / 3.0 * (K * K - 1) * L_s * L_s


def zeta_direct(K: int, L_s: float) -> float:
    alpha = 8.0 * (K - np.arange(1, K + 1)) * L_s
    return float(np.mean(alpha**2) - np.mean(alpha) ** 2)


def assemble_S_noProp(
    state0: Union[ScatteringState, CovarianceBlocks], K: int, L_s: float, eps2: float
) -> NoiseCovariance:
    """Covariance from the input-side blocks only.

    S = K eps2 [[ll, lm^H], [lm, mm + zeta_K D1 ll D1^H]], with the continuum
    blocks carried unchanged.
    """
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    blocks = (
        state0 if isinstance(state0, CovarianceBlocks) else blocks_at_amplifier(state0)
    )
    n = blocks.n_solitons
    M0 = blocks.assemble()
    if n:
        lam = blocks.eigenvalues
        D1 = np.diag(np.concatenate([1j * lam, -1j * np.conj(lam)]))
        ll = blocks.M0_lambda_lambda
        M0[2 * n : 4 * n, 2 * n : 4 * n] += zeta_closed(K, L_s) * (
            D1 @ ll @ D1.conj().T
        )
    return _noise_covariance(
        K * M0, eps2, K, n, blocks.n_continuum, CovarianceVariant.NOPROP
    )


def reorder_state(state: ScatteringState, mapping: List[int]) -> ScatteringState:
    """Copy of a state whose modes follow a reference ordering."""
    return ScatteringState(
        solitons=[state.solitons[j] for j in mapping],
        M=state.M,
        tau=state.tau,
        position_x=state.position_x,
        continuum=state.continuum,
    )


def amplifier_blocks(
    states: Sequence[ScatteringState], state0: ScatteringState
) -> List[CovarianceBlocks]:
    """Blocks at amplifiers 1..K with modes tracked back to the input.

    Raises:
        PairingError: if a mode cannot be followed to some amplifier
    """
    result = []
    for k, state in enumerate(states, start=1):
        tracked = reorder_state(state, track_modes(state0, state))
        result.append(blocks_at_amplifier(tracked, amplifier_index=k))
    return result


def amplifier_matrices(
    blocks: Sequence[CovarianceBlocks],
    state0: ScatteringState,
    L_s: float,
    drop_A0: bool = False,
) -> List[np.ndarray]:
    """M^k for every amplifier, with drift terms from the input spectrum."""
    K = len(blocks)
    return [
        assemble_Mk(b, gordon_haus_terms(state0, k, K, L_s), drop_A0=drop_A0)
        for k, b in enumerate(blocks, start=1)
    ]


def log_det(S: Union[NoiseCovariance, np.ndarray]) -> float:
    """log2 det S from a Cholesky factorization of the symmetrized matrix.

    Raises:
        ConditioningError: if S is not positive definite
    """
    matrix = S.S if isinstance(S, NoiseCovariance) else np.asarray(S)
    if matrix.size == 0:
        return 0.0
    matrix = symmetrize(matrix)
    try:
        L = scipy.linalg.cholesky(matrix, lower=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        smallest = float(np.min(np.linalg.eigvalsh(matrix)))
        raise ConditioningError(
            f"matrix is not positive definite (smallest eigenvalue {smallest:.3e})",
            smallest_eigenvalue=smallest,
        ) from e
    return float(2.0 * np.sum(np.log2(np.abs(np.diag(L)))))


def to_text(S: NoiseCovariance) -> str:
    """Structured text export: header then one ``i j re im`` line per entry."""
    dim = S.S.shape[0]
    lines = [
        f"# nft-capacity covariance v{FORMAT_VERSION}",
        f"# dimension={dim} variant={S.variant.value} eps2={format_number(S.eps2)} "
        f"K={S.K} n_solitons={S.n_solitons} n_continuum={S.n_continuum}",
    ]
    for i in range(dim):
        for j in range(dim):
            z = S.S[i, j]
            lines.append(f"{i} {j} {format_number(z.real)} {format_number(z.imag)}")
    return "\n".join(lines) + "\n"
