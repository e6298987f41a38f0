"""Reading and writing signals, scattering states and result tables."""

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Union

import numpy as np

from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import SEPoint
from nft_capacity.core.models import Signal
from nft_capacity.error_handling import ParameterError
from nft_capacity.error_handling import report_file_error
from nft_capacity.utils.formatting import format_complex
from nft_capacity.utils.formatting import format_number
from nft_capacity.utils.formatting import format_optional

if TYPE_CHECKING:
    from nft_capacity.core.se_analysis import SeedAverage

logger = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1
BINARY_SUFFIXES = (".bin", ".sig")

_BINARY_HEADER = np.dtype([("M", "<i8"), ("tau", "<f8"), ("x", "<f8")])

SE_CSV_COLUMNS = [
    "snr_db",
    "power_dBm",
    "se_full",
    "se_nogh",
    "se_noprop",
    "shannon",
    "bts_valid",
    "K",
    "M",
    "seed",
    "lower_bound",
    "awgn",
    "se_asymptote",
    "n_solitons",
]


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


def signal_to_text(s: Signal) -> str:
    lines = [
        f"# M={s.M} tau={format_number(s.tau)} "
        f"position_x={format_number(s.position_x)}",
        "# index re im",
    ]
    lines.extend(f"{p} {format_complex(u)}" for p, u in enumerate(s.samples))
    return "\n".join(lines) + "\n"


def signal_from_text(text: str) -> Signal:
    """Parse the text signal format.

    Raises:
        ParameterError: on a missing header or a sample count mismatch
    """
    header = {}
    rows: List[complex] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    header[key] = value
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParameterError(f"malformed sample line: {raw!r}")
        rows.append(complex(float(parts[1]), float(parts[2])))

    if "tau" not in header:
        raise ParameterError("signal file has no '# M= tau=' header")
    if "M" in header and int(header["M"]) != len(rows):
        raise ParameterError(
            f"header declares M={header['M']} but {len(rows)} samples follow"
        )
    return Signal(
        np.array(rows, dtype=np.complex128),
        float(header["tau"]),
        float(header.get("position_x", 0.0)),
    )


def signal_to_bytes(s: Signal) -> bytes:
    head = np.array([(s.M, s.tau, s.position_x)], dtype=_BINARY_HEADER)
    return head.tobytes() + s.samples.astype("<c16").tobytes()


def signal_from_bytes(blob: bytes) -> Signal:
    size = _BINARY_HEADER.itemsize
    if len(blob) < size:
        raise ParameterError("binary signal is shorter than its header")
    head = np.frombuffer(blob[:size], dtype=_BINARY_HEADER)[0]
    samples = np.frombuffer(blob[size:], dtype="<c16")
    if samples.size != int(head["M"]):
        raise ParameterError(
            f"binary header declares M={int(head['M'])} "
            f"but holds {samples.size} samples"
        )
    return Signal(samples.astype(np.complex128), float(head["tau"]), float(head["x"]))


def save_signal(s: Signal, path: Union[str, Path]) -> Path:
    """Write a signal; ``.bin``/``.sig`` files use the binary layout."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        if target.suffix in BINARY_SUFFIXES:
            target.write_bytes(signal_to_bytes(s))
        else:
            target.write_text(signal_to_text(s), encoding="utf-8")
    except OSError as e:
        report_file_error(exception=e, file_path=target, operation="write")
        raise
    return target


def load_signal(path: Union[str, Path]) -> Signal:
    source = Path(path)
    try:
        if source.suffix in BINARY_SUFFIXES:
            return signal_from_bytes(source.read_bytes())
        return signal_from_text(source.read_text(encoding="utf-8"))
    except OSError as e:
        report_file_error(exception=e, file_path=source, operation="read")
        raise ParameterError(f"cannot read signal file {source}: {e}") from e


# ---------------------------------------------------------------------------
# Scattering states
# ---------------------------------------------------------------------------


def state_to_text(state: ScatteringState, include_eigenfunctions: bool = False) -> str:
    """Versioned text dump of a scattering state.

    Identical states give identical text, which makes the dump usable as a
    determinism check.
    """
    lines = [
        f"# nft-capacity scattering state v{STATE_FORMAT_VERSION}",
        f"M={state.M}",
        f"tau={format_number(state.tau)}",
        f"position_x={format_number(state.position_x)}",
        f"N={state.N}",
        f"N_c={state.N_c}",
        "[modes]",
        "# index lambda_re lambda_im b_re b_im mu_re mu_im gamma_re gamma_im "
        "a1_re a1_im a2_re a2_im",
    ]
    for i, mode in enumerate(state.solitons):
        fields = [
            mode.lam,
            mode.b,
            mode.mu,
            mode.gamma_n,
            mode.a_prime,
            mode.a_double_prime,
        ]
        lines.append(f"{i} " + " ".join(format_complex(complex(v)) for v in fields))

    if include_eigenfunctions:
        for i, mode in enumerate(state.solitons):
            if mode.psi is None:
                continue
            lines.append(f"[psi {i}]")
            for p in range(mode.psi.shape[1]):
                top, bottom = mode.psi[:, p]
                lines.append(f"{p} {format_complex(top)} {format_complex(bottom)}")

    cont = state.continuum
    if cont is not None and cont.size:
        lines.append("[continuum]")
        lines.append(f"weight={format_number(cont.weight)}")
        lines.append("# xi rho_re rho_im a_re a_im")
        for xi, rho, a in zip(cont.xi_grid, cont.rho, cont.a_vals):
            row = f"{format_complex(rho)} {format_complex(a)}"
            lines.append(f"{format_number(xi)} {row}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Result tables
# ---------------------------------------------------------------------------


def _se_row(point: SEPoint) -> List[str]:
    return [
        format_number(point.snr_db),
        format_number(point.power_dBm),
        format_optional(point.se_full),
        format_optional(point.se_nogh),
        format_optional(point.se_noprop),
        format_number(point.shannon_limit),
        "1" if point.bts_valid else "0",
        str(point.K),
        str(point.M),
        str(point.seed),
        format_optional(point.lower_bound),
        format_optional(point.awgn_capacity),
        format_optional(point.se_asymptote),
        str(point.n_solitons),
    ]


def se_csv_lines(points: Iterable[SEPoint], header: Sequence[str] = ()) -> List[str]:
    """CSV lines for an SE sweep; failed points keep empty SE cells."""
    lines = list(header)
    lines.append(",".join(SE_CSV_COLUMNS))
    lines.extend(",".join(_se_row(p)) for p in points)
    return lines


def write_lines(lines: Sequence[str], path: Union[str, Path]) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        report_file_error(exception=e, file_path=target, operation="write")
        raise
    logger.info(f"Wrote {target}")
    return target


def diagnostics_csv_lines(
    points: Iterable[SEPoint], header: Sequence[str] = ()
) -> List[str]:
    lines = list(header)
    lines.append("power_dBm,K,seed,error")
    for p in points:
        if p.ok:
            continue
        message = (p.error or "").replace(",", ";").replace("\n", " ")
        lines.append(f"{format_number(p.power_dBm)},{p.K},{p.seed},{message}")
    return lines


def fig1_csv_lines(
    rows: Iterable[Sequence[float]],
    header: Sequence[str] = (),
    counts: Optional[Sequence[int]] = None,
) -> List[str]:
    """Localization report: eta, kappa_numeric, kappa_closed_form[, n_modes]."""
    lines = list(header)
    columns = ["eta", "kappa_numeric", "kappa_closed_form"]
    if counts is not None:
        columns.append("n_modes")
    lines.append(",".join(columns))
    for i, row in enumerate(rows):
        cells = [format_number(float(v)) for v in row]
        if counts is not None:
            cells.append(str(counts[i]))
        lines.append(",".join(cells))
    return lines


def seed_average_csv_lines(
    averages: Iterable["SeedAverage"], header: Sequence[str] = ()
) -> List[str]:
    """Seed-averaged SE: mean and std per column, empty when no seed produced it."""
    columns = ["se_full", "se_nogh", "se_noprop", "lower_bound"]
    lines = list(header)
    names = ["power_dBm", "n_seeds"]
    for column in columns:
        names.extend([f"{column}_mean", f"{column}_std"])
    lines.append(",".join(names))
    for avg in averages:
        cells = [format_number(avg.power_dBm), str(avg.n_seeds)]
        for column in columns:
            cells.append(format_optional(avg.mean.get(column)))
            cells.append(format_optional(avg.std.get(column)))
        lines.append(",".join(cells))
    return lines
