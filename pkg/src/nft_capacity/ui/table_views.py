"""Table views for sweep, selftest and scattering summaries.

This module renders result summaries in table format using the Rich library.
CSV files remain the data contract; these tables are for the terminal only.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from nft_capacity.core.models import ScatteringState
from nft_capacity.core.models import SEPoint
from nft_capacity.utils.formatting import format_bits

logger = logging.getLogger(__name__)


class TableViewsController:
    """Controller for the batch runner's result tables."""

    def __init__(self, console: Optional[Console] = None):
        """Initialize the table views controller.

        Args:
            console: Optional Console instance for rich output
        """
        self.console = console or Console()
        self.key_style = "cyan"
        self.value_style = "white"
        self.accent_style = "yellow"
        self.success_style = "green"
        self.error_style = "red"
        self.border_style = "bright_blue"

    def _create_base_table(self, title: str) -> Table:
        return Table(
            title=title,
            title_style="bold cyan",
            show_header=True,
            header_style="bold",
            border_style=self.border_style,
            expand=False,
        )

    def create_sweep_table(self, points: Sequence[SEPoint], title: str) -> Table:
        """Create the per-power SE table of one sweep.

        Args:
            points: Sweep results sorted by power and seed
            title: Table title

        Returns:
            Rich Table with one row per point
        """
        table = self._create_base_table(title)
        table.add_column("P (dBm)", style=self.key_style, justify="right")
        table.add_column("SNR (dB)", style=self.value_style, justify="right")
        table.add_column("seed", style=self.value_style, justify="right")
        table.add_column("N", style=self.value_style, justify="right")
        table.add_column("full", style=self.accent_style, justify="right")
        table.add_column("noGH", style=self.value_style, justify="right")
        table.add_column("noProp", style=self.value_style, justify="right")
        table.add_column("Shannon", style=self.success_style, justify="right")
        table.add_column("Bt_s ok", justify="center")

        for p in points:
            if not p.ok:
                table.add_row(
                    f"{p.power_dBm:g}",
                    f"{p.snr_db:.2f}",
                    str(p.seed),
                    "-",
                    Text("failed", style=self.error_style),
                    "-",
                    "-",
                    format_bits(p.shannon_limit),
                    "-",
                )
                continue
            table.add_row(
                f"{p.power_dBm:g}",
                f"{p.snr_db:.2f}",
                str(p.seed),
                str(p.n_solitons),
                format_bits(p.se_full),
                format_bits(p.se_nogh),
                format_bits(p.se_noprop),
                format_bits(p.shannon_limit),
                "yes" if p.bts_valid else Text("no", style=self.accent_style),
            )
        return table

    def create_selftest_table(self, results: List[Dict[str, Any]]) -> Table:
        """One line per suite: name, verdict, detail."""
        table = self._create_base_table("Selftest")
        table.add_column("Suite", style=self.key_style)
        table.add_column("Result", justify="center")
        table.add_column("Detail", style=self.value_style)
        for result in results:
            verdict = (
                Text("PASS", style=self.success_style)
                if result["passed"]
                else Text("FAIL", style=self.error_style)
            )
            table.add_row(result["name"], verdict, result.get("detail", ""))
        return table

    def create_scatter_table(self, state: ScatteringState) -> Table:
        """Soliton eigenvalues and norming data of one state."""
        table = self._create_base_table(
            f"Scattering data (M={state.M}, tau={state.tau:g}, x={state.position_x:g})"
        )
        table.add_column("#", style=self.key_style, justify="right")
        table.add_column("xi", justify="right")
        table.add_column("eta", style=self.accent_style, justify="right")
        table.add_column("|b|", justify="right")
        table.add_column("mu", justify="right")
        table.add_column("|gamma|", justify="right")
        for i, mode in enumerate(state.solitons):
            table.add_row(
                str(i),
                f"{mode.xi:.6f}",
                f"{mode.eta:.6f}",
                f"{abs(mode.b):.4e}",
                f"{mode.mu.real:.4f}{mode.mu.imag:+.4f}i",
                f"{abs(mode.gamma_n):.4e}",
            )
        return table

    def create_fig1_table(
        self, rows: Sequence[Sequence[float]], counts: Sequence[int]
    ) -> Table:
        table = self._create_base_table("Inverse localization length")
        table.add_column("eta", style=self.key_style, justify="right")
        table.add_column("kappa (numeric)", style=self.accent_style, justify="right")
        table.add_column(
            "kappa (closed form)", style=self.success_style, justify="right"
        )
        table.add_column("modes", justify="right")
        for (eta, numeric, closed), count in zip(rows, counts):
            table.add_row(f"{eta:.3f}", f"{numeric:.4f}", f"{closed:.4f}", str(count))
        return table

    def create_summary_panel(self, lines: Sequence[str], title: str) -> Panel:
        return Panel(
            Text("\n".join(lines)),
            title=title,
            border_style=self.border_style,
            expand=False,
        )

    def display(self, renderable: Any) -> None:
        self.console.print(renderable)
