"""Tests for the experiment runners behind the subcommands."""

from pathlib import Path
from typing import List, Optional, Tuple
from unittest.mock import patch

import numpy as np
import pytest

from nft_capacity.cli import experiments
from nft_capacity.cli.experiments import EXIT_NUMERICAL
from nft_capacity.cli.experiments import EXIT_OK
from nft_capacity.cli.experiments import EXIT_PARTIAL
from nft_capacity.cli.experiments import bin_localization
from nft_capacity.cli.experiments import collect_localization
from nft_capacity.cli.experiments import run_fig1
from nft_capacity.cli.experiments import run_fig2
from nft_capacity.cli.experiments import run_scatter
from nft_capacity.cli.experiments import run_selftest
from nft_capacity.cli.experiments import run_suite
from nft_capacity.cli.experiments import sweep_exit_code
from nft_capacity.core import propagation
from nft_capacity.core.models import SEPoint
from nft_capacity.core.models import Signal
from nft_capacity.core.se_analysis import kappa_closed_form
from nft_capacity.core.settings import Settings
from nft_capacity.error_handling import ConditioningError
from nft_capacity.utils.serialization import save_signal


def _point(seed: int, failed: bool = False) -> SEPoint:
    return SEPoint(
        power_dBm=0.0,
        power_P=1e-3,
        snr_db=20.0,
        shannon_limit=6.6,
        bts_valid=True,
        K=5,
        M=16,
        seed=seed,
        se_full=None if failed else 2.0,
        error="ConditioningError: x" if failed else None,
    )


class TestBinLocalization:
    """Test eta binning of localization estimates."""

    def test_rows_and_counts(self) -> None:
        etas = np.array([0.3, 0.35, 0.4, 0.8, 0.9, 1.6])
        kappas = np.array([0.2, 0.25, 0.3, 0.7, 0.8, 1.5])
        rows, counts, dropped = bin_localization(
            etas, kappas, [0.25, 0.5, 1.0, 1.5], min_modes=2
        )
        assert counts == [3, 2]
        assert dropped == 0
        eta_mean, kappa_mean, closed = rows[0]
        assert eta_mean == pytest.approx(0.35)
        assert kappa_mean == pytest.approx(0.25)
        expected = np.mean(kappa_closed_form(etas[:3]))
        assert closed == pytest.approx(expected)

    def test_small_bins_dropped(self) -> None:
        etas = np.array([0.3, 0.35, 0.8])
        rows, counts, dropped = bin_localization(
            etas, etas, [0.25, 0.5, 1.0], min_modes=2
        )
        assert counts == [2]
        assert dropped == 1
        assert len(rows) == 1

    def test_empty(self) -> None:
        rows, counts, dropped = bin_localization(
            np.zeros(0), np.zeros(0), [0.25, 0.5], min_modes=1
        )
        assert rows == [] and counts == [] and dropped == 0


class TestCollectLocalization:
    """Test gathering of bound states from Gaussian inputs."""

    def test_modes_are_collected(self) -> None:
        settings = Settings(
            seeds=[1], fig1_samples=64, fig1_tau=0.25, fig1_realizations=2
        )
        etas, kappas, skipped = collect_localization(settings)
        assert etas.shape == kappas.shape
        assert skipped >= 0
        assert np.all(etas > 0)

    def test_failed_realization_is_skipped(self) -> None:
        settings = Settings(seeds=[1], fig1_samples=16, fig1_realizations=3)
        with patch(
            "nft_capacity.cli.experiments.discrete_spectrum",
            side_effect=ConditioningError("eigensolver failed"),
        ):
            etas, kappas, skipped = collect_localization(settings)
        assert etas.size == 0
        assert skipped == 0


class TestRunFig1:
    """Test the fig1 report."""

    def test_csv_written(self, tmp_path: Path) -> None:
        etas = np.array([0.3, 0.35, 0.4, 0.8])
        settings = Settings(eta_bins=[0.25, 0.5, 1.0], min_modes_per_bin=2)
        with patch(
            "nft_capacity.cli.experiments.collect_localization",
            return_value=(etas, etas * 0.9, 1),
        ):
            report = run_fig1(settings, tmp_path)

        assert report.path == tmp_path / "fig1.csv"
        assert report.n_modes == 4
        assert report.skipped_modes == 1
        assert report.dropped_bins == 1
        lines = report.path.read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("# nft-capacity")
        assert "# experiment=fig1" in lines
        assert "eta,kappa_numeric,kappa_closed_form,n_modes" in lines
        assert lines[-1].endswith(",3")


class TestSweepExitCode:
    """Test the partial-sweep exit code contract."""

    def test_all_ok(self) -> None:
        assert sweep_exit_code([_point(s) for s in range(5)]) == EXIT_OK

    def test_partial(self) -> None:
        points = [_point(s) for s in range(10)] + [_point(10, failed=True)]
        assert sweep_exit_code(points) == EXIT_PARTIAL

    def test_exactly_at_limit_is_partial(self) -> None:
        points = [_point(s) for s in range(9)] + [_point(9, failed=True)]
        assert sweep_exit_code(points) == EXIT_PARTIAL

    def test_above_limit(self) -> None:
        points = [_point(1), _point(2, failed=True)]
        assert sweep_exit_code(points) == EXIT_NUMERICAL


class TestRunFig2:
    """Test fig2 outputs with the sweep stubbed."""

    @pytest.fixture
    def settings(self) -> Settings:
        return Settings(distances_km=[500.0, 1000.0], average_seeds=True, seeds=[1, 2])

    def test_files_per_distance(self, settings: Settings, tmp_path: Path) -> None:
        calls: List[int] = []

        def fake_sweep(
            settings: Settings, num_spans: int, workers: Optional[int] = None
        ) -> List[SEPoint]:
            calls.append(num_spans)
            return [_point(1), _point(2, failed=num_spans == 10)]

        with patch("nft_capacity.cli.experiments.se_sweep", side_effect=fake_sweep):
            results, code = run_fig2(settings, tmp_path)

        assert calls == [5, 10]
        assert sorted(results) == [500.0, 1000.0]
        assert code == EXIT_NUMERICAL
        assert (tmp_path / "fig2_500km.csv").exists()
        assert (tmp_path / "fig2_1000km.csv").exists()
        assert not (tmp_path / "fig2_500km_diagnostics.csv").exists()
        assert (tmp_path / "fig2_1000km_diagnostics.csv").exists()
        assert (tmp_path / "fig2_500km_averaged.csv").exists()

        lines = (tmp_path / "fig2_500km.csv").read_text(encoding="utf-8").splitlines()
        assert "# K=5" in lines
        assert "# seeds=1,2" in lines


class TestRunScatter:
    """Test the scatter dump of a stored signal."""

    def test_sech_file(self, tmp_path: Path, sech_signal: Signal) -> None:
        signal_file = save_signal(sech_signal, tmp_path / "pulse.txt")
        state, path = run_scatter(Settings(), signal_file, tmp_path / "out")

        assert state.N == 1
        assert state.N_c > 0
        assert path == tmp_path / "out" / "pulse_scatter.txt"
        text = path.read_text(encoding="utf-8")
        assert "# experiment=scatter" in text
        assert "[modes]" in text
        assert "[continuum]" in text


class TestSelftest:
    """Test the selftest driver."""

    def test_suite_exception_is_a_failure(self) -> None:
        def broken() -> Tuple[bool, str]:
            raise ConditioningError("not positive definite")

        result = run_suite("broken", broken)
        assert not result.passed
        assert result.detail.startswith("ConditioningError")
        assert result.as_dict()["name"] == "broken"

    def test_order_is_fixed(self) -> None:
        suites = [("a", lambda: (True, "ok")), ("b", lambda: (False, "bad"))]
        with patch.object(experiments, "SELFTEST_SUITES", suites):
            results = run_selftest()
        assert [(r.name, r.passed) for r in results] == [("a", True), ("b", False)]

    def test_fault_injection_is_active_during_suites(self) -> None:
        seen: List[float] = []

        def record() -> Tuple[bool, str]:
            seen.append(propagation._nonlinear_gain)
            return True, ""

        with patch.object(experiments, "SELFTEST_SUITES", [("gain", record)]):
            run_selftest(fault_inject=True)
            run_selftest(fault_inject=False)
        assert seen[0] != 1.0
        assert seen[1] == 1.0
        assert propagation._nonlinear_gain == 1.0

    @pytest.mark.parametrize(
        "name",
        [
            "units_round_trip",
            "signal_statistics",
            "sech_eigenvalue",
            "first_order_perturbation",
            "zeta_closed_form",
            "identity_calibration",
            "kappa_closed_form",
            "determinism",
        ],
    )
    def test_cheap_suites_pass(self, name: str) -> None:
        check = dict(experiments.SELFTEST_SUITES)[name]
        result = run_suite(name, check)
        assert result.passed, result.detail


@pytest.mark.integration
class TestSelftestEndToEnd:
    """Every suite, with and without the injected fault."""

    def test_all_suites_pass(self) -> None:
        results = run_selftest()
        assert all(r.passed for r in results), [r.as_dict() for r in results]

    def test_fault_is_detected(self) -> None:
        results = {r.name: r.passed for r in run_selftest(fault_inject=True)}
        assert not results["eigenvalue_drift"]
        assert not results["gaussian_spectrum_drift"]
        assert results["first_order_perturbation"]
