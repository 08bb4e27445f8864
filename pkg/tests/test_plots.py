from pathlib import Path

import pytest

from meaclab.plots import render_plots
from meaclab.runner import run_scenario
from meaclab.scenario import parse_scenario

SCENARIOS = Path(__file__).parent.parent / "scenarios"


@pytest.mark.slow
class TestPlots:
    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("plotrun") / "smoke"
        run_scenario(parse_scenario(SCENARIOS / "smoke.scn"), out)
        return out

    def test_pvt_plot_written(self, run_dir):
        written = render_plots(run_dir)
        names = {p.name for p in written}
        assert "pvt_error.png" in names
        # smoke has no spectral monitoring, so no heatmap
        assert "spectrogram.png" not in names

    def test_plot_bytes_deterministic(self, run_dir):
        first = {p.name: p.read_bytes() for p in render_plots(run_dir)}
        second = {p.name: p.read_bytes() for p in render_plots(run_dir)}
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], name

    def test_missing_run_dir_diagnostic(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            render_plots(tmp_path / "nope")
