import numpy as np
import pytest

from gatedlidar.acquisition import GateConfig, NoiseConfig, ScanPattern
from gatedlidar.scene import Blob, PanelBoardSpec, build_panel_board_scene


@pytest.fixture
def small_spec():
    return PanelBoardSpec(board_px=40, blobs=(Blob((24, 24), (6, 4), 149.6, (230, 200, 180)),))


@pytest.fixture
def small_scene(small_spec):
    return build_panel_board_scene(small_spec, 48, 48)


@pytest.fixture
def gate():
    return GateConfig()


@pytest.fixture
def small_scan():
    # 4x4 grid of 16 px spots on a 48 px crop
    return ScanPattern(grid_rows=4, grid_cols=4, spot_px=16, pitch_px=11.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def quiet_noise(**kw):
    base = dict(mean_signal_pp=0.0, background_pp=0.0, dcr_map=None)
    base.update(kw)
    return NoiseConfig(**base)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
