import pytest

from scatterhsd.corpus import gen_split
from scatterhsd.downstream import HFEConfig
from scatterhsd.scatter import ScatterConfig
from scatterhsd.trainer import prepare_data
from scatterhsd.upstream import UpstreamConfig

TINY_UP = UpstreamConfig(encoder_widths=(8, 16), coarse_points=16, split_ratios=(1, 1, 2),
                         target_points=32, decoder_hidden=16, split_hidden=8)
TINY_DOWN = HFEConfig(levels=3, k_per_level=(4, 6, 8), level_widths=(8, 8, 12), head_dim=8,
                      classes=8, seg_hidden=8)


@pytest.fixture(scope="session")
def tiny_data():
    """Eight classes, five objects each, sparse 8x8 inputs from 400-point sources."""
    split = gen_split(8, 5, 0)
    return prepare_data(split, ScatterConfig(8, 8, source_size=400), 32, views=2)


# acceptance verdicts, printed at the end of the run
VERDICTS = []


def record(criterion: int, ok: bool, detail: str = ""):
    VERDICTS.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
