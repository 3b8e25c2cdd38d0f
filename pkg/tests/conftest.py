import shutil
from pathlib import Path

import numpy as np
import pytest

from qcforge import synth

DATA = Path(__file__).parent / "data"

# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """The default 10-subject, 2-session synthetic dataset (generated once)."""
    out = tmp_path_factory.mktemp("fixture")
    synth.generate(synth.FixtureSpec(), out)
    return out


@pytest.fixture
def fixture_copy(fixture_root, tmp_path):
    dst = tmp_path / "fx"
    shutil.copytree(fixture_root, dst)
    shutil.rmtree(dst / "qc", ignore_errors=True)
    return dst
