import numpy as np
import pytest
import torch

from s3pet.datagen import DoseParams, PhantomSpec, derive_lpet, gen_spet_volume, volume_seed


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pair():
    """One 16x16 phantom volume and its low-dose counterpart."""
    spec = PhantomSpec(slice_size=16, volume_depth=4)
    spet = gen_spet_volume(volume_seed(3, "p000"), spec)
    return spet, derive_lpet(spet, DoseParams(), volume_seed(3, "p000", 1))


_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _criteria.get(n)
    if prev is None or prev[1] == "PASS":
        _criteria[n] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, verdict, detail = _criteria[n]
        terminalreporter.write_line(f"[{verdict}] criterion {n}: {title}" + (f" ({detail})" if detail else ""))
