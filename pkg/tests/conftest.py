from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist"
MNIST_FILES = {
    "train_images": MNIST_DIR / "train-images-idx3-ubyte.gz",
    "train_labels": MNIST_DIR / "train-labels-idx1-ubyte.gz",
    "test_images": MNIST_DIR / "t10k-images-idx3-ubyte.gz",
    "test_labels": MNIST_DIR / "t10k-labels-idx1-ubyte.gz",
}


@pytest.fixture(scope="session")
def mnist_files():
    missing = [str(p) for p in MNIST_FILES.values() if not p.is_file()]
    if missing:
        pytest.skip(f"MNIST files not found: {missing}")
    return MNIST_FILES



# one PASS/FAIL line per acceptance criterion

_criterion_of: dict[str, int] = {}
_outcomes: dict[int, list[bool]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _criterion_of[item.nodeid] = int(marker.args[0])


def pytest_runtest_logreport(report):
    number = _criterion_of.get(report.nodeid)
    if number is None:
        return
    if report.when == "call" or not report.passed:
        _outcomes.setdefault(number, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status = "PASS" if all(_outcomes[number]) else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number}")
