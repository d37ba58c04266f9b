import os
from pathlib import Path

import numpy as np
import pytest

from saflab.data import CIFAR_TEST_FILES, CIFAR_TRAIN_FILES, write_cifar10_file, write_idx

ROOT = Path(__file__).resolve().parents[1]


def cifar10_dir():
    """Real CIFAR-10 binaries: $SAFLAB_CIFAR10_DIR or ./data/cifar-10-batches-bin."""
    return Path(os.environ.get("SAFLAB_CIFAR10_DIR", ROOT / "data" / "cifar-10-batches-bin"))


def have_cifar10():
    d = cifar10_dir()
    return all((d / f).exists() for f in CIFAR_TRAIN_FILES + CIFAR_TEST_FILES)


@pytest.fixture(scope="session")
def fake_cifar(tmp_path_factory):
    """Random bytes laid out as a CIFAR-10 binary distribution (format tests only)."""
    d = tmp_path_factory.mktemp("cifar")
    rng = np.random.default_rng(0)
    for name, n in [(f, 200) for f in CIFAR_TRAIN_FILES] + [("test_batch.bin", 10000)]:
        labels = np.arange(n) % 10
        pixels = rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8)
        write_cifar10_file(d / name, pixels, labels)
    return d


@pytest.fixture(scope="session")
def fake_mnist(tmp_path_factory):
    d = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(1)
    for split, n in (("train", 600), ("t10k", 100)):
        write_idx(d / f"{split}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(d / f"{split}-labels-idx1-ubyte", (np.arange(n) % 10).astype(np.uint8))
    return d


# -- acceptance summary: one PASS/FAIL line per criterion ----------------------

_criteria: dict = {}


@pytest.fixture
def criterion(record_property):
    """Tag the running test with an acceptance-criterion id; returns a detail recorder."""
    def tag(cid, title):
        record_property("criterion", cid)
        record_property("title", title)
        return lambda text: record_property("detail", text)
    return tag


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        cid = props["criterion"]
        outcome = "PASS" if report.passed else "FAIL"
        if report.failed and report.when != "call":
            outcome = "FAIL"
        detail = props.get("detail", "")
        if report.failed and not detail:
            detail = str(report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else report.longrepr)
        _criteria[cid] = (outcome, props.get("title", ""), detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c)):
        outcome, title, detail = _criteria[cid]
        tr.write_line(f"criterion {cid}: {outcome}  {title}" + (f"  [{detail}]" if detail else ""))
