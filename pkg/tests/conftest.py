import os

import pytest

MNIST_DIR = os.environ.get("AESHIELD_MNIST_DIR", "/root/data/mnist")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def mnist_dir():
    if not os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")):
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set AESHIELD_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture(scope="session")
def reference(request, mnist_dir):
    from .reference import Reference, reference_config

    root = os.environ.get("AESHIELD_REFERENCE_DIR") or str(request.config.cache.mkdir("aeshield-reference"))
    return Reference(reference_config(mnist_dir, root))


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it.

    Usage: ``criterion(number, title, checks)`` with ``checks`` a list of
    ``(description, ok)`` pairs.
    """

    def record(number, title, checks):
        ok = all(c for _, c in checks)
        detail = "; ".join(f"{d} [{'ok' if c else 'FAIL'}]" for d, c in checks)
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
