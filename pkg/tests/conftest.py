import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_embed(gate, start, size, wires):
    """Dense ``I (x) g (x) I`` built by explicit index loops."""
    dim = 2**wires
    out = np.zeros((dim, dim))
    shift = wires - start - size
    mask = (2**size - 1) << shift
    for r in range(dim):
        for c in range(dim):
            if (r & ~mask) != (c & ~mask):
                continue
            out[r, c] = gate[(r & mask) >> shift, (c & mask) >> shift]
    return out


def pytest_terminal_summary(terminalreporter):
    from report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
