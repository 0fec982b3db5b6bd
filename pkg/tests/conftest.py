import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def direct_dft_magnitudes(x, k, hop, m=1):
    """Per-frame Hann-windowed magnitudes by explicit cosine/sine sums."""
    w = 0.5 * (1 - np.cos(2 * np.pi * np.arange(k) / k))
    n = np.arange(k)
    n_frames = (len(x) - k) // hop + 1
    out = np.zeros((n_frames, m * k // 2 + 1))
    for t in range(n_frames):
        seg = w * x[t * hop:t * hop + k]
        for i in range(m * k // 2 + 1):
            c = np.sum(seg * np.cos(2 * np.pi * i * n / (m * k)))
            s = np.sum(seg * np.sin(2 * np.pi * i * n / (m * k)))
            out[t, i] = np.hypot(c, s)
    return out


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Records one ``PASS``/``FAIL`` line per acceptance criterion."""
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
