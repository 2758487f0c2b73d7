import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("owapool", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("owapool")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, eps=1e-6):
    """Central-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(x)
        flat[i] = old - eps
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def brute_pool(x, window, stride, weights=None, mode="owa"):
    """Loop-by-loop pooling oracle; ``weights`` is (channels or 1, n)."""
    kh, kw = window
    sh, sw = stride
    N, C, H, W = x.shape
    oh, ow = (H - kh) // sh + 1, (W - kw) // sw + 1
    y = np.zeros((N, C, oh, ow))
    for b in range(N):
        for c in range(C):
            for i in range(oh):
                for j in range(ow):
                    vals = [x[b, c, i * sh + a, j * sw + d] for a in range(kh) for d in range(kw)]
                    if mode == "max":
                        y[b, c, i, j] = max(vals)
                    elif mode == "avg":
                        y[b, c, i, j] = sum(vals) / len(vals)
                    else:
                        row = weights[c if len(weights) > 1 else 0]
                        y[b, c, i, j] = sum(wk * v for wk, v in zip(row, sorted(vals, reverse=True)))
    return y


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
