import numpy as np
import pytest
from scipy.special import erf


def blurred_step(sigma_true, h=48, w=48, x0=24, lo=0.2, hi=0.8):
    """Vertical step at column ``x0`` pre-blurred by a Gaussian of ``sigma_true``."""
    x = np.arange(w, dtype=np.float64) - x0
    if sigma_true > 0:
        profile = 0.5 * (1.0 + erf(x / (sigma_true * np.sqrt(2.0))))
    else:
        profile = (x >= 0).astype(np.float64)
    return np.tile(lo + (hi - lo) * profile, (h, 1))


def conv2d_bruteforce(img, kx, ky):
    """Direct 2-D convolution with replicate padding; kernel = outer(ky, kx)."""
    h, w = img.shape
    rx, ry = (len(kx) - 1) // 2, (len(ky) - 1) // 2
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(-ry, ry + 1):
                for i in range(-rx, rx + 1):
                    yy = min(max(y - j, 0), h - 1)
                    xx = min(max(x - i, 0), w - 1)
                    acc += ky[j + ry] * kx[i + rx] * img[yy, xx]
            out[y, x] = acc
    return out


def window_values(img, y, x, r):
    """Replicate-padded (2r+1)^2 neighbourhood of (y, x)."""
    h, w = img.shape
    ys = np.clip(np.arange(y - r, y + r + 1), 0, h - 1)
    xs = np.clip(np.arange(x - r, x + r + 1), 0, w - 1)
    return img[np.ix_(ys, xs)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
