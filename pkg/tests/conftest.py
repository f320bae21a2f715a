import numpy as np
import pytest

from pidope import LoggedDataset, MuHat

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def make_dataset(X, overlap, pe=None, rng=None, y=None):
    """Dataset where overlap rows have pb=0.5 and were all observed."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    overlap = np.asarray(overlap, dtype=bool)
    pb = np.where(overlap, 0.5, 0.0)
    if pe is None:
        pe = np.ones(n) if rng is None else rng.uniform(0.05, 1.0, n)
    a = overlap.astype(np.int8)
    if y is None:
        y = np.where(overlap, 0.5, np.nan)
    return LoggedDataset(X, pb, pe, a, y)


def lipschitz_instance(rng, n, p, L, box=None, min_overlap=1):
    """Random instance whose fitted values come from an L-Lipschitz function."""
    X = rng.random((n, p))
    overlap = rng.random(n) < rng.uniform(0.2, 0.8)
    if overlap.sum() < min_overlap:
        overlap[rng.integers(n)] = True
    # sum of cones and a linear part, rescaled to Lipschitz constant L
    centers = rng.random((3, p))
    signs = rng.choice([-1.0, 1.0], 3)
    lin = rng.normal(size=p)
    lin /= max(np.linalg.norm(lin), 1e-12)

    def f(Z):
        cones = sum(s * np.linalg.norm(Z - c, axis=1) for s, c in zip(signs, centers))
        return 0.25 * cones + 0.25 * Z @ lin  # Lipschitz <= 1
    vals = L * f(X)
    if box is not None:
        lo, hi = box
        vals = np.clip(vals - vals.mean() + (lo + hi) / 2, lo, hi)
    data = make_dataset(X, overlap, rng=rng)
    return data, MuHat(np.where(overlap, vals, np.nan))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
